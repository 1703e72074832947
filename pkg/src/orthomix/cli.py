"""Command-line front end for the whole pipeline.

Subcommands cover the three parties: the third party (keygen, train,
transform-model, gen-dataset, evaluate), the provider (serve, infer), and
the client (encrypt, client).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .cipher import SecretKey, encrypt_image, generate_orthogonal, read_key, write_key
from .data import gen_toy_dataset, read_dataset, write_dataset
from .engine import ModelGeometry, TrainConfig, forward, train
from .evaluate import accuracy_matrix
from .image import read_cmxe, read_ppm, write_cmxe
from .model import read_model, transform_model, write_model
from .provision import thirdparty_provision
from .server import serve


def _parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected ADDR:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def cmd_keygen(args) -> int:
    key = SecretKey(seed=args.seed, patch=args.patch, channels=args.channels)
    write_key(key, args.out)
    print(f"wrote key (n={key.dim}) to {args.out}")
    return 0


def cmd_gen_dataset(args) -> int:
    train_ds, test_ds = gen_toy_dataset(args.seed, args.per_class)
    write_dataset(train_ds, test_ds, args.out)
    print(f"wrote {len(train_ds)} train / {len(test_ds)} test images to {args.out}")
    return 0


def cmd_train(args) -> int:
    with open(args.config) as f:
        cfg = json.load(f)
    config = TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        optimizer=cfg.get("optimizer", "adam"),
        beta1=cfg.get("beta1", 0.9),
        beta2=cfg.get("beta2", 0.999),
        eps=cfg.get("eps", 1e-8),
        seed=cfg.get("seed", 0),
    )
    geometry = ModelGeometry(
        patch=cfg["patch"], dim=cfg["dim"], depth=cfg["depth"], kernel=cfg["kernel"]
    )
    train_ds, test_ds = read_dataset(cfg["dataset"])
    log_path = cfg.get("log")
    log_stream = open(log_path, "w") if log_path else sys.stdout
    try:
        model = train(config, train_ds, geometry, test_data=test_ds, log_stream=log_stream)
    finally:
        if log_path:
            log_stream.close()
    write_model(model, cfg["out"])
    print(f"wrote trained model to {cfg['out']}")
    return 0


def cmd_transform_model(args) -> int:
    key = read_key(args.key)
    model = read_model(args.infile)
    transformed = transform_model(model, generate_orthogonal(key))
    write_model(transformed, args.out)
    print(f"wrote transformed model to {args.out}")
    return 0


def cmd_provision(args) -> int:
    thirdparty_provision(args.seed, args.patch, args.channels, args.model, args.key_out, args.model_out)
    print(f"wrote {args.key_out} and {args.model_out}")
    return 0


def cmd_encrypt(args) -> int:
    key = read_key(args.key)
    image = read_ppm(args.infile)
    encrypted = encrypt_image(image, generate_orthogonal(key), key.patch)
    write_cmxe(encrypted, args.out, block=key.patch)
    print(f"wrote encrypted image to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model = read_model(args.model)
    image, _ = read_cmxe(args.infile)
    logits = forward(model, image)
    print(f"predicted class: {int(logits.argmax())}")
    print("logits:", "\t".join(f"{v:.6f}" for v in logits))
    return 0


def cmd_serve(args) -> int:
    host, port = _parse_bind(args.bind)
    serve(args.model, host, port)
    return 0


def cmd_client(args) -> int:
    from .client import client_infer_files

    host, port = _parse_bind(args.server)
    resp = client_infer_files(host, port, args.key, args.infile, timeout=args.timeout)
    print(f"predicted class: {resp.predicted}")
    print("logits:", "\t".join(f"{v:.6f}" for v in resp.logits))
    return 0


def cmd_evaluate(args) -> int:
    model = read_model(args.model)
    key = read_key(args.key)
    _, test_ds = read_dataset(args.dataset)
    matrix = accuracy_matrix(model, key, test_ds)
    print(matrix.table())
    print(matrix.machine_block(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthomix",
        description="Privacy-preserving image classification with orthogonal block encryption",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a secret key file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("gen-dataset", help="generate the toy dataset file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a plain model from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transform-model", help="apply the key transform to a plain model")
    p.add_argument("--key", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform_model)

    p = sub.add_parser("provision", help="keygen + transform-model in one step")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--key-out", required=True)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("encrypt", help="encrypt a PPM image with a key")
    p.add_argument("--key", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("infer", help="run local inference on an image file")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", help="serve a transformed model over TCP")
    p.add_argument("--model", required=True)
    p.add_argument("--bind", required=True, help="ADDR:PORT")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="encrypt a PPM image and query a provider")
    p.add_argument("--key", required=True)
    p.add_argument("--server", required=True, help="ADDR:PORT")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("evaluate", help="accuracy matrix of a plain model under a key")
    p.add_argument("--model", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
