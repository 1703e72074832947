"""Forward/backward passes and a desk-scale trainer for the mixer model.

Pipeline per image: blockify -> patch embed -> GELU -> BN, then per layer a
depthwise conv branch (GELU, BN, residual add) followed by a pointwise conv
(GELU, BN), then global average pooling and a linear head.

Everything is float64 numpy. GELU uses the exact erf form, batch norm runs
on batch statistics while training (momentum 0.9 on the running stats) and
on running statistics at inference. Tensor contractions stay small enough
at desk scale that BLAS never splits them across threads, so repeated runs
produce bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .data import Dataset
from .errors import GeometryError
from .image import ImageTensor
from .model import BatchNormParams, ConvMixerModel, MixerLayer, PatchEmbedding
from .rng import SplitMix64

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class ModelGeometry:
    """Architecture knobs not implied by the dataset."""

    patch: int
    dim: int
    depth: int
    kernel: int


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def blockify_batch(xs: np.ndarray, patch: int) -> np.ndarray:
    """B x H x W x C -> B x N x (p^2*C), same per-image layout as the cipher."""
    b, h, w, c = xs.shape
    if h % patch or w % patch:
        raise GeometryError(f"images {h}x{w} not divisible into {patch}x{patch} blocks")
    return (
        xs.reshape(b, h // patch, patch, w // patch, patch, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, (h // patch) * (w // patch), patch * patch * c)
    )


def _bn_forward(x: np.ndarray, bn: BatchNormParams, training: bool, update_stats: bool):
    """Batch norm over all axes but the channel axis (last)."""
    if training:
        axes = tuple(range(x.ndim - 1))
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            bn.mean = BN_MOMENTUM * bn.mean + (1.0 - BN_MOMENTUM) * mu
            bn.var = BN_MOMENTUM * bn.var + (1.0 - BN_MOMENTUM) * var
    else:
        mu, var = bn.mean, bn.var
    ivar = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * ivar
    y = bn.gamma * xhat + bn.beta
    return y, (x, xhat, mu, ivar, training)


def _bn_backward(dy: np.ndarray, bn: BatchNormParams, cache):
    x, xhat, mu, ivar, training = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * bn.gamma
    if not training:
        return dxhat * ivar, dgamma, dbeta
    m = float(np.prod(x.shape[:-1]))
    xc = x - mu
    dvar = (dxhat * xc).sum(axis=axes) * (-0.5) * ivar**3
    dmu = -(dxhat.sum(axis=axes)) * ivar + dvar * (-2.0 / m) * xc.sum(axis=axes)
    dx = dxhat * ivar + dvar * (2.0 / m) * xc + dmu / m
    return dx, dgamma, dbeta


def _depthwise_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-channel same-padding conv; x: B x h x w x d, w: d x k x k."""
    _, h, wid, _ = x.shape
    k = w.shape[1]
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    out = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            out += xp[:, u : u + h, v : v + wid, :] * w[:, u, v]
    return out + bias


def _depthwise_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    _, h, wid, _ = x.shape
    k = w.shape[1]
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            window = xp[:, u : u + h, v : v + wid, :]
            dw[:, u, v] = (window * dy).sum(axis=(0, 1, 2))
            dxp[:, u : u + h, v : v + wid, :] += dy * w[:, u, v]
    db = dy.sum(axis=(0, 1, 2))
    return dxp[:, r : r + h, r : r + wid, :], dw, db


def forward_batch(
    m: ConvMixerModel,
    xs: np.ndarray,
    training: bool = False,
    update_stats: bool = False,
    want_cache: bool = False,
):
    """Logits for a B x H x W x C batch; optionally keeps activations for backprop."""
    if xs.ndim != 4:
        raise GeometryError(f"expected a BxHxWxC batch, got ndim={xs.ndim}")
    if xs.shape[3] != m.channels:
        raise GeometryError(f"batch has {xs.shape[3]} channels, model expects {m.channels}")
    b, h, w, _ = xs.shape
    p = m.patch
    blocks = blockify_batch(xs, p)
    gh, gw = h // p, w // p

    cache: dict = {"blocks": blocks}
    z = blocks @ m.embed.e + m.embed.bias
    x = z.reshape(b, gh, gw, m.dim)
    cache["embed_pre"] = x
    g = gelu(x)
    x, cache["embed_bn"] = _bn_forward(g, m.embed_bn, training, update_stats)
    cache["layers"] = []

    for layer in m.layers:
        lc: dict = {"in": x}
        t = _depthwise_forward(x, layer.depthwise, layer.depthwise_bias)
        lc["dw_pre"] = t
        t, lc["bn1"] = _bn_forward(gelu(t), layer.bn1, training, update_stats)
        x = x + t
        lc["res"] = x
        u = x @ layer.pointwise.T + layer.pointwise_bias
        lc["pw_pre"] = u
        x, lc["bn2"] = _bn_forward(gelu(u), layer.bn2, training, update_stats)
        cache["layers"].append(lc)

    feat = x.mean(axis=(1, 2))
    cache["feat"] = feat
    logits = feat @ m.head_w.T + m.head_b
    return (logits, cache) if want_cache else (logits, None)


def forward(m: ConvMixerModel, x: ImageTensor) -> np.ndarray:
    """Inference-mode logits for a single image."""
    logits, _ = forward_batch(m, x.data[None], training=False)
    return logits[0]


def predict(m: ConvMixerModel, x: ImageTensor) -> int:
    """Top-1 class; lowest index wins exact ties (argmax convention)."""
    return int(np.argmax(forward(m, x)))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _stack(images) -> np.ndarray:
    if isinstance(images, ImageTensor):
        return images.data[None]
    if isinstance(images, np.ndarray):
        return images if images.ndim == 4 else images[None]
    return np.stack([im.data for im in images])


def training_loss(m: ConvMixerModel, images, labels, update_stats: bool = False) -> float:
    """Mean softmax cross-entropy in training mode (batch statistics)."""
    xs = _stack(images)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    logits, _ = forward_batch(m, xs, training=True, update_stats=update_stats)
    probs = softmax(logits)
    return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))


def backward(m: ConvMixerModel, images, labels, update_stats: bool = False):
    """Loss and gradients of every trainable tensor (training-mode loss).

    Returns (loss, grads) where grads maps the names of
    ConvMixerModel.param_tensors() to arrays of matching shape.
    """
    xs = _stack(images)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(labels) != xs.shape[0]:
        raise ValueError(f"{xs.shape[0]} images but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= m.classes:
        raise ValueError("label out of range")
    logits, cache = forward_batch(m, xs, training=True, update_stats=update_stats, want_cache=True)
    return _backward_from_cache(m, logits, cache, labels)


def init_model(
    seed: int, patch: int, channels: int, dim: int, depth: int, kernel: int, classes: int
) -> ConvMixerModel:
    """Fresh plain model, weights uniform on +/- sqrt(1/fan_in), biases zero.

    Draw order is frozen (embedding, then each layer's depthwise and
    pointwise kernels, then the head) so a seed pins every weight.
    """
    rng = SplitMix64(seed)
    n = patch * patch * channels

    def uniform(shape, fan_in):
        return rng.uniform_array(shape) * math.sqrt(1.0 / fan_in)

    embed = PatchEmbedding(uniform((n, dim), n), np.zeros(dim))
    layers = [
        MixerLayer(
            depthwise=uniform((dim, kernel, kernel), kernel * kernel),
            depthwise_bias=np.zeros(dim),
            bn1=BatchNormParams.identity(dim),
            pointwise=uniform((dim, dim), dim),
            pointwise_bias=np.zeros(dim),
            bn2=BatchNormParams.identity(dim),
        )
        for _ in range(depth)
    ]
    return ConvMixerModel(
        patch=patch,
        channels=channels,
        dim=dim,
        depth=depth,
        kernel=kernel,
        classes=classes,
        embed=embed,
        embed_bn=BatchNormParams.identity(dim),
        layers=layers,
        head_w=uniform((classes, dim), dim),
        head_b=np.zeros(classes),
    )


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Adam:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        b1c = 1.0 - cfg.beta1**self.t
        b2c = 1.0 - cfg.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + cfg.eps)


class _Sgd:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            p -= self.cfg.learning_rate * grads[k]


def dataset_accuracy(m: ConvMixerModel, data: Dataset) -> float:
    """Inference-mode top-1 accuracy, percent."""
    if len(data.labels) == 0:
        raise ValueError("empty dataset")
    xs = data.stacked()
    logits, _ = forward_batch(m, xs, training=False)
    correct = (logits.argmax(axis=1) == np.asarray(data.labels)).sum()
    return 100.0 * float(correct) / len(data.labels)


def train(
    config: TrainConfig,
    data: Dataset,
    geometry: ModelGeometry,
    test_data: Dataset | None = None,
    log_stream=None,
) -> ConvMixerModel:
    """Train a fresh plain model; fully deterministic given config.seed.

    Writes one tab-separated line per epoch to log_stream when given:
    epoch, mean loss, train accuracy, test accuracy (blank without a test
    set). Raises DivergenceError if the loss leaves the finite range.
    """
    if len(data.labels) == 0:
        raise ValueError("training dataset is empty")
    h, w, c = data.images[0].shape
    m = init_model(
        config.seed, geometry.patch, c, geometry.dim, geometry.depth, geometry.kernel, data.classes
    )
    params = m.param_tensors()
    opt = _Adam(config, params) if config.optimizer == "adam" else _Sgd(config, params)
    rng = SplitMix64(config.seed ^ 0x5DEECE66D)  # decouple shuffle stream from init
    xs_all = data.stacked()
    labels_all = np.asarray(data.labels, dtype=np.int64)
    count = len(labels_all)

    for epoch in range(1, config.epochs + 1):
        order = list(range(count))
        rng.shuffle(order)
        total_loss = 0.0
        correct = 0
        for start in range(0, count, config.batch_size):
            idx = order[start : start + config.batch_size]
            xs = xs_all[idx]
            ys = labels_all[idx]
            logits, cache = forward_batch(m, xs, training=True, update_stats=True, want_cache=True)
            probs = softmax(logits)
            batch_loss = float(-np.mean(np.log(probs[np.arange(len(ys)), ys])))
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            loss, grads = _backward_from_cache(m, logits, cache, ys)
            opt.step(params, grads)
            total_loss += batch_loss * len(ys)
            correct += int((logits.argmax(axis=1) == ys).sum())
        mean_loss = total_loss / count
        train_acc = 100.0 * correct / count
        test_acc = dataset_accuracy(m, test_data) if test_data is not None else None
        if log_stream is not None:
            tail = f"{test_acc:.2f}" if test_acc is not None else ""
            log_stream.write(f"{epoch}\t{mean_loss:.6f}\t{train_acc:.2f}\t{tail}\n")
    return m


def _backward_from_cache(m, logits, cache, labels):
    """Backprop reusing an existing training-mode forward cache."""
    b = len(labels)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(b), labels])))
    grads: dict[str, np.ndarray] = {}
    dlogits = probs
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    grads["head_w"] = dlogits.T @ cache["feat"]
    grads["head_b"] = dlogits.sum(axis=0)
    dfeat = dlogits @ m.head_w
    gh, gw = cache["embed_pre"].shape[1:3]
    dx = np.broadcast_to(dfeat[:, None, None, :] / (gh * gw), (b, gh, gw, m.dim)).copy()
    for i in range(m.depth - 1, -1, -1):
        layer = m.layers[i]
        lc = cache["layers"][i]
        dg, dgamma2, dbeta2 = _bn_backward(dx, layer.bn2, lc["bn2"])
        grads[f"layer{i}.bn2.gamma"] = dgamma2
        grads[f"layer{i}.bn2.beta"] = dbeta2
        du = dg * gelu_grad(lc["pw_pre"])
        d = m.dim
        grads[f"layer{i}.pointwise"] = du.reshape(-1, d).T @ lc["res"].reshape(-1, d)
        grads[f"layer{i}.pointwise_bias"] = du.sum(axis=(0, 1, 2))
        dres = du @ layer.pointwise
        dg1, dgamma1, dbeta1 = _bn_backward(dres, layer.bn1, lc["bn1"])
        grads[f"layer{i}.bn1.gamma"] = dgamma1
        grads[f"layer{i}.bn1.beta"] = dbeta1
        dt = dg1 * gelu_grad(lc["dw_pre"])
        dconv, dw, db = _depthwise_backward(dt, lc["in"], layer.depthwise)
        grads[f"layer{i}.depthwise"] = dw
        grads[f"layer{i}.depthwise_bias"] = db
        dx = dres + dconv
    dg0, dgamma0, dbeta0 = _bn_backward(dx, m.embed_bn, cache["embed_bn"])
    grads["embed_bn.gamma"] = dgamma0
    grads["embed_bn.beta"] = dbeta0
    dz = (dg0 * gelu_grad(cache["embed_pre"])).reshape(b, -1, m.dim)
    n = m.block_dim
    grads["embed.e"] = cache["blocks"].reshape(-1, n).T @ dz.reshape(-1, m.dim)
    grads["embed.bias"] = dz.sum(axis=(0, 1))
    return loss, grads
