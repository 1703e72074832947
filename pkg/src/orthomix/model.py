"""ConvMixer model container, patch embedding, and the key-matched transform.

The patch-embedding matrix E maps flattened p x p x C blocks to d-dim
tokens; its row layout is identical to the cipher's block flattening,
which is the whole reason an encrypted model on encrypted blocks computes
the same embeddings as the plain model on plain blocks. Transforming a
model replaces E with A^T E and touches nothing else.

The CMXM container serializes every tensor as little-endian float64 so a
transformed model round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .cipher import OrthoMatrix
from .errors import BadMagicError, FormatError, GeometryError, TruncatedError, VersionError

CMXM_MAGIC = b"CMXM"
CMXM_VERSION = 1


def _tensor(x, shape: tuple[int, ...], name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise GeometryError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: non-finite entries")
    return a


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics for inference."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def validate(self, dim: int, name: str) -> None:
        self.gamma = _tensor(self.gamma, (dim,), f"{name}.gamma")
        self.beta = _tensor(self.beta, (dim,), f"{name}.beta")
        self.mean = _tensor(self.mean, (dim,), f"{name}.mean")
        self.var = _tensor(self.var, (dim,), f"{name}.var")
        if (self.var <= 0).any():
            raise ValueError(f"{name}.var must be positive")

    @staticmethod
    def identity(dim: int) -> "BatchNormParams":
        return BatchNormParams(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim))

    def copy(self) -> "BatchNormParams":
        return BatchNormParams(self.gamma.copy(), self.beta.copy(), self.mean.copy(), self.var.copy())


@dataclass
class PatchEmbedding:
    """Learnable filter E ((p^2*C) x d) and its bias (d)."""

    e: np.ndarray
    bias: np.ndarray


@dataclass
class MixerLayer:
    """Depthwise conv (d x k x k), pointwise conv (d x d), and their
    biases and batch-norm parameter sets."""

    depthwise: np.ndarray
    depthwise_bias: np.ndarray
    bn1: BatchNormParams
    pointwise: np.ndarray
    pointwise_bias: np.ndarray
    bn2: BatchNormParams


@dataclass
class ConvMixerModel:
    patch: int
    channels: int
    dim: int
    depth: int
    kernel: int
    classes: int
    embed: PatchEmbedding
    embed_bn: BatchNormParams
    layers: list[MixerLayer]
    head_w: np.ndarray
    head_b: np.ndarray
    encrypted: bool = False

    def __post_init__(self):
        p, c, d, k = self.patch, self.channels, self.dim, self.kernel
        if min(p, c, d, self.classes) < 1 or self.depth < 0:
            raise GeometryError("model geometry values must be positive")
        if k < 1 or k % 2 == 0:
            raise GeometryError(f"kernel size must be odd, got {k}")
        n = p * p * c
        self.embed.e = _tensor(self.embed.e, (n, d), "embed.e")
        self.embed.bias = _tensor(self.embed.bias, (d,), "embed.bias")
        self.embed_bn.validate(d, "embed_bn")
        if len(self.layers) != self.depth:
            raise GeometryError(f"expected {self.depth} layers, got {len(self.layers)}")
        for i, layer in enumerate(self.layers):
            layer.depthwise = _tensor(layer.depthwise, (d, k, k), f"layer{i}.depthwise")
            layer.depthwise_bias = _tensor(layer.depthwise_bias, (d,), f"layer{i}.depthwise_bias")
            layer.bn1.validate(d, f"layer{i}.bn1")
            layer.pointwise = _tensor(layer.pointwise, (d, d), f"layer{i}.pointwise")
            layer.pointwise_bias = _tensor(layer.pointwise_bias, (d,), f"layer{i}.pointwise_bias")
            layer.bn2.validate(d, f"layer{i}.bn2")
        self.head_w = _tensor(self.head_w, (self.classes, d), "head_w")
        self.head_b = _tensor(self.head_b, (self.classes,), "head_b")

    @property
    def block_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def copy(self) -> "ConvMixerModel":
        return ConvMixerModel(
            patch=self.patch,
            channels=self.channels,
            dim=self.dim,
            depth=self.depth,
            kernel=self.kernel,
            classes=self.classes,
            embed=PatchEmbedding(self.embed.e.copy(), self.embed.bias.copy()),
            embed_bn=self.embed_bn.copy(),
            layers=[
                MixerLayer(
                    l.depthwise.copy(),
                    l.depthwise_bias.copy(),
                    l.bn1.copy(),
                    l.pointwise.copy(),
                    l.pointwise_bias.copy(),
                    l.bn2.copy(),
                )
                for l in self.layers
            ],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            encrypted=self.encrypted,
        )

    def param_tensors(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name (running BN stats excluded)."""
        out = {"embed.e": self.embed.e, "embed.bias": self.embed.bias,
               "embed_bn.gamma": self.embed_bn.gamma, "embed_bn.beta": self.embed_bn.beta}
        for i, l in enumerate(self.layers):
            out[f"layer{i}.depthwise"] = l.depthwise
            out[f"layer{i}.depthwise_bias"] = l.depthwise_bias
            out[f"layer{i}.bn1.gamma"] = l.bn1.gamma
            out[f"layer{i}.bn1.beta"] = l.bn1.beta
            out[f"layer{i}.pointwise"] = l.pointwise
            out[f"layer{i}.pointwise_bias"] = l.pointwise_bias
            out[f"layer{i}.bn2.gamma"] = l.bn2.gamma
            out[f"layer{i}.bn2.beta"] = l.bn2.beta
        out["head_w"] = self.head_w
        out["head_b"] = self.head_b
        return out

    def all_tensors(self) -> dict[str, np.ndarray]:
        """Every float tensor, including running statistics."""
        out = self.param_tensors()
        out["embed_bn.mean"] = self.embed_bn.mean
        out["embed_bn.var"] = self.embed_bn.var
        for i, l in enumerate(self.layers):
            out[f"layer{i}.bn1.mean"] = l.bn1.mean
            out[f"layer{i}.bn1.var"] = l.bn1.var
            out[f"layer{i}.bn2.mean"] = l.bn2.mean
            out[f"layer{i}.bn2.var"] = l.bn2.var
        return out


def patch_embed(blocks: np.ndarray, pe: PatchEmbedding) -> np.ndarray:
    """Token matrix z: one row x_p^i E + bias per block."""
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape[1] != pe.e.shape[0]:
        raise GeometryError(
            f"blocks of length {blocks.shape[-1]} do not match embedding rows {pe.e.shape[0]}"
        )
    return blocks @ pe.e + pe.bias


def transform_model(m: ConvMixerModel, a: OrthoMatrix) -> ConvMixerModel:
    """Key-matched model: replace E with A^T E (A^-1 = A^T), flag encrypted.

    Bias and every other tensor are untouched: the bias is added after the
    block-times-E product, so the plain/encrypted equivalence carries over
    unchanged.
    """
    if m.encrypted:
        raise ValueError("model is already encrypted")
    if a.n != m.block_dim:
        raise GeometryError(f"key matrix is {a.n}x{a.n}, model blocks need {m.block_dim}")
    out = m.copy()
    out.embed.e = a.a.T @ m.embed.e
    out.encrypted = True
    return out


def _pack_floats(a: np.ndarray) -> bytes:
    return a.astype("<f8").tobytes()


def serialize_model(m: ConvMixerModel) -> bytes:
    parts = [
        CMXM_MAGIC,
        struct.pack(
            "<Biiiiii",
            CMXM_VERSION,
            m.patch,
            m.channels,
            m.dim,
            m.depth,
            m.kernel,
            m.classes,
        ),
        struct.pack("<B", 1 if m.encrypted else 0),
        _pack_floats(m.embed.e),
        _pack_floats(m.embed.bias),
        _pack_floats(m.embed_bn.gamma),
        _pack_floats(m.embed_bn.beta),
        _pack_floats(m.embed_bn.mean),
        _pack_floats(m.embed_bn.var),
    ]
    for l in m.layers:
        parts += [
            _pack_floats(l.depthwise),
            _pack_floats(l.depthwise_bias),
            _pack_floats(l.bn1.gamma),
            _pack_floats(l.bn1.beta),
            _pack_floats(l.bn1.mean),
            _pack_floats(l.bn1.var),
            _pack_floats(l.pointwise),
            _pack_floats(l.pointwise_bias),
            _pack_floats(l.bn2.gamma),
            _pack_floats(l.bn2.beta),
            _pack_floats(l.bn2.mean),
            _pack_floats(l.bn2.var),
        ]
    parts += [_pack_floats(m.head_w), _pack_floats(m.head_b)]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.buf):
            raise TruncatedError(self.off, count, len(self.buf) - self.off)
        out = self.buf[self.off : self.off + count]
        self.off += count
        return out

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(n * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def deserialize_model(buf: bytes) -> ConvMixerModel:
    r = _Reader(buf)
    magic = r.take(4)
    if magic != CMXM_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CMXM_MAGIC!r}")
    version, p, c, d, depth, k, classes = struct.unpack("<Biiiiii", r.take(25))
    if version != CMXM_VERSION:
        raise VersionError(f"unsupported model version {version}")
    if min(p, c, d, classes) < 1 or depth < 0 or k < 1 or k % 2 == 0:
        raise FormatError(f"bad geometry p={p} C={c} d={d} depth={depth} k={k} classes={classes}")
    (enc_byte,) = struct.unpack("<B", r.take(1))
    if enc_byte not in (0, 1):
        raise FormatError(f"bad encrypted flag {enc_byte}")

    def bn() -> BatchNormParams:
        return BatchNormParams(r.floats((d,)), r.floats((d,)), r.floats((d,)), r.floats((d,)))

    embed = PatchEmbedding(r.floats((p * p * c, d)), r.floats((d,)))
    embed_bn = bn()
    layers = []
    for _ in range(depth):
        layers.append(
            MixerLayer(
                depthwise=r.floats((d, k, k)),
                depthwise_bias=r.floats((d,)),
                bn1=bn(),
                pointwise=r.floats((d, d)),
                pointwise_bias=r.floats((d,)),
                bn2=bn(),
            )
        )
    head_w = r.floats((classes, d))
    head_b = r.floats((classes,))
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes after model data")
    return ConvMixerModel(
        patch=p,
        channels=c,
        dim=d,
        depth=depth,
        kernel=k,
        classes=classes,
        embed=embed,
        embed_bn=embed_bn,
        layers=layers,
        head_w=head_w,
        head_b=head_b,
        encrypted=bool(enc_byte),
    )


def write_model(m: ConvMixerModel, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_model(m))


def read_model(path) -> ConvMixerModel:
    with open(path, "rb") as f:
        return deserialize_model(f.read())
