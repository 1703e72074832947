"""Block-wise image encryption with a seeded random orthogonal matrix.

The only secret is a 64-bit seed plus the block geometry (p, C). The key
matrix A is an n x n orthogonal matrix, n = p^2*C, regenerated on demand
from the seed; its inverse is its transpose. Encryption flattens each
p x p x C block to a row vector and right-multiplies by A.

A conventional baseline cipher (fixed per-key pixel shuffle + negative-
positive flips, shared across blocks) is included for leakage comparisons.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, FormatError, GeometryError, TruncatedError, VersionError
from .image import ENCRYPTED, PLAIN, ImageTensor
from .linalg import DegenerateError, modified_gram_schmidt, orthogonality_defect
from .rng import MASK64, SplitMix64

OKEY_MAGIC = b"OKEY"
OKEY_VERSION = 1

# Hard ceiling on how far a generated key matrix may stray from exact
# orthogonality in float64.
ORTHO_DEFECT_LIMIT = 1e-10


@dataclass(frozen=True)
class SecretKey:
    """Seed plus block geometry; everything else is derived."""

    seed: int
    patch: int
    channels: int

    def __post_init__(self):
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.patch < 1:
            raise ValueError(f"patch size must be >= 1, got {self.patch}")
        if self.channels < 1:
            raise ValueError(f"channel count must be >= 1, got {self.channels}")

    @property
    def dim(self) -> int:
        return self.patch * self.patch * self.channels


@dataclass(frozen=True)
class OrthoMatrix:
    """Orthogonal key matrix; `a.T` is the decryption matrix."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GeometryError(f"key matrix must be square, got {a.shape}")
        defect = orthogonality_defect(a)
        if defect > ORTHO_DEFECT_LIMIT:
            raise ValueError(f"matrix is not orthogonal: defect {defect:.3e}")
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]


def generate_orthogonal(key: SecretKey) -> OrthoMatrix:
    """Derive the key matrix from the seed.

    Fills an n x n matrix with uniform [-1,1) draws (row-major) and
    orthonormalizes its rows. Degenerate or too-ill-conditioned draws are
    discarded and the fill repeats from the advanced generator state, so
    the result is still a pure function of the key.
    """
    n = key.dim
    rng = SplitMix64(key.seed)
    while True:
        r = rng.uniform_array((n, n))
        try:
            q = modified_gram_schmidt(r)
        except DegenerateError:
            continue
        if orthogonality_defect(q) <= ORTHO_DEFECT_LIMIT:
            return OrthoMatrix(q)


def blockify(x: ImageTensor, patch: int) -> np.ndarray:
    """Split into flattened p x p x C blocks, raster order.

    Returns an N x (p^2*C) array, N = (H*W)/p^2. Within a block the flat
    index is (h*p + w)*C + c: row-major, channel fastest. This layout must
    match the row order of the model's embedding matrix.
    """
    h, w, c = x.shape
    if patch < 1:
        raise GeometryError(f"patch size must be >= 1, got {patch}")
    if h % patch or w % patch:
        raise GeometryError(f"image {h}x{w} not divisible into {patch}x{patch} blocks")
    bh, bw = h // patch, w // patch
    blocks = (
        x.data.reshape(bh, patch, bw, patch, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(bh * bw, patch * patch * c)
    )
    return np.ascontiguousarray(blocks)


def deblockify(blocks: np.ndarray, height: int, width: int, channels: int, patch: int, kind: str = PLAIN) -> ImageTensor:
    """Exact inverse of blockify."""
    blocks = np.asarray(blocks, dtype=np.float64)
    if patch < 1 or height % patch or width % patch:
        raise GeometryError(f"image {height}x{width} not divisible into {patch}x{patch} blocks")
    n_blocks = (height * width) // (patch * patch)
    dim = patch * patch * channels
    if blocks.ndim != 2 or blocks.shape != (n_blocks, dim):
        raise GeometryError(
            f"expected {n_blocks} blocks of length {dim}, got array of shape {blocks.shape}"
        )
    bh, bw = height // patch, width // patch
    data = (
        blocks.reshape(bh, bw, patch, patch, channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(height, width, channels)
    )
    return ImageTensor(data.copy(), kind)


def _check_geometry(x: ImageTensor, a: OrthoMatrix, patch: int) -> None:
    if a.n != patch * patch * x.channels:
        raise GeometryError(
            f"key matrix is {a.n}x{a.n}, but p={patch} with {x.channels} channels needs "
            f"{patch * patch * x.channels}"
        )
    if x.height % patch or x.width % patch:
        raise GeometryError(
            f"image {x.height}x{x.width} not divisible into {patch}x{patch} blocks"
        )


def encrypt_image(x: ImageTensor, a: OrthoMatrix, patch: int) -> ImageTensor:
    """Right-multiply every flattened block by A; output kind is encrypted."""
    if x.kind != PLAIN:
        raise ValueError("encrypt_image expects a plain image")
    _check_geometry(x, a, patch)
    blocks = blockify(x, patch)
    return deblockify(blocks @ a.a, x.height, x.width, x.channels, patch, kind=ENCRYPTED)


def decrypt_image(xhat: ImageTensor, a: OrthoMatrix, patch: int) -> ImageTensor:
    """Right-multiply every block by A^T (= A^-1); output kind is plain.

    Round-trip rounding can overshoot [0,1] by ~1e-13; values are clipped
    back into the plain range.
    """
    if xhat.kind != ENCRYPTED:
        raise ValueError("decrypt_image expects an encrypted image")
    _check_geometry(xhat, a, patch)
    blocks = blockify(xhat, patch)
    restored = np.clip(blocks @ a.a.T, 0.0, 1.0)
    return deblockify(restored, xhat.height, xhat.width, xhat.channels, patch, kind=PLAIN)


def conventional_pattern(key: SecretKey) -> tuple[np.ndarray, np.ndarray]:
    """Per-key shuffle/flip pattern of the conventional baseline cipher.

    Returns (perm, flip): a permutation of the p^2*C block positions and a
    boolean mask of positions that get the negative-positive transform
    v -> 1 - v. One pattern is shared by every block.
    """
    rng = SplitMix64(key.seed)
    perm = rng.permutation(key.dim)
    flip = np.array([rng.next_u64() & 1 == 1 for _ in range(key.dim)], dtype=bool)
    return perm, flip


def conventional_encrypt(x: ImageTensor, key: SecretKey) -> ImageTensor:
    """Baseline block cipher: fixed pixel shuffle + negative-positive flips."""
    if x.kind != PLAIN:
        raise ValueError("conventional_encrypt expects a plain image")
    if x.channels != key.channels:
        raise GeometryError(f"image has {x.channels} channels, key expects {key.channels}")
    perm, flip = conventional_pattern(key)
    blocks = blockify(x, key.patch)
    out = blocks[:, perm]
    out[:, flip] = 1.0 - out[:, flip]
    return deblockify(out, x.height, x.width, x.channels, key.patch, kind=ENCRYPTED)


def conventional_decrypt(xhat: ImageTensor, key: SecretKey) -> ImageTensor:
    """Exact inverse of conventional_encrypt (flips are involutions,
    the shuffle is inverted by integer index arithmetic)."""
    if xhat.kind != ENCRYPTED:
        raise ValueError("conventional_decrypt expects an encrypted image")
    if xhat.channels != key.channels:
        raise GeometryError(f"image has {xhat.channels} channels, key expects {key.channels}")
    perm, flip = conventional_pattern(key)
    blocks = blockify(xhat, key.patch)
    blocks[:, flip] = 1.0 - blocks[:, flip]
    inv = np.empty_like(perm)
    inv[perm] = np.arange(key.dim)
    out = blocks[:, inv]
    return deblockify(out, xhat.height, xhat.width, xhat.channels, key.patch, kind=PLAIN)


def encode_key(key: SecretKey) -> bytes:
    return OKEY_MAGIC + struct.pack("<BQii", OKEY_VERSION, key.seed, key.patch, key.channels)


def decode_key(buf: bytes) -> SecretKey:
    if len(buf) < 4:
        raise TruncatedError(0, 4, len(buf))
    if buf[:4] != OKEY_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {OKEY_MAGIC!r}")
    body = struct.calcsize("<BQii")
    if len(buf) < 4 + body:
        raise TruncatedError(4, body, len(buf) - 4)
    version, seed, patch, channels = struct.unpack("<BQii", buf[4 : 4 + body])
    if version != OKEY_VERSION:
        raise VersionError(f"unsupported key version {version}")
    if len(buf) != 4 + body:
        raise FormatError(f"{len(buf) - 4 - body} trailing bytes in key file")
    return SecretKey(seed=seed, patch=patch, channels=channels)


def write_key(key: SecretKey, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_key(key))


def read_key(path) -> SecretKey:
    with open(path, "rb") as f:
        return decode_key(f.read())
