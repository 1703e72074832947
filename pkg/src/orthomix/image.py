"""Image tensors and their on-disk forms (PPM and the CMXE container).

An image is an H x W x C float64 array in (row, column, channel) order with
a kind flag: plain images live in [0, 1], encrypted images are unbounded
reals. CMXE files carry the kind flag so a provider can refuse plain
payloads; PPM (binary P6, 8-bit) covers ingest/export of viewable images.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, FormatError, GeometryError, TruncatedError, VersionError

PLAIN = "plain"
ENCRYPTED = "encrypted"

CMXE_MAGIC = b"CMXE"
CMXE_VERSION = 1


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C raster with a plain/encrypted kind flag."""

    data: np.ndarray
    kind: str = PLAIN

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise GeometryError(f"image must be HxWxC, got ndim={d.ndim}")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite values")
        if self.kind not in (PLAIN, ENCRYPTED):
            raise ValueError(f"unknown image kind {self.kind!r}")
        if self.kind == PLAIN and (d.min() < 0.0 or d.max() > 1.0):
            raise ValueError(
                f"plain image values must lie in [0,1], got [{d.min():.6g}, {d.max():.6g}]"
            )
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _take(buf: bytes, offset: int, count: int) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise TruncatedError(offset, count, len(buf) - offset)
    return buf[offset : offset + count], offset + count


def encode_cmxe(img: ImageTensor, block: int = 0) -> bytes:
    """Serialize to the CMXE container.

    `block` records the block size the image was encrypted with (0 when
    not applicable, e.g. plain images).
    """
    h, w, c = img.shape
    head = CMXE_MAGIC + struct.pack(
        "<BBiiii", CMXE_VERSION, 1 if img.kind == ENCRYPTED else 0, h, w, c, block
    )
    return head + img.data.astype("<f8").tobytes()


def decode_cmxe(buf: bytes) -> tuple[ImageTensor, int]:
    """Parse a CMXE byte string; returns (image, block size)."""
    magic, off = _take(buf, 0, 4)
    if magic != CMXE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CMXE_MAGIC!r}")
    head, off = _take(buf, off, struct.calcsize("<BBiiii"))
    version, kind_byte, h, w, c, block = struct.unpack("<BBiiii", head)
    if version != CMXE_VERSION:
        raise VersionError(f"unsupported CMXE version {version}")
    if kind_byte not in (0, 1):
        raise FormatError(f"bad kind byte {kind_byte}")
    if h <= 0 or w <= 0 or c <= 0 or block < 0:
        raise FormatError(f"bad geometry H={h} W={w} C={c} p={block}")
    raw, off = _take(buf, off, h * w * c * 8)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after image data")
    data = np.frombuffer(raw, dtype="<f8").reshape(h, w, c)
    kind = ENCRYPTED if kind_byte == 1 else PLAIN
    return ImageTensor(data.copy(), kind), block


def write_cmxe(img: ImageTensor, path, block: int = 0) -> None:
    with open(path, "wb") as f:
        f.write(encode_cmxe(img, block))


def read_cmxe(path) -> tuple[ImageTensor, int]:
    with open(path, "rb") as f:
        return decode_cmxe(f.read())


def write_ppm(img: ImageTensor, path) -> None:
    """Export as binary PPM (P6, 8-bit), round-half-up quantization.

    Requires plain-range values; single-channel images are replicated to
    gray RGB.
    """
    d = img.data
    if d.min() < 0.0 or d.max() > 1.0:
        raise ValueError("PPM export requires values in [0,1]; normalize first")
    if img.channels == 1:
        d = np.repeat(d, 3, axis=2)
    elif img.channels != 3:
        raise GeometryError(f"PPM supports 1 or 3 channels, got {img.channels}")
    pixels = np.floor(d * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        f.write(pixels.tobytes())


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-delimited header tokens, skipping # comments.

    Returns the tokens and the offset one byte past the whitespace that
    terminates the last token (where binary data begins).
    """
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(buf):
            raise TruncatedError(i, 1, 0)
        ch = buf[i : i + 1]
        if ch == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
                j += 1
            tokens.append(buf[i:j])
            i = j
    if i >= len(buf) or not buf[i : i + 1].isspace():
        raise FormatError("PPM header not terminated by whitespace")
    return tokens, i + 1


def read_ppm(path) -> ImageTensor:
    """Ingest a binary PPM (P6, 8-bit) as a plain image in [0,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    tokens, off = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise BadMagicError(f"not a binary PPM: magic {tokens[0]!r}")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise FormatError(f"bad PPM header: {e}") from None
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval={maxval}")
    raw, _ = _take(buf, off, h * w * 3)
    data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0
    return ImageTensor(data, PLAIN)
