"""Length-prefixed binary framing for the inference protocol.

One frame = type byte + 4-byte little-endian payload length + payload.
Types: 0x01 inference request (a CMXE image, embedded verbatim), 0x02
inference response (predicted class + logits), 0x7F error (code + text).
Payloads above 64 MiB are refused before allocation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .image import ImageTensor, decode_cmxe, encode_cmxe

MSG_INFER_REQUEST = 0x01
MSG_INFER_RESPONSE = 0x02
MSG_ERROR = 0x7F

MAX_PAYLOAD = 64 * 1024 * 1024

ERR_MALFORMED = 1
ERR_GEOMETRY = 2
ERR_KIND = 3


class ProtocolError(Exception):
    """Frame- or message-level violation, with its wire error code."""

    def __init__(self, code: int, detail: str):
        self.code = code
        self.detail = detail
        super().__init__(f"protocol error {code}: {detail}")


@dataclass(frozen=True)
class InferRequest:
    image: ImageTensor
    block: int  # block size the image was encrypted with


@dataclass(frozen=True)
class InferResponse:
    predicted: int
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 1:
            raise ValueError("logits must be a vector")
        if int(np.argmax(logits)) != self.predicted:
            raise ValueError("predicted class must be the argmax of the logits")
        object.__setattr__(self, "logits", logits)


@dataclass(frozen=True)
class ErrorMessage:
    code: int
    detail: str


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(ERR_MALFORMED, f"payload of {len(payload)} bytes exceeds limit")
    return struct.pack("<BI", msg_type, len(payload)) + payload


def encode_request(req: InferRequest) -> bytes:
    return encode_frame(MSG_INFER_REQUEST, encode_cmxe(req.image, req.block))


def encode_response(resp: InferResponse) -> bytes:
    payload = struct.pack("<iI", resp.predicted, len(resp.logits)) + resp.logits.astype(
        "<f8"
    ).tobytes()
    return encode_frame(MSG_INFER_RESPONSE, payload)


def encode_error(err: ErrorMessage) -> bytes:
    return encode_frame(MSG_ERROR, struct.pack("<i", err.code) + err.detail.encode("utf-8"))


def decode_message(msg_type: int, payload: bytes):
    """Parse a frame body into its message object."""
    if msg_type == MSG_INFER_REQUEST:
        try:
            image, block = decode_cmxe(payload)
        except Exception as e:
            raise ProtocolError(ERR_MALFORMED, f"bad CMXE payload: {e}") from e
        return InferRequest(image, block)
    if msg_type == MSG_INFER_RESPONSE:
        if len(payload) < 8:
            raise ProtocolError(ERR_MALFORMED, "response payload too short")
        predicted, count = struct.unpack("<iI", payload[:8])
        if len(payload) != 8 + 8 * count:
            raise ProtocolError(ERR_MALFORMED, "response payload length mismatch")
        logits = np.frombuffer(payload, dtype="<f8", count=count, offset=8).copy()
        try:
            return InferResponse(predicted, logits)
        except ValueError as e:
            raise ProtocolError(ERR_MALFORMED, str(e)) from e
    if msg_type == MSG_ERROR:
        if len(payload) < 4:
            raise ProtocolError(ERR_MALFORMED, "error payload too short")
        (code,) = struct.unpack("<i", payload[:4])
        return ErrorMessage(code, payload[4:].decode("utf-8", errors="replace"))
    raise ProtocolError(ERR_MALFORMED, f"unknown message type 0x{msg_type:02X}")


def read_exact(sock, count: int) -> bytes:
    """Read exactly count bytes from a socket; ConnectionError on EOF."""
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            raise ConnectionError(f"connection closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock) -> tuple[int, bytes]:
    """Read one (type, payload) frame; ProtocolError on oversize length."""
    head = read_exact(sock, 5)
    msg_type, length = struct.unpack("<BI", head)
    if length > MAX_PAYLOAD:
        raise ProtocolError(ERR_MALFORMED, f"declared payload of {length} bytes exceeds limit")
    return msg_type, read_exact(sock, length)
