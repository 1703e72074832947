"""Client-side encrypted inference.

The client owns the key: it regenerates the orthogonal matrix from the
seed, encrypts the plain image locally, and only the encrypted blocks
cross the wire. The response carries the predicted class and raw logits.
"""

from __future__ import annotations

import socket

from .cipher import SecretKey, encrypt_image, generate_orthogonal, read_key
from .image import ImageTensor
from .wire import (
    ErrorMessage,
    InferRequest,
    InferResponse,
    ProtocolError,
    decode_message,
    encode_request,
    read_frame,
)


class RemoteError(Exception):
    """Server answered with an error message."""

    def __init__(self, code: int, detail: str):
        self.code = code
        self.detail = detail
        super().__init__(f"server error {code}: {detail}")


def infer_encrypted(host: str, port: int, image: ImageTensor, block: int, timeout: float = 10.0) -> InferResponse:
    """Send an already-encrypted image; returns the InferResponse."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(encode_request(InferRequest(image, block)))
        msg_type, payload = read_frame(sock)
    msg = decode_message(msg_type, payload)
    if isinstance(msg, ErrorMessage):
        raise RemoteError(msg.code, msg.detail)
    if not isinstance(msg, InferResponse):
        raise ProtocolError(1, f"unexpected reply type 0x{msg_type:02X}")
    return msg


def client_infer(host: str, port: int, key: SecretKey, image: ImageTensor, timeout: float = 10.0) -> InferResponse:
    """Encrypt a plain image with the key and query the provider."""
    a = generate_orthogonal(key)
    encrypted = encrypt_image(image, a, key.patch)
    return infer_encrypted(host, port, encrypted, key.patch, timeout=timeout)


def client_infer_files(host: str, port: int, key_path, image_path, timeout: float = 10.0) -> InferResponse:
    """File-level convenience: load key and PPM image, then query."""
    from .image import read_ppm

    key = read_key(key_path)
    image = read_ppm(image_path)
    return client_infer(host, port, key, image, timeout=timeout)
