"""Provider-side inference service.

Serves a transformed (encrypted-flag) model over the length-prefixed wire
protocol. The server holds no key material at all: it loads the model
file, answers inference requests, and refuses plain-kind images. Each
connection gets its own thread; the model is shared read-only.
"""

from __future__ import annotations

import socket
import socketserver
import threading

import numpy as np

from .engine import forward_batch
from .errors import GeometryError
from .image import ENCRYPTED
from .model import ConvMixerModel, read_model
from .wire import (
    ERR_GEOMETRY,
    ERR_KIND,
    ERR_MALFORMED,
    MSG_INFER_REQUEST,
    ErrorMessage,
    InferRequest,
    InferResponse,
    ProtocolError,
    decode_message,
    encode_error,
    encode_response,
    read_frame,
)


def answer_request(model: ConvMixerModel, req: InferRequest) -> InferResponse:
    """Run one encrypted image through the model; enforce wire invariants."""
    img = req.image
    if img.kind != ENCRYPTED:
        raise ProtocolError(ERR_KIND, "provider accepts encrypted images only")
    if img.channels != model.channels:
        raise ProtocolError(
            ERR_GEOMETRY, f"image has {img.channels} channels, model expects {model.channels}"
        )
    if req.block != model.patch:
        raise ProtocolError(
            ERR_GEOMETRY, f"image encrypted with p={req.block}, model expects p={model.patch}"
        )
    if img.height % model.patch or img.width % model.patch:
        raise ProtocolError(
            ERR_GEOMETRY,
            f"image {img.height}x{img.width} not divisible into {model.patch}x{model.patch} blocks",
        )
    try:
        logits, _ = forward_batch(model, img.data[None], training=False)
    except GeometryError as e:
        raise ProtocolError(ERR_GEOMETRY, str(e)) from e
    logits = logits[0]
    return InferResponse(int(np.argmax(logits)), logits)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        model = self.server.model
        while True:
            try:
                msg_type, payload = read_frame(self.request)
            except (ConnectionError, OSError):
                return  # client closed or vanished; nothing to answer
            try:
                if msg_type != MSG_INFER_REQUEST:
                    raise ProtocolError(
                        ERR_MALFORMED, f"unexpected message type 0x{msg_type:02X}"
                    )
                req = decode_message(msg_type, payload)
                resp = answer_request(model, req)
                self.request.sendall(encode_response(resp))
            except ProtocolError as e:
                try:
                    self.request.sendall(encode_error(ErrorMessage(e.code, e.detail)))
                except OSError:
                    return
            except Exception as e:  # isolate this connection; never crash the server
                try:
                    self.request.sendall(
                        encode_error(ErrorMessage(ERR_MALFORMED, f"internal error: {e}"))
                    )
                except OSError:
                    return


class InferenceServer(socketserver.ThreadingTCPServer):
    """TCP server bound to a transformed model; one thread per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, model: ConvMixerModel, host: str = "127.0.0.1", port: int = 0):
        if not model.encrypted:
            raise ValueError("refusing to serve a plain model; transform it first")
        self.model = model
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def serve_in_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def serve(model_path, host: str, port: int) -> None:
    """Load a transformed model file and serve until interrupted."""
    model = read_model(model_path)
    with InferenceServer(model, host, port) as server:
        addr = server.address
        print(f"serving encrypted-inference model on {addr[0]}:{addr[1]}")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
