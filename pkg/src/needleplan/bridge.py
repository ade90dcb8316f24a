"""HTTP bridge for the browser UI: serves the static bundle, forwards the
plan-service message vocabulary unchanged over POST, and exposes a one-shot
downsampled volume preview for slice rendering."""
from __future__ import annotations

import base64
import json
import threading
from http import HTTPStatus
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import service, volume as volmod

DEFAULT_STATIC_DIR = Path(__file__).resolve().parents[2] / "frontend" / "dist"


class _BridgeState:
    def __init__(self, tcp_host, tcp_port):
        self.tcp_host = tcp_host
        self.tcp_port = tcp_port
        self.client = None
        self.lock = threading.Lock()
        self.volume_path = None

    def request(self, msg):
        with self.lock:
            if self.client is None:
                self.client = service.PlanClient(self.tcp_host, self.tcp_port)
            if isinstance(msg, dict) and msg.get("type") == "set_volume":
                self.volume_path = msg.get("path")
            return self.client.request(msg)

    def preview(self):
        if self.volume_path is None:
            raise ValueError("no volume loaded yet")
        vol = volmod.load_volume(self.volume_path)
        while max(vol.dims) > 128:
            try:
                vol = volmod.downsample_half(vol)
            except volmod.TooSmall:
                break
        raw = np.asfortranarray(vol.voxels).astype("<i2").tobytes(order="F")
        return {
            "dims": list(vol.dims),
            "spacing": [float(s) for s in vol.spacing],
            "origin": [float(o) for o in vol.origin],
            "data_base64": base64.b64encode(raw).decode(),
        }


def _make_handler(state: _BridgeState, static_dir):
    class Handler(SimpleHTTPRequestHandler):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, directory=str(static_dir), **kwargs)

        def log_message(self, *args):
            pass

        def _json(self, obj, status=HTTPStatus.OK):
            payload = json.dumps(obj).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(payload)

        def do_POST(self):
            if self.path != "/api/message":
                self._json({"type": "err", "code": "BadRequest",
                            "message": "unknown endpoint"}, HTTPStatus.NOT_FOUND)
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                msg = json.loads(self.rfile.read(length).decode())
                response = state.request(msg)
            except Exception as e:
                response = {"type": "err", "code": "BridgeError", "message": str(e)}
            self._json(response)

        def do_GET(self):
            if self.path.startswith("/api/preview"):
                try:
                    self._json(state.preview())
                except Exception as e:
                    self._json({"type": "err", "code": "BridgeError",
                                "message": str(e)}, HTTPStatus.BAD_REQUEST)
                return
            super().do_GET()

    return Handler


class UiBridge:
    def __init__(self, host, tcp_port, http_port, static_dir=None):
        static = Path(static_dir) if static_dir else DEFAULT_STATIC_DIR
        self.state = _BridgeState(host, tcp_port)
        self._http = ThreadingHTTPServer((host, http_port),
                                         _make_handler(self.state, static))
        self._thread = None

    @property
    def address(self):
        return self._http.server_address

    def start(self):
        self._thread = threading.Thread(target=self._http.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._http.serve_forever()

    def shutdown(self):
        self._http.shutdown()
        self._http.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve_with_ui(host, tcp_port, http_port, config, static_dir=None):
    """Run the TCP plan service plus the HTTP bridge until interrupted."""
    server = service.PlanServer(host, tcp_port, config).start()
    bridge = UiBridge(host, tcp_port, http_port, static_dir)
    try:
        bridge.serve_forever()
    finally:
        bridge.shutdown()
        server.shutdown()
