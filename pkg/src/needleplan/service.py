"""TCP plan service: one line-delimited JSON request/response per message,
one isolated session per connection, strictly sequential within a session."""
from __future__ import annotations

import base64
import io
import json
import secrets
import socket
import socketserver
import threading
from dataclasses import dataclass, field

import numpy as np

from . import collision, geometry, kinematics, planner, segmentation, volume as volmod
from .mesh import save_ply
from .planner import Classification, PlanParams

DEFAULT_PORT = 7455


class BindFailure(OSError):
    pass


class ServiceError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class PlanConfig:
    skin_threshold_hu: float = segmentation.SKIN_THRESHOLD_HU
    closing_radius_mm: float = segmentation.CLOSING_RADIUS_MM
    smoothing_iterations: int = 10
    params: PlanParams = field(default_factory=PlanParams)
    downsample: bool = False
    noise_sigma_mm: float = 0.0
    seed: int = 0
    workers: int = 1
    log_path: str | None = None


def encode_message(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _require(msg, key, kind=None):
    if key not in msg:
        raise ServiceError("BadRequest", f"missing field {key!r}")
    val = msg[key]
    if kind is not None and not isinstance(val, kind):
        raise ServiceError("BadRequest", f"field {key!r} has the wrong type")
    return val


def _point(msg, *keys):
    return np.array([float(_require(msg, k, (int, float))) for k in keys])


def simulate_execution(target, entry, sigma_mm, rng):
    """Simulated insertion: the guide tip stops one biopsy-center offset short
    of the target (centering the sample notch on it) and the whole needle is
    displaced laterally by zero-mean Gaussian noise in the perpendicular
    plane. Returns (executed_entry, executed_tip)."""
    target = np.asarray(target, dtype=float)
    entry = np.asarray(entry, dtype=float)
    axis = geometry.unit(target - entry)
    tip = target - planner.BIOPSY_CENTER_OFFSET_MM * axis
    if sigma_mm <= 0:
        return entry.copy(), tip
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, axis)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = geometry.unit(np.cross(axis, helper))
    v = np.cross(axis, u)
    g1, g2 = rng.normal(0.0, sigma_mm, 2)
    offset = g1 * u + g2 * v
    return entry + offset, tip + offset


class PlanSession:
    """Per-connection planning state; handlers mutate only on success."""

    def __init__(self, config: PlanConfig):
        self.config = config
        self.volume = None
        self.body = None
        self.mesh = None
        self.scene = None
        self.arm = None
        self.target = None
        self.heatmap = None
        self.cells = None
        self.cell_results = {}
        self.exact_results = {}
        self.selected = None
        self.pending_token = None
        self.history = []
        self.rng = np.random.default_rng(config.seed)

    # ------------------------------------------------------------- handlers

    def handle(self, msg):
        if not isinstance(msg, dict) or "type" not in msg:
            raise ServiceError("BadRequest", "message must be an object with a 'type'")
        handler = getattr(self, "_on_" + str(msg["type"]), None)
        if handler is None:
            raise ServiceError("BadRequest", f"unknown message type {msg['type']!r}")
        return handler(msg)

    def _on_set_volume(self, msg):
        path = _require(msg, "path", str)
        try:
            vol = volmod.load_volume(path)
        except FileNotFoundError:
            raise ServiceError("BadRequest", f"no such volume file: {path}")
        except (volmod.MalformedHeader, volmod.UnsupportedEncoding,
                volmod.DimensionMismatch) as e:
            raise ServiceError(type(e).__name__, str(e))
        if self.config.downsample:
            vol = volmod.downsample_half(vol)
        body = segmentation.body_mask(vol, self.config.skin_threshold_hu,
                                      self.config.closing_radius_mm)
        mesh = segmentation.extract_surface(body, self.config.smoothing_iterations)
        self.volume, self.body, self.mesh = vol, body, mesh
        self.scene = None
        self.target = None
        self._drop_heatmap()
        return {"type": "ok", "dims": list(vol.dims),
                "spacing": [float(s) for s in vol.spacing]}

    def _on_info(self, msg):
        if self.volume is None:
            raise ServiceError("NoVolume", "no volume loaded")
        return {"type": "ok", "dims": list(self.volume.dims),
                "spacing": [float(s) for s in self.volume.spacing]}

    def _on_set_scene(self, msg):
        path = _require(msg, "path", str)
        try:
            scene, arm = collision.load_scene(path, session_mesh=self.mesh)
        except FileNotFoundError:
            raise ServiceError("BadRequest", f"no such scene file: {path}")
        except (ValueError, KeyError) as e:
            raise ServiceError("BadRequest", f"bad scene file: {e}")
        if scene.body is None:
            raise ServiceError("BadRequest", "scene references the session mesh "
                                             "but no volume is loaded")
        self.scene, self.arm = scene, arm
        self.cell_results = {}
        self.exact_results = {}
        return {"type": "ok"}

    def _on_set_target(self, msg):
        if self.volume is None:
            raise ServiceError("NoVolume", "no volume loaded")
        target = _point(msg, "x", "y", "z")
        if not planner._target_strictly_inside(self.body, target):
            raise ServiceError("TargetOutsideBody",
                               "target must lie strictly inside the body mask")
        self.target = target
        self._drop_heatmap()
        return {"type": "ok"}

    def _on_heatmap(self, msg):
        if self.volume is None:
            raise ServiceError("NoVolume", "no volume loaded")
        if self.target is None:
            raise ServiceError("NoTarget", "set_target must come first")
        hm = planner.build_heatmap(self.volume, self.body, self.mesh, self.target,
                                   self.config.params, workers=self.config.workers)
        cells = collision.feasible_cells(hm, self.config.params.grid_mm)
        buf = io.StringIO()
        save_ply(hm.mesh, buf, quality=hm.export_scalars())
        payload = base64.b64encode(buf.getvalue().encode()).decode()
        self.heatmap = hm
        self.cells = cells
        self.cell_results = {}
        self.exact_results = {}
        self.selected = None
        self.pending_token = None
        return {"type": "ok", "ply_payload_base64": payload,
                "optimal": hm.optimal_index,
                "class_counts": hm.class_counts()}

    def _on_check_reachability(self, msg):
        points = _require(msg, "points", list)
        if self.heatmap is None:
            raise ServiceError("NoTarget", "heatmap must be computed first")
        if self.scene is None:
            raise ServiceError("NoScene", "set_scene must come first")
        n = len(self.heatmap.mesh.vertices)
        ids = []
        for p in points:
            if not isinstance(p, int) or p < 0 or p >= n:
                raise ServiceError("BadRequest", f"bad vertex id {p!r}")
            ids.append(p)
        # verdicts come from this point's grid cell; representatives are drawn
        # from the full heat map, so sharded queries merge consistently
        vert_cell = {}
        need = set()
        for i in ids:
            if int(self.heatmap.classification[i]) != Classification.FEASIBLE:
                continue
            key = collision.cell_key(self.heatmap.mesh.vertices[i], self.heatmap,
                                     self.config.params.grid_mm)
            vert_cell[i] = key
            if key in self.cells:
                need.add(key)
        collision.evaluate_cells(self.scene, self.arm, self.heatmap, self.cells,
                                 keys=need, cache=self.cell_results,
                                 workers=self.config.workers)
        verdicts = []
        for i in ids:
            cls = Classification(int(self.heatmap.classification[i]))
            if i in vert_cell and vert_cell[i] in self.cell_results:
                res = self.cell_results[vert_cell[i]]
                verdicts.append({"reachable": bool(res.reachable),
                                 "reason": res.reason_name()})
            elif cls == Classification.UNREACHABLE:
                verdicts.append({"reachable": False, "reason": None})
            else:
                verdicts.append({"reachable": False, "reason": "NotFeasible"})
        hm = collision.apply_cell_verdicts(self.heatmap, self.cells, self.cell_results)
        for key, res in self.cell_results.items():
            if key in self.cells:
                self.exact_results[self.cells[key][0]] = res
        self.heatmap = hm
        return {"type": "ok", "verdicts": verdicts}

    def _entry_payload(self, i):
        c = self.heatmap.candidate(i)
        return {
            "vertex": c.vertex,
            "position": [float(x) for x in c.position],
            "cost": c.cost,
            "distance_mm": c.distance_mm,
            "angle_deg": c.angle_deg,
        }

    def _on_select(self, msg):
        if self.heatmap is None:
            raise ServiceError("NoTarget", "heatmap must be computed first")
        if "vertex" in msg and msg["vertex"] is not None:
            i = _require(msg, "vertex", int)
            if i < 0 or i >= len(self.heatmap.mesh.vertices):
                raise ServiceError("BadRequest", f"bad vertex id {i}")
            if int(self.heatmap.classification[i]) != Classification.FEASIBLE:
                raise ServiceError("NotFeasible",
                                   "selected vertex is not classified Feasible")
            if self.scene is not None:
                res = self.exact_results.get(i)
                if res is None:
                    res = collision.insertion_feasible(
                        self.scene, self.arm, self.heatmap.mesh.vertices[i], self.target)
                    self.exact_results[i] = res
                if not res.reachable:
                    raise ServiceError("NotReachable",
                                       f"exact check failed: {res.reason_name()}")
            self.heatmap.optimal_index = int(i)
            self.selected = int(i)
        else:
            if self.scene is not None:
                hm = collision.reverify_optimum(self.scene, self.arm, self.heatmap,
                                                self.exact_results)
            else:
                planner.select_optimal(self.heatmap)
                hm = self.heatmap
            self.heatmap = hm
            self.selected = hm.optimal_index
        if self.selected is None:
            return {"type": "ok", "entry": None}
        self.pending_token = None
        return {"type": "ok", "entry": self._entry_payload(self.selected)}

    def _on_execute(self, msg):
        if self.selected is None:
            raise ServiceError("NoTarget", "select an entry point first")
        token = msg.get("confirm_token")
        if token is None:
            self.pending_token = secrets.token_hex(8)
            return {"type": "needs_confirm", "token": self.pending_token}
        if self.pending_token is None or token != self.pending_token:
            raise ServiceError("NotConfirmed",
                               "confirm token missing or stale; request one first")
        entry_pos = self.heatmap.mesh.vertices[self.selected]
        verdict = None
        if self.scene is not None:
            res = self.exact_results.get(self.selected)
            if res is None:
                res = collision.insertion_feasible(self.scene, self.arm, entry_pos,
                                                   self.target)
                self.exact_results[self.selected] = res
            if not res.reachable:
                raise ServiceError("NotReachable",
                                   f"exact check failed: {res.reason_name()}")
            verdict = {"reachable": True, "reason": None}
        entry_exec, tip = simulate_execution(self.target, entry_pos,
                                             self.config.noise_sigma_mm, self.rng)
        report = planner.placement_report(self.target, entry_exec, tip)
        record = {
            "target": [float(x) for x in self.target],
            "entry": self._entry_payload(self.selected),
            "class_counts": self.heatmap.class_counts(),
            "reachability": verdict,
            "executed_entry": [float(x) for x in entry_exec],
            "executed_tip": [float(x) for x in tip],
            "report": report.to_dict(),
        }
        self.pending_token = None
        self.history.append(record)
        if self.config.log_path:
            with open(self.config.log_path, "a") as f:
                f.write(encode_message({"type": "plan_record", "record": record}))
        return {"type": "ok", "record": record}

    def _on_evaluate(self, msg):
        target = np.asarray(_require(msg, "target", list), dtype=float)
        entry = np.asarray(_require(msg, "entry", list), dtype=float)
        tip = np.asarray(_require(msg, "tip", list), dtype=float)
        if target.shape != (3,) or entry.shape != (3,) or tip.shape != (3,):
            raise ServiceError("BadRequest", "target/entry/tip must be 3-vectors")
        try:
            report = planner.placement_report(target, entry, tip)
        except planner.DegenerateNeedle as e:
            raise ServiceError("DegenerateNeedle", str(e))
        return {"type": "ok", "dev3d": report.deviation_3d_mm,
                "devlat": report.deviation_lateral_mm}

    def _drop_heatmap(self):
        self.heatmap = None
        self.cells = None
        self.cell_results = {}
        self.exact_results = {}
        self.selected = None
        self.pending_token = None


def run_batch_plan(volume_path, target, config: PlanConfig, scene_path=None,
                   entry_vertex=None):
    """Batch-mode plan: the same message sequence a client would send, run
    against a local session. Returns (record, heatmap, session)."""
    session = PlanSession(config)
    session.handle({"type": "set_volume", "path": str(volume_path)})
    if scene_path is not None:
        session.handle({"type": "set_scene", "path": str(scene_path)})
    session.handle({"type": "set_target",
                    "x": float(target[0]), "y": float(target[1]), "z": float(target[2])})
    session.handle({"type": "heatmap"})
    if scene_path is not None:
        ids = list(range(len(session.heatmap.mesh.vertices)))
        session.handle({"type": "check_reachability", "points": ids})
    sel = session.handle({"type": "select", "vertex": entry_vertex}
                         if entry_vertex is not None else {"type": "select"})
    if sel["entry"] is None:
        return None, session.heatmap, session
    pending = session.handle({"type": "execute"})
    record = session.handle({"type": "execute", "confirm_token": pending["token"]})
    return record["record"], session.heatmap, session


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = PlanSession(self.server.plan_config)
        while True:
            line = self.rfile.readline()
            if not line:
                break
            try:
                msg = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._send({"type": "err", "code": "BadRequest",
                            "message": "not a valid JSON line"})
                continue
            try:
                response = session.handle(msg)
            except ServiceError as e:
                response = {"type": "err", "code": e.code, "message": e.message}
            except Exception as e:  # defensive: never drop the connection
                response = {"type": "err", "code": "Internal", "message": str(e)}
            self._send(response)

    def _send(self, obj):
        self.wfile.write(encode_message(obj).encode("utf-8"))
        self.wfile.flush()


class PlanServer:
    """Threaded TCP server; one PlanSession per connection."""

    def __init__(self, host="127.0.0.1", port=DEFAULT_PORT, config=None):
        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        try:
            self._server = _Server((host, port), _Handler)
        except OSError as e:
            raise BindFailure(f"cannot bind {host}:{port}: {e}") from e
        self._server.plan_config = config or PlanConfig()
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(host="127.0.0.1", port=DEFAULT_PORT, config=None):
    """Blocking entry point used by the CLI."""
    server = PlanServer(host, port, config)
    try:
        server.serve_forever()
    finally:
        server.shutdown()


class PlanClient:
    """Line-delimited JSON client over a persistent TCP connection."""

    def __init__(self, host="127.0.0.1", port=DEFAULT_PORT, timeout=60.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def request(self, msg):
        self._file.write(encode_message(msg).encode("utf-8"))
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ConnectionError("service closed the connection")
        return json.loads(line.decode("utf-8"))

    def send_raw(self, text):
        self._file.write(text.encode("utf-8"))
        self._file.flush()
        line = self._file.readline()
        return json.loads(line.decode("utf-8")) if line else None

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
