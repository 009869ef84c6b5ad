"""HTTP render service over an opened archive.

Endpoints:
    GET  /archive           archive summary (same JSON as the info CLI)
    POST /render            RenderRequest JSON body -> PNG
    GET  /render?...        query-string form of the same request -> PNG

A RenderRequest names a time index, an output resolution, a horizontal FOV,
a per-ray sample count, a quality mode ("full" or "preview": preview halves
resolution and samples), and a camera given either as a 4x4 camera-to-world
transform_matrix or as {position, look_at, up}. Responses carry an
X-Render-Millis timing header; errors are JSON {error, detail} with matching
status codes (400 malformed, 404 unknown time, 413 over limits, 503 before
the archive finished loading).

The archive is read-only, so requests are served concurrently; the only
shared mutable state is a small LRU cache of deserialized timestep fields.
"""

from __future__ import annotations

import json
import math
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import archive as archive_mod, dataset, geometry, renderer
from .errors import DataError
from .geometry import CameraModel

DEFAULT_MAX_DIM = 1024
DEFAULT_MAX_SAMPLES = 512
DEFAULT_SAMPLES = 64
DEFAULT_CACHE_FIELDS = 4
EARLY_STOP = 1e-4


class RequestError(Exception):
    def __init__(self, status: int, detail: str):
        super().__init__(detail)
        self.status = status
        self.detail = detail


@dataclass(frozen=True)
class RenderRequest:
    time_index: int
    width: int = 256
    height: int = 256
    fov_x: float = 0.6911
    samples: int = DEFAULT_SAMPLES
    quality: str = "full"
    matrix: tuple | None = None          # row-major 4x4 camera-to-world
    position: tuple | None = None
    look_at: tuple | None = None
    up: tuple = (0.0, 0.0, 1.0)

    @classmethod
    def from_json(cls, body: bytes) -> "RenderRequest":
        try:
            doc = json.loads(body.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise RequestError(400, f"malformed JSON body: {e}") from e
        if not isinstance(doc, dict):
            raise RequestError(400, "request body must be a JSON object")
        return cls._from_dict(doc)

    @classmethod
    def from_query(cls, query: str) -> "RenderRequest":
        q = {k: v[-1] for k, v in parse_qs(query).items()}
        doc: dict = {}
        try:
            if "time" in q:
                doc["time_index"] = int(q["time"])
            for key in ("width", "height", "samples"):
                if key in q:
                    doc[key] = int(q[key])
            if "fov_x" in q:
                doc["fov_x"] = float(q["fov_x"])
            if "quality" in q:
                doc["quality"] = q["quality"]
            for key in ("position", "look_at", "up"):
                if key in q:
                    doc[key] = [float(v) for v in q[key].split(",")]
            if "matrix" in q:
                vals = [float(v) for v in q["matrix"].split(",")]
                if len(vals) != 16:
                    raise RequestError(400, "matrix must have 16 comma-separated values")
                doc["transform_matrix"] = [vals[i * 4:(i + 1) * 4] for i in range(4)]
        except ValueError as e:
            raise RequestError(400, f"malformed query parameter: {e}") from e
        return cls._from_dict(doc)

    @classmethod
    def _from_dict(cls, doc: dict) -> "RenderRequest":
        if "time_index" not in doc:
            raise RequestError(400, "missing time_index")
        camera = doc.get("camera", doc)
        matrix = camera.get("transform_matrix")
        position = camera.get("position")
        look_at = camera.get("look_at")
        if matrix is None and (position is None or look_at is None):
            raise RequestError(400, "camera needs transform_matrix or position+look_at")
        try:
            kw = dict(
                time_index=int(doc["time_index"]),
                width=int(camera.get("width", doc.get("width", 256))),
                height=int(camera.get("height", doc.get("height", 256))),
                fov_x=float(camera.get("fov_x", doc.get("fov_x", 0.6911))),
                samples=int(doc.get("samples", DEFAULT_SAMPLES)),
                quality=str(doc.get("quality", "full")),
            )
            if matrix is not None:
                m = [[float(v) for v in row] for row in matrix]
                if len(m) != 4 or any(len(r) != 4 for r in m):
                    raise RequestError(400, "transform_matrix must be 4x4")
                kw["matrix"] = tuple(tuple(r) for r in m)
            else:
                kw["position"] = tuple(float(v) for v in position)
                kw["look_at"] = tuple(float(v) for v in look_at)
                kw["up"] = tuple(float(v) for v in camera.get("up", doc.get("up", (0, 0, 1))))
        except (TypeError, ValueError) as e:
            raise RequestError(400, f"malformed camera: {e}") from e
        if kw["quality"] not in ("full", "preview"):
            raise RequestError(400, f"unknown quality {kw['quality']!r}")
        if kw["width"] < 1 or kw["height"] < 1 or kw["samples"] < 1 or \
                not (0 < kw["fov_x"] < math.pi):
            raise RequestError(400, "width, height, samples must be >= 1 and fov_x in (0, pi)")
        return cls(**kw)

    def camera_model(self) -> tuple[CameraModel, int]:
        if self.matrix is not None:
            try:
                pose = dataset._orthonormalized(np.asarray(self.matrix, dtype=np.float64),
                                                "transform_matrix")
            except (DataError, ValueError) as e:
                raise RequestError(400, str(e)) from e
        else:
            try:
                pose = geometry.look_at_pose(self.position, self.look_at, self.up)
            except ValueError as e:
                raise RequestError(400, f"bad look-at camera: {e}") from e
        w, h, samples = self.width, self.height, self.samples
        if self.quality == "preview":
            w, h, samples = max(1, w // 2), max(1, h // 2), max(1, samples // 2)
        cam = CameraModel.from_fov(w, h, self.fov_x, pose)
        return cam, samples


class RenderService:
    """Stateless render frontend over one archive file."""

    def __init__(self, archive_path, max_dim: int = DEFAULT_MAX_DIM,
                 max_samples: int = DEFAULT_MAX_SAMPLES,
                 cache_fields: int = DEFAULT_CACHE_FIELDS,
                 background=(0.0, 0.0, 0.0)):
        self.archive_path = archive_path
        self.max_dim = max_dim
        self.max_samples = max_samples
        self.background = tuple(background)
        self._archive: archive_mod.Archive | None = None
        self._cache: OrderedDict[int, object] = OrderedDict()
        self._cache_fields = cache_fields
        self._lock = threading.Lock()

    def load(self) -> None:
        archive = archive_mod.Archive.open(self.archive_path)
        with self._lock:
            self._archive = archive

    @property
    def ready(self) -> bool:
        return self._archive is not None

    def archive_info(self) -> dict:
        if not self.ready:
            raise RequestError(503, "archive not loaded yet")
        return self._archive.info()

    def _field(self, t: int):
        with self._lock:
            if t in self._cache:
                self._cache.move_to_end(t)
                return self._cache[t]
        field = self._archive.read_timestep(t)
        with self._lock:
            self._cache[t] = field
            self._cache.move_to_end(t)
            while len(self._cache) > self._cache_fields:
                self._cache.popitem(last=False)
        return field

    def render_png(self, req: RenderRequest) -> bytes:
        if not self.ready:
            raise RequestError(503, "archive not loaded yet")
        if req.time_index not in self._archive:
            raise RequestError(404, f"time_index {req.time_index} not in archive "
                                    f"(have {self._archive.timesteps()})")
        if req.width > self.max_dim or req.height > self.max_dim:
            raise RequestError(413, f"resolution over limit {self.max_dim}")
        if req.samples > self.max_samples:
            raise RequestError(413, f"samples over limit {self.max_samples}")
        camera, samples = req.camera_model()
        field = self._field(req.time_index)
        params = renderer.RenderParams(n_samples=samples,
                                       early_stop_transmittance=EARLY_STOP,
                                       background=self.background)
        image = renderer.render_image(field, camera, params)
        return dataset.png_encode_rgba(image.rgba)


def _make_handler(service: RenderService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, status: int, doc: dict, extra: dict | None = None):
            body = json.dumps(doc, indent=1).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            for k, v in (extra or {}).items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(body)

        def _send_png(self, png: bytes, millis: float):
            self.send_response(200)
            self.send_header("Content-Type", "image/png")
            self.send_header("Content-Length", str(len(png)))
            self.send_header("X-Render-Millis", f"{millis:.1f}")
            self.end_headers()
            self.wfile.write(png)

        def _render(self, req: RenderRequest):
            t0 = time.perf_counter()
            png = service.render_png(req)
            self._send_png(png, (time.perf_counter() - t0) * 1e3)

        def _guarded(self, fn):
            try:
                fn()
            except RequestError as e:
                self._send_json(e.status, {"error": "request failed", "detail": e.detail})
            except DataError as e:
                self._send_json(500, {"error": "archive error", "detail": str(e)})

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/archive":
                self._guarded(lambda: self._send_json(200, service.archive_info()))
            elif url.path == "/render":
                self._guarded(lambda: self._render(RenderRequest.from_query(url.query)))
            else:
                self._send_json(404, {"error": "not found", "detail": url.path})

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/render":
                self._send_json(404, {"error": "not found", "detail": url.path})
                return
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            self._guarded(lambda: self._render(RenderRequest.from_json(body)))

    return Handler


def make_server(service: RenderService, host: str = "127.0.0.1", port: int = 0
                ) -> ThreadingHTTPServer:
    """Bind a threading HTTP server for the service (port 0 picks a free one)."""
    return ThreadingHTTPServer((host, port), _make_handler(service))


def serve(archive_path, host: str = "127.0.0.1", port: int = 8080, **service_kw) -> None:
    service = RenderService(archive_path, **service_kw)
    server = make_server(service, host, port)
    service.load()
    print(f"serving {archive_path} on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
