"""Interactive labeling sessions over HTTP.

One engine session runs per server-side session object, driven by a worker
thread that blocks on a bridge whenever a query needs a human answer. The
endpoints are thin projections: only ``POST /sessions`` and
``POST /sessions/{id}/answer`` mutate anything.

Phases: ``seeding`` (collecting the initial per-class clicks) ->
``training`` <-> ``awaiting_label`` -> ``done``.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .engine import EngineConfig, Session, init_session, run_iteration
from .features import FeatureStack, MorphConfig, build_feature_stack, load_feature_stack
from .metrics import CurvePoint, RunCurve, curves_csv_text
from .oracle import DuplicateAnswerError, InteractiveBridge, StaleQueryError
from .raster import (
    LabelMap,
    Raster,
    SceneSpec,
    generate_synthetic_scene,
    load_label_map,
    load_raster,
)

logger = logging.getLogger(__name__)

# Fixed legend palette; class i uses PALETTE[(i - 1) % len(PALETTE)].
PALETTE: tuple[tuple[int, int, int], ...] = (
    (141, 211, 199), (255, 255, 179), (190, 186, 218), (251, 128, 114),
    (128, 177, 211), (253, 180, 98), (179, 222, 105), (252, 205, 229),
    (217, 217, 217), (188, 128, 189), (204, 235, 197), (255, 237, 111),
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
)

PHASE_SEEDING = "seeding"
PHASE_TRAINING = "training"
PHASE_AWAITING = "awaiting_label"
PHASE_DONE = "done"

DEFAULT_PATCH_RADIUS = 12


class ServiceError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail


def _class_color(index: int) -> str:
    r, g, b = PALETTE[(index - 1) % len(PALETTE)]
    return f"#{r:02x}{g:02x}{b:02x}"


@dataclass
class RasterEntry:
    name: str
    raster: Raster
    stack: FeatureStack
    labels: LabelMap | None
    omega: int
    class_names: list[str]


@dataclass
class ServiceConfig:
    rasters: dict[str, dict]
    engine_defaults: dict = field(default_factory=dict)

    @classmethod
    def from_path(cls, path: str | Path) -> "ServiceConfig":
        data = json.loads(Path(path).read_text())
        if "rasters" not in data or not data["rasters"]:
            raise ValueError("service config needs a non-empty 'rasters' map")
        return cls(rasters=data["rasters"], engine_defaults=data.get("engine", {}))


def _load_entry(name: str, spec: dict) -> RasterEntry:
    if "scene" in spec:
        scene = SceneSpec.from_dict(spec["scene"])
        raster, labels = generate_synthetic_scene(scene)
        omega = scene.omega
    else:
        raster = load_raster(spec["raster"])
        omega = int(spec["omega"])
        labels = load_label_map(spec["labels"], omega) if spec.get("labels") else None
    if "features" in spec and isinstance(spec["features"], str):
        stack = load_feature_stack(spec["features"])
    else:
        radii = tuple(int(r) for r in spec.get("radii", (1, 3)))
        stack = build_feature_stack(raster, MorphConfig(radii=radii))
    names = spec.get("class_names") or [f"class {i}" for i in range(1, omega + 1)]
    if len(names) != omega:
        raise ValueError(f"raster {name!r}: need {omega} class names")
    return RasterEntry(
        name=name, raster=raster, stack=stack, labels=labels, omega=omega,
        class_names=list(names),
    )


def encode_classification_png(class_map: np.ndarray) -> bytes:
    """8-bit palette PNG; the pixel byte is the class index."""
    if class_map.max(initial=0) > 255:
        raise ServiceError(500, "too_many_classes", "palette PNG supports up to 255 classes")
    img = Image.fromarray(class_map.astype(np.uint8), mode="P")
    flat = [0, 0, 0]
    for i in range(1, 256):
        r, g, b = PALETTE[(i - 1) % len(PALETTE)]
        flat.extend((r, g, b))
    img.putpalette(flat[: 256 * 3])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def encode_confidence_png(conf_map: np.ndarray) -> bytes:
    """8-bit grayscale; confident pixels are light, doubtful ones dark."""
    quantized = np.clip(np.round(conf_map * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(quantized, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _rgb_composite(raster: Raster) -> np.ndarray:
    """(H, W, 3) uint8 composite of the first three bands, per-band stretched."""
    bands = [raster.values[min(b, raster.bands - 1)] for b in range(3)]
    out = np.zeros((raster.height, raster.width, 3), dtype=np.uint8)
    for i, band in enumerate(bands):
        lo, hi = float(band.min()), float(band.max())
        span = hi - lo if hi > lo else 1.0
        out[:, :, i] = np.clip((band - lo) / span * 255.0, 0, 255).astype(np.uint8)
    return out


class SessionRunner:
    """Owns one engine session and its worker thread."""

    def __init__(self, sid: str, entry: RasterEntry, config: EngineConfig, seed: int):
        self.sid = sid
        self.entry = entry
        self.config = config
        self.seed = seed
        self.omega = entry.omega
        self.phase = PHASE_SEEDING
        self.bridge = InteractiveBridge()
        self.session: Session | None = None
        self.seeds: list[tuple[int, int]] = []
        self.seen_pixels: set[int] = set()
        self.class_counts = {c: 0 for c in range(1, entry.omega + 1)}
        self.maps: dict[str, tuple[bytes, np.ndarray]] = {}
        self.curve = RunCurve(method=config.heuristic + ("+gated" if config.gated else ""), seed=seed)
        self.error: str | None = None
        self._cond = threading.Condition()
        self._version = 0
        self._snapshot = self._build_view()
        self._thread: threading.Thread | None = None

    # -- seeding ------------------------------------------------------------

    @property
    def seeds_required(self) -> int:
        return self.omega * self.config.seeds_per_class

    def add_seed(self, x: int, y: int, label: int) -> None:
        with self._cond:
            if self.phase != PHASE_SEEDING:
                raise ServiceError(409, "wrong_phase", "session is past seeding")
            if not (0 <= x < self.entry.stack.width and 0 <= y < self.entry.stack.height):
                raise ServiceError(400, "out_of_bounds", f"pixel ({x}, {y}) outside raster")
            if not (1 <= label <= self.omega):
                raise ServiceError(400, "out_of_range_class", f"class {label} outside 1..{self.omega}")
            pid = y * self.entry.stack.width + x
            if pid in self.seen_pixels:
                raise ServiceError(409, "duplicate_seed", f"pixel ({x}, {y}) already seeded")
            if self.class_counts[label] >= self.config.seeds_per_class:
                raise ServiceError(409, "class_full",
                                   f"class {label} already has {self.config.seeds_per_class} seeds")
            self.seen_pixels.add(pid)
            self.class_counts[label] += 1
            self.seeds.append((pid, label))
            complete = len(self.seeds) == self.seeds_required
            if complete:
                self.phase = PHASE_TRAINING
            self._publish_locked()
        if complete:
            self._start_worker()

    # -- worker -------------------------------------------------------------

    def _start_worker(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True,
                                        name=f"session-{self.sid}")
        self._thread.start()

    def _loop(self) -> None:
        try:
            self.session = init_session(
                self.entry.stack, self.config,
                ground_truth=self.entry.labels if self.entry.labels else None,
                seeds=self.seeds, seed=self.seed,
            )
            if self.entry.labels is None:
                self.session.omega = self.omega
            while not self.session.stopping_met():
                self._set_phase(PHASE_TRAINING)
                effort_before = self.session.effort
                labels_before = len(self.session.labeled_ids)
                run_iteration(self.session, self._ask)
                self._refresh_maps()
                self._record_curve(labels_before, effort_before)
                self._publish()
            self._set_phase(PHASE_DONE)
        except Exception as exc:  # surface worker crashes through the view
            logger.exception("session %s worker failed", self.sid)
            self.error = str(exc)
            self._set_phase(PHASE_DONE)

    def _ask(self, pixel_id: int):
        self._refresh_maps()
        self._set_phase(PHASE_AWAITING, query=pixel_id)
        answer = self.bridge.ask(pixel_id)
        self._set_phase(PHASE_TRAINING)
        return answer

    def _record_curve(self, labels_before: int, effort_before: int) -> None:
        if self.entry.labels is None or "classification" not in self.maps:
            return
        from .experiment import evaluate_session

        kappa, oa = evaluate_session(self.session, self.entry.labels)
        stats = self.session.history[-1]
        self.curve.points.append(
            CurvePoint(iteration=stats.iteration, labels_cum=labels_before,
                       effort_cum=effort_before, kappa=kappa, oa=oa,
                       queries_iter=stats.presented)
        )

    def _refresh_maps(self) -> None:
        if self.session is None:
            return
        class_map = self.session.artifacts.get("classification_map")
        conf_map = self.session.artifacts.get("confidence_map")
        with self._cond:
            if class_map is not None:
                self.maps["classification"] = (encode_classification_png(class_map), class_map)
            if conf_map is not None:
                self.maps["confidence"] = (encode_confidence_png(conf_map), conf_map)

    # -- views --------------------------------------------------------------

    def _build_view(self, query: int | None = None) -> dict:
        counts = {"labeled": len(self.seeds), "confidence": len(self.seeds),
                  "pool": 0, "effort": len(self.seeds)}
        epsilon = 0
        warnings: list[str] = []
        if self.session is not None:
            counts = {
                "labeled": len(self.session.labeled_ids),
                "confidence": len(self.session.conf_set),
                "pool": int(len(self.session.pool_ids)),
                "effort": self.session.effort,
            }
            epsilon = self.session.epsilon
            warnings = list(self.session.warnings)
        view = {
            "id": self.sid,
            "phase": self.phase,
            "epsilon": epsilon,
            "omega": self.omega,
            "counts": counts,
            "query": None,
            "legend": [
                {"index": i, "name": self.entry.class_names[i - 1], "color": _class_color(i)}
                for i in range(1, self.omega + 1)
            ],
            "raster": {
                "width": self.entry.stack.width,
                "height": self.entry.stack.height,
                "bands": self.entry.raster.bands,
            },
            "seeds": {
                "required": self.seeds_required,
                "accepted": len(self.seeds),
                "per_class": self.config.seeds_per_class,
            },
            "warnings": warnings,
        }
        if query is not None:
            y, x = divmod(query, self.entry.stack.width)
            view["query"] = {"x": int(x), "y": int(y), "r": DEFAULT_PATCH_RADIUS}
        if self.error:
            view["error"] = self.error
        return view

    def _publish_locked(self, query: int | None = None) -> None:
        self._snapshot = self._build_view(query)
        self._version += 1
        self._cond.notify_all()

    def _publish(self, query: int | None = None) -> None:
        with self._cond:
            self._publish_locked(query)

    def _set_phase(self, phase: str, query: int | None = None) -> None:
        with self._cond:
            self.phase = phase
            self._publish_locked(query)

    def view(self) -> dict:
        with self._cond:
            return dict(self._snapshot)

    def wait_for_change(self, version: int, timeout: float) -> None:
        with self._cond:
            self._cond.wait_for(lambda: self._version != version, timeout=timeout)

    @property
    def version(self) -> int:
        with self._cond:
            return self._version

    # -- answers ------------------------------------------------------------

    def submit_answer(self, x: int, y: int, label: int | None) -> dict:
        if self.phase == PHASE_SEEDING:
            if label is None:
                raise ServiceError(400, "bad_label", "seeding requires a class label")
            self.add_seed(x, y, label)
            return self.view()
        if self.phase == PHASE_DONE:
            raise ServiceError(409, "wrong_phase", "session is finished")
        if label is not None and not (1 <= label <= self.omega):
            raise ServiceError(400, "out_of_range_class",
                               f"class {label} outside 1..{self.omega}")
        pid = y * self.entry.stack.width + x
        version = self.version
        try:
            self.bridge.submit(pid, label)
        except DuplicateAnswerError as exc:
            raise ServiceError(409, "duplicate_answer", str(exc)) from exc
        except StaleQueryError as exc:
            raise ServiceError(409, "stale_query", str(exc)) from exc
        # Wait for the worker to fold the answer in (next query, iteration
        # end, or done), so the returned view reflects the new counts.
        self.wait_for_change(version, timeout=30.0)
        return self.view()


def build_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="querygate", docs_url=None, redoc_url=None)
    entries: dict[str, RasterEntry] = {
        name: _load_entry(name, spec) for name, spec in config.rasters.items()
    }
    runners: dict[str, SessionRunner] = {}
    app.state.entries = entries
    app.state.runners = runners

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError) -> JSONResponse:
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.code, "detail": exc.detail})

    def _runner(sid: str) -> SessionRunner:
        runner = runners.get(sid)
        if runner is None:
            raise ServiceError(404, "unknown_session", f"no session {sid!r}")
        return runner

    @app.post("/sessions")
    async def create_session(body: dict) -> dict:
        name = body.get("raster")
        if name not in entries:
            raise ServiceError(404, "unknown_raster",
                               f"no raster {name!r}; know {sorted(entries)}")
        merged = {**config.engine_defaults, **body.get("config", {})}
        try:
            engine_config = EngineConfig.from_dict(merged)
        except (TypeError, ValueError) as exc:
            raise ServiceError(400, "bad_config", str(exc)) from exc
        sid = uuid.uuid4().hex[:12]
        runner = SessionRunner(sid, entries[name], engine_config,
                               seed=int(body.get("seed", 0)))
        runners[sid] = runner
        return runner.view()

    @app.get("/sessions/{sid}")
    async def get_session(sid: str) -> dict:
        return _runner(sid).view()

    @app.get("/sessions/{sid}/query")
    async def next_query(sid: str) -> dict:
        return _runner(sid).view()

    @app.post("/sessions/{sid}/answer")
    async def post_answer(sid: str, body: dict) -> dict:
        runner = _runner(sid)
        for key in ("x", "y"):
            if key not in body:
                raise ServiceError(400, "bad_request", f"missing field {key!r}")
        label_raw = body.get("label")
        if label_raw == "unknown" or label_raw is None:
            label = None
        else:
            try:
                label = int(label_raw)
            except (TypeError, ValueError) as exc:
                raise ServiceError(400, "bad_label", f"label {label_raw!r} not a class") from exc
        return runner.submit_answer(int(body["x"]), int(body["y"]), label)

    @app.get("/sessions/{sid}/maps/{kind}")
    async def get_map(sid: str, kind: str) -> Response:
        runner = _runner(sid)
        if kind not in ("classification", "confidence"):
            raise ServiceError(404, "unknown_map", f"no map kind {kind!r}")
        with runner._cond:
            entry = runner.maps.get(kind)
        if entry is None:
            raise ServiceError(404, "map_unavailable",
                               "no trained model yet; poll after the first iteration")
        return Response(content=entry[0], media_type="image/png")

    @app.get("/sessions/{sid}/patch")
    async def get_patch(sid: str, x: int, y: int, r: int = DEFAULT_PATCH_RADIUS) -> dict:
        runner = _runner(sid)
        raster = runner.entry.raster
        if not (0 <= x < raster.width and 0 <= y < raster.height):
            raise ServiceError(400, "out_of_bounds", f"pixel ({x}, {y}) outside raster")
        if r < 0:
            raise ServiceError(400, "bad_request", "radius must be >= 0")
        composite = _rgb_composite(raster)
        x0, x1 = max(0, x - r), min(raster.width, x + r + 1)
        y0, y1 = max(0, y - r), min(raster.height, y + r + 1)
        patch = composite[y0:y1, x0:x1]
        buf = io.BytesIO()
        Image.fromarray(patch, mode="RGB").save(buf, format="PNG")
        return {
            "x": x, "y": y, "r": r,
            "extent": {"x0": int(x0), "y0": int(y0), "x1": int(x1), "y1": int(y1)},
            "png_base64": base64.b64encode(buf.getvalue()).decode("ascii"),
            "bands": [float(raster.values[b, y, x]) for b in range(raster.bands)],
        }

    @app.get("/sessions/{sid}/curves")
    async def get_curves(sid: str) -> Response:
        runner = _runner(sid)
        return Response(content=curves_csv_text([runner.curve]), media_type="text/csv")

    return app
