"""Headless experiments: several independent runs per method over one scene.

One JSON config describes the whole experiment — scene or raster inputs,
features, methods, oracle persona, engine parameters, run count, seeds —
and every artifact written to the result directory is reproducible from the
config alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import (
    EngineConfig,
    Session,
    export_query_log_csv,
    init_session,
    persist_session,
    run_iteration,
)
from .features import FeatureStack, MorphConfig, build_feature_stack
from .heuristics import HEURISTICS
from .metrics import (
    ConfusionMatrix,
    CurvePoint,
    RunCurve,
    cohen_kappa,
    confusion_matrix,
    export_learning_curves,
    overall_accuracy,
)
from .oracle import (
    FallibleOracleConfig,
    OracleFn,
    PERSONAS,
    make_fallible_oracle,
    make_ground_truth_oracle,
)
from .raster import (
    LabelMap,
    Raster,
    SceneSpec,
    generate_synthetic_scene,
    load_label_map,
    load_raster,
    store_label_map,
    store_raster,
)
from .rng import derive_seed

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment config; message names the offending field."""


@dataclass(frozen=True)
class MethodSpec:
    heuristic: str
    gated: bool

    @property
    def label(self) -> str:
        return f"{self.heuristic}+gated" if self.gated else self.heuristic


@dataclass
class ExperimentConfig:
    scene: SceneSpec | None
    raster_path: str | None
    labels_path: str | None
    omega: int | None
    radii: tuple[int, ...]
    methods: list[MethodSpec]
    oracle: dict
    engine: dict
    run_seeds: list[int]
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if "scene" in data and ("raster" in data or "labels" in data):
            raise ConfigError("scene: give either a scene spec or raster/labels paths, not both")
        scene = None
        raster_path = labels_path = None
        omega = None
        if "scene" in data:
            try:
                scene = SceneSpec.from_dict(data["scene"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"scene: {exc}") from exc
        elif "raster" in data:
            raster_path = str(data["raster"])
            if "labels" not in data:
                raise ConfigError("labels: required when a raster path is given")
            labels_path = str(data["labels"])
            if "omega" not in data:
                raise ConfigError("omega: required when loading labels from disk")
            omega = int(data["omega"])
        else:
            raise ConfigError("scene: config needs a scene spec or raster/labels paths")

        features = data.get("features", {})
        radii = tuple(int(r) for r in features.get("radii", (1, 3)))

        raw_methods = data.get("methods")
        if not raw_methods:
            raise ConfigError("methods: need at least one method")
        methods = []
        for i, m in enumerate(raw_methods):
            heuristic = m.get("heuristic")
            if heuristic not in HEURISTICS:
                raise ConfigError(f"methods[{i}].heuristic: unknown {heuristic!r}")
            methods.append(MethodSpec(heuristic=heuristic, gated=bool(m.get("gated", False))))

        oracle = data.get("oracle", {"kind": "ground_truth"})
        kind = oracle.get("kind", "fallible")
        if kind not in ("ground_truth", "fallible"):
            raise ConfigError(f"oracle.kind: unknown {kind!r}")
        if kind == "fallible" and "persona" in oracle and oracle["persona"] not in PERSONAS:
            raise ConfigError(f"oracle.persona: unknown {oracle['persona']!r}")

        engine = dict(data.get("engine", {}))
        try:
            EngineConfig.from_dict({**engine, "heuristic": methods[0].heuristic,
                                    "gated": methods[0].gated})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"engine: {exc}") from exc

        if "seeds" in data:
            seeds = [int(s) for s in data["seeds"]]
            if not seeds:
                raise ConfigError("seeds: must be a non-empty list")
        else:
            runs = int(data.get("runs", 1))
            if runs < 1:
                raise ConfigError("runs: must be >= 1")
            base = int(data.get("base_seed", 0))
            seeds = [base + i for i in range(runs)]
        return cls(
            scene=scene,
            raster_path=raster_path,
            labels_path=labels_path,
            omega=omega,
            radii=radii,
            methods=methods,
            oracle=oracle,
            engine=engine,
            run_seeds=seeds,
            raw=data,
        )

    @classmethod
    def from_path(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from exc
        return cls.from_dict(data)


def _build_inputs(config: ExperimentConfig) -> tuple[Raster, LabelMap, FeatureStack]:
    """One fixed scene per experiment; runs replicate seeds/oracle draws on it."""
    if config.scene is not None:
        raster, labels = generate_synthetic_scene(config.scene)
    else:
        raster = load_raster(config.raster_path)
        labels = load_label_map(config.labels_path, config.omega)
    stack = build_feature_stack(raster, MorphConfig(radii=config.radii))
    return raster, labels, stack


def _build_oracle(config: ExperimentConfig, labels: LabelMap, run_seed: int) -> OracleFn:
    kind = config.oracle.get("kind", "fallible")
    if kind == "ground_truth":
        return make_ground_truth_oracle(labels)
    if "persona" in config.oracle:
        fallible = FallibleOracleConfig.persona(
            config.oracle["persona"], seed=derive_seed(run_seed, "oracle")
        )
    else:
        fallible = FallibleOracleConfig(
            window=int(config.oracle.get("window", 1)),
            purity=float(config.oracle.get("purity", 1.0)),
            refusal=float(config.oracle.get("refusal", 0.0)),
            seed=derive_seed(run_seed, "oracle"),
        )
    return make_fallible_oracle(labels, fallible)


def evaluate_session(session: Session, reference: LabelMap) -> tuple[float, float]:
    """Kappa and overall accuracy of the session's current classification map."""
    class_map = session.artifacts["classification_map"]
    cm = confusion_matrix(class_map, reference.labels, reference.omega)
    return cohen_kappa(cm), overall_accuracy(cm)


def run_single(
    config: ExperimentConfig,
    method: MethodSpec,
    run_seed: int,
    outdir: Path | None = None,
    inputs: tuple[Raster, LabelMap, FeatureStack] | None = None,
) -> RunCurve:
    raster, labels, stack = inputs if inputs is not None else _build_inputs(config)
    oracle = _build_oracle(config, labels, run_seed)
    engine_config = EngineConfig.from_dict(
        {**config.engine, "heuristic": method.heuristic, "gated": method.gated}
    )
    session = init_session(stack, engine_config, ground_truth=labels, seed=run_seed)

    curve = RunCurve(method=method.label, seed=run_seed)
    while not session.stopping_met():
        effort_before = session.effort
        labels_before = len(session.labeled_ids)
        run_iteration(session, oracle)
        kappa, oa = evaluate_session(session, labels)
        stats = session.history[-1]
        curve.points.append(
            CurvePoint(
                iteration=stats.iteration,
                labels_cum=labels_before,
                effort_cum=effort_before,
                kappa=kappa,
                oa=oa,
                queries_iter=stats.presented,
            )
        )

    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        persist_session(session, outdir / "session.snap")
        export_query_log_csv(session, outdir / "queries.csv")
        conf_map = session.artifacts.get("confidence_map")
        if conf_map is not None:
            store_raster(Raster(conf_map[None, :, :].astype(np.float32)),
                         outdir / "confidence_final")
        class_map = session.artifacts.get("classification_map")
        if class_map is not None:
            store_label_map(LabelMap(class_map, session.omega), outdir / "classification_final")
    return curve


def run_experiment(config: ExperimentConfig, outdir: str | Path) -> list[RunCurve]:
    """All methods x all runs; artifacts land under the result directory.

    Already-written per-run artifacts survive an interrupt; curve files are
    written last from whatever completed.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.json").write_text(
        json.dumps(config.raw, indent=2, sort_keys=True) + "\n"
    )
    inputs = _build_inputs(config)
    curves: list[RunCurve] = []
    try:
        for method in config.methods:
            for run_seed in config.run_seeds:
                run_dir = outdir / "runs" / method.label / str(run_seed)
                logger.info("running %s seed=%d", method.label, run_seed)
                curves.append(run_single(config, method, run_seed, run_dir, inputs=inputs))
    finally:
        if curves:
            export_learning_curves(curves, outdir)
    return curves


def summarize(outdir: str | Path) -> str:
    """Human-readable table from a result directory's summary.csv."""
    summary = Path(outdir) / "summary.csv"
    if not summary.exists():
        raise ConfigError(f"no summary.csv under {outdir}")
    lines = summary.read_text().strip().splitlines()
    rows = [line.split(",") for line in lines[1:]]
    by_method: dict[str, list[list[str]]] = {}
    for row in rows:
        by_method.setdefault(row[0], []).append(row)
    out = [f"{'method':<16}{'iter':>5}{'kappa':>10}{'std':>9}{'effort':>9}"]
    for method, entries in by_method.items():
        for row in entries:
            out.append(
                f"{method:<16}{row[1]:>5}{float(row[2]):>10.4f}"
                f"{float(row[3]):>9.4f}{float(row[4]):>9.1f}"
            )
    return "\n".join(out)
