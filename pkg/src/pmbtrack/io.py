"""Detection/ground-truth/results file schemas, run configuration, and the
tracking/evaluation orchestration used by the CLI.

All files are JSON with a top-level `schema_version`.  Detections mirror
nuScenes-style results (per-frame lists of translation/size/rotation-yaw/
velocity/name/score records); the results files written here parse back
through the same loader, so pipelines can be chained.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .filter import FilterParams, FrameResult, track_frames
from .metrics import (
    ClassReport,
    GroundTruthBox,
    MatchConfig,
    PredBox,
    evaluate_class,
    format_report_table,
)
from .models import MeasurementModel, ModelParams, Models, MotionModel
from .state import (
    Detection,
    FrameDetections,
    KNOWN_CLASSES,
    PassthroughState,
    canonical_dumps,
)

logger = logging.getLogger("pmbtrack")

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Malformed or invalid input file; message carries the JSON path."""


def _load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


def _require(obj: Mapping, key: str, path: str):
    if key not in obj:
        raise SchemaError(f"missing field {path}/{key}")
    return obj[key]


def _first_of(obj: Mapping, keys: Sequence[str], path: str):
    for key in keys:
        if key in obj:
            return obj[key]
    raise SchemaError(f"missing field {path}/{keys[0]}")


def _check_version(doc: Mapping, path: str) -> None:
    version = _require(doc, "schema_version", path)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}/schema_version: unsupported version {version!r}")


def _clamp_score(value, path: str) -> float:
    score = float(value)
    if score < 0.0 or score > 1.0:
        logger.warning("clamping score %s at %s to [0, 1]", score, path)
        score = min(1.0, max(0.0, score))
    return score


# ---------------------------------------------------------------------------
# Detections (and results, which share the loader)
# ---------------------------------------------------------------------------

def load_detections(path) -> dict[str, list[FrameDetections]]:
    """Per-scene, time-sorted frame streams of detections.

    Accepts both detection files and the results files written by
    `write_results` (tracking_* field names are understood).  Scores are
    clamped to [0, 1] with a warning; non-monotone timestamps are a
    validation error.
    """
    doc = _load_json(path)
    _check_version(doc, str(path))
    scenes = _require(doc, "scenes", str(path))
    out: dict[str, list[FrameDetections]] = {}
    for scene in sorted(scenes):
        scene_path = f"{path}/scenes/{scene}"
        frames_doc = _require(scenes[scene], "frames", scene_path)
        frames: list[FrameDetections] = []
        last_ts = -math.inf
        for fi, frame_doc in enumerate(frames_doc):
            fpath = f"{scene_path}/frames/{fi}"
            frame_index = int(_require(frame_doc, "frame_index", fpath))
            timestamp = float(_require(frame_doc, "timestamp", fpath))
            if timestamp < last_ts:
                raise SchemaError(
                    f"{fpath}/timestamp: {timestamp} decreases (previous {last_ts})"
                )
            last_ts = timestamp
            records = frame_doc.get("detections", frame_doc.get("results"))
            if records is None:
                raise SchemaError(f"missing field {fpath}/detections")
            detections = []
            for di, rec in enumerate(records):
                dpath = f"{fpath}/detections/{di}"
                translation = _require(rec, "translation", dpath)
                if len(translation) != 3:
                    raise SchemaError(f"{dpath}/translation: expected 3 values")
                size = _require(rec, "size", dpath)
                yaw = float(_first_of(rec, ("rotation_yaw", "rotation"), dpath))
                velocity = _require(rec, "velocity", dpath)
                name = str(_first_of(rec, ("detection_name", "tracking_name"), dpath))
                score = _clamp_score(
                    _first_of(rec, ("detection_score", "tracking_score"), dpath), dpath
                )
                detections.append(
                    Detection(
                        center=(float(translation[0]), float(translation[1])),
                        passthrough=PassthroughState(
                            z=float(translation[2]),
                            size=tuple(float(v) for v in size),
                            yaw=yaw,
                            velocity=(float(velocity[0]), float(velocity[1])),
                            detection_score=score,
                            class_name=name,
                        ),
                        frame_index=frame_index,
                        timestamp=timestamp,
                    )
                )
            frames.append(FrameDetections(frame_index, timestamp, tuple(detections)))
        frames.sort(key=lambda f: (f.timestamp, f.frame_index))
        out[scene] = frames
    return out


def write_detections(scenes: Mapping[str, Sequence[FrameDetections]], path) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "scenes": {}}
    for scene in sorted(scenes):
        frames = []
        for frame in scenes[scene]:
            frames.append(
                {
                    "frame_index": frame.frame_index,
                    "timestamp": frame.timestamp,
                    "detections": [
                        {
                            "translation": [d.center[0], d.center[1], d.passthrough.z],
                            "size": list(d.passthrough.size),
                            "rotation_yaw": d.passthrough.yaw,
                            "velocity": list(d.passthrough.velocity),
                            "detection_name": d.passthrough.class_name,
                            "detection_score": d.passthrough.detection_score,
                        }
                        for d in frame.detections
                    ],
                }
            )
        doc["scenes"][scene] = {"frames": frames}
    Path(path).write_text(canonical_dumps(doc))


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def load_ground_truth(path) -> list[GroundTruthBox]:
    doc = _load_json(path)
    _check_version(doc, str(path))
    scenes = _require(doc, "scenes", str(path))
    out: list[GroundTruthBox] = []
    for scene in sorted(scenes):
        scene_path = f"{path}/scenes/{scene}"
        for fi, frame_doc in enumerate(_require(scenes[scene], "frames", scene_path)):
            fpath = f"{scene_path}/frames/{fi}"
            frame_index = int(_require(frame_doc, "frame_index", fpath))
            for bi, rec in enumerate(_require(frame_doc, "boxes", fpath)):
                bpath = f"{fpath}/boxes/{bi}"
                translation = _require(rec, "translation", bpath)
                out.append(
                    GroundTruthBox(
                        scene=scene,
                        frame_index=frame_index,
                        instance_id=str(_require(rec, "instance_id", bpath)),
                        center=(float(translation[0]), float(translation[1])),
                        class_name=str(_first_of(rec, ("tracking_name", "detection_name"), bpath)),
                    )
                )
    return out


def write_ground_truth(boxes: Sequence[GroundTruthBox], path) -> None:
    by_scene: dict[str, dict[int, list[GroundTruthBox]]] = {}
    for box in boxes:
        by_scene.setdefault(box.scene, {}).setdefault(box.frame_index, []).append(box)
    doc = {"schema_version": SCHEMA_VERSION, "scenes": {}}
    for scene in sorted(by_scene):
        frames = []
        for frame_index in sorted(by_scene[scene]):
            frames.append(
                {
                    "frame_index": frame_index,
                    "boxes": [
                        {
                            "instance_id": b.instance_id,
                            "translation": [b.center[0], b.center[1], 0.0],
                            "tracking_name": b.class_name,
                        }
                        for b in by_scene[scene][frame_index]
                    ],
                }
            )
        doc["scenes"][scene] = {"frames": frames}
    Path(path).write_text(canonical_dumps(doc))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

def write_results(results_by_scene: Mapping[str, Sequence[dict]], path) -> None:
    """Write per-frame tracking records; consumable by `load_detections`."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenes": {
            scene: {"frames": list(frames)} for scene, frames in sorted(results_by_scene.items())
        },
    }
    Path(path).write_text(canonical_dumps(doc))


def load_results(path) -> dict[str, list[dict]]:
    doc = _load_json(path)
    _check_version(doc, str(path))
    scenes = _require(doc, "scenes", str(path))
    out = {}
    for scene in sorted(scenes):
        out[scene] = list(_require(scenes[scene], "frames", f"{path}/scenes/{scene}"))
    return out


def results_to_pred_boxes(results_by_scene: Mapping[str, Sequence[dict]]) -> list[PredBox]:
    out = []
    for scene in sorted(results_by_scene):
        for frame_doc in results_by_scene[scene]:
            for rec in frame_doc.get("results", []):
                out.append(
                    PredBox(
                        scene=scene,
                        frame_index=int(frame_doc["frame_index"]),
                        track_id=str(rec["tracking_id"]),
                        center=(float(rec["translation"][0]), float(rec["translation"][1])),
                        score=float(rec["tracking_score"]),
                        class_name=str(rec["tracking_name"]),
                    )
                )
    return out


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_PARAM_KEYS = {
    "dt",
    "process_noise_scale",
    "measurement_noise_std",
    "survival_probability",
    "clutter_rate",
    "fov_area",
    "birth_weight",
    "birth_covariance",
    "gating_threshold",
    "detection_score_threshold",
    "nms_threshold",
    "extraction_threshold",
    "existence_pruning_threshold",
    "local_hypothesis_pruning_threshold",
    "ppp_weight_pruning_threshold",
    "fov_bounds",
}

# Light classes get a hotter acceleration prior than vehicles.
_HIGH_NOISE_CLASSES = ("pedestrian", "bicycle")


def default_param_dict(class_name: str) -> dict:
    return {
        "dt": 0.5,
        "process_noise_scale": 4.0 if class_name in _HIGH_NOISE_CLASSES else 2.0,
        "measurement_noise_std": 0.5,
        "survival_probability": 0.7,
        "clutter_rate": 0.001,
        "fov_area": 1.0,
        "birth_weight": 0.1,
        "birth_covariance": 15.0,
        "gating_threshold": math.sqrt(40.0),
        "detection_score_threshold": 0.1,
        "nms_threshold": 0.1,
        "extraction_threshold": 0.7,
        "existence_pruning_threshold": 1e-6,
        "local_hypothesis_pruning_threshold": 1e-4,
        "ppp_weight_pruning_threshold": 0.01,
        "fov_bounds": None,
    }


def params_from_dict(values: Mapping) -> tuple[Models, FilterParams]:
    unknown = set(values) - _PARAM_KEYS
    if unknown:
        raise SchemaError(f"unknown parameter keys: {sorted(unknown)}")
    std = float(values["measurement_noise_std"])
    models = Models(
        motion=MotionModel(dt=float(values["dt"]), noise_scale=float(values["process_noise_scale"])),
        measurement=MeasurementModel(noise=[[std**2, 0.0], [0.0, std**2]]),
    )
    bounds = values.get("fov_bounds")
    params = FilterParams(
        model=ModelParams(
            survival_probability=float(values["survival_probability"]),
            clutter_rate=float(values["clutter_rate"]),
            fov_area=float(values["fov_area"]),
            birth_weight=float(values["birth_weight"]),
            birth_covariance=float(values["birth_covariance"]),
            gating_threshold=float(values["gating_threshold"]),
        ),
        detection_score_threshold=float(values["detection_score_threshold"]),
        nms_threshold=float(values["nms_threshold"]),
        extraction_threshold=float(values["extraction_threshold"]),
        existence_pruning_threshold=float(values["existence_pruning_threshold"]),
        local_hypothesis_pruning_threshold=float(values["local_hypothesis_pruning_threshold"]),
        ppp_weight_pruning_threshold=float(values["ppp_weight_pruning_threshold"]),
        fov_bounds=None if bounds is None else tuple(float(v) for v in bounds),
    )
    params.validate()
    return models, params


@dataclass(frozen=True)
class RunConfig:
    detections_path: str
    output_dir: str
    ground_truth_path: str | None = None
    classes: tuple[str, ...] = ("car",)
    parallelism: int = 1
    plots: bool = False
    plot_frames: tuple[int, ...] = ()
    match: MatchConfig = field(default_factory=MatchConfig)
    class_params: Mapping[str, tuple[Models, FilterParams]] = field(default_factory=dict)

    def params_for(self, class_name: str) -> tuple[Models, FilterParams]:
        if class_name in self.class_params:
            return self.class_params[class_name]
        return params_from_dict(default_param_dict(class_name))


def load_run_config(path, **overrides) -> RunConfig:
    doc = _load_json(path)
    _check_version(doc, str(path))
    return build_run_config(doc, str(path), **overrides)


def build_run_config(doc: Mapping, path: str = "config", **overrides) -> RunConfig:
    classes = tuple(doc.get("classes", ["car"]))
    unknown = [c for c in classes if c not in KNOWN_CLASSES]
    if unknown:
        raise SchemaError(
            f"{path}/classes: unknown classes {unknown}; known classes are "
            f"{list(KNOWN_CLASSES)}"
        )
    defaults = dict(doc.get("defaults", {}))
    per_class_doc = doc.get("per_class", {})
    unknown = [c for c in per_class_doc if c not in KNOWN_CLASSES]
    if unknown:
        raise SchemaError(
            f"{path}/per_class: unknown classes {unknown}; known classes are "
            f"{list(KNOWN_CLASSES)}"
        )
    class_params = {}
    for cls in classes:
        merged = default_param_dict(cls)
        merged.update(defaults)
        merged.update(per_class_doc.get(cls, {}))
        class_params[cls] = params_from_dict(merged)
    cfg = RunConfig(
        detections_path=str(doc.get("detections", "")),
        output_dir=str(doc.get("output_dir", "out")),
        ground_truth_path=doc.get("ground_truth"),
        classes=classes,
        parallelism=int(doc.get("parallelism", 1)),
        plots=bool(doc.get("plots", False)),
        plot_frames=tuple(int(v) for v in doc.get("plot_frames", [])),
        match=MatchConfig(
            match_distance=float(doc.get("match_distance", 3.0)),
            n_recalls=int(doc.get("n_recalls", 40)),
        ),
        class_params=class_params,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
        unknown = [c for c in cfg.classes if c not in KNOWN_CLASSES]
        if unknown:
            raise SchemaError(
                f"classes: unknown classes {unknown}; known classes are "
                f"{list(KNOWN_CLASSES)}"
            )
    return cfg


# ---------------------------------------------------------------------------
# Tracking orchestration
# ---------------------------------------------------------------------------

def _class_stream(
    frames: Sequence[FrameDetections], class_name: str
) -> list[FrameDetections]:
    # Every frame slot is preserved so misdetection updates still happen.
    return [
        FrameDetections(
            f.frame_index,
            f.timestamp,
            tuple(d for d in f.detections if d.passthrough.class_name == class_name),
        )
        for f in frames
    ]


def _track_unit(
    scene: str, class_name: str, frames: Sequence[FrameDetections], cfg: RunConfig
) -> tuple[str, str, list[FrameResult]]:
    models, params = cfg.params_for(class_name)
    try:
        return scene, class_name, track_frames(_class_stream(frames, class_name), models, params)
    except Exception as exc:
        raise RuntimeError(f"tracking failed in scene {scene!r}, class {class_name!r}: {exc}") from exc


def run_tracking(cfg: RunConfig) -> dict:
    """Track every (scene, class) unit and write results + diagnostics.

    Returns a summary dict with the written paths.  Deterministic for a
    fixed config: units run on a bounded pool but results are merged in
    sorted (scene, class) order.
    """
    scenes = load_detections(cfg.detections_path)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    units = [(scene, cls) for scene in sorted(scenes) for cls in cfg.classes]
    results: dict[tuple[str, str], list[FrameResult]] = {}
    if cfg.parallelism > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            futures = {
                (scene, cls): pool.submit(_track_unit, scene, cls, scenes[scene], cfg)
                for scene, cls in units
            }
            for key, future in futures.items():
                scene, cls, frame_results = future.result()
                results[key] = frame_results
    else:
        for scene, cls in units:
            _, _, frame_results = _track_unit(scene, cls, scenes[scene], cfg)
            results[(scene, cls)] = frame_results

    results_by_scene: dict[str, list[dict]] = {}
    diagnostics: dict[str, dict] = {}
    for scene in sorted(scenes):
        frames_out = []
        for fi, frame in enumerate(scenes[scene]):
            records = []
            for cls in cfg.classes:
                for out in results[(scene, cls)][fi].outputs:
                    records.append(
                        {
                            "translation": [out.center[0], out.center[1], out.passthrough.z],
                            "size": list(out.passthrough.size),
                            "rotation": out.passthrough.yaw,
                            "velocity": list(out.passthrough.velocity),
                            "tracking_id": f"{cls}:{out.track_id}",
                            "tracking_name": cls,
                            "tracking_score": out.tracking_score,
                        }
                    )
            frames_out.append(
                {
                    "frame_index": frame.frame_index,
                    "timestamp": frame.timestamp,
                    "results": records,
                }
            )
        results_by_scene[scene] = frames_out
        for cls in cfg.classes:
            unit = results[(scene, cls)]
            diagnostics[f"{scene}/{cls}"] = {
                "frames": len(unit),
                "outputs": sum(len(r.outputs) for r in unit),
                "gated_track_pairs": sum(r.diagnostics.gated_track_pairs for r in unit),
                "gated_ppp_pairs": sum(r.diagnostics.gated_ppp_pairs for r in unit),
                "new_bernoullis": sum(r.diagnostics.new_bernoullis for r in unit),
                "pruned_local_hypotheses": sum(
                    r.diagnostics.pruned_local_hypotheses for r in unit
                ),
                "pruned_bernoullis": sum(r.diagnostics.pruned_bernoullis for r in unit),
                "pruned_ppp": sum(r.diagnostics.pruned_ppp for r in unit),
            }

    results_path = out_dir / "results.json"
    write_results(results_by_scene, results_path)
    diagnostics_path = out_dir / "diagnostics.json"
    diagnostics_path.write_text(
        canonical_dumps({"schema_version": SCHEMA_VERSION, "units": diagnostics})
    )
    summary = {
        "results_path": str(results_path),
        "diagnostics_path": str(diagnostics_path),
    }
    if cfg.plots:
        from .plots import emit_plots

        plot_dir = out_dir / "plots"
        frame_counts = [len(f) for f in results_by_scene.values()]
        frames_sel = cfg.plot_frames or tuple(range(min(frame_counts, default=0)))
        written = emit_plots(results_by_scene, frames_sel, plot_dir)
        summary["plots"] = [str(p) for p in written]
    return summary


def evaluate(results_path, ground_truth_path, match: MatchConfig | None = None) -> dict:
    """AMOTA-family report comparing a results file against ground truth."""
    match = match or MatchConfig()
    results = load_results(results_path)
    preds = results_to_pred_boxes(results)
    gts = load_ground_truth(ground_truth_path)
    classes = sorted({g.class_name for g in gts} | {p.class_name for p in preds})
    reports: list[ClassReport] = []
    for cls in classes:
        reports.append(
            evaluate_class(
                [p for p in preds if p.class_name == cls],
                [g for g in gts if g.class_name == cls],
                match,
                class_name=cls,
            )
        )
    table = format_report_table(reports)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "match_distance": match.match_distance,
        "n_recalls": match.n_recalls,
        "classes": {
            r.class_name: {
                "amota": r.amota,
                "amotp": r.amotp,
                "recall": r.recall,
                "mota": r.mota,
                "motp": r.motp,
                "mt": r.mt,
                "ml": r.ml,
                "tp": r.tp,
                "fp": r.fp,
                "fn": r.fn,
                "ids": r.ids,
                "frag": r.frag,
                "gt": r.gt,
                "diagnostic": r.diagnostic,
            }
            for r in reports
        },
        "table": table,
    }
    return doc


# ---------------------------------------------------------------------------
# Adapter for official nuScenes detection results
# ---------------------------------------------------------------------------

def quaternion_yaw(q: Sequence[float]) -> float:
    """Heading about +z from a (w, x, y, z) quaternion."""
    w, x, y, z = (float(v) for v in q)
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def convert_nuscenes_results(results_path, scene_map_path, out_path) -> None:
    """Map official nuScenes detection results into the detections schema.

    `scene_map` lists each scene's sample tokens in order with timestamps
    (seconds): {"schema_version": 1, "scenes": {name: [{"sample_token":
    ..., "timestamp": ...}, ...]}}.  nuScenes sizes are (w, l, h) and are
    reordered to (l, w, h); quaternions become yaw angles.
    """
    official = _load_json(results_path)
    sample_results = _require(official, "results", str(results_path))
    scene_map = _load_json(scene_map_path)
    _check_version(scene_map, str(scene_map_path))
    scenes_doc = _require(scene_map, "scenes", str(scene_map_path))

    scenes: dict[str, list[FrameDetections]] = {}
    for scene in sorted(scenes_doc):
        frames = []
        for fi, entry in enumerate(scenes_doc[scene]):
            epath = f"{scene_map_path}/scenes/{scene}/{fi}"
            token = _require(entry, "sample_token", epath)
            timestamp = float(_require(entry, "timestamp", epath))
            detections = []
            for di, rec in enumerate(sample_results.get(token, [])):
                dpath = f"{results_path}/results/{token}/{di}"
                translation = _require(rec, "translation", dpath)
                w, l, h = (float(v) for v in _require(rec, "size", dpath))
                velocity = rec.get("velocity", [0.0, 0.0])
                detections.append(
                    Detection(
                        center=(float(translation[0]), float(translation[1])),
                        passthrough=PassthroughState(
                            z=float(translation[2]),
                            size=(l, w, h),
                            yaw=quaternion_yaw(_require(rec, "rotation", dpath)),
                            velocity=(float(velocity[0]), float(velocity[1])),
                            detection_score=_clamp_score(
                                _require(rec, "detection_score", dpath), dpath
                            ),
                            class_name=str(_require(rec, "detection_name", dpath)),
                        ),
                        frame_index=fi,
                        timestamp=timestamp,
                    )
                )
            frames.append(FrameDetections(fi, timestamp, tuple(detections)))
        scenes[scene] = frames
    write_detections(scenes, out_path)
