"""Stage orchestration, configuration and reporting.

The stages communicate through point-cloud columns: the filter adds
``ground``, LIE adds ``v`` for nonground rows, clustering adds ``class``.
Any stage can therefore start from a CSV produced elsewhere, e.g. a ground
mask exported by a different filtering tool.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import cluster as cl
from . import lie, osr, synth
from .cloud import Label, PointCloud, collapse_labels
from .errors import ConfigError, DegenerateFeatures, InputMismatch, SchemaError, TooFewPoints

log = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass(frozen=True)
class ClusterSettings:
    k: int = 2
    use_intensity: bool = False
    seed: int = 0
    method: str = "gmm"

    def __post_init__(self):
        if self.k not in (2, 3):
            raise ConfigError("cluster k must be 2 or 3")
        if self.method not in ("gmm", "kmeans"):
            raise ConfigError("cluster method must be 'gmm' or 'kmeans'")


@dataclass(frozen=True)
class LieSettings:
    bandwidth: lie.Bandwidth = lie.Bandwidth.default()
    mode: str = "grid"
    truncation: float = lie.DEFAULT_TRUNCATION

    def __post_init__(self):
        if self.mode not in ("exact", "grid"):
            raise ConfigError("lie mode must be 'exact' or 'grid'")
        if not self.truncation > 0:
            raise ConfigError("truncation must be positive")

    def to_dict(self) -> dict:
        return {"hx": self.bandwidth.hx, "hy": self.bandwidth.hy, "hz": self.bandwidth.hz,
                "mode": self.mode, "truncation": self.truncation}


@dataclass(frozen=True)
class PipelineConfig:
    input: Optional[str] = None
    scene: Optional[synth.SceneSpec] = None
    osr: osr.OsrConfig = osr.OsrConfig()
    lie: LieSettings = LieSettings()
    cluster: ClusterSettings = ClusterSettings()
    output: Optional[str] = None
    report: Optional[str] = None

    def __post_init__(self):
        if (self.input is None) == (self.scene is None):
            raise ConfigError("exactly one of 'input' and 'scene' must be given")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"input", "scene", "osr", "lie", "cluster", "output", "report"}
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        try:
            scene = d.get("scene")
            if isinstance(scene, str):
                scenes = synth.default_scenes()
                if scene not in scenes:
                    raise ConfigError(f"unknown scene {scene!r}; choose from {sorted(scenes)}")
                scene = scenes[scene]
            elif scene is not None:
                scene = synth.SceneSpec.from_dict(scene)
            o = d.get("osr", {})
            osr_cfg = osr.OsrConfig(int(o.get("max_iter", 100)), float(o.get("beta_tol", 1e-10)),
                                    int(o.get("min_ground", 3)))
            li = d.get("lie", {})
            default_h = lie.Bandwidth.default()
            hx = float(li.get("hx", default_h.hx))
            bw = lie.Bandwidth(hx, float(li.get("hy", hx)), float(li.get("hz", default_h.hz)))
            lie_cfg = LieSettings(bw, str(li.get("mode", "grid")),
                                  float(li.get("truncation", lie.DEFAULT_TRUNCATION)))
            c = d.get("cluster", {})
            cl_cfg = ClusterSettings(int(c.get("k", 2)), bool(c.get("use_intensity", False)),
                                     int(c.get("seed", 0)), str(c.get("method", "gmm")))
            return cls(d.get("input"), scene, osr_cfg, lie_cfg, cl_cfg, d.get("output"), d.get("report"))
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def parameters(self) -> dict:
        return {
            "input": self.input,
            "scene": self.scene.to_dict() if self.scene else None,
            "osr": asdict(self.osr),
            "lie": self.lie.to_dict(),
            "cluster": asdict(self.cluster),
        }


class StageFailure(Exception):
    """A stage raised; carries the stage name and the partial report."""

    def __init__(self, stage: str, error: Exception, report: dict):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error
        self.report = report


def new_report(n: int, parameters: Optional[dict] = None) -> dict:
    return {"version": REPORT_VERSION, "status": "ok", "n": n,
            "parameters": parameters or {}, "timing": {}, "notes": []}


# stages ------------------------------------------------------------------------


def filter_stage(cloud: PointCloud, config: osr.OsrConfig, report: dict) -> PointCloud:
    t0 = time.perf_counter()
    fit = osr.run_osr(cloud, config)
    report["osr"] = fit.summary()
    report["timing"]["filter"] = time.perf_counter() - t0
    return cloud.replace(ground=~fit.nonground.mask(cloud.n))


def lie_stage(cloud: PointCloud, settings: LieSettings, report: dict) -> PointCloud:
    if cloud.ground is None:
        raise SchemaError("LIE stage needs a 'ground' column")
    t0 = time.perf_counter()
    nonground = cloud.nonground_set()
    if len(nonground) == 0:
        report["notes"].append("no nonground points; LIE skipped")
        report["features"] = {"count": 0, "valid": 0, "v_quantiles": {}}
        report["timing"]["lie"] = time.perf_counter() - t0
        return cloud.replace(v=np.full(cloud.n, np.nan))
    feats = lie.compute_features(cloud, nonground, settings.bandwidth, settings.mode, settings.truncation)
    report["features"] = feats.summary()
    report["timing"]["lie"] = time.perf_counter() - t0
    return cloud.replace(v=feats.column(cloud.n))


def feature_summary(cloud: PointCloud) -> dict:
    ng = ~cloud.ground
    v = cloud.v[ng]
    good = v[~np.isnan(v)]
    qs = np.quantile(good, [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]).tolist() if good.size else []
    return {"count": int(ng.sum()), "valid": int(good.size),
            "v_quantiles": dict(zip(["min", "q10", "q25", "median", "q75", "q90", "max"], qs))}


def cluster_stage(cloud: PointCloud, settings: ClusterSettings, report: dict) -> PointCloud:
    if cloud.ground is None or cloud.v is None:
        raise SchemaError("cluster stage needs 'ground' and 'v' columns")
    t0 = time.perf_counter()
    predicted = np.full(cloud.n, Label.GROUND, dtype=np.int8)
    ng_rows = np.flatnonzero(~cloud.ground)
    if ng_rows.size == 0:
        report["notes"].append("no nonground points; clustering skipped")
        report["timing"]["cluster"] = time.perf_counter() - t0
        return cloud.replace(predicted=predicted)

    valid = ~np.isnan(cloud.v[ng_rows])
    rows = ng_rows[valid]
    if rows.size < settings.k:
        raise TooFewPoints(f"{rows.size} valid features cannot support k={settings.k} clusters")
    columns = ["v"]
    data = [cloud.v[rows]]
    if settings.use_intensity:
        if cloud.intensity is None:
            raise SchemaError("use_intensity requires an 'intensity' column")
        columns.append("intensity")
        data.append(cloud.intensity[rows])
    fm = cl.FeatureMatrix(np.column_stack(data), rows, tuple(columns))
    transform = None
    if settings.use_intensity:
        fm, transform = cl.standardize(fm)
        if "v" not in fm.columns:
            raise DegenerateFeatures("feature v is constant over the nonground points")

    if settings.method == "gmm":
        model = cl.fit_gmm(fm, settings.k, settings.seed)
        labels = cl.assign_labels(model, fm)
        mapping = cl.component_label_map(model.means[:, 0])
        report["gmm"] = {**model.to_dict(),
                         "label_mapping": {str(k): Label(v).token for k, v in sorted(mapping.items())},
                         "standardization": transform.to_dict() if transform else None}
    else:
        res = cl.kmeans(fm, settings.k, settings.seed)
        mapping = cl.component_label_map(res.centroids[:, 0])
        lut = np.array([mapping[k] for k in range(settings.k)], dtype=np.int8)
        labels = lut[res.assignment.labels]
        report["kmeans"] = {"centroids": res.centroids.tolist(), "inertia": res.inertia[-1],
                            "label_mapping": {str(k): Label(v).token for k, v in sorted(mapping.items())},
                            "standardization": transform.to_dict() if transform else None}

    predicted[rows] = labels
    invalid = ng_rows[~valid]
    if invalid.size:
        predicted[invalid] = cl.propagate_to_invalid(cloud.xyz, rows, labels, invalid)
        report["notes"].append(f"{invalid.size} points without a valid feature took their nearest neighbour's label")
    report["features"] = report.get("features") or feature_summary(cloud)
    report["timing"]["cluster"] = time.perf_counter() - t0
    return cloud.replace(predicted=predicted)


def finish_report(cloud: PointCloud, report: dict) -> dict:
    if cloud.predicted is not None:
        report["class_counts"] = {lab.token: int(np.sum(cloud.predicted == lab)) for lab in Label}
        if cloud.truth is not None:
            report["metrics"] = evaluate(cloud.predicted, cloud.truth)
    return report


def run_stages(cloud: PointCloud, config: PipelineConfig, stages=("filter", "lie", "cluster"),
               report: Optional[dict] = None):
    """Run ``stages`` in order; returns the labelled cloud and the report.

    Failures are re-raised as :class:`StageFailure` with the report's error
    field filled in.
    """
    report = report if report is not None else new_report(cloud.n, config.parameters())
    runners = {
        "filter": lambda c: filter_stage(c, config.osr, report),
        "lie": lambda c: lie_stage(c, config.lie, report),
        "cluster": lambda c: cluster_stage(c, config.cluster, report),
    }
    for stage in stages:
        try:
            cloud = runners[stage](cloud)
        except SchemaError:
            raise
        except Exception as exc:  # noqa: BLE001 - reported with stage context
            report["status"] = "error"
            report["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
            raise StageFailure(stage, exc, report) from exc
    return cloud, finish_report(cloud, report)


def load_input(config: PipelineConfig) -> PointCloud:
    from .io import read_cloud

    if config.scene is not None:
        return synth.generate(config.scene)
    return read_cloud(config.input)


# evaluation -----------------------------------------------------------------------


def confusion_matrix(predicted, truth) -> np.ndarray:
    """3x3 counts, rows = predicted, columns = truth, over ground/tree/human."""
    p = collapse_labels(predicted)
    t = collapse_labels(truth)
    if p.shape != t.shape:
        raise InputMismatch(f"{p.size} predicted labels vs {t.size} truth labels")
    cm = np.zeros((3, 3), dtype=np.int64)
    np.add.at(cm, (p, t), 1)
    return cm


def evaluate(predicted, truth) -> dict:
    cm = confusion_matrix(predicted, truth)
    total = int(cm.sum())
    names = [lab.token for lab in (Label.GROUND, Label.TREE, Label.HUMAN_MADE)]
    per_class = {}
    for k, name in enumerate(names):
        tp = int(cm[k, k])
        pred_k, true_k = int(cm[k].sum()), int(cm[:, k].sum())
        per_class[name] = {
            "precision": tp / pred_k if pred_k else None,
            "recall": tp / true_k if true_k else None,
            "support": true_k,
        }
    # ground/nonground split alone, independent of the tree/human decision
    gp = collapse_labels(predicted) == Label.GROUND
    gt = collapse_labels(truth) == Label.GROUND
    return {
        "labels": names,
        "confusion": cm.tolist(),
        "accuracy": float(np.trace(cm)) / total if total else None,
        "ground_accuracy": float(np.mean(gp == gt)) if total else None,
        "per_class": per_class,
        "n": total,
    }


def dump_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
