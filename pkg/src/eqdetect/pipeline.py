"""End-to-end orchestration: feature selection, surrogate, augmentation and
the two symbolic-regression searches, steered by optional domain knowledge."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, FeatureGroups, load_csv, train_test_split
from .feature_select import FsConfig, run_feature_selection
from .ga_sr import GaSrConfig, run_ga_sr
from .lv_sr import LvConfig, SamplingStrategy, StructureConstraint, run_lv_sr
from .metrics import LossSpec
from .surrogate import SyntheticSpec, augment, feature_importance, gate_check, search_model

__all__ = [
    "PipelineConfig",
    "KnowledgeConfig",
    "RunReport",
    "run_pipeline",
    "missing_feature_alert",
    "load_config_file",
]

log = logging.getLogger(__name__)


class _FromDict:
    @classmethod
    def from_dict(cls, d: dict | None):
        d = dict(d or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown {cls.__name__} fields: {', '.join(unknown)}")
        kw = {k: tuple(_tuplify(v)) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _tuplify(v):
    return [tuple(_tuplify(x)) if isinstance(x, list) else x for x in v]


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


@dataclass(frozen=True)
class PipelineConfig(_FromDict):
    """Hyperparameters, component switches, seeds and budgets.

    Defaults follow the reference hyperparameter table: ``omega_fs=0.9``,
    ``delta=0.05``, ``k=5``, ``zeta_mean=0.1``, ``zeta_std=0.02``,
    ``tau_fraction=0.1`` of the rows, ``r=0.025`` (in min-max scaled units
    unless ``normalize_radius`` is off), ``kappa=3``, equal loss
    weights, ``psi=0.05``, ``chi=0.5``, sizes ``3..13``, ``theta=1e3``,
    ``rho=1e7``.
    """

    # hyperparameters
    omega_fs: float = 0.9
    delta: float = 0.05
    k: int = 5
    zeta_mean: float = 0.1
    zeta_std: float = 0.02
    tau_fraction: float = 0.1
    r: float = 0.025
    kappa: int = 3
    normalize_radius: bool = True
    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0
    psi: float = 0.05
    chi: float = 0.5
    xi1: int = 3
    xi2: int = 13
    theta: int = 1000
    rho: int = 10_000_000
    K: int = 5
    functions: tuple = ("add", "sub", "mul", "div")
    # switches
    feature_selection: bool = True
    surrogate: bool = True
    augmentation: bool = True
    ga_sr: bool = True
    lv_sr: bool = True
    force_lv: bool = False
    # seeds and budgets
    seed: int = 0
    test_fraction: float = 0.2
    fs_population: int = 50
    fs_generations: int = 20
    surrogate_budget: int | None = None
    ga_population: int = 500
    ga_generations: int = 50
    ga_runs: int = 20
    psi_grid: tuple | None = None
    ga_tp_threshold: float = 0.8
    ga_r2_std_max: float = 0.05
    ga_r2_min: float = 0.9
    lv_patience: int | None = None
    lv_time_budget: float | None = None
    lv_max_rows: int | None = None
    normalize_residuals: bool = True
    alert_r2: float = 0.9
    alert_tp: float = 0.05

    def __post_init__(self):
        if self.augmentation and not self.surrogate:
            raise ValueError("augmentation requires the surrogate component")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        LossSpec(self.w1, self.w2, self.w3, self.psi)  # validates the weights

    @property
    def loss(self) -> LossSpec:
        return LossSpec(self.w1, self.w2, self.w3, self.psi)


@dataclass(frozen=True)
class KnowledgeConfig(_FromDict):
    """Domain knowledge for the five injection points.

    1. ``group_ranges``: feature groups for feature selection (1-based
       inclusive ranges or single indices).
    2. ``loss_formula``: replacement residual loss for the GA search.
    3. ``feature_weights``: ``{feature name: relative weight}`` for GA leaves
       (unlisted features weigh 1).
    4. ``quota`` ``[feature, fraction]`` and ``size_focus``
       ``[[sizes], fraction]``: LV sampling strategy.
    5. ``required_features`` and ``required_subtree``: LV structure.

    ``enabled`` switches junctions 1-5 individually.
    """

    group_ranges: tuple | None = None
    loss_formula: str | None = None
    feature_weights: dict | None = None
    quota: tuple | None = None
    size_focus: tuple | None = None
    required_features: tuple | None = None
    required_subtree: str | None = None
    enabled: tuple = (True, True, True, True, True)

    def __post_init__(self):
        if len(self.enabled) != 5:
            raise ValueError("enabled needs five flags")

    def effective(self) -> dict:
        """Knowledge actually applied; disabled or empty junctions are ``None``."""
        on = [bool(e) for e in self.enabled]
        return {
            "group_ranges": _jsonable(self.group_ranges) if on[0] else None,
            "loss_formula": self.loss_formula if on[1] else None,
            "feature_weights": _jsonable(self.feature_weights) if on[2] else None,
            "quota": _jsonable(self.quota) if on[3] else None,
            "size_focus": _jsonable(self.size_focus) if on[3] else None,
            "required_features": _jsonable(self.required_features) if on[4] else None,
            "required_subtree": self.required_subtree if on[4] else None,
        }

    def with_enabled(self, flags) -> "KnowledgeConfig":
        return dataclasses.replace(self, enabled=tuple(bool(f) for f in flags))


def missing_feature_alert(surrogate_r2: float, sr_tp: float, r2_threshold: float = 0.9,
                          tp_threshold: float = 0.05) -> str | None:
    """Alert text when the surrogate fits well but the best equation does not.

    Raised iff ``surrogate_r2 >= r2_threshold`` and ``sr_tp <= tp_threshold``.
    """
    if surrogate_r2 >= r2_threshold and sr_tp <= tp_threshold:
        return (f"possible missing dependent variable: surrogate fold-mean R2 "
                f"{surrogate_r2:.3f} >= {r2_threshold} while the best equation's "
                f"t-test p-value {sr_tp:.3f} <= {tp_threshold}")
    return None


@dataclass
class RunReport:
    """Everything a run produced; ``to_json`` is deterministic for a fixed seed."""

    config: dict
    knowledge: dict
    data: dict
    stages: list = field(default_factory=list)
    feature_selection: dict | None = None
    surrogate: dict | None = None
    augmentation: dict | None = None
    ga_sr: dict | None = None
    lv_sr: dict | None = None
    equation: str | None = None
    equation_source: str | None = None
    stable: bool = False
    alerts: list = field(default_factory=list)
    complete: bool = True
    error: str | None = None
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("timing")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(_jsonable(self.to_dict(include_timing)), indent=2,
                          sort_keys=True) + "\n"

    def write(self, path, include_timing: bool = False) -> None:
        Path(path).write_text(self.to_json(include_timing), encoding="utf-8")

    def stage_ran(self, name: str) -> bool:
        return any(s["stage"] == name and s["status"] == "ran" for s in self.stages)


def load_config_file(path) -> dict:
    """Read a TOML or JSON mapping."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def _append_training(data: Dataset, extra: Dataset) -> Dataset:
    """Training rows of ``data`` followed by ``extra``'s synthetic rows, then the test rows."""
    tr, te = data.train(), data.test()
    n_syn = extra.n_samples - tr.n_samples
    X = np.vstack([extra.features, te.features])
    y = np.concatenate([extra.target, te.target])
    syn = np.concatenate([extra.synthetic if extra.synthetic is not None
                          else np.zeros(extra.n_samples, bool), np.zeros(te.n_samples, bool)])
    n_tr = tr.n_samples + n_syn
    return Dataset(X, y, data.names, np.arange(n_tr), np.arange(n_tr, n_tr + te.n_samples), syn)


def _seeds(seed: int) -> dict:
    names = ("split", "fs", "surrogate", "augment", "ga", "lv")
    kids = np.random.SeedSequence(seed).generate_state(len(names))
    return {n: int(s) for n, s in zip(names, kids)}


def _feature_ref(f, names):
    if isinstance(f, str):
        return f if f in names else None
    return names[f] if 0 <= f < len(names) else None


def _check_knowledge(kn: dict, names) -> None:
    """Every feature named in the knowledge must exist in the input table."""
    refs = list(kn["feature_weights"] or {}) + list(kn["required_features"] or ())
    if kn["quota"]:
        refs.append(kn["quota"][0])
    bad = [f for f in refs if _feature_ref(f, names) is None]
    if bad:
        raise ValueError(f"knowledge names unknown features: {bad}")


def run_pipeline(data, cfg: PipelineConfig = PipelineConfig(),
                 knowledge: KnowledgeConfig | None = None) -> RunReport:
    """Run every enabled component in order and collect a report.

    ``data`` is a CSV path or a :class:`Dataset`. A dataset without a
    train/test split is split with ``cfg.test_fraction``. The LV search runs
    when the GA search is off, its verdict is unstable, or ``force_lv`` is
    set. A failing stage stops the run and marks the report incomplete.
    """
    knowledge = knowledge or KnowledgeConfig()
    kn = knowledge.effective()
    seeds = _seeds(cfg.seed)
    t_start = time.perf_counter()
    source = None
    if not isinstance(data, Dataset):
        source = str(data)
        data, _ = load_csv(data)
    if data.train_idx is None or data.test_idx is None:
        data = train_test_split(data, cfg.test_fraction, seeds["split"])
    report = RunReport(
        config=cfg.to_dict(), knowledge=kn,
        data={"path": source, "sha256": hashlib.sha256(data.content_bytes()).hexdigest(),
              "n_samples": data.n_samples, "features": list(data.names),
              "n_train": len(data.train_idx), "n_test": len(data.test_idx)})

    def stage(name, status, **info):
        report.stages.append({"stage": name, "status": status, **_jsonable(info)})
        log.info("stage %s: %s %s", name, status, info or "")

    name = None
    try:
        name = "knowledge"
        _check_knowledge(kn, data.names)

        # (1) feature selection
        name = "feature_selection"
        t0 = time.perf_counter()
        if not cfg.feature_selection:
            stage(name, "off")
        elif kn["group_ranges"] is None:
            stage(name, "skipped", reason="no feature groups supplied")
        else:
            groups = FeatureGroups.from_ranges(kn["group_ranges"], data.n_features)
            fs = run_feature_selection(
                data.train(), groups,
                FsConfig(cfg.omega_fs, cfg.delta, cfg.fs_population, cfg.fs_generations,
                         seeds["fs"], cfg.k))
            report.feature_selection = fs.summary(data.names)
            data = data.columns(fs.selected)
            stage(name, "ran", selected=list(data.names))
        report.timing[name] = time.perf_counter() - t0

        # (2) surrogate and gate, (3) augmentation
        name = "surrogate"
        t0 = time.perf_counter()
        model = None
        if not cfg.surrogate:
            stage(name, "off")
        else:
            model = search_model(data.train(), cfg.k, cfg.surrogate_budget, seeds["surrogate"])
            passed = gate_check(model, cfg.zeta_mean, cfg.zeta_std)
            imp = feature_importance(model, data.test(), seed=seeds["surrogate"])
            report.surrogate = {**model.summary(), "gate_passed": passed,
                                "importance": dict(zip(data.names, imp.tolist()))}
            stage(name, "ran", model=model.key, gate_passed=passed)
        report.timing[name] = time.perf_counter() - t0

        name = "augmentation"
        t0 = time.perf_counter()
        if not cfg.augmentation:
            stage(name, "off")
        elif model is None or not report.surrogate["gate_passed"]:
            stage(name, "skipped", reason="surrogate gate not passed")
        else:
            n_tr = len(data.train_idx)
            spec = SyntheticSpec(tau=int(math.ceil(cfg.tau_fraction * n_tr)), r=cfg.r,
                                 kappa=cfg.kappa, normalize=cfg.normalize_radius)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                grown = augment(data.train(), model, spec, seeds["augment"])
            added = grown.n_samples - n_tr
            data = _append_training(data, grown)
            report.augmentation = {"requested": spec.tau, "added": added,
                                   "warnings": [str(w.message) for w in caught]}
            stage(name, "ran", added=added)
        report.timing[name] = time.perf_counter() - t0

        # (4) GA search
        name = "ga_sr"
        t0 = time.perf_counter()
        ga = None
        if not cfg.ga_sr:
            stage(name, "off")
        else:
            weights = None
            if kn["feature_weights"]:
                w = {_feature_ref(k, data.names): float(v) for k, v in kn["feature_weights"].items()}
                weights = tuple(w.get(n, 1.0) for n in data.names)
            loss = LossSpec(cfg.w1, cfg.w2, cfg.w3, cfg.psi, kn["loss_formula"])
            ga_cfg = GaSrConfig(
                population=cfg.ga_population, generations=cfg.ga_generations,
                psi_grid=tuple(cfg.psi_grid) if cfg.psi_grid else (cfg.psi,), loss=loss,
                feature_weights=weights, runs=cfg.ga_runs, chi=cfg.chi, k=cfg.k,
                seed=seeds["ga"], delta=cfg.delta, functions=tuple(cfg.functions),
                tp_threshold=cfg.ga_tp_threshold, r2_std_max=cfg.ga_r2_std_max,
                r2_min=cfg.ga_r2_min, normalize_residuals=cfg.normalize_residuals)
            ga = run_ga_sr(data, ga_cfg)
            report.ga_sr = ga.summary(data.names)
            stage(name, "ran", stable=ga.stable)
        report.timing[name] = time.perf_counter() - t0

        # (5) LV search
        name = "lv_sr"
        t0 = time.perf_counter()
        lv = None
        want_lv = ga is None or not ga.stable or cfg.force_lv
        if not cfg.lv_sr:
            stage(name, "off")
        elif not want_lv:
            stage(name, "skipped", reason="GA verdict stable")
        else:
            quota = None
            if kn["quota"]:
                q = _feature_ref(kn["quota"][0], data.names)
                quota = None if q is None else (q, float(kn["quota"][1]))
            focus = None if not kn["size_focus"] else (tuple(kn["size_focus"][0]),
                                                        float(kn["size_focus"][1]))
            req = tuple(f for f in (_feature_ref(f, data.names)
                                    for f in (kn["required_features"] or ())) if f)
            lv_cfg = LvConfig(cfg.xi1, cfg.xi2, tuple(cfg.functions), cfg.loss, seeds["lv"],
                              time_budget=cfg.lv_time_budget, patience=cfg.lv_patience,
                              max_rows=cfg.lv_max_rows,
                              normalize_residuals=cfg.normalize_residuals)
            strategy = SamplingStrategy(quota, focus, cfg.K, cfg.theta, cfg.rho)
            lv = run_lv_sr(data, lv_cfg, strategy,
                           StructureConstraint(req, kn["required_subtree"]))
            report.lv_sr = lv.summary(data.names)
            stage(name, "ran", stop_reason=lv.stop_reason)
        report.timing[name] = time.perf_counter() - t0

        # (6) alerts and the reported equation
        name = "alerts"
        if ga is not None and ga.stable:
            report.equation, report.equation_source = report.ga_sr["winner"], "ga_sr"
            report.stable = True
        elif lv is not None:
            report.equation, report.equation_source = report.lv_sr["equation"], "lv_sr"
        best_tp = (lv.metrics.t_p if lv is not None
                   else ga.winner.metrics.t_p if ga is not None else None)
        if model is not None and best_tp is not None:
            msg = missing_feature_alert(model.r2_mean, best_tp, cfg.alert_r2, cfg.alert_tp)
            if msg:
                report.alerts.append(msg)
        if report.augmentation and report.augmentation["warnings"]:
            report.alerts.extend(report.augmentation["warnings"])
        stage(name, "ran", count=len(report.alerts))
    except Exception as exc:  # partial report, marked incomplete
        report.complete = False
        report.error = f"{name}: {type(exc).__name__}: {exc}"
        stage(name, "failed", error=str(exc))
        log.exception("stage %s failed", name)
    report.timing["total"] = time.perf_counter() - t_start
    return report
