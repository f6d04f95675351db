"""Tabular data, feature groups, benchmark generators and noise injection."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "MetadataError",
    "Dataset",
    "FeatureGroups",
    "NoiseSpec",
    "Experiment",
    "EXPERIMENTS",
    "load_csv",
    "write_csv",
    "generate_benchmark",
    "write_benchmark",
    "inject_noise",
    "train_test_split",
]


class DataError(ValueError):
    """Raised when tabular input cannot be ingested."""


class MetadataError(ValueError):
    """Raised when feature-group metadata is inconsistent with the table."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, target vector and optional train/test partition.

    Instances are treated as immutable; every transformation returns a new
    object. ``synthetic`` marks rows appended by surrogate augmentation.
    """

    features: np.ndarray
    target: np.ndarray
    names: tuple[str, ...]
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    synthetic: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float).ravel()
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise DataError(
                f"target length {y.shape[0]} != number of rows {X.shape[0]}")
        names = tuple(str(n) for n in self.names)
        if len(names) != X.shape[1]:
            raise DataError(
                f"{len(names)} names for {X.shape[1]} feature columns")
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in data")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "names", names)
        for attr in ("train_idx", "test_idx"):
            idx = getattr(self, attr)
            if idx is not None:
                idx = np.asarray(idx, dtype=np.int64)
                idx.setflags(write=False)
                object.__setattr__(self, attr, idx)
        if self.synthetic is not None:
            mask = np.asarray(self.synthetic, dtype=bool)
            if mask.shape != y.shape:
                raise DataError("synthetic mask must have one flag per row")
            mask.setflags(write=False)
            object.__setattr__(self, "synthetic", mask)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def rows(self, idx) -> "Dataset":
        """Row subset; the partition is dropped."""
        idx = np.asarray(idx, dtype=np.int64)
        syn = None if self.synthetic is None else self.synthetic[idx]
        return Dataset(self.features[idx], self.target[idx], self.names,
                       synthetic=syn)

    def train(self) -> "Dataset":
        return self if self.train_idx is None else self.rows(self.train_idx)

    def test(self) -> "Dataset":
        return self if self.test_idx is None else self.rows(self.test_idx)

    def columns(self, cols: Sequence[int]) -> "Dataset":
        """Keep only the given feature columns (order preserved)."""
        cols = [int(c) for c in cols]
        return replace(self, features=self.features[:, cols],
                       names=tuple(self.names[c] for c in cols))

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def content_bytes(self) -> bytes:
        return self.features.tobytes() + self.target.tobytes()


@dataclass(frozen=True)
class FeatureGroups:
    """Partition of feature column indices into disjoint, non-empty groups."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        if any(len(g) == 0 for g in groups):
            raise MetadataError("feature groups must be non-empty")
        flat = [i for g in groups for i in g]
        if len(flat) != len(set(flat)):
            raise MetadataError("feature groups overlap")
        if flat and sorted(flat) != list(range(len(flat))):
            raise MetadataError("feature groups must cover every column exactly once")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def singletons(cls, n_features: int) -> "FeatureGroups":
        return cls(tuple((i,) for i in range(n_features)))

    @classmethod
    def from_ranges(cls, ranges, n_features: int) -> "FeatureGroups":
        """Build groups from 1-based inclusive column ranges.

        Each range is ``(start, end)`` or a single column number. Columns not
        covered by any range are an error: groups must tile the table.
        """
        groups = []
        for r in ranges:
            if isinstance(r, (int, np.integer)):
                start = end = int(r)
            else:
                r = list(r)
                if len(r) == 1:
                    start = end = int(r[0])
                elif len(r) == 2:
                    start, end = int(r[0]), int(r[1])
                else:
                    raise MetadataError(f"bad range {r!r}")
            if start < 1 or end < start or end > n_features:
                raise MetadataError(
                    f"range {start}-{end} outside 1..{n_features}")
            groups.append(tuple(range(start - 1, end)))
        groups.sort(key=lambda g: g[0])
        expected = 0
        for g in groups:
            if g[0] < expected:
                raise MetadataError(f"overlapping range at column {g[0] + 1}")
            if g[0] > expected:
                raise MetadataError(f"gap in ranges at column {expected + 1}")
            expected = g[-1] + 1
        if expected != n_features:
            raise MetadataError(f"gap in ranges at column {expected + 1}")
        return cls(tuple(groups))

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_features(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def to_ranges(self) -> list[list[int]]:
        return [[g[0] + 1, g[-1] + 1] for g in self.groups]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise injection settings.

    ``mode`` selects which values are perturbed: ``"target"``, ``"input"``
    (feature columns) or ``"both"``. With ``additive`` off, each value v
    becomes ``v * (1 + eps)`` with ``eps ~ N(0, level)``; with it on, the
    perturbation is ``eps ~ N(0, level * std(column))``.
    """

    mode: str = "target"
    level: float = 0.0
    rng_seed: int = 0
    additive: bool = False

    def __post_init__(self):
        if self.mode not in ("target", "input", "both"):
            raise ValueError(f"noise mode must be target/input/both, got {self.mode!r}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"noise level must be in [0, 1], got {self.level}")


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, "
                        f"column {col + 1} ({header[col]})") from None
            rows.append(values)
    return header, rows


def load_csv(path, group_ranges=None) -> tuple[Dataset, FeatureGroups]:
    """Read a comma-separated table whose last column is the target.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with a mandatory header row.
    group_ranges : list, optional
        1-based inclusive column ranges, one per feature group. When omitted
        every feature forms its own group.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature and a target column")
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{path}: non-finite value at row {r + 2}, column {c + 1}")
    data = Dataset(arr[:, :-1], arr[:, -1], tuple(header[:-1]))
    if group_ranges is None:
        groups = FeatureGroups.singletons(data.n_features)
    else:
        groups = FeatureGroups.from_ranges(group_ranges, data.n_features)
    return data, groups


def write_csv(data: Dataset, path, target_name: str = "target") -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.names) + [target_name])
        for row, t in zip(data.features, data.target):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def inject_noise(data: Dataset, spec: NoiseSpec) -> Dataset:
    """Return a copy of ``data`` with noise applied per ``spec``."""
    if spec.level == 0.0:
        return data
    rng = np.random.default_rng(spec.rng_seed)
    X = np.array(data.features)
    y = np.array(data.target)
    # fixed draw order so input-only and both modes share the feature draws
    eps_x = rng.normal(0.0, spec.level, size=X.shape)
    eps_y = rng.normal(0.0, spec.level, size=y.shape)
    if spec.mode in ("input", "both"):
        if spec.additive:
            X = X + eps_x * X.std(axis=0)
        else:
            X = X * (1.0 + eps_x)
    if spec.mode in ("target", "both"):
        if spec.additive:
            y = y + eps_y * y.std()
        else:
            y = y * (1.0 + eps_y)
    return replace(data, features=X, target=y)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> Dataset:
    """Record a seeded random row partition on ``data``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must be in (0, 1), got {test_fraction}")
    n = data.n_samples
    n_test = int(round(test_fraction * n))
    if n_test < 2 or n - n_test < 2:
        raise ValueError(
            f"split of {n} rows at {test_fraction} leaves fewer than 2 rows on a side")
    perm = np.random.default_rng(seed).permutation(n)
    return replace(data, train_idx=np.sort(perm[n_test:]),
                   test_idx=np.sort(perm[:n_test]))


# --------------------------------------------------------------------------
# benchmark generators


def _f1(c):
    return c["x1"] + c["x2"] * c["x3"]


def _f2(c):
    return 1.33 * c["y30"] * c["y31"]


def _f3(c):
    return 13.08 * (c["z1"] - c["z2"]) * c["z3"] / (c["z2"] * c["z4"] ** 2)


def _f5(c):
    return 0.125 * c["h1"] * c["h2"] * c["h3"] ** 2 * c["h4"] ** 2


def _settling_velocity(cols, rng, jitter):
    # z4 is not sampled independently: it is tied to z1..z3 through a
    # non-rational relation plus a small multiplicative jitter
    z1, z2, z3 = cols["z1"], cols["z2"], cols["z3"]
    base = np.cbrt(1.0 + z3 * np.abs(z1 - z2) / z2)
    return base * (1.0 + jitter * rng.standard_normal(z1.shape))


@dataclass(frozen=True)
class Experiment:
    """A benchmark problem: generated columns, target formula and its terms.

    ``terms`` are prefix expressions (see :func:`eqdetect.expr.parse`) whose
    linear span, together with an intercept, contains the target; the paired
    ``coefficients`` are the true multipliers. ``dropped`` columns are used
    to compute the target and then removed.
    """

    key: str
    columns: tuple[str, ...]
    formula: Callable[[dict], np.ndarray]
    terms: tuple[str, ...]
    coefficients: tuple[float, ...]
    noise_level: float = 0.02
    test_fraction: float = 0.2
    default_samples: int = 2000
    group_ranges: tuple | None = None
    dropped: tuple[str, ...] = ()
    derived: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c for c in self.columns if c not in self.dropped)

    @property
    def recoverable(self) -> bool:
        return bool(self.terms)


_C_CORE = "div(mul(sub(z1, z2), z3), mul(z2, mul(z4, z4)))"

EXPERIMENTS: dict[str, Experiment] = {
    "A": Experiment(
        "A", ("x1", "x2", "x3"), _f1, ("x1", "mul(x2, x3)"), (1.0, 1.0),
        noise_level=0.02, test_fraction=0.75, default_samples=400),
    "B": Experiment(
        "B", tuple(f"y{i}" for i in range(1, 34)), _f2, ("mul(y30, y31)",),
        (1.33,), noise_level=0.0,
        group_ranges=((1, 7), (8, 14), (15, 21), (22, 28), 29, 30, 31, 32, 33)),
    "C": Experiment(
        "C", ("z1", "z2", "z3", "z4"), _f3, (_C_CORE,), (13.08,),
        derived={"z4": _settling_velocity}),
    "D": Experiment(
        "D", ("z1", "z2", "z3", "z4"), _f3, (), (), dropped=("z4",),
        derived={"z4": _settling_velocity}),
    "E": Experiment(
        "E", tuple(f"h{i}" for i in range(1, 13)), _f5,
        ("mul(mul(h1, h2), mul(mul(h3, h3), mul(h4, h4)))",), (0.125,)),
}


def generate_benchmark(experiment: str, n_samples: int, seed: int, *,
                       noise="default", ranges=None,
                       z4_jitter: float = 0.03) -> Dataset:
    """Generate a benchmark table.

    Features are drawn i.i.d. uniform on ``ranges`` (default ``[1, 10]`` for
    every column), the target is computed exactly from the experiment
    formula, dropped columns are removed, and noise is applied last.

    Parameters
    ----------
    noise : "default", None or NoiseSpec
        ``"default"`` uses the experiment's target-noise level with
        ``rng_seed=seed``; ``None`` disables noise.
    ranges : dict, optional
        Per-column ``(low, high)`` overrides.
    """
    key = str(experiment).upper()
    if key not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from A-E")
    if n_samples < 10:
        raise ValueError("n_samples must be at least 10")
    exp = EXPERIMENTS[key]
    ranges = dict(ranges or {})
    rng = np.random.default_rng(seed)
    cols = {}
    for name in exp.columns:
        if name in exp.derived:
            continue
        lo, hi = ranges.get(name, (1.0, 10.0))
        cols[name] = rng.uniform(lo, hi, size=n_samples)
    for name, fn in exp.derived.items():
        cols[name] = fn(cols, rng, z4_jitter)
    y = exp.formula(cols)
    names = exp.feature_names
    X = np.column_stack([cols[n] for n in names])
    data = Dataset(X, y, names)
    if isinstance(noise, str):
        if noise != "default":
            raise ValueError(f"noise must be 'default', None or NoiseSpec, got {noise!r}")
        noise = NoiseSpec("target", exp.noise_level, rng_seed=seed)
    if noise is not None:
        data = inject_noise(data, noise)
    return data


def write_benchmark(data: Dataset, path, *, experiment: str, seed: int,
                    noise: NoiseSpec | None, group_ranges=None) -> Path:
    """Write ``data`` as CSV plus a ``<name>.json`` sidecar manifest."""
    path = Path(path)
    write_csv(data, path)
    manifest = {
        "experiment": experiment,
        "seed": seed,
        "n_samples": data.n_samples,
        "features": list(data.names),
        "noise": None if noise is None else {
            "mode": noise.mode, "level": noise.level,
            "rng_seed": noise.rng_seed, "additive": noise.additive},
        "group_ranges": None if group_ranges is None else [
            list(r) if not isinstance(r, int) else [r, r] for r in group_ranges],
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return side


def default_tau(n_samples: int) -> int:
    """Synthetic sample count default: 10% of the original rows."""
    return int(math.ceil(0.1 * n_samples))
