"""Datasets, CSV I/O, source-fitted min-max scaling and the synthetic turbine fleet."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import SOURCE, TARGET
from .nn import ConfigError, SchemaError

FEATURES = ("ambient_temperature", "ambient_humidity", "igv_angle", "fuel_flow")
TARGET_NAME = "active_power"
DOMAIN_NAMES = {SOURCE: "source", TARGET: "target"}
DOMAIN_CODES = {v: k for k, v in DOMAIN_NAMES.items()}


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    target: Optional[float]
    domain: int


@dataclass(frozen=True)
class NormStats:
    """Per-column min-max statistics; ``target_*`` are None for unlabeled fits."""

    feature_min: Tuple[float, ...]
    feature_max: Tuple[float, ...]
    target_min: Optional[float] = None
    target_max: Optional[float] = None
    kind: str = "minmax"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(tuple(d["feature_min"]), tuple(d["feature_max"]),
                   d.get("target_min"), d.get("target_max"), d.get("kind", "minmax"))

    def scale_target(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target_min) / (self.target_max - self.target_min)

    def unscale_target(self, y):
        return np.asarray(y, dtype=np.float64) * (self.target_max - self.target_min) + self.target_min


@dataclass(frozen=True)
class Dataset:
    """Immutable table of samples from one domain.

    ``X`` is ``(n, m)``; ``y`` is ``(n,)`` or None when unlabeled.
    """

    X: np.ndarray
    y: Optional[np.ndarray] = None
    domain: int = SOURCE
    feature_names: Tuple[str, ...] = FEATURES
    target_name: Optional[str] = TARGET_NAME
    norm_stats: Optional[NormStats] = None
    origin: str = ""
    rejected: Tuple[int, ...] = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, ndmin=2)
        if X.size == 0:
            X = X.reshape(0, len(self.feature_names))
        if X.shape[1] != len(self.feature_names):
            raise SchemaError(f"{X.shape[1]} feature columns but {len(self.feature_names)} names")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or Inf")
        X.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.y is not None:
            y = np.array(self.y, dtype=np.float64).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise SchemaError(f"{y.shape[0]} targets for {X.shape[0]} rows")
            if not np.all(np.isfinite(y)):
                raise ValueError("targets contain NaN or Inf")
            y.flags.writeable = False
            object.__setattr__(self, "y", y)
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"domain must be 0 (source) or 1 (target), got {self.domain}")

    def __len__(self):
        return self.X.shape[0]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    @property
    def samples(self) -> List[Sample]:
        ys = self.y if self.y is not None else [None] * len(self)
        return [Sample(x, None if t is None else float(t), self.domain) for x, t in zip(self.X, ys)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=None if self.y is None else self.y[idx], rejected=())

    def without_labels(self) -> "Dataset":
        return replace(self, y=None)

    def with_domain(self, domain: int) -> "Dataset":
        return replace(self, domain=domain)


def concat(datasets: Sequence[Dataset], origin: Optional[str] = None, domain: Optional[int] = None) -> Dataset:
    """Pool datasets sharing one schema into a single dataset."""
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.feature_names != first.feature_names:
            raise SchemaError("cannot pool datasets with different feature columns")
    labeled = all(ds.labeled for ds in datasets)
    return Dataset(
        np.vstack([ds.X for ds in datasets]),
        np.concatenate([ds.y for ds in datasets]) if labeled else None,
        first.domain if domain is None else domain,
        first.feature_names, first.target_name, first.norm_stats,
        origin if origin is not None else "+".join(ds.origin for ds in datasets),
    )


# --- CSV ---------------------------------------------------------------------

def save_csv(ds: Dataset, path) -> None:
    """Write one row per sample; floats use ``repr`` so reloading is exact."""
    cols = list(ds.feature_names) + ([ds.target_name] if ds.labeled else []) + ["domain"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.X[i]]
            if ds.labeled:
                row.append(repr(float(ds.y[i])))
            row.append(DOMAIN_NAMES[ds.domain])
            w.writerow(row)


def load_csv(path, feature_names: Sequence[str] = FEATURES, target_name: Optional[str] = TARGET_NAME,
             domain: Optional[int] = None, origin: Optional[str] = None) -> Dataset:
    """Read a dataset from CSV.

    Rows with a non-numeric or non-finite cell are skipped; their 1-based
    line numbers end up in ``Dataset.rejected``. A missing ``target_name``
    column yields an unlabeled dataset. When the file carries a ``domain``
    column and ``domain`` is given, only rows of that domain are kept.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in feature_names if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        fcols = [header.index(c) for c in feature_names]
        tcol = header.index(target_name) if target_name in header else None
        dcol = header.index("domain") if "domain" in header else None

        X, y, rejected, seen = [], [], [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if dcol is not None:
                code = DOMAIN_CODES.get(row[dcol].strip())
                if code is None:
                    rejected.append(lineno)
                    continue
                if domain is not None and code != domain:
                    continue
                seen.add(code)
            try:
                vals = [float(row[c]) for c in fcols]
                t = float(row[tcol]) if tcol is not None else None
            except (ValueError, IndexError):
                rejected.append(lineno)
                continue
            if not all(math.isfinite(v) for v in vals) or (t is not None and not math.isfinite(t)):
                rejected.append(lineno)
                continue
            X.append(vals)
            y.append(t)

    if domain is None:
        domain = seen.pop() if len(seen) == 1 else SOURCE
    return Dataset(
        np.array(X, dtype=np.float64).reshape(-1, len(feature_names)),
        np.array(y, dtype=np.float64) if tcol is not None else None,
        domain, tuple(feature_names), target_name if tcol is not None else None,
        None, origin if origin is not None else path.stem, tuple(rejected),
    )


# --- normalization -----------------------------------------------------------

def fit_normalizer(source: Dataset) -> NormStats:
    """Min-max statistics from the source domain only."""
    if len(source) == 0:
        raise ValueError("cannot fit normalizer on an empty dataset")
    lo, hi = source.X.min(axis=0), source.X.max(axis=0)
    for name, a, b in zip(source.feature_names, lo, hi):
        if not b > a:
            raise ConfigError(f"column {name!r} is constant; min-max scaling undefined")
    tmin = tmax = None
    if source.labeled:
        tmin, tmax = float(source.y.min()), float(source.y.max())
        if not tmax > tmin:
            raise ConfigError(f"column {source.target_name!r} is constant; min-max scaling undefined")
    return NormStats(tuple(map(float, lo)), tuple(map(float, hi)), tmin, tmax)


def apply_normalizer(stats: NormStats, ds: Dataset) -> Dataset:
    """Affine map to the source's [0, 1] box. Out-of-range values pass through."""
    lo, hi = np.array(stats.feature_min), np.array(stats.feature_max)
    if lo.shape[0] != ds.X.shape[1]:
        raise SchemaError(f"stats for {lo.shape[0]} columns, dataset has {ds.X.shape[1]}")
    X = (ds.X - lo) / (hi - lo)
    y = None
    if ds.labeled and stats.target_min is not None:
        y = stats.scale_target(ds.y)
    elif ds.labeled:
        y = ds.y
    return replace(ds, X=X, y=y, norm_stats=stats)


def split(ds: Dataset, fraction: float, seed=0) -> Tuple[Dataset, Dataset]:
    """Seeded random partition; the first part holds ``round(fraction * n)`` rows."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(len(ds))
    k = int(round(fraction * len(ds)))
    return ds.subset(np.sort(perm[:k])), ds.subset(np.sort(perm[k:]))


# --- synthetic fleet -----------------------------------------------------------
#
# Every plant sees the same ambient conditions and operating range (units on
# one site). Plants differ in
#   * sensor calibration: observed = lo + span * ((1 + gain) * u + offset)
#   * mechanical behaviour: the curvature of the fuel-to-power saturation.
# The true map, in unit-range coordinates u = (T, H, A, F):
#   sat(F)  = (1 - exp(-k F)) / (1 - exp(-k)),  k = fuel_curvature + curvature
#   power   = scale * (sat(F) * (1 - temp_coef T) * (1 - igv_coef + igv_coef A)
#                      - hum_coef H) + base_power

@dataclass
class PlantDelta:
    sensor_offset: List[float] = field(default_factory=lambda: [0.0] * 4)
    sensor_gain: List[float] = field(default_factory=lambda: [0.0] * 4)
    curvature: float = 0.0


def _default_plants() -> List[PlantDelta]:
    # humidity and IGV transmitters drift the most between units
    return [
        PlantDelta(),
        PlantDelta([0.02, 0.55, 0.04, 0.0], [0.0, 0.05, 0.0, 0.0], 0.1),
        PlantDelta([-0.03, -0.10, -0.05, 0.0], [0.0, -0.05, 0.02, 0.0], -0.1),
        PlantDelta([0.0, 0.65, 0.0, 0.01], [0.02, 0.0, 0.0, 0.0], 0.05),
        PlantDelta([0.03, -0.30, 0.06, 0.0], [0.0, 0.05, 0.0, 0.0], -0.05),
    ]


@dataclass
class FleetSpec:
    n_plants: int = 5
    n_samples: int = 2000
    noise_std: float = 1.5
    seed: int = 0
    feature_low: List[float] = field(default_factory=lambda: [5.0, 30.0, 40.0, 6.0])
    feature_high: List[float] = field(default_factory=lambda: [35.0, 90.0, 85.0, 12.0])
    scale: float = 150.0
    base_power: float = 20.0
    temp_coef: float = 0.3
    hum_coef: float = 0.2
    igv_coef: float = 0.15
    fuel_curvature: float = 1.5
    load_range: Tuple[float, float] = (0.1, 1.0)
    plants: List[PlantDelta] = field(default_factory=_default_plants)

    def __post_init__(self):
        self.plants = [p if isinstance(p, PlantDelta) else PlantDelta(**p) for p in self.plants]
        self.load_range = tuple(self.load_range)

    def validate(self):
        if self.n_plants < 2:
            raise ConfigError("a fleet needs at least two plants for transfer")
        if len(self.plants) != self.n_plants:
            raise ConfigError(f"{len(self.plants)} plant deltas for n_plants={self.n_plants}")
        if self.n_samples < 1 or self.noise_std < 0:
            raise ConfigError("n_samples must be positive and noise_std non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["load_range"] = list(self.load_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FleetSpec":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FleetSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def draw_conditions(spec: FleetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """True operating conditions in unit-range coordinates (T, H, A, F)."""
    t = rng.uniform(0.0, 1.0, n)
    h = rng.uniform(0.0, 1.0, n)
    f = rng.uniform(*spec.load_range, n)
    # IGV opens with load
    a = 0.7 * f + 0.3 * rng.uniform(0.0, 1.0, n)
    return np.column_stack([t, h, a, f])


def true_power(spec: FleetSpec, plant: int, u: np.ndarray) -> np.ndarray:
    k = spec.fuel_curvature + spec.plants[plant].curvature
    t, h, a, f = u.T
    sat = -np.expm1(-k * f) / -np.expm1(-k)
    core = sat * (1.0 - spec.temp_coef * t) * (1.0 - spec.igv_coef + spec.igv_coef * a) - spec.hum_coef * h
    return spec.scale * core + spec.base_power


def observe(spec: FleetSpec, plant: int, u: np.ndarray) -> np.ndarray:
    """Sensor readings in physical units for true conditions ``u``."""
    delta = spec.plants[plant]
    lo, hi = np.array(spec.feature_low), np.array(spec.feature_high)
    return lo + (hi - lo) * ((1.0 + np.array(delta.sensor_gain)) * u + np.array(delta.sensor_offset))


def generate_fleet(spec: FleetSpec) -> List[Dataset]:
    """One labeled dataset per plant, in physical units. Pure in ``spec``."""
    spec.validate()
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n_plants)
    fleet = []
    for p, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        u = draw_conditions(spec, spec.n_samples, rng)
        y = true_power(spec, p, u)
        if spec.noise_std > 0:
            y = y + rng.normal(0.0, spec.noise_std, spec.n_samples)
        fleet.append(Dataset(observe(spec, p, u), y, SOURCE, FEATURES, TARGET_NAME, None, f"plant-{p}"))
    return fleet
