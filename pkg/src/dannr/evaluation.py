"""MSE, transfer ratio, frozen-feature domain probes and the transfer matrix."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .data import Dataset, apply_normalizer, concat, fit_normalizer, split
from .model import SOURCE, TARGET, DannrModel, init_model
from .nn import DenseLayer, Tape
from .train import TrainConfig, train_baseline, train_dannr

MODES = ("one_to_one", "rest_to_one")

TABLE_COLUMNS = [
    "target", "source",
    "source_mse_no_tl", "source_mse_tl", "target_mse_no_tl", "target_mse_tl",
    "transfer_ratio",
]
PROVENANCE_COLUMNS = ["mode", "seed", "probe_accuracy_baseline", "probe_accuracy_dannr", "config_digest"]


def mse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise ValueError(f"need equal non-zero lengths, got {p.size} and {t.size}")
    return float(np.mean((p - t) ** 2))


def transfer_ratio(mse_no_tl: float, mse_tl: float) -> float:
    """Target MSE without transfer over target MSE with it; > 1 means transfer helped."""
    if not (mse_no_tl > 0 and mse_tl > 0):
        raise ValueError(f"both MSEs must be positive, got {mse_no_tl} and {mse_tl}")
    return mse_no_tl / mse_tl


# --- domain probe -------------------------------------------------------------

def _fit_logistic(F, d, l2=1e-4):
    m = F.shape[1]
    layer = DenseLayer(np.zeros((1, m)), np.zeros(1), "sigmoid", "probe")

    def loss_and_grad(theta):
        layer.weights[:] = theta[:m].reshape(1, m)
        layer.bias[:] = theta[m:]
        tape = Tape()
        loss = tape.cross_entropy(tape.dense(layer, F), d)
        g = tape.backward(loss)
        w = theta[:m]
        return (float(loss.value) + l2 * w @ w,
                np.concatenate([g["probe.weight"].ravel() + 2 * l2 * w, g["probe.bias"]]))

    res = minimize(loss_and_grad, np.zeros(m + 1), jac=True, method="L-BFGS-B")
    loss_and_grad(res.x)
    return layer


def probe_feature_accuracy(feat_source, feat_target, seed=0, holdout=0.5) -> float:
    """Held-out accuracy of a fresh logistic domain classifier on fixed features.

    Both domains are subsampled to the same size, so 0.5 means the features
    carry no linearly usable domain information.
    """
    fs = np.atleast_2d(np.asarray(feat_source, dtype=np.float64))
    ft = np.atleast_2d(np.asarray(feat_target, dtype=np.float64))
    rng = np.random.default_rng(seed)
    n = min(len(fs), len(ft))
    fs, ft = fs[rng.permutation(len(fs))[:n]], ft[rng.permutation(len(ft))[:n]]
    n_test = int(round(holdout * n))
    if n_test < 1 or n - n_test < 1:
        raise ValueError(f"cannot hold out {holdout:.0%} of {n} samples per domain")
    train_F = np.vstack([fs[n_test:], ft[n_test:]])
    train_d = np.r_[np.zeros(n - n_test), np.ones(n - n_test)]
    test_F = np.vstack([fs[:n_test], ft[:n_test]])
    test_d = np.r_[np.zeros(n_test), np.ones(n_test)]
    mu, sd = train_F.mean(axis=0), train_F.std(axis=0)
    sd[sd == 0] = 1.0
    layer = _fit_logistic((train_F - mu) / sd, train_d)
    p = Tape().dense(layer, (test_F - mu) / sd).value[:, 0]
    return float(np.mean((p > 0.5) == (test_d == 1)))


def probe_domain_accuracy(model: DannrModel, source: Dataset, target: Dataset, seed=0, holdout=0.5) -> float:
    """Domain-probe accuracy on the model's frozen feature-extractor output."""
    return probe_feature_accuracy(model.features(source.X), model.features(target.X), seed, holdout)


# --- reports -------------------------------------------------------------------

@dataclass
class EvalReport:
    target_name: str
    source_name: str
    source_mse_no_tl: float
    source_mse_tl: float
    target_mse_no_tl: float
    target_mse_tl: float
    probe_accuracy_baseline: Optional[float] = None
    probe_accuracy_dannr: Optional[float] = None
    mode: str = ""
    seed: Optional[int] = None
    config_digest: str = ""
    transfer_ratio: float = field(init=False)

    def __post_init__(self):
        self.transfer_ratio = transfer_ratio(self.target_mse_no_tl, self.target_mse_tl)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = {k: v for k, v in d.items() if k != "transfer_ratio"}
        return cls(**d)


def average_row(reports: Sequence[EvalReport]) -> dict:
    """Arithmetic mean of every numeric column, like the tables' Average row."""
    keys = ["source_mse_no_tl", "source_mse_tl", "target_mse_no_tl", "target_mse_tl", "transfer_ratio"]
    row = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    for k in ("probe_accuracy_baseline", "probe_accuracy_dannr"):
        vals = [getattr(r, k) for r in reports if getattr(r, k) is not None]
        row[k] = float(np.mean(vals)) if vals else None
    return row


def write_reports_csv(reports: Sequence[EvalReport], path, with_average=True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS + PROVENANCE_COLUMNS)
        for r in reports:
            d = r.to_dict()
            d["target"], d["source"] = r.target_name, r.source_name
            w.writerow([d[c] if d[c] is not None else "" for c in TABLE_COLUMNS + PROVENANCE_COLUMNS])
        if with_average and reports:
            avg = average_row(reports)
            w.writerow(["Average", ""] + [avg[c] for c in TABLE_COLUMNS[2:]]
                       + ["", "", avg["probe_accuracy_baseline"] or "", avg["probe_accuracy_dannr"] or "", ""])


def read_reports_csv(path) -> List[EvalReport]:
    reports = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["target"] == "Average":
                continue
            opt = lambda v, f=float: f(v) if v != "" else None  # noqa: E731
            reports.append(EvalReport(
                row["target"], row["source"],
                float(row["source_mse_no_tl"]), float(row["source_mse_tl"]),
                float(row["target_mse_no_tl"]), float(row["target_mse_tl"]),
                opt(row["probe_accuracy_baseline"]), opt(row["probe_accuracy_dannr"]),
                row["mode"], opt(row["seed"], int), row["config_digest"]))
    return reports


def write_reports_json(reports: Sequence[EvalReport], path, config: Optional[dict] = None) -> None:
    doc = {"reports": [r.to_dict() for r in reports],
           "average": average_row(reports) if reports else None,
           "config": config or {}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def write_plot_data(path, truth, baseline_pred, dannr_pred) -> None:
    """Per-sample ground truth and the two models' predictions."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "ground_truth", "baseline_prediction", "dannr_prediction"])
        for i, row in enumerate(zip(truth, baseline_pred, dannr_pred)):
            w.writerow([i, *(repr(float(v)) for v in row)])


def config_digest(*docs) -> str:
    blob = json.dumps(docs, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --- experiment matrix -----------------------------------------------------------

def cell_seed(root: int, mode: str, target_index: int) -> int:
    """Seed for one (mode, target) cell: first word of SeedSequence([root, mode, target])."""
    ss = np.random.SeedSequence([int(root), MODES.index(mode), int(target_index)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def source_indices(n_plants: int, mode: str, target_index: int) -> List[int]:
    """Plants pooled into the source for a given target.

    one_to_one uses the preceding plant (cyclically); rest_to_one all others.
    """
    if mode == "one_to_one":
        return [(target_index - 1) % n_plants]
    if mode == "rest_to_one":
        return [i for i in range(n_plants) if i != target_index]
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class CellResult:
    report: EvalReport
    baseline: DannrModel
    dannr: DannrModel
    source: Dataset
    target: Dataset
    target_eval: Dataset
    traces: tuple = ()


def run_cell(fleet: Sequence[Dataset], mode: str, target_index: int, cfg: TrainConfig,
             hidden=(60,), seed: Optional[int] = None, holdout: Optional[float] = None,
             probe: bool = True) -> CellResult:
    """Train baseline and DANN-R for one target plant and evaluate both.

    ``seed`` defaults to ``cfg.seed`` and is fanned out per cell. With
    ``holdout`` set, that fraction of the target is kept out of adaptation
    and used for the target MSEs.
    """
    if len(fleet) < 2:
        raise ValueError("a transfer experiment needs at least two datasets")
    root = cfg.seed if seed is None else seed
    cs = cell_seed(root, mode, target_index)
    srcs = source_indices(len(fleet), mode, target_index)
    raw_source = concat([fleet[i] for i in srcs], domain=SOURCE)
    stats = fit_normalizer(raw_source)
    source = apply_normalizer(stats, raw_source)
    target = apply_normalizer(stats, fleet[target_index]).with_domain(TARGET)
    target_eval = target
    if holdout is not None:
        target_eval, target = split(target, holdout, cs)

    cell_cfg = TrainConfig(**{**cfg.to_dict(), "seed": cs})
    init = init_model(source.X.shape[1], hidden, cs)
    init.meta["norm_stats"] = stats.to_dict()
    base, base_trace = train_baseline(init, source, cell_cfg)
    adapted, dannr_trace = train_dannr(init, source, target.without_labels(), cell_cfg)

    pa_base = pa_dannr = None
    if probe:
        pa_base = probe_domain_accuracy(base, source, target, cs)
        pa_dannr = probe_domain_accuracy(adapted, source, target, cs)
    report = EvalReport(
        target_name=fleet[target_index].origin or f"plant-{target_index}",
        source_name="+".join(fleet[i].origin or f"plant-{i}" for i in srcs),
        source_mse_no_tl=mse(base.predict(source.X), source.y),
        source_mse_tl=mse(adapted.predict(source.X), source.y),
        target_mse_no_tl=mse(base.predict(target_eval.X), target_eval.y),
        target_mse_tl=mse(adapted.predict(target_eval.X), target_eval.y),
        probe_accuracy_baseline=pa_base,
        probe_accuracy_dannr=pa_dannr,
        mode=mode, seed=root,
        config_digest=config_digest(cfg.to_dict(), list(hidden), holdout, mode, target_index),
    )
    return CellResult(report, base, adapted, source, target, target_eval, (base_trace, dannr_trace))


def run_experiment_matrix(fleet: Sequence[Dataset], mode: str, cfg: TrainConfig, hidden=(60,),
                          seed: Optional[int] = None, holdout: Optional[float] = None,
                          probe: bool = True) -> List[EvalReport]:
    """One report per target plant, each plant taking the target role once."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if len(fleet) < 2:
        raise ValueError("a transfer experiment needs at least two datasets")
    reports = []
    for t in range(len(fleet)):
        try:
            reports.append(run_cell(fleet, mode, t, cfg, hidden, seed, holdout, probe).report)
        except Exception as exc:
            raise RuntimeError(f"cell mode={mode} target={t} seed={cfg.seed if seed is None else seed} failed: {exc}") from exc
    return reports
