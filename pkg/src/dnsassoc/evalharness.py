"""Ground truth, repeated k-fold scoring, threshold-swept ROC and runtime benchmarks.

Each round seeds the inference engine with ONE malicious fold and tests on
the other folds; the benign set is never folded.
"""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .seeding import derive_seed

log = logging.getLogger(__name__)

MALICIOUS_LABEL, BENIGN_LABEL, UNKNOWN_LABEL = "malicious", "benign", "unknown"


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ground truth and reputation providers
# ---------------------------------------------------------------------------


@dataclass
class GroundTruth:
    malicious: set
    benign: set

    def __post_init__(self):
        self.malicious = set(self.malicious)
        self.benign = set(self.benign)
        clash = self.malicious & self.benign
        if clash:
            log.warning("%d domains labeled both ways; keeping them malicious", len(clash))
            self.benign -= clash

    @classmethod
    def from_files(cls, malicious_path, benign_path):
        return cls(read_domain_list(malicious_path), read_domain_list(benign_path))


def read_domain_list(path):
    with open(path, encoding="utf-8") as fh:
        return [ln.strip().lower().rstrip(".") for ln in fh if ln.strip() and not ln.startswith("#")]


def write_domain_list(domains, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in sorted(domains):
            fh.write(d + "\n")


class ReputationProvider(Protocol):
    def lookup(self, domain: str) -> str:
        """One of 'malicious', 'benign', 'unknown'."""


class FileReputationProvider:
    def __init__(self, truth):
        self.truth = truth

    def lookup(self, domain):
        if domain in self.truth.malicious:
            return MALICIOUS_LABEL
        if domain in self.truth.benign:
            return BENIGN_LABEL
        return UNKNOWN_LABEL


@dataclass(frozen=True)
class ReputationRequest:
    domain: str


@dataclass(frozen=True)
class ReputationResponse:
    label: str
    category: str = ""


class HttpReputationClient:
    """Client for a remote verdict service.

    ``transport`` takes a ReputationRequest and returns a decoded JSON dict
    ``{"label": ..., "category": ...}``; plug in an HTTP call for live use.
    Categories map to labels through ``category_map`` when ``label`` is absent,
    e.g. a ``warning`` category means malicious and ``safe`` means benign.
    """

    category_map = {"warning": MALICIOUS_LABEL, "safe": BENIGN_LABEL,
                    "caution": UNKNOWN_LABEL, "unknown": UNKNOWN_LABEL}

    def __init__(self, transport: Callable[[ReputationRequest], dict]):
        self.transport = transport

    def fetch(self, domain):
        raw = self.transport(ReputationRequest(domain))
        category = str(raw.get("category", "")).lower()
        label = raw.get("label") or self.category_map.get(category, UNKNOWN_LABEL)
        if label not in (MALICIOUS_LABEL, BENIGN_LABEL, UNKNOWN_LABEL):
            raise EvalError(f"bad label {label!r} from reputation service")
        return ReputationResponse(label, category)

    def lookup(self, domain):
        return self.fetch(domain).label


def truth_from_provider(domains, provider):
    mal, ben = set(), set()
    for d in domains:
        v = provider.lookup(d)
        if v == MALICIOUS_LABEL:
            mal.add(d)
        elif v == BENIGN_LABEL:
            ben.add(d)
    return GroundTruth(mal, ben)


# ---------------------------------------------------------------------------
# folds and curves
# ---------------------------------------------------------------------------


@dataclass
class EvalPlan:
    folds: int = 10
    repeats: int = 5
    threshold_step: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0.0 < self.threshold_step <= 1.0:
            raise ValueError("threshold_step must be in (0, 1]")


def make_folds(malicious, plan):
    """[(seed_fold, test_domains)] for folds x repeats rounds."""
    mal = sorted(set(malicious))
    if len(mal) < plan.folds:
        raise EvalError(f"need at least {plan.folds} malicious domains for {plan.folds} folds, got {len(mal)}")
    rounds = []
    for rep in range(plan.repeats):
        rng = np.random.default_rng(derive_seed(plan.rng_seed, "folds", rep))
        perm = rng.permutation(len(mal))
        parts = np.array_split(perm, plan.folds)
        for k in range(plan.folds):
            train = {mal[i] for i in parts[k]}
            test = {mal[i] for j, p in enumerate(parts) if j != k for i in p}
            rounds.append((train, test))
    return rounds


def threshold_grid(step=0.01):
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise EvalError(f"threshold step {step} does not divide 1")
    return np.round(np.arange(n + 1) * step, 12)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    rounds: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.tpr.tolist(), self.fpr.tolist()))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "tpr", "fpr"])
            for t, a, b in self.rows():
                w.writerow([f"{t:.2f}" if self.thresholds.size <= 101 else repr(t), repr(a), repr(b)])


def roc_from_scores(scores, test_malicious, benign, step=0.01):
    """Strict ``score > t`` rates over the grid; missing domains score 0."""
    if not test_malicious:
        raise EvalError("empty malicious test set")
    if not benign:
        raise EvalError("empty benign set")
    grid = threshold_grid(step)
    ms = np.sort([scores.get(d, 0.0) for d in test_malicious])
    bs = np.sort([scores.get(d, 0.0) for d in benign])
    tpr = (ms.size - np.searchsorted(ms, grid, side="right")) / ms.size
    fpr = (bs.size - np.searchsorted(bs, grid, side="right")) / bs.size
    return RocCurve(grid, tpr, fpr)


def average_curves(curves):
    if not curves:
        raise EvalError("no curves to average")
    grid = curves[0].thresholds
    for c in curves[1:]:
        if c.thresholds.shape != grid.shape or not np.allclose(c.thresholds, grid):
            raise EvalError("curves use different threshold grids")
    tpr = np.mean([c.tpr for c in curves], axis=0)
    fpr = np.mean([c.fpr for c in curves], axis=0)
    return RocCurve(grid.copy(), tpr, fpr, rounds=list(curves))


def fpr_at_tpr(curve, target_tpr, interpolate=False):
    """Smallest FPR over grid points with TPR >= target; None if unreachable.

    With ``interpolate`` the FPR is read off the segment between the last grid
    point meeting the target and the next one below it.
    """
    tpr, fpr = curve.tpr, curve.fpr
    ok = tpr >= target_tpr - 1e-12
    if not ok.any():
        return None
    best = float(fpr[ok].min())
    if not interpolate or np.isclose(tpr[ok], target_tpr).any():
        return best
    k = int(np.flatnonzero(ok).max())
    if k + 1 >= tpr.size or tpr[k] == tpr[k + 1]:
        return best
    frac = (tpr[k] - target_tpr) / (tpr[k] - tpr[k + 1])
    return float(fpr[k] + frac * (fpr[k + 1] - fpr[k]))


def auc(curve):
    """Trapezoid area under (FPR, TPR) with the (1, 1) and (0, 0) corners added."""
    x = np.r_[1.0, curve.fpr, 0.0]
    y = np.r_[1.0, curve.tpr, 0.0]
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def precision_at(base_rate_malicious, tpr, fpr):
    p = base_rate_malicious
    num = tpr * p
    den = num + fpr * (1.0 - p)
    return 0.0 if den == 0 else num / den


@dataclass
class EvalResult:
    curve: RocCurve
    auc: float
    fpr_at: dict
    n_rounds: int

    def summary(self, base_rate=0.02):
        out = {"auc": self.auc, "rounds": self.n_rounds, "fpr_at_tpr": {}, "precision_at_tpr": {}}
        for target, f in sorted(self.fpr_at.items()):
            key = f"{target:.2f}"
            out["fpr_at_tpr"][key] = f
            out["precision_at_tpr"][key] = None if f is None else precision_at(base_rate, target, f)
        return out


def evaluate(score_fn, truth, plan=None, targets=(0.90, 0.95, 0.99), n_jobs=1):
    """Run all rounds; ``score_fn(seed_domains) -> {domain: score}``."""
    plan = plan or EvalPlan()
    rounds = make_folds(truth.malicious, plan)

    def one(r):
        train, test = r
        return roc_from_scores(score_fn(train), test, truth.benign, plan.threshold_step)

    if n_jobs and n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_jobs) as ex:
            curves = list(ex.map(one, rounds))
    else:
        curves = [one(r) for r in rounds]
    avg = average_curves(curves)
    return EvalResult(avg, auc(avg), {t: fpr_at_tpr(avg, t) for t in targets}, len(curves))


def write_summary(result, path, base_rate=0.02, extra=None):
    doc = result.summary(base_rate)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# runtime benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    engine: str
    scale: float
    nodes: int
    edges: int
    median_seconds: float | None
    censored: bool = False


def benchmark(engines, graphs, repeats=3, timeout=None):
    """Median wall time of each engine on each prepared graph.

    ``engines`` maps name -> (prepare, run): ``prepare(case)`` builds the
    engine input outside the timed region and returns (input, nodes, edges);
    ``run(input)`` is timed.  ``graphs`` is a list of (scale, case).  After a
    run exceeds ``timeout`` the engine is censored for larger scales.
    """
    rows = []
    for name, (prepare, run) in engines.items():
        censored = False
        for scale, case in graphs:
            inp, nodes, edges = prepare(case)
            if censored:
                rows.append(BenchRow(name, scale, nodes, edges, None, True))
                continue
            times = []
            for _ in range(max(repeats, 1)):
                t0 = time.perf_counter()
                run(inp)
                times.append(time.perf_counter() - t0)
                if timeout is not None and times[-1] > timeout:
                    censored = True
                    break
            rows.append(BenchRow(name, scale, nodes, edges,
                                 None if censored else statistics.median(times), censored))
    return rows


def write_bench(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["engine", "scale", "nodes", "edges", "median_seconds"])
        for r in rows:
            w.writerow([r.engine, r.scale, r.nodes, r.edges,
                        "censored" if r.censored else f"{r.median_seconds:.6f}"])


def linear_fit_r2(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = ((y - y.mean()) ** 2).sum()
    return 1.0 - resid.dot(resid) / ss_tot if ss_tot > 0 else 1.0
