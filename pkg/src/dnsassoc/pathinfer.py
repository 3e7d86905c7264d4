"""Path-based maliciousness scores over a domain graph.

The association between a seed and a domain is the product of edge weights
along the strongest path.  A domain's score combines its sorted seed
associations with exponentially decaying weights, so one strong association
counts far more than many weak ones.
"""
from __future__ import annotations

import csv
import logging
from fractions import Fraction

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-6
TAIL_EPS = 1e-12
# terms beyond this rank carry weight 2**-(i-1) < TAIL_EPS and are always dropped
MAX_TERMS = 41
SEED_CHUNK = 64


class EmptySeedError(ValueError):
    pass


def strongest_paths(dg, seed, floor=DEFAULT_FLOOR, csr=None):
    """Map domain -> strongest-path association from ``seed`` (absent = 0)."""
    idx = {d: k for k, d in enumerate(dg.domains)}
    if seed not in idx:
        log.warning("seed %s not in graph, skipped", seed)
        return {}
    indptr, indices, weights = csr or dg.csr()
    best = _kernels.maxprod_sssp(indptr, indices, weights, np.int64(idx[seed]), float(floor))
    return {dg.domains[k]: float(best[k]) for k in np.flatnonzero(best > 0)}


def mal_score(assoc):
    """Score from associations sorted non-increasing; [] scores 0.

    Each weight is read as the shortest decimal that prints as it (0.8 is
    4/5, not the binary float just above), the sum is kept in exact rationals
    and rounded once.  Hand-worked decimal examples therefore come out exact.
    """
    a = [float(x) for x in assoc]
    if not a:
        return 0.0
    assert all(a[i] >= a[i + 1] for i in range(len(a) - 1)), "associations must be sorted non-increasing"
    first = Fraction(repr(a[0]))
    tail = Fraction(0)
    coef = Fraction(1, 2)
    for x in a[1:]:
        term = coef * Fraction(repr(x))
        if term >= TAIL_EPS:
            tail += term
        coef /= 2
    return float(first + (1 - first) * tail)


def _score_rows(top):
    """Vectorized mal_score over rows that are already sorted descending."""
    if top.shape[1] == 0:
        return np.zeros(top.shape[0])
    coef = 0.5 ** np.arange(1, top.shape[1])
    terms = top[:, 1:] * coef
    terms[terms < TAIL_EPS] = 0.0
    return top[:, 0] + (1.0 - top[:, 0]) * terms.sum(axis=1)


def seed_indices(dg, seeds):
    idx = {d: k for k, d in enumerate(dg.domains)}
    present = sorted(s for s in set(seeds) if s in idx)
    missing = len(set(seeds)) - len(present)
    if missing:
        log.info("%d seeds absent from the domain graph", missing)
    return np.array([idx[s] for s in present], dtype=np.int64)


def score_all(dg, seeds, floor=DEFAULT_FLOOR):
    """ScoreTable (dict domain -> score) for every domain of ``dg``."""
    sidx = seed_indices(dg, seeds)
    if sidx.size == 0:
        raise EmptySeedError("none of the malicious seeds are in the domain graph")
    scores = score_array(dg, sidx, floor)
    return dict(zip(dg.domains, scores.tolist()))


def score_array(dg, sidx, floor=DEFAULT_FLOOR, csr=None):
    indptr, indices, weights = csr or dg.csr()
    n = len(dg.domains)
    k = min(MAX_TERMS, len(sidx))
    top = np.zeros((n, k))
    for start in range(0, len(sidx), SEED_CHUNK):
        chunk = sidx[start:start + SEED_CHUNK]
        block = np.empty((n, len(chunk)))
        for j, s in enumerate(chunk):
            block[:, j] = _kernels.maxprod_sssp(indptr, indices, weights, np.int64(s), float(floor))
        merged = np.concatenate([top, block], axis=1)
        merged = -np.sort(-merged, axis=1)
        top = merged[:, :k]
    scores = _score_rows(top)
    scores[sidx] = 1.0
    return scores


def association_vector(dg, seeds, domain, floor=DEFAULT_FLOOR):
    """Sorted [(seed, assoc)] for one domain, ties broken by seed name."""
    csr = dg.csr()
    out = []
    for s in sorted(set(seeds)):
        a = strongest_paths(dg, s, floor, csr).get(domain, 0.0)
        if a > 0:
            out.append((s, a))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


def write_scores(scores, path):
    rows = sorted(scores.items(), key=lambda t: (-t[1], t[0]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "score"])
        for d, s in rows:
            w.writerow([d, repr(float(s))])


def read_scores(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["domain"]: float(row["score"]) for row in csv.DictReader(fh)}
