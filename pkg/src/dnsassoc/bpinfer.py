"""Loopy belief propagation with two states (benign = 0, malicious = 1).

Messages live in flat arrays indexed by directed-edge id and are updated
synchronously: every sweep reads only the previous sweep's messages.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .assoc import DomainGraph
from .ingest import ResolutionGraph

log = logging.getLogger(__name__)

BENIGN, MALICIOUS = 0, 1


class SeedConflictError(ValueError):
    pass


@dataclass
class BpConfig:
    epsilon: float = 0.05
    prior_malicious_seed: float = 0.99
    prior_benign_seed: float = 0.01
    prior_unknown: float = 0.5
    convergence_eps: float = 1e-10
    max_iters: int = 15
    weight_coupling: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must be in (0, 0.5)")
        for name in ("prior_malicious_seed", "prior_benign_seed", "prior_unknown"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")


@dataclass
class BpGraph:
    """Nodes with priors phi (n, 2) and undirected edges with 2x2 potentials.

    ``psi[k, a, b]`` is the potential for edge k with endpoint ``u[k]`` in
    state a and ``v[k]`` in state b.
    """

    nodes: list
    prior: np.ndarray
    u: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    is_domain: np.ndarray = None

    def __post_init__(self):
        self.prior = np.ascontiguousarray(self.prior, dtype=np.float64).reshape(-1, 2)
        self.u = np.asarray(self.u, dtype=np.int64)
        self.v = np.asarray(self.v, dtype=np.int64)
        self.psi = np.ascontiguousarray(self.psi, dtype=np.float64).reshape(-1, 2, 2)
        if self.is_domain is None:
            self.is_domain = np.ones(len(self.nodes), dtype=bool)
        assert np.allclose(self.prior.sum(axis=1), 1.0) and (self.prior >= 0).all(), "invalid priors"
        assert (self.psi > 0).all(), "potentials must be positive"

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return int(self.u.shape[0])

    def directed(self):
        """(src, dst, rev, psi_directed) with edge k -> ids k (u->v) and m+k (v->u)."""
        m = self.n_edges
        src = np.concatenate([self.u, self.v])
        dst = np.concatenate([self.v, self.u])
        rev = np.concatenate([np.arange(m, 2 * m), np.arange(m)]).astype(np.int64)
        psi = np.ascontiguousarray(np.concatenate([self.psi, self.psi.transpose(0, 2, 1)]))
        return src, dst, rev, psi


@dataclass
class MessageState:
    msg: np.ndarray
    t: int = 0


@dataclass
class BeliefTable:
    nodes: list
    belief: np.ndarray
    is_domain: np.ndarray
    iterations: int = 0
    converged: bool = False
    deltas: list = field(default_factory=list)

    def __getitem__(self, node):
        return self.belief[self.nodes.index(node)]

    def as_dict(self):
        return {n: tuple(b) for n, b in zip(self.nodes, self.belief.tolist())}


def homophily(eps):
    return np.array([[0.5 + eps, 0.5 - eps], [0.5 - eps, 0.5 + eps]])


def init_messages(g):
    return MessageState(np.full((2 * g.n_edges, 2), 0.5), 0)


def bp_iterate(g, ms, cfg=None, _directed=None):
    """One synchronous sweep.  Returns (new state, max absolute message change)."""
    src, dst, rev, psi = _directed or g.directed()
    new, delta = _kernels.bp_sweep(src, dst, rev, np.log(g.prior), psi, ms.msg)
    if not np.isfinite(new).all():
        raise FloatingPointError("NaN in BP messages")
    return MessageState(new, ms.t + 1), float(delta)


def beliefs(g, ms):
    src, dst, _, _ = g.directed()
    return _kernels.bp_beliefs(dst, np.log(g.prior), ms.msg)


def run_bp(g, cfg=None):
    """Sweep until the max message change drops below convergence_eps or max_iters."""
    cfg = cfg or BpConfig()
    directed = g.directed()
    ms = init_messages(g)
    deltas = []
    converged = False
    logp = np.log(g.prior)
    src, dst, rev, psi = directed
    while ms.t < cfg.max_iters:
        new, delta = _kernels.bp_sweep(src, dst, rev, logp, psi, ms.msg)
        if not np.isfinite(new).all():
            raise FloatingPointError("NaN in BP messages")
        ms = MessageState(new, ms.t + 1)
        deltas.append(float(delta))
        if delta < cfg.convergence_eps:
            converged = True
            break
    b = _kernels.bp_beliefs(dst, logp, ms.msg)
    return BeliefTable(list(g.nodes), b, g.is_domain, ms.t, converged, deltas)


def _priors(names, malicious, benign, cfg):
    pm = cfg.prior_malicious_seed
    pb = cfg.prior_benign_seed
    pu = cfg.prior_unknown
    prior = np.tile([1.0 - pu, pu], (len(names), 1))
    for k, name in enumerate(names):
        if name in malicious:
            prior[k] = (1.0 - pm, pm)
        elif name in benign:
            prior[k] = (1.0 - pb, pb)
    return prior


def build_bp_graph(source, malicious=(), benign=(), cfg=None):
    """BpGraph over a ResolutionGraph (domains + IPs) or a DomainGraph."""
    cfg = cfg or BpConfig()
    malicious, benign = set(malicious), set(benign)
    clash = malicious & benign
    if clash:
        raise SeedConflictError(f"domains in both seed sets: {sorted(clash)[:10]}")
    if isinstance(source, ResolutionGraph):
        nd = source.n_domains
        nodes = list(source.domains) + list(source.ips)
        is_domain = np.r_[np.ones(nd, bool), np.zeros(source.n_ips, bool)]
        u, v = source.edge_domain, source.edge_ip + nd
        psi = np.broadcast_to(homophily(cfg.epsilon), (source.n_edges, 2, 2)).copy()
        names = list(source.domains) + [None] * source.n_ips
    elif isinstance(source, DomainGraph):
        keep = source.covered() | np.array([d in malicious or d in benign for d in source.domains])
        remap = np.cumsum(keep) - 1
        nodes = [d for d, k in zip(source.domains, keep) if k]
        is_domain = np.ones(len(nodes), bool)
        u, v = remap[source.src], remap[source.dst]
        eps = cfg.epsilon * (source.weight if cfg.weight_coupling else np.ones(source.n_edges))
        psi = np.empty((source.n_edges, 2, 2))
        psi[:, 0, 0] = psi[:, 1, 1] = 0.5 + eps
        psi[:, 0, 1] = psi[:, 1, 0] = 0.5 - eps
        names = nodes
    else:
        raise TypeError(f"cannot build a BP graph from {type(source).__name__}")
    prior = _priors(names, malicious, benign, cfg)
    return BpGraph(nodes, prior, u, v, psi, is_domain)


def beliefs_to_scores(bt):
    """domain -> b(malicious); IP nodes are left out."""
    return {n: float(b[MALICIOUS]) for n, b, d in zip(bt.nodes, bt.belief, bt.is_domain) if d}


def write_bp_output(scores, bt, path):
    from .pathinfer import write_scores

    write_scores(scores, path)
    side = {"converged": bool(bt.converged), "iterations": int(bt.iterations),
            "final_delta": bt.deltas[-1] if bt.deltas else 0.0}
    Path(path).with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n",
                                               encoding="utf-8")


# ---------------------------------------------------------------------------
# exact marginals by enumeration, for small graphs only
# ---------------------------------------------------------------------------


def exact_marginals(g):
    """Marginals of p(x) proportional to prod phi_i(x_i) prod psi_uv(x_u, x_v), by summing all 2^n states."""
    n = g.n_nodes
    if n > 20:
        raise ValueError("enumeration is exponential; refusing n > 20")
    states = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.int64)
    logp = np.log(g.prior)[np.arange(n), states].sum(axis=1)
    if g.n_edges:
        logp += np.log(g.psi[np.arange(g.n_edges), states[:, g.u], states[:, g.v]]).sum(axis=1)
    p = np.exp(logp - logp.max())
    p /= p.sum()
    out = np.empty((n, 2))
    for i in range(n):
        out[i, 1] = p[states[:, i] == 1].sum()
        out[i, 0] = 1.0 - out[i, 1]
    return out
