"""Runtime scaling benchmark: degree-preserving copies of a reference graph at
several scales, labeled with the reference's per-degree public share, then
timed under each inference engine."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import assoc, bpinfer, ipclass, pathinfer
from .evalharness import benchmark
from .seeding import derive_seed
from .synthgen import DegreeProfile, generate_bipartite, scale_profile, synthetic_as_map

log = logging.getLogger(__name__)

DEFAULT_SCALES = (1, 2, 4, 8)
ENGINES = ("path", "bp-gnew", "bp-bgnew")


@dataclass
class ScaledCase:
    scale: float
    graph: object
    domain_graph: object
    seeds: set


def label_by_degree(ref_graph, ref_labels, target, rng_seed=0):
    """Label ``target`` IPs so each IP degree keeps the reference's public share.

    Synthetic names carry no 2LD structure, so name-based features would not
    transfer; IPs of equal degree are exchangeable under the configuration
    model, so the per-degree label mix is what the reference can pass on.
    """
    rdeg = ref_graph.ip_degree()
    pub = np.array([ref_labels.get(ip) == ipclass.PUBLIC for ip in ref_graph.ips])
    share = {}
    for d in np.unique(rdeg).tolist():
        share[d] = float(pub[rdeg == d].mean())
    overall = float(pub.mean()) if pub.size else 0.0
    tdeg = target.ip_degree()
    rng = np.random.default_rng(derive_seed(rng_seed, "degree-labels"))
    is_pub = np.zeros(target.n_ips, dtype=bool)
    for d in np.unique(tdeg).tolist():
        idx = np.flatnonzero(tdeg == d)
        k = int(round(share.get(d, overall) * idx.size))
        is_pub[rng.choice(idx, size=k, replace=False)] = True
    return {ip: ipclass.PUBLIC if p else ipclass.DEDICATED for ip, p in zip(target.ips, is_pub.tolist())}


def scaled_cases(ref_graph, ref_labels, scales=DEFAULT_SCALES, seed_fraction=0.1, rng_seed=0):
    """One ScaledCase per scale; seeds are a fixed fraction of G-New's covered domains."""
    prof = DegreeProfile.from_graph(ref_graph)
    cases = []
    for scale in scales:
        g = generate_bipartite(scale_profile(prof, scale), derive_seed(rng_seed, "scale", scale))
        labels = label_by_degree(ref_graph, ref_labels, g, derive_seed(rng_seed, "labels", scale))
        dg = assoc.build_domain_graph(g, labels, synthetic_as_map(g), "new")
        cov = sorted(dg.covered_domains())
        rng = np.random.default_rng(derive_seed(rng_seed, "bench-seeds", scale))
        k = max(1, int(round(seed_fraction * len(cov)))) if cov else 0
        seeds = set(rng.choice(cov, size=k, replace=False).tolist()) if k else set()
        log.info("scale %s: %d domains, %d G-New edges, %d seeds", scale, g.n_domains, dg.n_edges, len(seeds))
        cases.append(ScaledCase(scale, g, dg, seeds))
    return cases


def engine_table(bp_cfg=None):
    """name -> (prepare, run) pairs for evalharness.benchmark."""
    bp_cfg = bp_cfg or bpinfer.BpConfig()

    def prep_path(case):
        dg = case.domain_graph
        return (dg, pathinfer.seed_indices(dg, case.seeds), dg.csr()), dg.n_covered, dg.n_edges

    def run_path(inp):
        dg, sidx, csr = inp
        return pathinfer.score_array(dg, sidx, csr=csr)

    def prep_bp_gnew(case):
        bg = bpinfer.build_bp_graph(case.domain_graph, case.seeds, (), bp_cfg)
        return bg, bg.n_nodes, bg.n_edges

    def prep_bp_bgnew(case):
        ind = assoc.build_induced_bipartite(case.graph, case.domain_graph)
        bg = bpinfer.build_bp_graph(ind, case.seeds, (), bp_cfg)
        return bg, bg.n_nodes, bg.n_edges

    def run_bp(bg):
        return bpinfer.run_bp(bg, bp_cfg)

    return {"path": (prep_path, run_path), "bp-gnew": (prep_bp_gnew, run_bp),
            "bp-bgnew": (prep_bp_bgnew, run_bp)}


def warm_up():
    """Compile the jitted kernels on a toy graph so the first timing is not a compile."""
    from .ingest import ResolutionGraph

    g = ResolutionGraph.from_pairs([("a.com", "10.0.0.1"), ("b.com", "10.0.0.1")])
    dg = assoc.build_domain_graph(g, {"10.0.0.1": ipclass.DEDICATED}, assoc.AsMap(), "new")
    pathinfer.score_all(dg, {"a.com"})
    bpinfer.run_bp(bpinfer.build_bp_graph(dg, {"a.com"}))


def run_scaling(ref_graph, ref_labels, scales=DEFAULT_SCALES, engines=ENGINES, repeats=3,
                timeout=None, seed_fraction=0.1, rng_seed=0, bp_cfg=None):
    warm_up()
    cases = scaled_cases(ref_graph, ref_labels, scales, seed_fraction, rng_seed)
    table = engine_table(bp_cfg)
    chosen = {name: table[name] for name in engines}
    return benchmark(chosen, [(c.scale, c) for c in cases], repeats=repeats, timeout=timeout)


def growth_ratio(rows, engine):
    """Median time at the largest scale over the smallest, None if censored."""
    rs = sorted((r for r in rows if r.engine == engine), key=lambda r: r.scale)
    if not rs or rs[0].censored or rs[-1].censored or not rs[0].median_seconds:
        return None
    return rs[-1].median_seconds / rs[0].median_seconds
