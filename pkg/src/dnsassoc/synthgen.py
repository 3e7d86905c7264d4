"""Synthetic resolution graphs.

``generate_bipartite`` draws a configuration-model graph with a given pair of
degree histograms; ``generate_planted`` lays out hosting providers, dedicated
entities and malicious campaigns so every label is known by construction.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from datetime import date

import numpy as np

from .assoc import AsMap
from .ingest import ResolutionGraph, ResolutionRecord, Window, build_resolution_graph
from .ipclass import DEDICATED, PUBLIC, IpFeatureVector
from .seeding import derive_seed

SYNTH_WINDOW = Window.week(date(2017, 2, 20))


class GenerationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# degree-preserving scaling
# ---------------------------------------------------------------------------


@dataclass
class DegreeProfile:
    domain_hist: dict
    ip_hist: dict

    @classmethod
    def from_graph(cls, g):
        def hist(deg):
            vals, counts = np.unique(deg[deg > 0], return_counts=True)
            return {int(v): int(c) for v, c in zip(vals, counts)}

        return cls(hist(g.domain_degree()), hist(g.ip_degree()))

    @staticmethod
    def _stubs(h):
        return sum(d * c for d, c in h.items())

    @property
    def domain_stubs(self):
        return self._stubs(self.domain_hist)

    @property
    def ip_stubs(self):
        return self._stubs(self.ip_hist)

    def balanced(self):
        return self.domain_stubs == self.ip_stubs


def scale_profile(p, factor):
    """Multiply node counts by ``factor``; pad the short side with degree-1 nodes."""
    if factor < 1:
        raise ValueError("scale factor must be >= 1")
    dh = {d: int(round(c * factor)) for d, c in p.domain_hist.items()}
    ih = {d: int(round(c * factor)) for d, c in p.ip_hist.items()}
    dh = {d: c for d, c in dh.items() if c > 0}
    ih = {d: c for d, c in ih.items() if c > 0}
    out = DegreeProfile(dh, ih)
    gap = out.domain_stubs - out.ip_stubs
    if gap > 0:
        ih[1] = ih.get(1, 0) + gap
    elif gap < 0:
        dh[1] = dh.get(1, 0) - gap
    return DegreeProfile(dict(sorted(dh.items())), dict(sorted(ih.items())))


def _expand(hist):
    degs = []
    for d in sorted(hist, reverse=True):
        degs.extend([d] * hist[d])
    return np.array(degs, dtype=np.int64)


def synthetic_ip(k, per_block=16):
    """10.x.y.z address for the k-th synthetic IP, ``per_block`` IPs per /24."""
    block, slot = divmod(k, per_block)
    return str(ipaddress.IPv4Address((10 << 24) | (block << 8) | (slot + 1)))


def synthetic_as_map(g, blocks_per_as=8):
    """AS numbers for synthetic 10/8 addresses: one private ASN per group of /24s."""
    blocks = sorted({int(x) >> 8 for x in g.ip_int})
    return AsMap((f"{ipaddress.IPv4Address(b << 8)}/24", 64512 + ((b & 0xFFFF) // blocks_per_as))
                 for b in blocks)


def generate_bipartite(p, rng_seed=0, retries=50, per_block=16, window=SYNTH_WINDOW):
    """Configuration-model pairing of domain stubs with IP stubs, no multi-edges.

    A duplicate pair is repaired by swapping its IP stub with a random other
    pair (up to ``retries`` tries) and dropped otherwise.  IPs are numbered by
    degree, highest first, and packed ``per_block`` to a /24.
    """
    if not p.balanced():
        raise GenerationError("profile stub counts differ; rebalance with scale_profile")
    ddeg, ideg = _expand(p.domain_hist), _expand(p.ip_hist)
    rng = np.random.default_rng(derive_seed(rng_seed, "bipartite"))
    dst = np.repeat(np.arange(ddeg.size), ddeg)
    ist = rng.permutation(np.repeat(np.arange(ideg.size), ideg))
    ni = max(int(ideg.size), 1)
    key = dst * ni + ist
    _, first = np.unique(key, return_index=True)
    dup = np.ones(key.size, bool)
    dup[first] = False
    present = set(key[~dup].tolist())
    alive = ~dup
    for i in np.flatnonzero(dup):
        for _ in range(retries):
            j = int(rng.integers(key.size))
            if not alive[j] or j == i:
                continue
            a = int(dst[i] * ni + ist[j])
            b = int(dst[j] * ni + ist[i])
            if a == b or a in present or b in present:
                continue
            present.discard(int(key[j]))
            present.update((a, b))
            ist[i], ist[j] = ist[j], ist[i]
            key[i], key[j] = a, b
            alive[i] = True
            break
    placed = alive.mean() if alive.size else 1.0
    if placed < 0.98:
        raise GenerationError(f"only {placed:.1%} of stubs placed")
    width = len(str(max(ddeg.size, 1)))
    dnames = [f"d{k:0{width}d}.com" for k in range(ddeg.size)]
    inames = [synthetic_ip(k, per_block) for k in range(ideg.size)]
    order = np.lexsort((ist[alive], dst[alive]))
    ed, ei = dst[alive][order], ist[alive][order]
    day = window.start.toordinal()
    m = ed.size
    # names sort like indices: zero padded domains, increasing addresses
    return ResolutionGraph(dnames, inames, ed, ei, np.full(m, day), np.full(m, day), window)


def degree_tv_distance(p, g):
    """Total-variation distance between requested and realized histograms, per side."""
    def tv(req, deg):
        n = sum(req.values())
        real = {}
        for d in deg.tolist():
            real[d] = real.get(d, 0) + 1
        keys = set(req) | set(real)
        m = max(len(deg), 1)
        return 0.5 * sum(abs(req.get(k, 0) / n - real.get(k, 0) / m) for k in keys)

    dd = g.domain_degree()
    return tv(p.domain_hist, dd), tv(p.ip_hist, g.ip_degree())


# ---------------------------------------------------------------------------
# planted-truth datasets
# ---------------------------------------------------------------------------


@dataclass
class PlantedParams:
    # public hosting: (number of ASs, /24 blocks per AS, IPs per block) per provider
    providers: tuple = ((2, 3, 12), (1, 4, 12), (2, 2, 12), (1, 3, 12), (2, 2, 12))
    noise_domains: int = 900
    noise_multi_ip: float = 0.1
    balanced_domains: int = 100
    balanced_ips: tuple = (4, 30)
    benign_entities: int = 110
    entity_domains: tuple = (1, 10)
    large_entity_fraction: float = 0.15
    large_entity_domains: tuple = (10, 60)
    entity_ips: tuple = (1, 3)
    entities_per_block: int = 4
    actors: int = 4
    campaigns_per_actor: tuple = (2, 3)
    malicious_ratio: float = 0.1
    min_campaign: int = 5
    hop_fraction: float = 0.35
    campaign_public_share: float = 0.5
    rng_seed: int = 0

    def enlarged(self, k):
        """Same layout with k times the provider blocks, domains, entities and actors."""
        return replace(self, providers=tuple((a, b * k, n) for a, b, n in self.providers),
                       noise_domains=self.noise_domains * k, balanced_domains=self.balanced_domains * k,
                       benign_entities=self.benign_entities * k, actors=self.actors * k)


@dataclass
class PlantedDataset:
    graph: ResolutionGraph
    ip_labels: dict
    malicious: set
    benign: set
    as_map: AsMap
    params: PlantedParams
    campaigns: list = field(default_factory=list)

    def records(self):
        return list(_graph_records(self.graph))


def _graph_records(g):
    for d, i, f in zip(g.edge_domain.tolist(), g.edge_ip.tolist(), g.first_seen.tolist()):
        yield ResolutionRecord(date.fromordinal(f), g.domains[d], g.ips[i])


_SYLL = ("ka", "lo", "mi", "ne", "ra", "to", "vu", "ze", "shi", "pa", "do", "ri", "mo", "ta", "ke", "lu")
_TLDS = ("com", "net", "org", "info", "biz", "co.uk", "de", "ru", "xyz", "top")


class _Names:
    def __init__(self, rng):
        self.rng = rng
        self.used = set()

    def word(self, n=3):
        return "".join(self.rng.choice(_SYLL, size=n))

    def sld(self, tlds=_TLDS):
        while True:
            name = f"{self.word(int(self.rng.integers(2, 5)))}.{self.rng.choice(tlds)}"
            if name not in self.used:
                self.used.add(name)
                return name

    def fqdn(self, sld, sub=True):
        if not sub:
            return sld
        while True:
            name = f"{self.word(2)}.{sld}"
            if name not in self.used:
                self.used.add(name)
                return name


class _AddressPlan:
    """Hands out /24 blocks from 100.64.0.0/10 and records their ASN."""

    def __init__(self):
        self.next_block = (100 << 16) | (64 << 8)
        self.prefixes = []

    def block(self, asn):
        b = self.next_block
        self.next_block += 1
        self.prefixes.append((f"{ipaddress.IPv4Address(b << 8)}/24", asn))
        return b

    @staticmethod
    def ip(block, slot):
        return str(ipaddress.IPv4Address((block << 8) | (slot + 1)))


def generate_planted(params=None):
    """Planted dataset with public pools, dedicated entities and linked campaigns.

    * public providers span one or more ASs; noise domains sit on one (or
      two same-provider) public IPs, load-balanced domains on several;
    * benign entities own 1-3 dedicated IPs inside /24s shared with a few other
      entities (the relaxed rule links those neighbours);
    * each malicious actor runs several campaigns; a campaign either co-hosts on
      dedicated IPs or hops across public IPs of at least two ASs; campaigns of
      one actor are chained by a shared dedicated bridge IP, and some campaign
      domains also touch a public IP crowded with noise domains.
    """
    p = params or PlantedParams()
    rng = np.random.default_rng(derive_seed(p.rng_seed, "planted"))
    names = _Names(rng)
    plan = _AddressPlan()
    edges = set()
    ip_labels = {}
    malicious = set()
    campaigns = []

    asn = [100]

    def new_as():
        asn[0] += 1
        return asn[0]

    # public hosting
    public_by_as = {}
    provider_ips = []
    for n_as, blocks, per_block in p.providers:
        ips = []
        for _ in range(n_as):
            a = new_as()
            for _ in range(blocks):
                b = plan.block(a)
                for s in range(per_block):
                    ip = plan.ip(b, s)
                    ip_labels[ip] = PUBLIC
                    public_by_as.setdefault(a, []).append(ip)
                    ips.append(ip)
        provider_ips.append(ips)
    all_public = [ip for ips in provider_ips for ip in ips]

    # benign noise on shared hosting
    for _ in range(p.noise_domains):
        sld = names.sld()
        d = names.fqdn(sld, sub=rng.random() < 0.5)
        prov = provider_ips[int(rng.integers(len(provider_ips)))]
        k = 2 if rng.random() < p.noise_multi_ip else 1
        for ip in rng.choice(prov, size=k, replace=False):
            edges.add((d, str(ip)))

    # load-balanced benign domains spread over one provider's pool
    for _ in range(p.balanced_domains):
        d = names.fqdn(names.sld(), sub=rng.random() < 0.5)
        prov = provider_ips[int(rng.integers(len(provider_ips)))]
        k = min(len(prov), int(rng.integers(p.balanced_ips[0], p.balanced_ips[1] + 1)))
        for ip in rng.choice(prov, size=k, replace=False):
            edges.add((d, str(ip)))

    # benign entities on dedicated IPs, a few entities per /24
    dedicated_blocks = []
    slot_in_block = {}

    def dedicated_ip(block=None):
        if block is None or slot_in_block[block] >= 250:
            block = plan.block(new_as())
            slot_in_block[block] = 0
            dedicated_blocks.append(block)
        ip = plan.ip(block, slot_in_block[block])
        slot_in_block[block] += 1
        ip_labels[ip] = DEDICATED
        return ip, block

    block = None
    for e in range(p.benign_entities):
        if e % p.entities_per_block == 0:
            block = None
        n_ips = int(rng.integers(p.entity_ips[0], p.entity_ips[1] + 1))
        ips = []
        for _ in range(n_ips):
            ip, block = dedicated_ip(block)
            ips.append(ip)
        sld = names.sld()
        span = p.large_entity_domains if rng.random() < p.large_entity_fraction else p.entity_domains
        n_dom = int(rng.integers(span[0], span[1] + 1))
        doms = [names.fqdn(sld, sub=k > 0) for k in range(n_dom)]
        if n_dom > 3 and rng.random() < 0.5:
            doms[-1] = names.fqdn(names.sld(), sub=False)
        for d in doms:
            hit = [ip for ip in ips if rng.random() < 0.7] or [ips[0]]
            edges.update((d, ip) for ip in hit)

    # malicious actors; campaign sizes split the count implied by the ratio
    n_benign = len({d for d, _ in edges})
    n_mal = int(round(p.malicious_ratio * n_benign / (1.0 - p.malicious_ratio)))
    per_actor = [int(rng.integers(p.campaigns_per_actor[0], p.campaigns_per_actor[1] + 1))
                 for _ in range(p.actors)]
    n_total = sum(per_actor)
    shares = rng.dirichlet(np.full(n_total, 8.0))
    sizes = np.maximum(p.min_campaign, np.floor(shares * n_mal).astype(int))
    short = n_mal - int(sizes.sum())
    if short > 0:
        sizes[:short] += 1
    sizes = iter(sizes.tolist())
    hop_ases = sorted(public_by_as)
    for actor in range(p.actors):
        n_camp = per_actor[actor]
        actor_campaigns = []
        # each actor rents its own /24 for campaign and bridge IPs
        host_block = None
        for c in range(n_camp):
            size = next(sizes)
            slds = [names.sld() for _ in range(max(1, size // 15))]
            doms = [names.fqdn(slds[int(rng.integers(len(slds)))]) for _ in range(size)]
            if rng.random() < p.hop_fraction:
                kind = "hop"
                ases = rng.choice(hop_ases, size=int(rng.integers(2, 4)), replace=False)
                pool = [str(rng.choice(public_by_as[int(a)])) for a in ases]
                for d in doms:
                    for ip in pool:
                        edges.add((d, ip))
            else:
                kind = "dedicated"
                n_ips = int(rng.integers(1, 4))
                pool = []
                for _ in range(n_ips):
                    ip, host_block = dedicated_ip(host_block)
                    pool.append(ip)
                for k, d in enumerate(doms):
                    edges.add((d, pool[int(rng.integers(len(pool)))]))
                    if k + 1 < len(pool):
                        # chain the pool so the campaign stays one component
                        edges.update(((d, pool[k]), (d, pool[k + 1])))
                    elif len(pool) > 1 and rng.random() < 0.3:
                        edges.add((d, pool[int(rng.integers(len(pool)))]))
            for d in doms:
                if rng.random() < p.campaign_public_share:
                    edges.add((d, str(rng.choice(all_public))))
            malicious.update(doms)
            actor_campaigns.append(doms)
            campaigns.append({"actor": actor, "kind": kind, "domains": sorted(doms)})
        for a, b in zip(actor_campaigns, actor_campaigns[1:]):
            bridge, host_block = dedicated_ip(host_block)
            edges.add((a[int(rng.integers(len(a)))], bridge))
            edges.add((b[int(rng.integers(len(b)))], bridge))

    day = SYNTH_WINDOW.start
    recs = [ResolutionRecord(day, d, ip) for d, ip in sorted(edges)]
    g = build_resolution_graph(recs, SYNTH_WINDOW)
    benign = set(g.domains) - malicious
    return PlantedDataset(g, {ip: ip_labels[ip] for ip in g.ips}, malicious, benign,
                          AsMap(plan.prefixes), p, campaigns)


def planted_ip_features(n=200, public_fraction=0.5, rng_seed=0):
    """Feature-level planted set: returns (features dict, truth dict ip -> label).

    Public IPs host 50-500 2LDs in busy blocks; dedicated IPs host 1-5 2LDs in
    sparse blocks.  A share of dedicated IPs belong to large organizations and
    carry many FQDNs/3LDs, so the per-IP counts overlap while block counts stay
    apart.
    """
    rng = np.random.default_rng(derive_seed(rng_seed, "ipfeatures"))
    feats, truth = {}, {}
    n_pub = int(round(n * public_fraction))
    for k in range(n):
        ip = f"198.{18 + k // 250}.{k % 250}.{1 + k % 7}"
        if k < n_pub:
            n2 = int(rng.integers(50, 501))
            nf = n2 + int(rng.integers(0, n2 + 1))
            n3 = int(rng.integers(n2 // 2, nf + 1))
            bips = int(rng.integers(20, 201))
            f = IpFeatureVector(ip, nf, n2, n3, nf * int(rng.integers(5, 30)), n2 * int(rng.integers(5, 20)),
                                n3 * int(rng.integers(5, 20)), bips)
            truth[ip] = PUBLIC
        else:
            n2 = int(rng.integers(1, 6))
            big = rng.random() < 0.2
            nf = int(rng.integers(100, 1500)) if big else int(rng.integers(n2, 25))
            n3 = int(rng.integers(min(n2, nf), nf + 1))
            bips = int(rng.integers(1, 9))
            f = IpFeatureVector(ip, nf, n2, n3, nf + int(rng.integers(0, 40)), n2 + int(rng.integers(0, 8)),
                                n3 + int(rng.integers(0, 30)), bips)
            truth[ip] = DEDICATED
        feats[ip] = f
    return feats, truth


def write_planted(ds, outdir):
    """Records CSV, truth lists and AS map in the pipeline's input formats."""
    import csv
    from pathlib import Path

    from .evalharness import write_domain_list

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(ds.graph, out / "records.csv")
    write_domain_list(ds.malicious, out / "malicious.txt")
    write_domain_list(ds.benign, out / "benign.txt")
    pub = sorted((ip for ip, lab in ds.ip_labels.items() if lab == PUBLIC), key=_ipkey)
    ded = sorted((ip for ip, lab in ds.ip_labels.items() if lab == DEDICATED), key=_ipkey)
    (out / "ip_public.txt").write_text("".join(ip + "\n" for ip in pub), encoding="utf-8")
    (out / "ip_dedicated.txt").write_text("".join(ip + "\n" for ip in ded), encoding="utf-8")
    ds.as_map.write_csv(out / "asmap.csv")
    with open(out / "campaigns.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["campaign", "actor", "kind", "domain"])
        for k, c in enumerate(ds.campaigns):
            for d in c["domains"]:
                w.writerow([k, c["actor"], c["kind"], d])
    return out


def write_records(g, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "domain", "ip"])
        for r in _graph_records(g):
            w.writerow([r.date.isoformat(), r.domain, r.ip])


def _ipkey(ip):
    return tuple(int(x) for x in ip.split("."))
