"""Weighted domain association graphs built from a classified resolution graph.

Three schemes:

* ``baseline`` - two domains are associated when their shared IPs span at
  least two ASs; n = (#ASs) - 1.
* ``new``      - at least one shared dedicated IP, or at least two shared
  public IPs from at least two ASs; n = 2|IP_d| + |AS(IP_u)| - 1.
* ``relaxed``  - like ``new`` but the dedicated side only needs dedicated IPs
  of both domains in a common subnet; n = IP_d1 + IP_d2 + |AS(IP_u)| - 1,
  counting each domain's dedicated IPs inside the shared subnets.

The weight is always 1 - 1/(n + 1).  Unknown ASs (AS0) never count.
"""
from __future__ import annotations

import csv
import ipaddress
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ingest import ResolutionGraph, ip_to_int
from .ipclass import DEDICATED, PUBLIC, subnet_ids

SCHEMES = ("baseline", "new", "relaxed")
UNKNOWN_AS = 0


class LabelError(KeyError):
    pass


def association_weight(n):
    """1 - 1/(n+1), evaluated as n/(n+1): one rounding, so it is the float nearest the exact ratio."""
    assert n >= 1, f"association evidence n={n} < 1"
    return n / (n + 1)


# ---------------------------------------------------------------------------
# AS lookup
# ---------------------------------------------------------------------------


class AsMap:
    """Longest-prefix match from IPv4 to AS number; misses map to AS0."""

    def __init__(self, prefixes=()):
        self._by_len = {}
        for cidr, asn in prefixes:
            net = ipaddress.IPv4Network(cidr, strict=False)
            self._by_len.setdefault(net.prefixlen, {})[int(net.network_address) >> (32 - net.prefixlen)
                                                       if net.prefixlen else 0] = _parse_asn(asn)

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0].strip().lower() == "cidr":
                    continue
                rows.append((row[0].strip(), row[1].strip()))
        return cls(rows)

    @classmethod
    def from_dict(cls, ip_to_asn):
        return cls((f"{ip}/32", asn) for ip, asn in ip_to_asn.items())

    def lookup_int(self, ip_int):
        ip_int = np.asarray(ip_int, dtype=np.int64)
        out = np.full(ip_int.shape, UNKNOWN_AS, dtype=np.int64)
        done = np.zeros(ip_int.shape, dtype=bool)
        for plen in sorted(self._by_len, reverse=True):
            table = self._by_len[plen]
            tk = np.array(sorted(table), dtype=np.int64)
            tv = np.array([table[k] for k in tk.tolist()], dtype=np.int64)
            keys = ip_int >> (32 - plen) if plen else np.zeros_like(ip_int)
            pos = np.clip(np.searchsorted(tk, keys), 0, tk.size - 1)
            hit = (~done) & (tk[pos] == keys)
            out[hit] = tv[pos[hit]]
            done |= hit
        return out

    def __getitem__(self, ip):
        return int(self.lookup_int(ip_to_int([ip]))[0])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cidr", "asn"])
            for plen in sorted(self._by_len):
                for key, asn in sorted(self._by_len[plen].items()):
                    net = ipaddress.IPv4Address(key << (32 - plen) if plen else 0)
                    w.writerow([f"{net}/{plen}", asn])


def _parse_asn(text):
    text = str(text).strip().upper()
    return int(text[2:] if text.startswith("AS") else text)


# ---------------------------------------------------------------------------
# pair-level rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SharedProfile:
    """What two domains share.

    ``dedicated`` / ``public`` are the shared IPs by label, ``public_as`` the
    known ASs of the shared public IPs, ``shared_subnets`` the subnets holding
    dedicated IPs of both domains and ``n_ded_1`` / ``n_ded_2`` each domain's
    dedicated IPs inside those subnets.
    """

    dedicated: frozenset = frozenset()
    public: frozenset = frozenset()
    public_as: frozenset = frozenset()
    shared_subnets: frozenset = frozenset()
    n_ded_1: int = 0
    n_ded_2: int = 0

    @property
    def shared_ips(self):
        return self.dedicated | self.public


def _public_ok(p):
    return len(p.public) >= 2 and len(p.public_as - {UNKNOWN_AS}) >= 2


def pair_weight_new(p):
    n_as = len(p.public_as - {UNKNOWN_AS})
    if len(p.dedicated) >= 1 or _public_ok(p):
        return association_weight(2 * len(p.dedicated) + n_as - 1)
    return None


def pair_weight_relaxed(p):
    n_as = len(p.public_as - {UNKNOWN_AS})
    if len(p.shared_subnets) >= 1 or _public_ok(p):
        return association_weight(p.n_ded_1 + p.n_ded_2 + n_as - 1)
    return None


def pair_weight_baseline(p, as_map):
    ases = {as_map[ip] for ip in p.shared_ips} - {UNKNOWN_AS}
    if len(ases) >= 2:
        return association_weight(len(ases) - 1)
    return None


def _label_of(v):
    return v if isinstance(v, str) else v.label


def shared_profile(g, labels, as_map, d1, d2, prefix_len=24):
    """Profile of one domain pair computed directly from the edge list."""
    ips1 = {ip for d, ip in g.edges() if d == d1}
    ips2 = {ip for d, ip in g.edges() if d == d2}
    shared = ips1 & ips2
    ded = frozenset(ip for ip in shared if _label_of(labels[ip]) == DEDICATED)
    pub = frozenset(shared - ded)

    def dsub(ips):
        out = {}
        for ip in ips:
            if _label_of(labels[ip]) == DEDICATED:
                s = int(subnet_ids(ip_to_int([ip]), prefix_len)[0])
                out.setdefault(s, set()).add(ip)
        return out

    s1, s2 = dsub(ips1), dsub(ips2)
    common = frozenset(s1) & frozenset(s2)
    return SharedProfile(
        dedicated=ded,
        public=pub,
        public_as=frozenset(as_map[ip] for ip in pub),
        shared_subnets=common,
        n_ded_1=sum(len(s1[s]) for s in common),
        n_ded_2=sum(len(s2[s]) for s in common),
    )


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------


@dataclass
class DomainGraph:
    """Undirected weighted graph over ``domains``; edges stored once with src < dst."""

    scheme: str
    domains: list
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    window: object = None
    meta: dict = field(default_factory=dict)

    @property
    def n_edges(self):
        return int(self.src.shape[0])

    @property
    def n_nodes(self):
        return len(self.domains)

    def degree(self):
        n = len(self.domains)
        return np.bincount(self.src, minlength=n) + np.bincount(self.dst, minlength=n)

    def covered(self):
        """Mask of non-isolated domains."""
        return self.degree() > 0

    def covered_domains(self):
        return [d for d, c in zip(self.domains, self.covered()) if c]

    @property
    def n_covered(self):
        return int(self.covered().sum())

    def edge_dict(self):
        return {(self.domains[a], self.domains[b]): w
                for a, b, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist())}

    def csr(self):
        """Symmetric CSR (indptr, indices, weights) for the search kernels."""
        n = len(self.domains)
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        w = np.concatenate([self.weight, self.weight])
        m = sp.csr_matrix((w, (rows, cols)), shape=(n, n))
        m.sort_indices()
        return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64)

    def header(self):
        return {
            "scheme": self.scheme,
            "window": None if self.window is None else str(self.window),
            "nodes": self.n_nodes,
            "covered_nodes": self.n_covered,
            "edges": self.n_edges,
            **self.meta,
        }

    def write_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain1", "domain2", "weight"])
            for a, b, x in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
                w.writerow([self.domains[a], self.domains[b], repr(x)])
        path.with_suffix(".json").write_text(json.dumps(self.header(), sort_keys=True, indent=1) + "\n",
                                             encoding="utf-8")

    @classmethod
    def read_csv(cls, path):
        path = Path(path)
        header = {}
        hp = path.with_suffix(".json")
        if hp.exists():
            header = json.loads(hp.read_text(encoding="utf-8"))
        triples = []
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                triples.append((row["domain1"], row["domain2"], float(row["weight"])))
        return cls.from_edges(triples, scheme=header.get("scheme", "new"))

    @classmethod
    def from_edges(cls, triples, scheme="new", domains=None):
        names = set(domains or ())
        for a, b, _ in triples:
            names.update((a, b))
        domains = sorted(names)
        idx = {d: k for k, d in enumerate(domains)}
        best = {}
        for a, b, w in triples:
            if a == b:
                continue
            i, j = sorted((idx[a], idx[b]))
            best[(i, j)] = max(w, best.get((i, j), 0.0))
        keys = sorted(best)
        src = np.array([k[0] for k in keys], dtype=np.int64)
        dst = np.array([k[1] for k in keys], dtype=np.int64)
        w = np.array([best[k] for k in keys], dtype=np.float64)
        return cls(scheme, domains, src, dst, w)


def _incidence(g, ip_mask):
    keep = ip_mask[g.edge_ip]
    return sp.csr_matrix((np.ones(int(keep.sum()), dtype=np.int64), (g.edge_domain[keep], g.edge_ip[keep])),
                         shape=(g.n_domains, g.n_ips))


def _upper(m):
    m = sp.triu(m, k=1).tocoo()
    return m.row.astype(np.int64), m.col.astype(np.int64), m.data


def _distinct_as_count(g, ip_mask, asn):
    """Sparse pair -> number of distinct known ASs among shared IPs in ``ip_mask``."""
    n = g.n_domains
    rows, cols = [], []
    deg = g.ip_degree()
    for a in np.unique(asn[ip_mask & (asn != UNKNOWN_AS) & (deg >= 2)]):
        inc = _incidence(g, ip_mask & (asn == a))
        r, c, _ = _upper(inc @ inc.T)
        rows.append(r)
        cols.append(c)
    if not rows:
        return sp.csr_matrix((n, n), dtype=np.int64)
    r, c = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(r.shape[0], dtype=np.int64), (r, c)), shape=(n, n))


def _ip_labels(g, labels):
    is_ded = np.zeros(g.n_ips, dtype=bool)
    missing = []
    for k, ip in enumerate(g.ips):
        v = labels.get(ip)
        if v is None:
            missing.append(ip)
            continue
        lab = _label_of(v)
        if lab not in (PUBLIC, DEDICATED):
            raise ValueError(f"bad label {lab!r} for {ip}")
        is_ded[k] = lab == DEDICATED
    if missing:
        raise LabelError(f"{len(missing)} IPs have no public/dedicated label, e.g. {missing[:3]}")
    return is_ded


def _finish(scheme, g, r, c, n, meta=None):
    order = np.lexsort((c, r))
    r, c, n = r[order], c[order], n[order]
    assert (n >= 1).all(), "edge with n < 1"
    nf = n.astype(np.float64)
    w = nf / (nf + 1.0)
    return DomainGraph(scheme, list(g.domains), r, c, w, g.window, meta or {})


def _pairs_from(mats):
    """Union of the upper-triangular sparsity patterns, as aligned dense values."""
    keys = []
    for m in mats:
        r, c, _ = _upper(m)
        keys.append((r, c))
    if not keys:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    r = np.concatenate([k[0] for k in keys])
    c = np.concatenate([k[1] for k in keys])
    if r.size == 0:
        return r, c
    u = np.unique(np.stack([r, c], axis=1), axis=0)
    return u[:, 0], u[:, 1]


def _values(m, r, c):
    if r.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.asarray(m.tocsr()[r, c]).ravel().astype(np.int64)


def build_domain_graph(g, labels=None, as_map=None, scheme="new", prefix_len=24):
    """Build G-Baseline / G-New / G-Relaxed over all domains of ``g``."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    as_map = as_map or AsMap()
    n = g.n_domains
    if g.n_edges == 0:
        e = np.zeros(0, np.int64)
        return DomainGraph(scheme, list(g.domains), e, e.copy(), np.zeros(0), g.window)
    asn = as_map.lookup_int(g.ip_int)

    if scheme == "baseline":
        k_all = _distinct_as_count(g, np.ones(g.n_ips, bool), asn)
        r, c = _pairs_from([k_all])
        k = _values(k_all, r, c)
        ok = k >= 2
        return _finish(scheme, g, r[ok], c[ok], k[ok] - 1)

    if labels is None:
        raise LabelError(f"scheme {scheme!r} needs IP labels")
    is_ded = _ip_labels(g, labels)
    k_pub = _distinct_as_count(g, ~is_ded, asn)

    if scheme == "new":
        a_ded = _incidence(g, is_ded)
        shared_ded = a_ded @ a_ded.T
        r, c = _pairs_from([shared_ded, k_pub])
        d = _values(shared_ded, r, c)
        k = _values(k_pub, r, c)
        ok = (d >= 1) | (k >= 2)
        return _finish(scheme, g, r[ok], c[ok], 2 * d[ok] + k[ok] - 1)

    # relaxed
    a_ded = _incidence(g, is_ded).astype(np.int64)
    _, sub = np.unique(subnet_ids(g.ip_int, prefix_len), return_inverse=True)
    sub = sub.ravel()
    ip_sub = sp.csr_matrix((np.ones(g.n_ips, dtype=np.int64), (np.arange(g.n_ips), sub)),
                           shape=(g.n_ips, int(sub.max()) + 1))
    per_sub = (a_ded @ ip_sub).tocsr()
    has_sub = per_sub.copy()
    has_sub.data = np.ones_like(has_sub.data)
    shared_sub = has_sub @ has_sub.T
    n_in_shared = per_sub @ has_sub.T
    r, c = _pairs_from([shared_sub, k_pub])
    s = _values(shared_sub, r, c)
    k = _values(k_pub, r, c)
    d1 = _values(n_in_shared, r, c)
    d2 = _values(n_in_shared, c, r)
    ok = (s >= 1) | (k >= 2)
    return _finish(scheme, g, r[ok], c[ok], d1[ok] + d2[ok] + k[ok] - 1)


def build_induced_bipartite(g, dg):
    """Keep only resolution edges of domains covered by ``dg`` (drops emptied IPs)."""
    covered = set(dg.covered_domains())
    dk = np.array([d in covered for d in g.domains], dtype=bool)
    ek = dk[g.edge_domain]
    ik = np.bincount(g.edge_ip[ek], minlength=g.n_ips) > 0
    return g.subgraph(domain_keep=dk, ip_keep=ik, drop_isolated_domains=True)
