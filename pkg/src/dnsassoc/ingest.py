"""Active-DNS record parsing and the domain/IP resolution graph."""
from __future__ import annotations

import csv
import gzip
import io
import ipaddress
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _scipy_cc

log = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "dnsassoc.resolution-graph/1"
DEFAULT_POPULARITY_THRESHOLD = 1500
MALFORMED_LIMIT = 0.5

_LABEL = re.compile(r"^[a-z0-9_]([a-z0-9_-]{0,61}[a-z0-9_])?$")


class IngestError(ValueError):
    pass


class FormatError(IngestError):
    """Input does not look like a resolution record file at all."""


class EmptyInputError(IngestError):
    pass


@dataclass(frozen=True)
class Window:
    """Inclusive date range."""

    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"empty window {self.start}..{self.end}")

    @classmethod
    def week(cls, start, days=7):
        if isinstance(start, str):
            start = date.fromisoformat(start)
        return cls(start, start + timedelta(days=days - 1))

    @classmethod
    def parse(cls, text):
        """``2017-02-04..2017-02-10`` or a bare start date (one week)."""
        if ".." in text:
            a, b = text.split("..", 1)
            return cls(date.fromisoformat(a.strip()), date.fromisoformat(b.strip()))
        return cls.week(text.strip())

    def __contains__(self, day):
        return self.start <= day <= self.end

    def __str__(self):
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class ResolutionRecord:
    date: date
    domain: str
    ip: str


@dataclass
class ParseStats:
    lines: int = 0
    kept: int = 0
    out_of_window: int = 0
    malformed: int = 0
    ipv6: int = 0


def normalize_domain(name):
    """Lowercase, strip the trailing dot, check hostname syntax.  None if invalid."""
    name = name.strip().lower().rstrip(".")
    if not name or len(name) > 253:
        return None
    for label in name.split("."):
        if not _LABEL.match(label):
            return None
    return name


def open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def parse_records(stream, window=None, delimiter=","):
    """Read ``date,domain,ip`` rows from a text stream.

    Rows outside ``window`` are dropped, IPv6 rows are skipped and counted,
    other bad rows are counted as malformed.  Raises FormatError when more
    than half of the data rows are malformed.
    """
    stats = ParseStats()
    records = []
    reader = csv.reader(stream, delimiter=delimiter)
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if stats.lines == 0 and [c.strip().lower() for c in row] == ["date", "domain", "ip"]:
            continue
        stats.lines += 1
        if len(row) != 3:
            stats.malformed += 1
            continue
        raw_date, raw_domain, raw_ip = (c.strip() for c in row)
        try:
            day = date.fromisoformat(raw_date)
        except ValueError:
            stats.malformed += 1
            continue
        if ":" in raw_ip:
            stats.ipv6 += 1
            continue
        try:
            ip = str(ipaddress.IPv4Address(raw_ip))
        except ValueError:
            stats.malformed += 1
            continue
        domain = normalize_domain(raw_domain)
        if domain is None:
            stats.malformed += 1
            continue
        if window is not None and day not in window:
            stats.out_of_window += 1
            continue
        records.append(ResolutionRecord(day, domain, ip))
    stats.kept = len(records)
    if stats.lines and stats.malformed / stats.lines > MALFORMED_LIMIT:
        raise FormatError(
            f"{stats.malformed} of {stats.lines} rows malformed; expected CSV date,domain,ip"
        )
    if stats.malformed:
        log.warning("skipped %d malformed rows", stats.malformed)
    return records, stats


def read_records(path, window=None, delimiter=None):
    path = Path(path)
    if delimiter is None:
        stem = path.name[:-3] if path.name.endswith(".gz") else path.name
        delimiter = "\t" if stem.endswith(".tsv") else ","
    with open_text(path) as fh:
        return parse_records(fh, window, delimiter=delimiter)


def ip_to_int(ips):
    return np.array([int(ipaddress.IPv4Address(ip)) for ip in ips], dtype=np.int64)


class ResolutionGraph:
    """Bipartite domain/IP graph for one window.

    Domains are kept sorted, IPs sorted numerically, edges sorted by
    (domain index, ip index) and unique.  ``first_seen``/``last_seen`` hold
    date ordinals.
    """

    def __init__(self, domains, ips, edge_domain, edge_ip, first_seen=None, last_seen=None,
                 window=None):
        self.domains = list(domains)
        self.ips = list(ips)
        self.edge_domain = np.asarray(edge_domain, dtype=np.int64)
        self.edge_ip = np.asarray(edge_ip, dtype=np.int64)
        m = self.edge_domain.shape[0]
        self.first_seen = (np.zeros(m, dtype=np.int64) if first_seen is None
                           else np.asarray(first_seen, dtype=np.int64))
        self.last_seen = (self.first_seen.copy() if last_seen is None
                          else np.asarray(last_seen, dtype=np.int64))
        self.window = window
        self._ip_int = None

    @classmethod
    def from_pairs(cls, pairs, window=None):
        """Build from (domain, ip) pairs; handy for fixtures."""
        day = (window.start if window else date(1970, 1, 1))
        return build_resolution_graph([ResolutionRecord(day, d, ip) for d, ip in pairs], window)

    @property
    def n_domains(self):
        return len(self.domains)

    @property
    def n_ips(self):
        return len(self.ips)

    @property
    def n_edges(self):
        return int(self.edge_domain.shape[0])

    @property
    def ip_int(self):
        if self._ip_int is None:
            self._ip_int = ip_to_int(self.ips)
        return self._ip_int

    def domain_degree(self):
        return np.bincount(self.edge_domain, minlength=self.n_domains)

    def ip_degree(self):
        return np.bincount(self.edge_ip, minlength=self.n_ips)

    def edges(self):
        """Iterate (domain, ip) name pairs."""
        for d, i in zip(self.edge_domain.tolist(), self.edge_ip.tolist()):
            yield self.domains[d], self.ips[i]

    def domain_index(self):
        return {d: k for k, d in enumerate(self.domains)}

    def ip_index(self):
        return {ip: k for k, ip in enumerate(self.ips)}

    def subgraph(self, domain_keep=None, ip_keep=None, edge_keep=None, drop_isolated_domains=False):
        """Restrict to kept nodes; node order and edge order are preserved."""
        dk = np.ones(self.n_domains, bool) if domain_keep is None else np.asarray(domain_keep, bool)
        ik = np.ones(self.n_ips, bool) if ip_keep is None else np.asarray(ip_keep, bool)
        ek = dk[self.edge_domain] & ik[self.edge_ip]
        if edge_keep is not None:
            ek &= np.asarray(edge_keep, bool)
        if drop_isolated_domains:
            dk = dk & (np.bincount(self.edge_domain[ek], minlength=self.n_domains) > 0)
        dmap = np.cumsum(dk) - 1
        imap = np.cumsum(ik) - 1
        return ResolutionGraph(
            [d for d, k in zip(self.domains, dk) if k],
            [ip for ip, k in zip(self.ips, ik) if k],
            dmap[self.edge_domain[ek]],
            imap[self.edge_ip[ek]],
            self.first_seen[ek],
            self.last_seen[ek],
            self.window,
        )

    def __eq__(self, other):
        if not isinstance(other, ResolutionGraph):
            return NotImplemented
        return (
            self.domains == other.domains
            and self.ips == other.ips
            and np.array_equal(self.edge_domain, other.edge_domain)
            and np.array_equal(self.edge_ip, other.edge_ip)
            and np.array_equal(self.first_seen, other.first_seen)
            and np.array_equal(self.last_seen, other.last_seen)
            and self.window == other.window
        )

    def __repr__(self):
        return (f"ResolutionGraph(domains={self.n_domains}, ips={self.n_ips}, "
                f"edges={self.n_edges}, window={self.window})")

    # -- serialization -----------------------------------------------------

    def to_json(self):
        doc = {
            "format": SNAPSHOT_FORMAT,
            "window": None if self.window is None else [self.window.start.isoformat(),
                                                        self.window.end.isoformat()],
            "domains": self.domains,
            "ips": self.ips,
            "edges": [
                [d, i, date.fromordinal(f).isoformat() if f > 0 else None,
                 date.fromordinal(l).isoformat() if l > 0 else None]
                for d, i, f, l in zip(self.edge_domain.tolist(), self.edge_ip.tolist(),
                                      self.first_seen.tolist(), self.last_seen.tolist())
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != SNAPSHOT_FORMAT:
            raise FormatError(f"not a resolution graph snapshot: {doc.get('format')!r}")
        window = None
        if doc["window"] is not None:
            window = Window(date.fromisoformat(doc["window"][0]), date.fromisoformat(doc["window"][1]))
        edges = doc["edges"]

        def ordinal(s):
            return date.fromisoformat(s).toordinal() if s else 0

        return cls(
            doc["domains"],
            doc["ips"],
            [e[0] for e in edges],
            [e[1] for e in edges],
            [ordinal(e[2]) for e in edges],
            [ordinal(e[3]) for e in edges],
            window,
        )

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_resolution_graph(records, window=None):
    """Deduplicate records into a graph; each edge keeps min/max observation day."""
    if not records:
        raise EmptyInputError("no resolution records")
    doms = np.array([r.domain for r in records])
    ips = [r.ip for r in records]
    days = np.array([r.date.toordinal() for r in records], dtype=np.int64)
    udom, dinv = np.unique(doms, return_inverse=True)
    ip_int = ip_to_int(ips)
    uip, iinv = np.unique(ip_int, return_inverse=True)
    key = dinv.astype(np.int64) * len(uip) + iinv
    order = np.lexsort((days, key))
    key, days = key[order], days[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ukey = key[starts]
    first = np.minimum.reduceat(days, starts)
    last = np.maximum.reduceat(days, starts)
    ip_names = [str(ipaddress.IPv4Address(int(x))) for x in uip]
    g = ResolutionGraph(udom.tolist(), ip_names, ukey // len(uip), ukey % len(uip), first, last, window)
    g._ip_int = uip.astype(np.int64)
    return g


def filter_popular_ips(g, t=DEFAULT_POPULARITY_THRESHOLD):
    """Drop IPs hosting more than ``t`` domains.  Returns (graph, n_removed).

    Domains left without edges stay in the graph as isolated nodes.
    """
    if t < 1:
        raise ValueError("popularity threshold must be >= 1")
    keep = g.ip_degree() <= t
    removed = int((~keep).sum())
    if removed:
        log.info("removed %d IPs with degree > %d", removed, t)
    return g.subgraph(ip_keep=keep), removed


@dataclass
class ComponentPartition:
    """Connected components of a resolution graph.

    Component ids are ordered by size (nodes) descending, ties by the
    smallest member node (domains first, then IPs).
    """

    graph: ResolutionGraph
    domain_component: np.ndarray
    ip_component: np.ndarray
    sizes: np.ndarray
    _fragments: list = field(default=None, repr=False)

    @property
    def n_components(self):
        return int(self.sizes.shape[0])

    def fragment(self, k):
        return self.graph.subgraph(self.domain_component == k, self.ip_component == k)

    @property
    def components(self):
        if self._fragments is None:
            self._fragments = [self.fragment(k) for k in range(self.n_components)]
        return self._fragments


def connected_components(g):
    nd, ni = g.n_domains, g.n_ips
    n = nd + ni
    if n == 0:
        return ComponentPartition(g, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    adj = coo_matrix((np.ones(g.n_edges), (g.edge_domain, g.edge_ip + nd)), shape=(n, n))
    _, raw = _scipy_cc(adj, directed=False)
    sizes = np.bincount(raw)
    first_member = np.full(sizes.shape[0], n, dtype=np.int64)
    np.minimum.at(first_member, raw, np.arange(n))
    order = np.lexsort((first_member, -sizes))
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.shape[0])
    labels = relabel[raw].astype(np.int64)
    return ComponentPartition(g, labels[:nd], labels[nd:], sizes[order].astype(np.int64))


def degree_histogram(g):
    """[(degree, count)] over IP nodes, highest degree first."""
    deg = g.ip_degree()
    if deg.size == 0:
        return []
    vals, counts = np.unique(deg, return_counts=True)
    return [(int(v), int(c)) for v, c in zip(vals[::-1], counts[::-1])]


def write_degree_histogram(hist, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["degree", "count"])
        w.writerows(hist)
