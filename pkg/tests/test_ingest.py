import gzip
import io
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnsassoc.ingest import (EmptyInputError, FormatError, ResolutionGraph, ResolutionRecord, Window,
                             build_resolution_graph, connected_components, degree_histogram,
                             filter_popular_ips, normalize_domain, parse_records, read_records)
from oracles import component_sizes

FEB = Window(date(2017, 2, 4), date(2017, 2, 10))


def rec(d, ip, day=4):
    return ResolutionRecord(date(2017, 2, day), d, ip)


# -- parsing ------------------------------------------------------------------


def test_domain_is_normalized():
    recs, stats = parse_records(io.StringIO("2017-02-04,Example.COM,1.2.3.4\n"))
    assert recs == [ResolutionRecord(date(2017, 2, 4), "example.com", "1.2.3.4")]
    assert stats.kept == 1


def test_out_of_window_row_dropped():
    recs, stats = parse_records(io.StringIO("2017-02-01,a.com,1.2.3.4\n2017-02-05,b.com,1.2.3.4\n"), FEB)
    assert [r.domain for r in recs] == ["b.com"]
    assert stats.out_of_window == 1


def test_malformed_row_counted():
    text = "date,domain,ip\nbad,,\n2017-02-04,a.com,1.2.3.4\n2017-02-04,b.com,1.2.3.5\n"
    recs, stats = parse_records(io.StringIO(text))
    assert len(recs) == 2 and stats.malformed == 1


def test_mostly_garbage_is_format_error():
    with pytest.raises(FormatError):
        parse_records(io.StringIO("x\ny\nz\n2017-02-04,a.com,1.2.3.4\n"))


def test_ipv6_rows_are_skipped_not_malformed():
    recs, stats = parse_records(io.StringIO("2017-02-04,a.com,::1\n2017-02-04,a.com,1.1.1.1\n"))
    assert len(recs) == 1 and stats.ipv6 == 1 and stats.malformed == 0


@pytest.mark.parametrize("raw,expected", [
    ("WWW.Example.com.", "www.example.com"),
    ("under_score.example.com", "under_score.example.com"),
    ("-bad.com", None),
    ("", None),
    ("a..b", None),
])
def test_normalize_domain(raw, expected):
    assert normalize_domain(raw) == expected


def test_window_parse_and_bounds():
    w = Window.parse("2017-02-04")
    assert (w.start, w.end) == (date(2017, 2, 4), date(2017, 2, 10))
    assert Window.parse("2017-02-04..2017-02-05").end == date(2017, 2, 5)
    assert date(2017, 2, 10) in w and date(2017, 2, 11) not in w
    with pytest.raises(ValueError):
        Window(date(2017, 2, 5), date(2017, 2, 4))


def test_read_gzip_and_tsv(tmp_path):
    p = tmp_path / "r.tsv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("2017-02-04\ta.com\t1.2.3.4\n")
    recs, _ = read_records(p)
    assert recs[0].domain == "a.com"


# -- graph building -----------------------------------------------------------


def test_duplicate_records_collapse():
    g = build_resolution_graph([rec("d1.com", "1.1.1.1"), rec("d1.com", "1.1.1.1"), rec("d2.com", "1.1.1.1")])
    assert (g.n_domains, g.n_ips, g.n_edges) == (2, 1, 2)


def test_single_record():
    g = build_resolution_graph([rec("d1.com", "1.1.1.1")])
    assert (g.n_domains, g.n_ips, g.n_edges) == (1, 1, 1)


def test_first_and_last_seen():
    g = build_resolution_graph([rec("d1.com", "1.1.1.1", day) for day in (6, 9, 4)])
    assert g.first_seen[0] == date(2017, 2, 4).toordinal()
    assert g.last_seen[0] == date(2017, 2, 9).toordinal()


def test_empty_records_rejected():
    with pytest.raises(EmptyInputError):
        build_resolution_graph([])


def test_ips_sorted_numerically():
    g = ResolutionGraph.from_pairs([("a.com", "10.0.0.9"), ("a.com", "10.0.0.10"), ("a.com", "9.0.0.1")])
    assert g.ips == ["9.0.0.1", "10.0.0.9", "10.0.0.10"]


def test_snapshot_round_trip(tmp_path, toy):
    g = build_resolution_graph([rec("x.com", "1.1.1.1", 4), rec("x.com", "1.1.1.1", 7)], FEB)
    p = tmp_path / "g.json"
    g.save(p)
    assert ResolutionGraph.load(p) == g
    assert p.read_text() == g.to_json()


def test_snapshot_rejects_other_json():
    with pytest.raises(FormatError):
        ResolutionGraph.from_json('{"format": "something else"}')


# -- popularity filter --------------------------------------------------------


def star(n, ip="5.5.5.5"):
    return ResolutionGraph.from_pairs([(f"d{k}.com", ip) for k in range(n)])


def test_ip_above_threshold_removed():
    g, removed = filter_popular_ips(star(1501), 1500)
    assert removed == 1 and g.n_ips == 0 and g.n_domains == 1501


def test_ip_at_threshold_kept():
    g, removed = filter_popular_ips(star(1500), 1500)
    assert removed == 0 and g.n_ips == 1


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        filter_popular_ips(star(2), 0)


# -- components ---------------------------------------------------------------


def test_two_stars_two_components():
    g = ResolutionGraph.from_pairs([("a.com", "1.1.1.1"), ("b.com", "1.1.1.1"),
                                    ("c.com", "2.2.2.2"), ("e.com", "2.2.2.2")])
    assert connected_components(g).n_components == 2


def test_single_edge_component():
    cp = connected_components(ResolutionGraph.from_pairs([("d1.com", "1.1.1.1")]))
    assert cp.sizes.tolist() == [2]


def test_path_matches_union_find():
    edges = [("d1.com", "1.1.1.1"), ("d2.com", "1.1.1.1"), ("d2.com", "2.2.2.2")]
    cp = connected_components(ResolutionGraph.from_pairs(edges))
    assert cp.sizes.tolist() == component_sizes(edges) == [4]


# -- degree histogram ---------------------------------------------------------


def test_histogram_examples():
    g = ResolutionGraph.from_pairs([("a.com", "1.1.1.1"), ("b.com", "1.1.1.1"), ("c.com", "1.1.1.1"),
                                    ("a.com", "2.2.2.2"), ("b.com", "2.2.2.2"), ("c.com", "2.2.2.2"),
                                    ("a.com", "3.3.3.3")])
    assert degree_histogram(g) == [(3, 2), (1, 1)]
    assert degree_histogram(star(5)) == [(5, 1)]
    empty = star(3).subgraph(ip_keep=np.zeros(1, bool))
    assert degree_histogram(empty) == []


# -- properties ---------------------------------------------------------------

domains = st.sampled_from([f"d{k}.example.com" for k in range(12)])
ips = st.sampled_from([f"10.0.{k // 4}.{k % 4 + 1}" for k in range(12)])
edge_lists = st.lists(st.tuples(domains, ips), min_size=1, max_size=40)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_build_is_idempotent(edges):
    recs = [rec(d, ip) for d, ip in edges]
    assert build_resolution_graph(recs + recs) == build_resolution_graph(recs)


@settings(max_examples=60, deadline=None)
@given(edge_lists, st.integers(1, 6))
def test_filter_removes_exactly_popular_ips(edges, t):
    g = ResolutionGraph.from_pairs(edges)
    f, removed = filter_popular_ips(g, t)
    ideg = dict(zip(g.ips, g.ip_degree().tolist()))
    assert set(f.ips) == {ip for ip, d in ideg.items() if d <= t}
    assert removed == sum(1 for d in ideg.values() if d > t)
    before = dict(zip(g.domains, g.domain_degree().tolist()))
    after = dict(zip(f.domains, f.domain_degree().tolist()))
    assert all(after[d] <= before[d] for d in after)
    assert all(dict(zip(f.ips, f.ip_degree().tolist()))[ip] == ideg[ip] for ip in f.ips)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_components_partition_nodes_and_edges(edges):
    g = ResolutionGraph.from_pairs(edges)
    cp = connected_components(g)
    frags = cp.components
    assert sum(f.n_domains + f.n_ips for f in frags) == g.n_domains + g.n_ips
    assert sum(f.n_edges for f in frags) == g.n_edges
    assert cp.sizes.tolist() == component_sizes(list(g.edges()))


@settings(max_examples=30, deadline=None)
@given(edge_lists)
def test_serialization_is_deterministic(edges):
    a = ResolutionGraph.from_pairs(edges).to_json()
    b = ResolutionGraph.from_pairs(list(reversed(edges))).to_json()
    assert a == b
