import pytest

from dnsassoc.assoc import AsMap
from dnsassoc.ingest import ResolutionGraph
from dnsassoc.ipclass import DEDICATED, PUBLIC

# Six domains, two dedicated IPs in one /24 and three public IPs over two ASs.
#   a, b  share D1 plus public P2 (other AS)
#   c, g  share D2; g also sits on public P3
#   e, f  share public P1 (AS 100) and P2 (AS 200)
TOY_IPS = {
    "10.0.0.1": (DEDICATED, 100),  # D1
    "10.0.0.2": (DEDICATED, 100),  # D2
    "20.0.0.1": (PUBLIC, 100),     # P1
    "30.0.0.1": (PUBLIC, 200),     # P2
    "30.0.0.2": (PUBLIC, 200),     # P3
}
TOY_EDGES = [
    ("a.com", "10.0.0.1"), ("a.com", "30.0.0.1"),
    ("b.com", "10.0.0.1"), ("b.com", "30.0.0.1"),
    ("c.com", "10.0.0.2"),
    ("g.com", "10.0.0.2"), ("g.com", "30.0.0.2"),
    ("e.com", "20.0.0.1"), ("e.com", "30.0.0.1"),
    ("f.com", "20.0.0.1"), ("f.com", "30.0.0.1"), ("f.com", "30.0.0.2"),
]


@pytest.fixture
def toy():
    g = ResolutionGraph.from_pairs(TOY_EDGES)
    labels = {ip: lab for ip, (lab, _) in TOY_IPS.items()}
    as_map = AsMap.from_dict({ip: a for ip, (_, a) in TOY_IPS.items()})
    return g, labels, as_map


@pytest.fixture(scope="session")
def planted():
    from dnsassoc.synthgen import generate_planted

    return generate_planted()


@pytest.fixture(scope="session")
def planted_classified(planted):
    """Planted graph with IP labels learned from a 10% seed of the true labels."""
    import numpy as np

    from dnsassoc.ipclass import IpSeed, classify_ips, extract_features

    rng = np.random.default_rng(11)
    pub = sorted(ip for ip, lab in planted.ip_labels.items() if lab == PUBLIC)
    ded = sorted(ip for ip, lab in planted.ip_labels.items() if lab == DEDICATED)
    seed = IpSeed(rng.choice(pub, max(2, len(pub) // 10), replace=False).tolist(),
                  rng.choice(ded, max(2, len(ded) // 10), replace=False).tolist())
    run = classify_ips(extract_features(planted.graph), seed)
    return {ip: c.label for ip, c in run.labels.items()}, run, seed


# -- acceptance report: one PASS/FAIL line per criterion ----------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA.append((mark.args[0], rep.passed, rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, ok, secs, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  ({secs:.1f}s)  {detail}")
