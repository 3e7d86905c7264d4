"""Public vs. dedicated IP classification.

Seven per-IP attributes are extracted from the resolution graph (three
domain-based counts, three of the same counts over the IP's subnet, and the
number of active IPs in that subnet).  A random forest is retrained round
after round on a growing labeled pool until no unlabeled IP crosses either
confidence threshold; whatever is still unlabeled then becomes public.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .psl import PublicSuffixList
from .seeding import derive_seed

log = logging.getLogger(__name__)

ATTRIBUTES = ("n_fqdn", "n_2ld", "n_3ld", "block_fqdn", "block_2ld", "block_3ld", "block_ips")
BLOCK_ATTRIBUTES = ATTRIBUTES[3:]

PUBLIC = "public"
DEDICATED = "dedicated"
MAX_ROUNDS = 50


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class IpFeatureVector:
    ip: str
    n_fqdn: int
    n_2ld: int
    n_3ld: int
    block_fqdn: int
    block_2ld: int
    block_3ld: int
    block_ips: int

    def as_row(self):
        return [getattr(self, a) for a in ATTRIBUTES]


@dataclass
class IpSeed:
    public_ips: set = field(default_factory=set)
    dedicated_ips: set = field(default_factory=set)

    def __post_init__(self):
        self.public_ips = set(self.public_ips)
        self.dedicated_ips = set(self.dedicated_ips)
        both = self.public_ips & self.dedicated_ips
        if both:
            raise ValueError(f"IPs in both seed classes: {sorted(both)[:5]}")

    @classmethod
    def from_files(cls, public_path, dedicated_path):
        return cls(_read_lines(public_path), _read_lines(dedicated_path))


@dataclass(frozen=True)
class IpClassification:
    label: str
    score_public: float
    round_labeled: int

    @property
    def score_dedicated(self):
        return 1.0 - self.score_public


@dataclass
class ClassifierConfig:
    confidence_thresh_public: float = 0.5
    confidence_thresh_dedicated: float = 0.9
    subnet_prefix_len: int = 24
    n_trees: int = 100
    max_depth: int | None = None
    rng_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("confidence_thresh_public", "confidence_thresh_dedicated"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if not 12 <= self.subnet_prefix_len <= 30:
            raise ValueError("subnet_prefix_len must be in [12, 30]")


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def subnet_ids(ip_int, prefix_len=24):
    return np.asarray(ip_int, dtype=np.int64) >> (32 - prefix_len)


def _distinct_per_group(group, item, n_groups):
    """Count distinct ``item`` values per ``group`` (items < 0 ignored)."""
    ok = item >= 0
    g, it = group[ok], item[ok]
    if g.size == 0:
        return np.zeros(n_groups, dtype=np.int64)
    pairs = np.unique(np.stack([g, it], axis=1), axis=0)
    return np.bincount(pairs[:, 0], minlength=n_groups)


def domain_levels(domains, psl=None):
    """Integer ids for each domain's 2LD and 3LD (-1 when there is no 3LD)."""
    psl = psl or PublicSuffixList.bundled()
    slds, tlds = {}, {}
    sld_id = np.empty(len(domains), dtype=np.int64)
    tld_id = np.empty(len(domains), dtype=np.int64)
    for k, name in enumerate(domains):
        sld, tld3 = psl.split(name)
        sld_id[k] = slds.setdefault(sld, len(slds))
        tld_id[k] = -1 if tld3 is None else tlds.setdefault(tld3, len(tlds))
    return sld_id, tld_id


def extract_features(g, psl=None, prefix_len=24):
    """Map ip -> IpFeatureVector for every IP of the graph."""
    sld_id, tld_id = domain_levels(g.domains, psl)
    ed, ei = g.edge_domain, g.edge_ip
    ni = g.n_ips
    n_fqdn = np.bincount(ei, minlength=ni)
    n_2ld = _distinct_per_group(ei, sld_id[ed], ni)
    n_3ld = _distinct_per_group(ei, tld_id[ed], ni)

    _, block = np.unique(subnet_ids(g.ip_int, prefix_len), return_inverse=True)
    block = block.astype(np.int64).ravel()
    nb = int(block.max()) + 1 if ni else 0
    eb = block[ei]
    b_fqdn = _distinct_per_group(eb, ed, nb)
    b_2ld = _distinct_per_group(eb, sld_id[ed], nb)
    b_3ld = _distinct_per_group(eb, tld_id[ed], nb)
    active = n_fqdn > 0
    b_ips = np.bincount(block[active], minlength=nb)

    out = {}
    for k, ip in enumerate(g.ips):
        b = block[k]
        out[ip] = IpFeatureVector(ip, int(n_fqdn[k]), int(n_2ld[k]), int(n_3ld[k]),
                                  int(b_fqdn[b]), int(b_2ld[b]), int(b_3ld[b]), max(int(b_ips[b]), 1))
    return out


def feature_matrix(features, ips):
    return np.array([features[ip].as_row() for ip in ips], dtype=np.float64).reshape(-1, len(ATTRIBUTES))


class ForestModel:
    """Bagged CART trees; score_public is the fraction of trees voting public.

    Bootstrap samples are drawn per class so every tree sees both labels,
    which keeps tiny seed sets usable.  Tree ``k`` is seeded from
    (rng_seed, k) alone, so results do not depend on n_jobs.
    """

    def __init__(self, trees, attributes=ATTRIBUTES):
        self.trees = trees
        self.attributes = tuple(attributes)

    def votes_public(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return np.zeros(0)
        votes = np.zeros(X.shape[0])
        for t in self.trees:
            votes += t.predict(X)
        return votes / len(self.trees)

    def score_public(self, features, ips):
        return self.votes_public(feature_matrix(features, ips))

    def importances(self):
        total = np.zeros(len(self.attributes))
        for t in self.trees:
            total += t.tree_.compute_feature_importances(normalize=False)
        s = total.sum()
        if s <= 0:
            return np.full(len(self.attributes), 1.0 / len(self.attributes))
        return total / s


def _fit_tree(X, y, cls_idx, cfg, k):
    rng = np.random.default_rng(derive_seed(cfg.rng_seed, "tree", k))
    idx = np.concatenate([rng.choice(ix, size=ix.size, replace=True) for ix in cls_idx])
    tree = DecisionTreeClassifier(max_depth=cfg.max_depth, max_features="sqrt",
                                  random_state=int(rng.integers(2**31 - 1)))
    tree.fit(X[idx], y[idx])
    return tree


def train_forest(X, y, cfg=None):
    """Fit on feature rows ``X`` with labels ``y`` (1 = public, 0 = dedicated)."""
    cfg = cfg or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    cls_idx = [np.flatnonzero(y == c) for c in (0, 1)]
    for c, ix in zip((DEDICATED, PUBLIC), cls_idx):
        if ix.size == 0:
            raise TrainingError(f"no {c} examples in the training pool")
    if cfg.n_jobs and cfg.n_jobs > 1:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=cfg.n_jobs, prefer="threads")(
            delayed(_fit_tree)(X, y, cls_idx, cfg, k) for k in range(cfg.n_trees))
    else:
        trees = [_fit_tree(X, y, cls_idx, cfg, k) for k in range(cfg.n_trees)]
    return ForestModel(trees)


@dataclass
class ClassificationRun:
    labels: dict
    rounds: int
    history: list
    model: ForestModel


def classify_ips(features, seed, cfg=None):
    """Iterative self-training over all IPs in ``features``.

    Returns a ClassificationRun; ``labels`` maps ip -> IpClassification and
    ``history`` holds (round, n_public, n_dedicated, n_unlabeled) per round.
    """
    cfg = cfg or ClassifierConfig()
    known = set(features)
    for name, pool in (("public", seed.public_ips), ("dedicated", seed.dedicated_ips)):
        missing = pool - known
        if missing:
            log.warning("%d %s seed IPs not in the graph, ignored", len(missing), name)
    pub = sorted(seed.public_ips & known)
    ded = sorted(seed.dedicated_ips & known)
    if not pub or not ded:
        raise TrainingError("seed needs at least one public and one dedicated IP in the graph")

    labels = {ip: IpClassification(PUBLIC, 1.0, 0) for ip in pub}
    labels.update({ip: IpClassification(DEDICATED, 0.0, 0) for ip in ded})
    unlabeled = sorted(known - set(labels))
    history = [(0, len(pub), len(ded), len(unlabeled))]
    model = None
    last_scores = {}
    rnd = 0
    while True:
        rnd += 1
        assert rnd <= MAX_ROUNDS, "self-training failed to converge"
        pool = sorted(labels)
        X = feature_matrix(features, pool)
        y = np.array([labels[ip].label == PUBLIC for ip in pool], dtype=np.int64)
        rcfg = ClassifierConfig(**{**cfg.__dict__, "rng_seed": derive_seed(cfg.rng_seed, "round", rnd)})
        model = train_forest(X, y, rcfg)
        if not unlabeled:
            break
        scores = model.score_public(features, unlabeled)
        moved = 0
        still = []
        for ip, sp in zip(unlabeled, scores.tolist()):
            last_scores[ip] = sp
            if sp > cfg.confidence_thresh_public:
                labels[ip] = IpClassification(PUBLIC, sp, rnd)
                moved += 1
            elif 1.0 - sp > cfg.confidence_thresh_dedicated:
                labels[ip] = IpClassification(DEDICATED, sp, rnd)
                moved += 1
            else:
                still.append(ip)
        unlabeled = still
        n_pub = sum(1 for c in labels.values() if c.label == PUBLIC)
        history.append((rnd, n_pub, len(labels) - n_pub, len(unlabeled)))
        if moved == 0:
            break
    for ip in unlabeled:
        labels[ip] = IpClassification(PUBLIC, last_scores.get(ip, 0.5), rnd)
    return ClassificationRun(labels, rnd, history, model)


def attribute_importance(model):
    return list(zip(model.attributes, model.importances().tolist()))


def write_labels(labels, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ip", "label", "score_public", "round_labeled"])
        for ip in sorted(labels, key=_ip_key):
            c = labels[ip]
            w.writerow([ip, c.label, repr(float(c.score_public)), c.round_labeled])


def read_labels(path):
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["ip"]] = IpClassification(row["label"], float(row["score_public"]),
                                              int(row["round_labeled"]))
    return out


def write_importance(pairs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "importance"])
        for a, v in pairs:
            w.writerow([a, repr(float(v))])


def _ip_key(ip):
    return tuple(int(p) for p in ip.split("."))
