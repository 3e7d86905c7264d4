"""``dnsassoc`` command line.

Every subcommand reads an optional YAML config, applies command-line
overrides (flags win), writes its outputs into one directory and drops a
``run_manifest.json`` next to them.  Exit codes: 0 ok, 2 bad usage or input,
3 internal invariant violated.
"""
from __future__ import annotations

import datetime
import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import __version__, _kernels

log = logging.getLogger("dnsassoc")

OUT_ENV = "DNSASSOC_OUT"
EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3


class InputError(Exception):
    """Bad configuration or input; maps to exit code 2."""


def _plain(value):
    # YAML turns a bare 2017-02-04 into a date; keep it as the string we parse later
    return value.isoformat() if isinstance(value, datetime.date) else value


@dataclass
class PipelineConfig:
    records: str | None = None
    window: str | None = None
    delimiter: str | None = None
    popularity_threshold: int = 1500
    snapshot: str | None = None
    ip_seed_public: str | None = None
    ip_seed_dedicated: str | None = None
    labels: str | None = None
    as_map: str | None = None
    psl: str | None = None
    scheme: str = "new"
    graph: str | None = None
    engine: str = "path"
    malicious: str | None = None
    benign: str | None = None
    path_floor: float = 1e-6
    classifier: dict = field(default_factory=dict)
    bp: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    output_dir: str = "out"
    rng_seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: _plain(v) for k, v in doc.items()})

    def to_dict(self):
        return asdict(self)

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text):
        doc = yaml.safe_load(text) or {}
        if not isinstance(doc, dict):
            raise InputError("config must be a mapping")
        return cls.from_dict(doc)

    def identity(self):
        """Config content that defines the result: everything but where it is written."""
        doc = self.to_dict()
        doc.pop("output_dir")
        doc.pop("threads")
        for k, v in doc.items():
            if isinstance(v, str) and k not in ("scheme", "engine", "window", "delimiter"):
                doc[k] = Path(v).name
        return doc


def _set_override(cfg, assignment):
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise InputError(f"--set expects key=value, got {assignment!r}")
    value = _plain(yaml.safe_load(raw))
    parts = key.split(".")
    if parts[0] not in {f.name for f in fields(cfg)}:
        raise InputError(f"unknown config key {parts[0]!r}")
    if len(parts) == 1:
        setattr(cfg, key, value)
    elif len(parts) == 2:
        getattr(cfg, parts[0])[parts[1]] = value
    else:
        raise InputError(f"config keys nest one level deep: {key!r}")


def resolve_config(args):
    cfg = PipelineConfig()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        cfg = PipelineConfig.loads(path.read_text(encoding="utf-8"))
    if os.environ.get(OUT_ENV):
        cfg.output_dir = os.environ[OUT_ENV]
    for name in (f.name for f in fields(PipelineConfig)):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    for a in args.set or ():
        _set_override(cfg, a)
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(path, what):
    if not path:
        raise InputError(f"missing {what} (set it in the config or on the command line)")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


class Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []

    def input(self, role, path, what=None):
        p = _need(path, what or role)
        self.inputs[role] = {"file": p.name, "sha256": sha256_file(p)}
        return p

    def input_or_default(self, role, path, default_name, what=None):
        return self.input(role, path or (self.out / default_name), what)

    def output(self, name):
        self.outputs.append(name)
        return self.out / name

    def finish(self):
        import numba
        import numpy
        import scipy
        import sklearn

        ident = self.cfg.identity()
        blob = json.dumps(ident, sort_keys=True, separators=(",", ":")).encode()
        outs = {}
        for name in sorted(set(self.outputs)):
            p = self.out / name
            if p.is_file():
                outs[name] = sha256_file(p)
            side = p.with_suffix(".json")
            if side != p and side.is_file() and side.name not in outs:
                outs[side.name] = sha256_file(side)
        manifest = {
            "command": self.command,
            "config": ident,
            "config_sha256": hashlib.sha256(blob).hexdigest(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outs,
            "versions": {"dnsassoc": __version__, "python": platform.python_version(),
                         "numpy": numpy.__version__, "scipy": scipy.__version__,
                         "scikit-learn": sklearn.__version__, "numba": numba.__version__,
                         "kernel_backend": _kernels.backend()},
        }
        (self.out / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n",
                                                    encoding="utf-8")
        return manifest


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _classifier_cfg(cfg):
    from .ipclass import ClassifierConfig

    opts = {"rng_seed": cfg.rng_seed, "n_jobs": cfg.threads, **cfg.classifier}
    return ClassifierConfig(**opts)


def _bp_cfg(cfg):
    from .bpinfer import BpConfig

    return BpConfig(**cfg.bp)


def _eval_plan(cfg):
    from .evalharness import EvalPlan

    return EvalPlan(**{"rng_seed": cfg.rng_seed, **cfg.eval})


def _load_any_graph(path):
    """A ResolutionGraph snapshot (.json) or a DomainGraph CSV."""
    from .assoc import DomainGraph
    from .ingest import ResolutionGraph

    if Path(path).suffix == ".json":
        return ResolutionGraph.load(path)
    return DomainGraph.read_csv(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg):
    from .ingest import (Window, build_resolution_graph, connected_components, degree_histogram,
                         filter_popular_ips, read_records, write_degree_histogram)

    run = Run("ingest", cfg)
    src = run.input("records", cfg.records, "records file")
    window = Window.parse(cfg.window) if cfg.window else None
    try:
        records, stats = read_records(src, window, cfg.delimiter)
    except ValueError as e:
        raise InputError(f"{src}: {e}") from e
    g = build_resolution_graph(records, window)
    g, removed = filter_popular_ips(g, cfg.popularity_threshold)
    parts = connected_components(g)
    g.save(run.output("graph.json"))
    write_degree_histogram(degree_histogram(g), run.output("degree_histogram.csv"))
    _write_json(run.output("ingest_stats.json"), {
        "parse": asdict(stats),
        "domains": g.n_domains, "ips": g.n_ips, "edges": g.n_edges,
        "popular_ips_removed": removed, "popularity_threshold": cfg.popularity_threshold,
        "components": parts.n_components,
        "largest_components": parts.sizes[:10].tolist(),
    })
    return run.finish()


def cmd_classify(cfg):
    from .ingest import ResolutionGraph
    from .ipclass import (IpSeed, TrainingError, attribute_importance, classify_ips, extract_features,
                          write_importance, write_labels)
    from .psl import PublicSuffixList

    run = Run("classify-ips", cfg)
    g = ResolutionGraph.load(run.input_or_default("snapshot", cfg.snapshot, "graph.json", "graph snapshot"))
    pub = run.input("ip_seed_public", cfg.ip_seed_public, "public IP seed file")
    ded = run.input("ip_seed_dedicated", cfg.ip_seed_dedicated, "dedicated IP seed file")
    psl = PublicSuffixList.from_file(run.input("psl", cfg.psl)) if cfg.psl else None
    ccfg = _classifier_cfg(cfg)
    try:
        seed = IpSeed.from_files(pub, ded)
        feats = extract_features(g, psl, ccfg.subnet_prefix_len)
        result = classify_ips(feats, seed, ccfg)
    except (TrainingError, ValueError) as e:
        raise InputError(str(e)) from e
    write_labels(result.labels, run.output("ip_labels.csv"))
    write_importance(attribute_importance(result.model), run.output("attribute_importance.csv"))
    with open(run.output("rounds.csv"), "w", encoding="utf-8") as fh:
        fh.write("round,n_public,n_dedicated,n_unlabeled\n")
        for row in result.history:
            fh.write(",".join(str(x) for x in row) + "\n")
    return run.finish()


def cmd_build_graph(cfg):
    from .assoc import SCHEMES, AsMap, LabelError, build_domain_graph, build_induced_bipartite
    from .ingest import ResolutionGraph
    from .ipclass import read_labels

    scheme = cfg.scheme
    if scheme not in SCHEMES + ("induced-bipartite",):
        raise InputError(f"unknown scheme {scheme!r}")
    run = Run("build-graph", cfg)
    g = ResolutionGraph.load(run.input_or_default("snapshot", cfg.snapshot, "graph.json", "graph snapshot"))
    as_map = AsMap.from_csv(run.input("as_map", cfg.as_map, "AS map")) if cfg.as_map else AsMap()
    labels = None
    if scheme != "baseline":
        lp = cfg.labels or (run.out / "ip_labels.csv")
        if not Path(lp).is_file():
            raise InputError(f"scheme {scheme} needs IP labels; not found: {lp}")
        labels = {ip: c.label for ip, c in read_labels(run.input("labels", lp)).items()}
    try:
        dg = build_domain_graph(g, labels, as_map, "new" if scheme == "induced-bipartite" else scheme,
                                _classifier_cfg(cfg).subnet_prefix_len)
    except LabelError as e:
        raise InputError(f"IP labels incomplete: {e}") from e
    if scheme == "induced-bipartite":
        bg = build_induced_bipartite(g, dg)
        bg.save(run.output("graph_induced-bipartite.json"))
        stats = {"scheme": scheme, "domains": bg.n_domains, "ips": bg.n_ips, "edges": bg.n_edges}
    else:
        dg.write_csv(run.output(f"graph_{scheme}.csv"))
        stats = {"scheme": scheme, "nodes": dg.n_covered, "edges": dg.n_edges,
                 "domains_in_input": g.n_domains}
    _write_json(run.output(f"graph_stats_{scheme}.json"), stats)
    return run.finish()


def _score(engine, graph, seeds, cfg, bp_cfg=None):
    """(scores, belief table or None)."""
    from . import bpinfer, pathinfer
    from .assoc import DomainGraph

    if engine == "path":
        if not isinstance(graph, DomainGraph):
            raise InputError("the path engine runs on a domain graph CSV")
        return pathinfer.score_all(graph, seeds, cfg.path_floor), None
    if engine == "bp":
        bt = bpinfer.run_bp(bpinfer.build_bp_graph(graph, seeds, (), bp_cfg), bp_cfg)
        return bpinfer.beliefs_to_scores(bt), bt
    raise InputError(f"unknown engine {engine!r}")


def _default_graph(cfg):
    return cfg.graph or (Path(cfg.output_dir) / f"graph_{cfg.scheme}.{'json' if cfg.scheme == 'induced-bipartite' else 'csv'}")


def cmd_infer(cfg):
    from .bpinfer import write_bp_output
    from .evalharness import read_domain_list
    from .pathinfer import EmptySeedError, write_scores

    run = Run("infer", cfg)
    graph = _load_any_graph(run.input("graph", _default_graph(cfg), "graph"))
    seeds = set(read_domain_list(run.input("malicious", cfg.malicious, "malicious seed file")))
    try:
        scores, bt = _score(cfg.engine, graph, seeds, cfg, _bp_cfg(cfg))
    except EmptySeedError as e:
        raise InputError(str(e)) from e
    if bt is not None and not (set(seeds) & set(bt.nodes)):
        raise InputError("none of the malicious seeds are in the graph")
    out = run.output(f"scores_{cfg.engine}.csv")
    if bt is None:
        write_scores(scores, out)
    else:
        write_bp_output(scores, bt, out)
    return run.finish()


def cmd_eval(cfg):
    from .evalharness import EvalError, GroundTruth, evaluate, write_summary
    from .pathinfer import EmptySeedError

    run = Run("eval", cfg)
    graph = _load_any_graph(run.input("graph", _default_graph(cfg), "graph"))
    truth = GroundTruth.from_files(run.input("malicious", cfg.malicious, "malicious truth file"),
                                   run.input("benign", cfg.benign, "benign truth file"))
    plan = _eval_plan(cfg)
    bp_cfg = _bp_cfg(cfg)
    opts = dict(cfg.eval)
    base_rate = float(opts.pop("base_rate", 0.02))
    try:
        result = evaluate(lambda s: _score(cfg.engine, graph, s, cfg, bp_cfg)[0], truth, plan,
                          n_jobs=cfg.threads)
    except (EvalError, EmptySeedError) as e:
        raise InputError(str(e)) from e
    for c in result.curve.rounds:
        assert (c.tpr[1:] <= c.tpr[:-1]).all() and (c.fpr[1:] <= c.fpr[:-1]).all(), "ROC not monotone"
    result.curve.write_csv(run.output("roc.csv"))
    write_summary(result, run.output("summary.json"), base_rate,
                  {"engine": cfg.engine, "malicious": len(truth.malicious), "benign": len(truth.benign)})
    return run.finish()


def cmd_bench(cfg):
    from .evalharness import write_bench
    from .ingest import ResolutionGraph
    from .ipclass import read_labels
    from .scaling import DEFAULT_SCALES, ENGINES, run_scaling

    run = Run("bench", cfg)
    g = ResolutionGraph.load(run.input_or_default("snapshot", cfg.snapshot, "graph.json", "reference snapshot"))
    labels = {ip: c.label for ip, c in
              read_labels(run.input_or_default("labels", cfg.labels, "ip_labels.csv", "IP labels")).items()}
    b = cfg.bench
    rows = run_scaling(g, labels, scales=tuple(b.get("scales", DEFAULT_SCALES)),
                       engines=tuple(b.get("engines", ENGINES)), repeats=int(b.get("repeats", 3)),
                       timeout=b.get("timeout"), seed_fraction=float(b.get("seed_fraction", 0.1)),
                       rng_seed=cfg.rng_seed, bp_cfg=_bp_cfg(cfg))
    write_bench(rows, run.output("bench.csv"))
    return run.finish()


def cmd_synth(cfg, kind):
    from . import synthgen
    from .ingest import ResolutionGraph

    run = Run(f"synth {kind}", cfg)
    s = dict(cfg.synth)
    if kind == "scale":
        g = ResolutionGraph.load(run.input_or_default("snapshot", cfg.snapshot, "graph.json", "reference snapshot"))
        factor = float(s.get("factor", 2))
        prof = synthgen.scale_profile(synthgen.DegreeProfile.from_graph(g), factor)
        try:
            sg = synthgen.generate_bipartite(prof, cfg.rng_seed)
        except synthgen.GenerationError as e:
            raise InputError(str(e)) from e
        synthgen.write_records(sg, run.output("records.csv"))
        tv_d, tv_i = synthgen.degree_tv_distance(prof, sg)
        _write_json(run.output("synth_stats.json"), {"factor": factor, "domains": sg.n_domains, "ips": sg.n_ips,
                                                      "edges": sg.n_edges, "tv_domain": tv_d, "tv_ip": tv_i})
    else:
        enlarge = int(s.pop("enlarge", 1))
        opts = {k: tuple(v) if isinstance(v, list) else v for k, v in s.items()}
        opts.setdefault("rng_seed", cfg.rng_seed)
        params = synthgen.PlantedParams(**opts)
        if enlarge > 1:
            params = params.enlarged(enlarge)
        ds = synthgen.generate_planted(params)
        synthgen.write_planted(ds, run.out)
        run.outputs += ["records.csv", "malicious.txt", "benign.txt", "ip_public.txt", "ip_dedicated.txt",
                        "asmap.csv", "campaigns.csv"]
    return run.finish()


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML config file")
    common.add_argument("-o", "--out", dest="output_dir", help=f"output directory (env {OUT_ENV})")
    common.add_argument("--seed", dest="rng_seed", type=int, help="root random seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. bp.epsilon=0.1 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="dnsassoc", description="Malicious domain inference from active DNS data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="records -> graph snapshot")
    s.add_argument("--records")
    s.add_argument("--window", help="YYYY-MM-DD..YYYY-MM-DD or a start date (7 days)")
    s.add_argument("--delimiter")
    s.add_argument("--popularity-threshold", dest="popularity_threshold", type=int)

    s = sub.add_parser("classify-ips", parents=[common], help="label IPs public/dedicated")
    s.add_argument("--snapshot")
    s.add_argument("--seed-public", dest="ip_seed_public")
    s.add_argument("--seed-dedicated", dest="ip_seed_dedicated")
    s.add_argument("--psl")

    s = sub.add_parser("build-graph", parents=[common], help="domain association graph")
    s.add_argument("--scheme", choices=["baseline", "new", "relaxed", "induced-bipartite"])
    s.add_argument("--snapshot")
    s.add_argument("--labels")
    s.add_argument("--as-map", dest="as_map")

    for name, helptext in (("infer", "score domains from malicious seeds"),
                           ("eval", "cross-validated ROC")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--engine", choices=["path", "bp"])
        s.add_argument("--graph", help="domain graph CSV or resolution graph snapshot JSON")
        s.add_argument("--scheme", help="picks the default graph file in the output dir")
        s.add_argument("--malicious")
        if name == "eval":
            s.add_argument("--benign")

    s = sub.add_parser("bench", parents=[common], help="runtime scaling benchmark")
    s.add_argument("--snapshot")
    s.add_argument("--labels")

    s = sub.add_parser("synth", parents=[common], help="synthetic graphs")
    s.add_argument("kind", choices=["scale", "planted"])
    s.add_argument("--snapshot")
    return p


COMMANDS = {"ingest": cmd_ingest, "classify-ips": cmd_classify, "build-graph": cmd_build_graph,
            "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            cmd_synth(cfg, args.kind)
        else:
            COMMANDS[args.command](cfg)
    except InputError as e:
        print(f"dnsassoc: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (TypeError, ValueError, KeyError) as e:
        # bad config values surface here (unknown module option, out-of-range value)
        print(f"dnsassoc: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (AssertionError, FloatingPointError) as e:
        print(f"dnsassoc: internal invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
