"""Command-line front end.

Every subcommand writes CSV (or JSON for ``simulate``) to ``--out`` or stdout.
CSV output starts with a comment line carrying the seed and a hash of the
effective configuration.  Exit codes: 0 success, 2 configuration error,
1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .engine import POLICIES, TestConfig, build_model, run_cell, run_test
from .hitpmf import DEFAULT_EPSILON, PatternImpossible, hit_time_pmf
from .inference import ExactHitModel, efficiency_ratios
from .ingest import (binarize_timings, binarize_trajectory, read_csv_columns, read_symbol_file,
                     write_symbol_file)
from .patterns import QueryPattern, query_set
from .sources import (HypothesisPair, SourceError, make_bernoulli, make_iid, make_markov,
                      make_markov_persistent, make_symmetric_markov, make_trace)
from .strategy import argmax_efficiency, build_query_graph, max_ratio_cycle


class ConfigError(ValueError):
    """Bad command-line arguments or configuration file."""


# ---------------------------------------------------------------------------
# parsing helpers


def parse_source(spec: str):
    """Build a source from a compact spec.

    ``iid:0.3`` (binary, P(1)), ``iid:0.2,0.3,0.5``, ``persistent:0.5``,
    ``symmetric:0.1`` (flip probability), ``markov:0.9,0.1;0.2,0.8`` (kernel
    rows, order from the row count), ``trace:PATH`` or ``trace:PATH:random``.
    """
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "iid":
            vals = [float(v) for v in arg.split(",")]
            return make_bernoulli(vals[0]) if len(vals) == 1 else make_iid(vals)
        if kind == "persistent":
            return make_markov_persistent(float(arg))
        if kind == "symmetric":
            return make_symmetric_markov(float(arg))
        if kind == "markov":
            rows = [[float(v) for v in r.split(",")] for r in arg.split(";")]
            k = len(rows[0])
            order = int(round(np.log(len(rows)) / np.log(k)))
            return make_markov(rows, order=order)
        if kind == "trace":
            path, _, policy = arg.partition(":")
            return make_trace(read_symbol_file(path), cursor_policy=policy or "start")
    except (ValueError, IndexError, OSError) as exc:
        raise ConfigError(f"bad source spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown source kind in {spec!r}")


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` (inclusive, ``n`` points) or a comma list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad grid {text!r}") from None


def _fmt(x, full: bool) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x) if full else f"{x:.6g}"
    return str(x)


def config_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


class CsvOut:
    def __init__(self, settings: dict, full: bool, extra_comments: Sequence[str] = ()):
        self.buf = io.StringIO()
        self.full = full
        self.buf.write(f"# seed={settings.get('seed')} config={config_hash(settings)}\n")
        for c in extra_comments:
            self.buf.write(f"# {c}\n")
        self.writer = csv.writer(self.buf, lineterminator="\n")

    def header(self, cols):
        self.writer.writerow(cols)

    def row(self, values):
        self.writer.writerow([_fmt(v, self.full) for v in values])

    def text(self) -> str:
        return self.buf.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# arguments and configuration


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="flat JSON file of option defaults")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--full-precision", action="store_true", default=None)

    hyp = argparse.ArgumentParser(add_help=False)
    hyp.add_argument("--p1", type=float, help="P(Z=1) of the IID hypothesis 1")
    hyp.add_argument("--p2", type=float, help="P(Z=1) of the IID hypothesis 2")
    hyp.add_argument("--source1", help="source spec for hypothesis 1 (overrides --p1)")
    hyp.add_argument("--source2", help="source spec for hypothesis 2 (overrides --p2)")
    hyp.add_argument("--m", type=int)
    hyp.add_argument("--prior", type=float)
    hyp.add_argument("--epsilon", type=float)

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--policy")
    run.add_argument("--pattern", dest="fixed_pattern", help="query for the fixed policy")
    run.add_argument("--eps-t", type=float)
    run.add_argument("--budget-symbols", type=int)
    run.add_argument("--budget-queries", type=int)

    p = argparse.ArgumentParser(prog="queryhit", description="Query/Hit sequential hypothesis testing")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pmf", parents=[common], help="hit-time PMF of one pattern")
    s.add_argument("--pattern")
    s.add_argument("--iid-p", type=float, help="P(Z=1) of a binary IID source")
    s.add_argument("--source")
    s.add_argument("--start", help="start context index (Markov)")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--t-max", type=int)

    s = sub.add_parser("stats", parents=[common, hyp], help="per-query divergence, times and ratios")
    s.add_argument("--pi-grid")

    s = sub.add_parser("optimal-query", parents=[common, hyp], help="best query over a belief grid")
    s.add_argument("--grid")

    sub.add_parser("cycle", parents=[common, hyp], help="optimal query cycle and edge tables")

    s = sub.add_parser("simulate", parents=[common, hyp, run], help="one sequential test")
    s.add_argument("--trajectory", help="path for the belief-trajectory CSV")

    s = sub.add_parser("heatmap", parents=[common, run], help="accuracy over a grid of source pairs")
    s.add_argument("--family", choices=["iid", "persistent"])
    s.add_argument("--grid")
    s.add_argument("--runs", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--prior", type=float)
    s.add_argument("--epsilon", type=float)

    s = sub.add_parser("ingest", parents=[common], help="binarize a recording into a symbol file")
    s.add_argument("--input")
    s.add_argument("--format", choices=["trajectory", "timings"])
    s.add_argument("--x-column")
    s.add_argument("--y-column")
    s.add_argument("--value-column")
    s.add_argument("--invert", action="store_true", default=None)
    s.add_argument("--binary", action="store_true", default=None, help="emit timings as 3 bits each")
    return p


DEFAULTS: Dict[str, object] = {
    "seed": 0, "full_precision": False, "epsilon": DEFAULT_EPSILON, "m": 3, "prior": 0.5,
    "policy": "adaptive", "eps_t": 0.01, "budget_symbols": 20, "budget_queries": 10,
    "pi_grid": "0.1:0.9:9", "grid": "0.1:0.9:9", "runs": 400, "family": "iid",
    "format": "trajectory", "x_column": "x", "y_column": "y", "value_column": "value",
    "invert": False, "binary": False, "p1": None, "p2": None, "source1": None, "source2": None,
    "pattern": None, "iid_p": None, "source": None, "start": None, "t_max": None,
    "fixed_pattern": None, "trajectory": None, "input": None, "out": None,
}

_TYPES = {
    "seed": int, "m": int, "budget_symbols": int, "budget_queries": int, "runs": int, "t_max": int,
    "epsilon": float, "prior": float, "eps_t": float, "p1": float, "p2": float, "iid_p": float,
    "full_precision": bool, "invert": bool, "binary": bool,
}


def load_config(path: str, allowed) -> dict:
    """Flat JSON object of option values; unknown keys are rejected."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    out = {}
    for k, v in data.items():
        key = k.replace("-", "_")
        if key not in allowed:
            raise ConfigError(f"unknown config key {k!r}; allowed: {sorted(allowed)}")
        want = _TYPES.get(key)
        if v is not None and want is not None:
            ok = isinstance(v, want) and not (want is int and isinstance(v, bool))
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                v, ok = float(v), True
            if not ok:
                raise ConfigError(f"config key {k!r} must be {want.__name__}")
        if v is not None and want is None and not isinstance(v, str):
            raise ConfigError(f"config key {k!r} must be a string")
        out[key] = v
    return out


def resolve(args: argparse.Namespace) -> dict:
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    settings = {k: DEFAULTS.get(k) for k in cli}
    if args.config:
        settings.update(load_config(args.config, set(cli)))
    settings.update({k: v for k, v in cli.items() if v is not None})
    settings["command"] = args.command
    return settings


def _hypotheses(st: dict) -> HypothesisPair:
    def one(spec, p, label):
        if spec:
            return parse_source(spec)
        if p is None:
            raise ConfigError(f"hypothesis {label} needs --source{label} or --p{label}")
        try:
            return make_bernoulli(p)
        except SourceError as exc:
            raise ConfigError(str(exc)) from None
    try:
        return HypothesisPair(one(st.get("source1"), st.get("p1"), 1),
                              one(st.get("source2"), st.get("p2"), 2), st["prior"])
    except SourceError as exc:
        raise ConfigError(str(exc)) from None


def _check_m(st: dict, h: HypothesisPair) -> int:
    m = st["m"]
    if m < 1:
        raise ConfigError("m must be >= 1")
    for s in (h.p1, h.p2):
        if s.kind == "markov" and s.order > m:
            raise ConfigError("Markov order must not exceed m")
    return m


def _exact_only(h: HypothesisPair) -> None:
    if "trace" in (h.p1.kind, h.p2.kind):
        raise ConfigError("this subcommand needs IID or Markov sources")


# ---------------------------------------------------------------------------
# subcommands


def cmd_pmf(st: dict) -> str:
    if not st.get("pattern"):
        raise ConfigError("pmf needs --pattern")
    try:
        q = QueryPattern.parse(st["pattern"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if st.get("source"):
        src = parse_source(st["source"])
    elif st.get("iid_p") is not None:
        try:
            src = make_bernoulli(st["iid_p"])
        except SourceError as exc:
            raise ConfigError(str(exc)) from None
    else:
        raise ConfigError("pmf needs --iid-p or --source")
    if max(q.symbols) >= src.n_symbols:
        raise ConfigError("pattern uses symbols outside the source alphabet")
    eps = st["epsilon"]
    if not 0.0 < eps < 0.5:
        raise ConfigError("epsilon must lie in (0, 0.5)")
    start = None
    if st.get("start") not in (None, "", "stationary"):
        try:
            start = int(st["start"])
        except ValueError:
            raise ConfigError("--start must be a context index") from None
    pmf = hit_time_pmf(q, src, eps, start=start, t_max=st.get("t_max"))
    out = CsvOut(st, st["full_precision"], [f"mass_captured={_fmt(pmf.mass_captured, True)}"])
    out.header(["pattern", "t", "prob", "survival", "expectation"])
    mean = pmf.mean()
    surv = np.maximum(0.0, 1.0 - np.cumsum(pmf.probs))
    for t in range(1, pmf.t_max + 1):
        out.row([str(q), t, float(pmf.probs[t - 1]), float(surv[t - 1]), mean])
    return out.text()


def _model(st: dict):
    h = _hypotheses(st)
    _exact_only(h)
    m = _check_m(st, h)
    return h, m, ExactHitModel(h.p1, h.p2, query_set(h.p1.n_symbols, m), st["epsilon"])


def cmd_stats(st: dict) -> str:
    h, m, model = _model(st)
    grid = parse_grid(st["pi_grid"])
    kl, e1, e2 = model.stats(model.start_key(None))
    out = CsvOut(st, st["full_precision"])
    out.header(["pattern", "kl_nats", "e1", "e2", "pi", "nu_at_pi"])
    for pi in grid:
        nu = efficiency_ratios(kl, e1, e2, pi)
        for i, q in enumerate(model.patterns):
            out.row([str(q), kl[i], e1[i], e2[i], float(pi), nu[i]])
    return out.text()


def cmd_optimal_query(st: dict) -> str:
    h, m, model = _model(st)
    grid = parse_grid(st["grid"])
    kl, e1, e2 = model.stats(model.start_key(None))
    out = CsvOut(st, st["full_precision"])
    out.header(["pi", "pattern", "nu"])
    for pi in grid:
        i = argmax_efficiency(model.patterns, kl, e1, e2, pi)
        out.row([float(pi), str(model.patterns[i]), efficiency_ratios(kl, e1, e2, pi)[i]])
    return out.text()


def cmd_cycle(st: dict) -> str:
    h, m, model = _model(st)
    graph = build_query_graph(h.p1, h.p2, m, h.prior, model=model)
    strat = max_ratio_cycle(graph)
    names = [str(q) for q in graph.patterns]
    cyc = ">".join(names[i] for i in strat.cycle)
    edges = set(zip(strat.cycle, strat.cycle[1:] + strat.cycle[:1]))
    out = CsvOut(st, st["full_precision"], [f"mu_star={_fmt(strat.mu, st['full_precision'])} cycle={cyc}"])
    out.header(["from", "to", "D", "t", "excluded", "in_cycle"])
    for k in range(graph.n_nodes):
        out.row(["start", names[k], graph.d0[k], graph.t0[k], not np.isfinite(graph.d0[k]), False])
    for i in range(graph.n_nodes):
        for k in range(graph.n_nodes):
            out.row([names[i], names[k], graph.D[i, k], graph.T[i, k], graph.excluded[i, k],
                     (i, k) in edges])
    return out.text()


def _test_config(st: dict, h: HypothesisPair, m: int, policy: str) -> TestConfig:
    try:
        return TestConfig(h, policy, m, st["eps_t"], st["budget_queries"], st["budget_symbols"],
                          st["seed"], st.get("fixed_pattern"), st["epsilon"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(st: dict) -> str:
    h = _hypotheses(st)
    _exact_only(h)
    m = _check_m(st, h)
    cfg = _test_config(st, h, m, st["policy"])
    outcome = run_test(cfg, build_model(cfg), np.random.default_rng(st["seed"]))
    traj_path = st.get("trajectory")
    if traj_path is None and st.get("out"):
        traj_path = str(Path(st["out"]).with_suffix("")) + ".trajectory.csv"
    if traj_path:
        out = CsvOut(st, st["full_precision"])
        out.header(["k", "belief", "query", "delta_t", "censored"])
        out.row([0, outcome.belief_trajectory[0], "", "", ""])
        for k, (q, (dt, c)) in enumerate(zip(outcome.queries_sent, outcome.hit_times), start=1):
            out.row([k, outcome.belief_trajectory[k], q, dt, c])
        Path(traj_path).write_text(out.text())
    doc = outcome.to_dict()
    doc["seed"] = st["seed"]
    doc["config_hash"] = config_hash(st)
    return json.dumps(doc, sort_keys=True) + "\n"


def cmd_heatmap(st: dict) -> str:
    grid = parse_grid(st["grid"])
    policies = [p.strip() for p in str(st["policy"]).split(",")]
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"unknown policy {p!r}")
    family = st["family"]
    make = make_bernoulli if family == "iid" else make_markov_persistent
    m = st["m"]
    out = CsvOut(st, st["full_precision"])
    out.header(["p1", "p2", "policy", "accuracy", "weighted_accuracy", "mean_symbols",
                "mean_queries", "alpha", "beta", "n"])
    cell = 0
    for pol in policies:
        for a in grid:
            for b in grid:
                try:
                    h = HypothesisPair(make(float(a)), make(float(b)), st["prior"])
                except SourceError as exc:
                    raise ConfigError(str(exc)) from None
                cfg = _test_config(st, h, m, pol)
                bm = run_cell(cfg, st["runs"], st["seed"], cell)
                cell += 1
                out.row([float(a), float(b), pol, bm.accuracy, bm.prior_weighted_accuracy,
                         bm.mean_symbols, bm.mean_queries, bm.alpha, bm.beta, bm.n])
    return out.text()


def cmd_ingest(st: dict) -> str:
    if not st.get("input"):
        raise ConfigError("ingest needs --input")
    if not st.get("out"):
        raise ConfigError("ingest needs --out for the symbol file")
    try:
        if st["format"] == "trajectory":
            rows = read_csv_columns(st["input"], [st["x_column"], st["y_column"]])
            symbols = binarize_trajectory(rows, invert=bool(st["invert"]))
        else:
            rows = read_csv_columns(st["input"], [st["value_column"]])
            symbols = binarize_timings([r[0] for r in rows], binary=bool(st["binary"]))
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    write_symbol_file(st["out"], symbols)
    return ""


COMMANDS = {
    "pmf": cmd_pmf, "stats": cmd_stats, "optimal-query": cmd_optimal_query, "cycle": cmd_cycle,
    "simulate": cmd_simulate, "heatmap": cmd_heatmap, "ingest": cmd_ingest,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        st = resolve(args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            text = COMMANDS[args.command](st)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        if args.command != "ingest":
            _emit(text, st.get("out"))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (PatternImpossible, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # reader went away (e.g. piped into head)
        sys.stderr.close()
        return 0
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
