"""Command-line entry point: ``burstlab <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import metrics as M
from . import simswitch as S
from . import trace as T
from . import workload as W
from .csvio import DataError, file_digest
from .netcalc import NS_PER_S, as_fraction

log = logging.getLogger("burstlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
MANIFEST_NAME = "run_manifest.json"


class InvariantViolation(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument helpers ------------------------------------------------------------

def _seconds_to_ns(text: str) -> Fraction:
    try:
        ns = as_fraction(text) * NS_PER_S
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid duration {text!r}") from None
    if ns <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return ns


def _interval(text: str) -> tuple[Fraction, Fraction]:
    try:
        a, b = (as_fraction(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START,END in seconds, got {text!r}") from None
    return a, b


def _fraction_list(text: str) -> list[Fraction]:
    try:
        return [as_fraction(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None


def _lags(arg: str, grid):
    if arg in ("default", "full"):
        return arg
    return M.LagSet.from_seconds(_fraction_list(arg), grid)


def _u_label(u: Fraction) -> str:
    return f"{float(u):g}"


# -- run manifest ------------------------------------------------------------------

def _write_manifest(out_dir: Path, command: str, args, inputs, outputs, argv) -> Path:
    arguments = {k: (str(v) if isinstance(v, (Fraction, Path)) else v)
                 for k, v in sorted(vars(args).items()) if k not in ("func",)}
    arguments = json.loads(json.dumps(arguments, default=str))
    manifest = {
        "command": command,
        "argv": list(argv),
        "arguments": arguments,
        "input_digests": {str(p): file_digest(p) for p in inputs},
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "outputs": [{"file": Path(p).name, "sha256": file_digest(p)} for p in outputs],
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- commands ----------------------------------------------------------------------

def cmd_analyze(args) -> tuple[list, list]:
    ts, sz = T.read_trace_csv(args.trace)
    a = T.ingest_arrays(ts, sz, args.bin)
    out = args.out_dir
    lags = _lags(args.lags, a.grid)
    env = M.burstiness_curve(a, lags)
    outputs = []
    p = out / "envelope.csv"
    env.write_csv(p)
    outputs.append(p)
    p = out / "ptm.csv"
    M.peak_to_mean(env, a.mean_rate).write_csv(p, "ratio")
    outputs.append(p)
    sweep = M.bmax_sweep(a, args.utilizations)
    p = out / "bmax.csv"
    sweep.write_csv(p)
    outputs.append(p)
    if not sweep.is_nonincreasing() or not sweep.is_convex():
        raise InvariantViolation("maximum backlog sweep is not convex and nonincreasing")
    intervals = {}
    for u in args.interval_utilizations:
        if not 0 < u <= 1:
            raise ValueError(f"utilization {u} outside (0, 1]")
        series = M.interval_bmax(env, a.mean_rate / u)
        p = out / f"interval_bmax_u{_u_label(u)}.csv"
        series.write_csv(p, "bytes")
        outputs.append(p)
        intervals[u] = series
    if args.plot:
        from .plots import render_metrics
        p = out / "metrics.svg"
        render_metrics(p, env, M.peak_to_mean(env, a.mean_rate), sweep, intervals, a.mean_rate)
        outputs.append(p)
    log.info("analyzed %s: %d bins, %d bytes, mean %.3f Mbit/s", args.trace,
             a.bin_count, a.total_bytes, float(a.mean_rate) * 8 / 1e6)
    return [args.trace], outputs


def cmd_splice(args):
    ts, sz = T.read_trace_csv(args.trace)
    new_ts, new_sz = T.splice_records(ts, sz, args.remove, args.source)
    out = args.output or (args.out_dir / (Path(args.trace).stem + "_spliced.csv"))
    T.write_trace_csv(out, new_ts, new_sz)
    log.info("spliced %s -> %s (%d -> %d bytes)", args.trace, out, int(sz.sum()), int(new_sz.sum()))
    return [args.trace], [out]


def cmd_generate(args):
    spec = W.WorkloadSpec.from_json(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    gen = W.generate(spec)
    outputs = gen.write_traces(args.out_dir)
    if spec.return_traffic:
        for w in range(spec.n_workers):
            p = args.out_dir / f"server_to_worker{w + 1}.csv"
            T.write_trace_csv(p, *gen.packets(w, "in"))
            outputs.append(p)
    p = args.out_dir / "events.csv"
    gen.write_event_log(p)
    outputs.append(p)
    for w in range(spec.n_workers):
        per_round = W.expected_bytes_per_round(spec) * spec.rounds
        if gen.bytes_sent(w) != per_round:
            raise InvariantViolation(f"worker {w + 1} sent {gen.bytes_sent(w)} bytes, "
                                     f"expected {per_round}")
    args.seed = spec.seed
    return [args.spec], outputs


def cmd_potential(args):
    flows = []
    for path in args.traces:
        ts, sz = T.read_trace_csv(path)
        flows.append(T.ingest_arrays(ts, sz, args.bin))
    flows = T.common_grid(flows)
    lags = _lags(args.lags, flows[0].grid)
    pot = M.burstiness_potential(flows, lags)
    if np.any(pot.potential.values < 0):
        raise InvariantViolation("aggregate envelope exceeds the sum of flow envelopes")
    outputs = []
    for name, curve in (("sum_envelope", pot.sum_env), ("agg_envelope", pot.agg_env),
                        ("potential", pot.potential)):
        p = args.out_dir / f"{name}.csv"
        curve.write_csv(p)
        outputs.append(p)
    return list(args.traces), outputs


def cmd_simulate(args):
    cfg = S.SimConfig.from_json(args.config) if args.config else S.SimConfig()
    overrides = {}
    if args.workers is not None:
        overrides["n_workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.duration is not None:
        overrides["sim_duration_ns"] = int(round(args.duration))
    if overrides:
        cfg = replace(cfg, **overrides)
    if args.counterfactual:
        res = S.run_counterfactual_fast_reaction(cfg)
    else:
        res = S.run_fanin(cfg)
    outputs = res.write(args.out_dir)
    p = args.out_dir / "config.json"
    p.write_text(json.dumps(res.config.to_dict(), indent=2, sort_keys=True) + "\n")
    outputs.append(p)
    args.seed = cfg.seed
    if res.counts["packets_dropped"]:
        log.warning("%d packets dropped", res.counts["packets_dropped"])
    return ([args.config] if args.config else []), outputs


def cmd_ring_verify(args):
    if args.n < 1 or args.len < 0:
        raise ValueError("need n >= 1 and len >= 0")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    vectors = [rng.integers(-1000, 1000, size=args.len) for _ in range(args.n)]
    fault = 0 if args.inject_fault else None
    outputs, transfers = W.ring_allreduce_kernel(vectors, corrupt_transfer=fault)
    expected = np.sum(vectors, axis=0) if args.n else np.zeros(0)
    lines = [f"workers={args.n} length={args.len} transfers={len(transfers)}"]
    failure = None
    for w, out in enumerate(outputs):
        diff = np.nonzero(out != expected)[0]
        if len(diff):
            i = int(diff[0])
            failure = (f"FAIL worker {w + 1} element {i}: got {int(out[i])}, "
                       f"expected {int(expected[i])}")
            break
    per_worker = [sum(1 for t in transfers if t.src == w) for w in range(args.n)]
    if failure is None and any(c != 2 * (args.n - 1) for c in per_worker):
        failure = f"FAIL transfer counts {per_worker}"
    lines.append(failure or "PASS")
    report = args.out_dir / "ring_verify.txt"
    report.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if failure:
        raise InvariantViolation(failure)
    return [], [report]


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    common.add_argument("--bin", type=_seconds_to_ns, default=Fraction(1000),
                        help="bin width in seconds (default 1e-6)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="burstlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", parents=[common], help="burstiness metrics of a trace")
    a.add_argument("trace")
    a.add_argument("--lags", default="default",
                   help="'default', 'full', or comma-separated lags in seconds")
    a.add_argument("--utilizations", type=_fraction_list,
                   default=list(M.DEFAULT_UTILIZATIONS),
                   help="comma-separated utilizations in (0, 1] for the Bmax sweep")
    a.add_argument("--interval-utilizations", type=_fraction_list,
                   default=[Fraction(1, 20), Fraction(1, 2), Fraction(19, 20)],
                   help="utilizations for the interval-specific backlog")
    a.add_argument("--plot", action="store_true", help="also write metrics.svg")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("splice", parents=[common], help="replace a time interval of a trace")
    s.add_argument("trace")
    s.add_argument("--remove", type=_interval, required=True, metavar="START,END")
    s.add_argument("--source", type=_interval, required=True, metavar="START,END")
    s.add_argument("-o", "--output", type=Path, default=None)
    s.set_defaults(func=cmd_splice)

    g = sub.add_parser("generate", parents=[common], help="synthesize training traffic")
    g.add_argument("spec", help="workload spec JSON")
    g.set_defaults(func=cmd_generate)

    pt = sub.add_parser("potential", parents=[common], help="burstiness potential of flows")
    pt.add_argument("traces", nargs="+")
    pt.add_argument("--lags", default="default")
    pt.set_defaults(func=cmd_potential)

    sm = sub.add_parser("simulate", parents=[common], help="PFC/DCQCN fan-in simulation")
    sm.add_argument("config", nargs="?", default=None, help="simulation config JSON")
    sm.add_argument("--workers", type=int, default=None)
    sm.add_argument("--duration", type=_seconds_to_ns, default=None,
                    help="simulated time in seconds")
    sm.add_argument("--counterfactual", action="store_true",
                    help="senders react 10 us after the first mark")
    sm.set_defaults(func=cmd_simulate)

    rv = sub.add_parser("ring-verify", parents=[common], help="check the Ring Allreduce kernel")
    rv.add_argument("--n", type=int, default=4)
    rv.add_argument("--len", type=int, default=1000)
    rv.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    rv.set_defaults(func=cmd_ring_verify)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "potential" and len(args.traces) < 2:
        print("burstlab potential: need at least two traces", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        inputs, outputs = args.func(args)
        _write_manifest(args.out_dir, args.command, args, inputs, outputs, argv)
    except InvariantViolation as exc:
        print(f"burstlab {args.command}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except S.SimulationError as exc:
        print(f"burstlab {args.command}: simulation aborted: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, ValueError, OSError) as exc:
        print(f"burstlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
