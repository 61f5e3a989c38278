"""``cpasim`` command-line interface.

Subcommands: heatmap, zn-scaling, star-delta, oracle-check, block, percolation.
Every flag may also come from a flat ``key=value`` file given with
``--config``; flags on the command line win.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import experiments as ex
from .core import Params, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_CHECK = 4


class CheckFailure(RuntimeError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", ",").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", ",").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat key=value file with flag defaults")
    p.add_argument("--topology", choices=("cycle", "star", "path"))
    p.add_argument("--n", type=_ints, help="size or comma-separated sizes")
    p.add_argument("--lambda", dest="lam", type=_floats, help="infection rate(s)")
    p.add_argument("--alpha", type=_floats, help="avoidance rate(s)")
    p.add_argument("--replicas", type=int)
    p.add_argument("--tmax", type=float)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", type=Path, help="summary CSV path")
    p.add_argument("--records", type=Path, help="per-replica CSV path (where applicable)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpasim", description="Contact process with avoidance experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    h = sub.add_parser("heatmap", parents=[_common()], help="survival fraction on the cycle per (lambda, alpha)")
    h.set_defaults(topology="cycle", n=[500], replicas=30)
    h.add_argument("--large-alpha-n", type=int, default=ex.LARGE_ALPHA_N)

    z = sub.add_parser("zn-scaling", parents=[_common()], help="extinction-time quantiles on cycles")
    z.set_defaults(topology="cycle", n=[100, 200, 400, 800, 1600, 3200], lam=[1.0], alpha=[1.0],
                   replicas=100, tmax=1e4)

    s = sub.add_parser("star-delta", parents=[_common()], help="star survival-time exponent")
    s.set_defaults(topology="star", n=[256, 512, 1024, 2048, 4096, 8192], lam=[1.0], alpha=[1.0],
                   replicas=200)
    s.add_argument("--engine", choices=("kl", "reduced", "full"), default="kl")
    s.add_argument("--check", action="store_true", help="exit 4 unless the slope is within 20%% of the exponent")

    o = sub.add_parser("oracle-check", parents=[_common()], help="Monte Carlo vs exact mean extinction time")
    o.set_defaults(topology="path", n=[1, 2, 3], lam=list(ex.ORACLE_GRID), alpha=list(ex.ORACLE_GRID),
                   replicas=100_000)
    o.add_argument("--tolerance", type=float, default=3.0, help="allowed |error| in standard errors")

    b = sub.add_parser("block", parents=[_common()], help="good-block probability per start class")
    b.set_defaults(lam=[1000.0], alpha=[1.0], replicas=4000)
    b.add_argument("--tau", type=float, help="block duration (default: staged recipe)")
    b.add_argument("--mode", choices=("closed", "hostile", "both"), default="both")

    pc = sub.add_parser("percolation", parents=[_common()], help="oriented site percolation survival and edge speed")
    pc.set_defaults(replicas=1000)
    pc.add_argument("--p", type=_floats, default=[0.8, 0.9, 0.95, 1.0])
    pc.add_argument("--width", type=int, default=128)
    pc.add_argument("--height", type=int, default=128)
    parser.commands = {"heatmap": h, "zn-scaling": z, "star-delta": s, "oracle-check": o, "block": b,
                       "percolation": pc}
    return parser


def load_config(path: Path) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


_KEY_ALIASES = {"lambda": "lam"}


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        cfg = load_config(args.config)
        sub = parser.commands[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            dest = _KEY_ALIASES.get(k, k)
            if dest not in known or dest in ("config", "help"):
                raise ValidationError(f"unknown config key {k!r}")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = v.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    defaults[dest] = action.type(v)
                except argparse.ArgumentTypeError as exc:
                    raise ValidationError(str(exc)) from exc
            else:
                defaults[dest] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    skip = {"config", "out", "records", "threads", "timing"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
            if k not in skip and v is not None}


def _write(path: Optional[Path], text: str) -> None:
    if path is None:
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


def _write_records(args, records, config, notes=()):
    if args.records is not None:
        _write(args.records, ex.render_csv(ex.RUN_COLUMNS, (r.row() for r in records), config, notes))


def _single(values, name):
    if values is None or len(values) != 1:
        raise ValidationError(f"--{name} takes exactly one value here")
    return values[0]


def _validate_common(args):
    if args.replicas is not None and args.replicas < 1:
        raise ValidationError("replicas must be >= 1")
    if args.tmax is not None and not args.tmax > 0:
        raise ValidationError("tmax must be positive")
    if args.threads < 1:
        raise ValidationError("threads must be >= 1")


def cmd_heatmap(args) -> int:
    if args.topology != "cycle":
        raise ValidationError("heatmap runs on the cycle only")
    lams = args.lam if args.lam is not None else list(ex.HEATMAP_LAMBDAS)
    alphas = args.alpha if args.alpha is not None else list(ex.HEATMAP_ALPHAS)
    n = _single(args.n, "n")
    res = ex.heatmap(n, lams, alphas, args.replicas, args.tmax, args.seed, args.threads,
                     args.large_alpha_n, args.timing)
    cfg = resolved_config(args)
    crit = [f"critical_lambda(alpha={ex.fmt(a)})={ex.fmt(res.critical_lambda(a))}" for a in alphas]
    notes = res.notes + ["survival = alive at t_max; default t_max = 20 n"] + crit
    rows = [(c.lam, c.alpha, c.n, c.t_max, c.replicas, c.survival) for c in res.cells]
    _write(args.out, ex.render_csv(("lambda", "alpha", "n", "t_max", "replicas", "survival_fraction"),
                                   rows, cfg, notes))
    _write_records(args, res.records, cfg, res.notes)
    for note in notes:
        print(note)
    for c in res.cells:
        print(f"lambda={c.lam:<8g} alpha={c.alpha:<6g} n={c.n:<5d} survival={c.survival:.3f}")
    return EXIT_OK


def cmd_zn_scaling(args) -> int:
    if args.topology != "cycle":
        raise ValidationError("zn-scaling runs on the cycle only")
    p = Params(_single(args.lam, "lambda"), _single(args.alpha, "alpha"))
    res = ex.zn_scaling(p, args.n, args.replicas, args.tmax, args.seed, args.threads, args.timing)
    cfg = resolved_config(args)
    notes = [f"log_fit: {res.log_fit}", f"exp_fit: {res.exp_fit}", f"model={res.model}"]
    rows = [(r.n, r.replicas, r.censored, r.median, r.p90) for r in res.rows]
    _write(args.out, ex.render_csv(("n", "replicas", "censored", "median_tau", "p90_tau"), rows, cfg, notes))
    _write_records(args, res.records, cfg)
    for r in res.rows:
        print(f"n={r.n:<6d} median={r.median:<12.6g} p90={r.p90:<12.6g} censored={r.censored}/{r.replicas}")
    for note in notes:
        print(note)
    return EXIT_OK


def cmd_star_delta(args) -> int:
    if args.topology != "star":
        raise ValidationError("star-delta runs on the star only")
    p = Params(_single(args.lam, "lambda"), _single(args.alpha, "alpha"))
    res = ex.star_delta(p, args.n, args.replicas, args.seed, args.engine, args.threads)
    cfg = resolved_config(args)
    if res.exponential_regime:
        print("alpha = 0: exponential regime, no polynomial fit")
        _write(args.out, ex.render_csv(("n", "median_tau"), [], cfg, ["exponential_regime=true"]))
        return EXIT_OK
    notes = [f"engine={res.engine}", f"delta_closed_form={ex.fmt(res.delta)}", f"fit: {res.fit}"]
    rows = [(r.n, r.replicas, r.deaths, r.median, r.work) for r in res.rows]
    _write(args.out, ex.render_csv(("n", "replicas", "deaths_observed", "median_tau", "work"), rows, cfg, notes))
    for r in res.rows:
        print(f"n={r.n:<6d} median={r.median:.6g}")
    for note in notes:
        print(note)
    if args.check and not (res.fit is not None and res.relative_error() <= 0.2):
        print("CHECK FAILED: slope outside 20% of the closed-form exponent")
        return EXIT_CHECK
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    kind = args.topology
    graphs = [(kind, n) for n in args.n]
    rows = ex.oracle_check(graphs, args.lam, args.alpha, args.replicas, args.seed, args.threads, args.tolerance)
    cfg = resolved_config(args)
    out = [(r.graph, r.lam, r.alpha, r.exact, r.mc_mean, r.se, r.z, r.passed) for r in rows]
    _write(args.out, ex.render_csv(("graph", "lambda", "alpha", "exact", "mc_mean", "se", "z", "pass"), out, cfg))
    fails = 0
    for r in rows:
        fails += not r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {r.graph:<6s} lambda={r.lam:<4g} alpha={r.alpha:<4g} "
              f"exact={r.exact:.6f} mc={r.mc_mean:.6f} z={r.z:.2f}")
    print(f"{len(rows) - fails}/{len(rows)} cells within {args.tolerance:g} SE")
    return EXIT_CHECK if fails else EXIT_OK


def cmd_block(args) -> int:
    p = Params(_single(args.lam, "lambda"), _single(args.alpha, "alpha"))
    modes = ("closed", "hostile") if args.mode == "both" else (args.mode,)
    tau, rows = ex.block_table(p, args.tau, args.replicas, modes, args.seed, args.threads)
    cfg = resolved_config(args)
    out = [(r.start, r.mode, tau, r.replicas, r.estimate, r.se) for r in rows]
    _write(args.out, ex.render_csv(("start", "mode", "tau", "replicas", "good_probability", "se"), out, cfg))
    print(f"tau={tau:.6g}")
    for r in rows:
        print(f"{r.start} {r.mode:<8s} {r.estimate:.4f} +/- {r.se:.4f}")
    return EXIT_OK


def cmd_percolation(args) -> int:
    rows = ex.percolation_table(args.p, args.width, args.height, args.replicas, args.seed)
    cfg = resolved_config(args)
    out = [(r.p, r.width, r.height, r.survival, r.survival_se, r.speed, r.speed_low, r.speed_high,
            r.speed_survivors) for r in rows]
    _write(args.out, ex.render_csv(("p", "width", "height", "survival", "survival_se", "edge_speed",
                                    "speed_low", "speed_high", "speed_survivors"), out, cfg))
    for r in rows:
        print(f"p={r.p:<5g} survival={r.survival:.4f} speed={r.speed:.4f} [{r.speed_low:.4f}, {r.speed_high:.4f}]")
    return EXIT_OK


COMMANDS = {"heatmap": cmd_heatmap, "zn-scaling": cmd_zn_scaling, "star-delta": cmd_star_delta,
            "oracle-check": cmd_oracle_check, "block": cmd_block, "percolation": cmd_percolation}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        _validate_common(args)
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_VALIDATION
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
