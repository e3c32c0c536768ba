"""Command-line driver.

Every subcommand writes one CSV (with a ``# wfeff <version> config=<hash>
seed=<seed>`` comment line before the header) and prints a one-line summary.
Exit codes: 0 success, 1 invalid configuration, 2 runtime failure, 3 partial
result (interrupted run, or a sweep in which some cells failed).
"""
from __future__ import annotations

import argparse
import configparser
import itertools
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analytics import (
    FIXATION_CSV_HEADER,
    SibuyaDist,
    expected_fixation_time_m1_neutral,
    expected_fixation_time_numeric,
    fixation_curve_rows,
)
from .aseg import (
    DEFAULT_CEILING,
    AsegParams,
    count_study,
    pgf_values,
    simulate_graph,
    simulate_vertex_count,
    color_and_propagate,
    empirical_pmf,
    stationary_sample,
)
from .core import InvalidArgument, McSummary, RngSpec, as_fraction, derive_rng_stream
from .csvio import file_sha256, write_csv
from .diffusion import DiffusionSpec, absorption_study, simulate_path
from .discrete import (
    CSV_HEADER,
    DiscreteConfig,
    LeftoverChain,
    Rule,
    chebyshev_bound,
    concentration_probe,
    leftover_chain_stationary,
    leftover_distribution,
    leftover_overshoot_law,
    simulate_trajectory,
)
from .duality import (
    DEFAULT_GRID,
    REPORT_HEADER,
    SMALL_GRID,
    duality_grid_report,
    generator_duality_grid,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

# options that never influence results and stay out of the config hash
_NOT_CONFIG = {"out", "threads", "func", "command", "out_dir"}


class ConfigError(InvalidArgument):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# --------------------------------------------------------------------------
# value parsers


def count(text: str) -> int:
    """Integers written plainly or as ``1e5``."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return int(v)


def grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list."""
    if ":" in text:
        try:
            a, b, h = (float(p) for p in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:step")
        if h <= 0 or b < a:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}")
        n = int(round((b - a) / h))
        return [round(a + i * h, 12) for i in range(n + 1)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}")


def int_list(text: str) -> list[int]:
    return [count(p) for p in text.split(",") if p.strip()]


def _kappa(text: str, exact: bool):
    if exact and "/" not in text and text.strip() not in ("0", "1"):
        raise ConfigError(f"--kappa: rule M2 needs an exact a/b value, got {text!r}")
    if exact or "/" in text:
        try:
            return as_fraction(text)
        except InvalidArgument as exc:
            raise ConfigError(f"--kappa: {exc}")
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--kappa: cannot parse {text!r}")


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}


def _say(msg: str):
    print(msg, flush=True)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate_discrete(args) -> int:
    rule = Rule(args.rule)
    kappa = _kappa(args.kappa, rule is Rule.M2)
    cfg = DiscreteConfig(args.N, kappa, args.s, rule, args.x0, args.max_generations)
    traj = simulate_trajectory(cfg, derive_rng_stream(RngSpec(args.seed)))
    write_csv(args.out, CSV_HEADER, traj.csv_rows(), _config(args), args.seed)
    state = traj.absorbed_state.value if traj.absorbed_state else "Censored"
    _say(f"simulate-discrete: {len(traj.generations) - 1} generations, {state} -> {args.out}")
    return EXIT_OK


def _spec(args) -> DiffusionSpec:
    if args.variant == "m1":
        return DiffusionSpec.m1(_kappa(args.kappa, False), args.alpha)
    return DiffusionSpec.m2(_kappa(args.kappa, True), args.alpha, args.caseii_sum_from)


def cmd_simulate_diffusion(args) -> int:
    spec = _spec(args)
    if args.replicates:
        st = absorption_study(spec, args.x0, args.dt, args.replicates, RngSpec(args.seed), args.threads)
        rows = (
            (i, ("" if b < 0 else int(b)), repr(float(t)))
            for i, (b, t) in enumerate(zip(st.boundaries, st.times))
        )
        write_csv(args.out, ("replicate", "boundary", "time"), rows, _config(args), args.seed)
        _say(
            f"simulate-diffusion: {st.replicates} paths, P(hit 1)={st.fix_one.mean:.5f}, "
            f"mean time={st.time.mean:.5f} +- {st.time.se:.5f}, censored={st.censored} -> {args.out}"
        )
        return EXIT_OK
    if args.horizon is None and not args.until_absorption:
        raise ConfigError("--horizon or --until-absorption is required")
    path = simulate_path(
        spec, args.x0, args.dt, args.horizon, derive_rng_stream(RngSpec(args.seed)),
        until_absorption=args.until_absorption,
    )
    write_csv(args.out, ("t", "x"), path.csv_rows(), _config(args), args.seed)
    tail = f"absorbed at {path.absorbed[0].value} t={path.absorbed[1]:.4f}" if path.absorbed else "not absorbed"
    _say(f"simulate-diffusion: {path.values.size} points, {tail} -> {args.out}")
    return EXIT_OK


def cmd_fixation(args) -> int:
    spec = _spec(args)
    ys = args.grid_y
    if any(not 0 <= y <= 1 for y in ys):
        raise ConfigError("--grid-y values must lie in [0, 1]")
    if args.method == "monte_carlo":
        def rows():
            for i, y in enumerate(ys):
                st = absorption_study(spec, 1.0 - y, args.dt, args.replicates,
                                      RngSpec(args.seed, i), args.threads)
                p = 1.0 - st.fix_one.mean if st.fix_one.count else math.nan
                yield args.kappa, repr(spec.alpha), repr(y), repr(p), "monte_carlo"
        body = rows()
    else:
        body = fixation_curve_rows(spec, ys, args.method)
    write_csv(args.out, FIXATION_CSV_HEADER, body, _config(args), args.seed)
    _say(f"fixation: {len(ys)} points ({args.method}) -> {args.out}")
    return EXIT_OK


def cmd_fixation_time(args) -> int:
    spec = _spec(args)
    xs = args.grid_x

    def rows():
        for i, x in enumerate(xs):
            se = ""
            if args.method == "closed_form":
                if spec.alpha != 0 or args.variant != "m1":
                    raise ConfigError("the closed form covers the neutral M1 diffusion only")
                v = expected_fixation_time_m1_neutral(spec.kappa, x)
            elif args.method == "quadrature":
                v = expected_fixation_time_numeric(spec, x)
            else:
                st = absorption_study(spec, x, args.dt, args.replicates, RngSpec(args.seed, i), args.threads)
                v, se = st.time.mean, repr(st.time.se)
            yield args.kappa, repr(spec.alpha), repr(x), repr(float(v)), se, args.method

    write_csv(args.out, ("kappa", "alpha", "x", "mean_time", "se", "method"), rows(), _config(args), args.seed)
    _say(f"fixation-time: {len(xs)} points ({args.method}) -> {args.out}")
    return EXIT_OK


def cmd_aseg(args) -> int:
    params = AsegParams(args.n0, args.alpha, args.kappa, args.horizon, args.x)
    if args.mode == "count":
        path = simulate_vertex_count(params, derive_rng_stream(RngSpec(args.seed)), args.ceiling)
        write_csv(args.out, ("t", "z"), path.csv_rows(), _config(args), args.seed)
        extra = " (explosion guard hit)" if path.exploded else ""
        _say(f"aseg: {path.counts.size} events, Z_T={path.final}{extra} -> {args.out}")
    elif args.mode == "graph":
        rng = derive_rng_stream(RngSpec(args.seed))
        g = color_and_propagate(simulate_graph(params, rng, args.ceiling), args.x, rng)
        out = Path(args.out)
        vert = out.with_name(out.stem + ".vertices" + out.suffix)
        write_csv(out, ("parent_id", "child_id"), g.edge_rows(), _config(args), args.seed)
        write_csv(vert, ("id", "birth_time", "deactivation_time", "active_at_T", "type"),
                  g.vertex_rows(), _config(args), args.seed)
        _say(f"aseg: {g.n_vertices} vertices, {len(g.events)} events -> {out}, {vert}")
    else:
        st = count_study(params, [params.horizon], args.replicates, RngSpec(args.seed), args.threads,
                         args.ceiling, args.leap_above)
        s = McSummary.from_samples(pgf_values(st.counts[:, 0], params.x))
        rows = [(params.n0, repr(params.alpha), repr(params.kappa), repr(params.horizon), repr(params.x),
                 repr(s.mean), repr(s.se), int(st.exploded.sum()))]
        write_csv(args.out, ("n0", "alpha", "kappa", "horizon", "x", "pgf_mean", "pgf_se", "exploded"),
                  rows, _config(args), args.seed)
        _say(f"aseg: E[x^Z_T] = {s.mean:.6f} +- {s.se:.6f} -> {args.out}")
    return EXIT_OK


def cmd_duality_check(args) -> int:
    worst = generator_duality_grid()
    grid_def = {"default": DEFAULT_GRID, "small": SMALL_GRID}[args.grid]
    cells = duality_grid_report(grid_def, args.replicates, args.dt, RngSpec(args.seed), args.threads)
    write_csv(args.out, REPORT_HEADER, (c.row() for c in cells), _config(args), args.seed)
    flagged = sum(1 for c in cells if c.flag == "z_gt_4")
    _say(
        f"duality-check: generator max |A-Q| = {worst:.3g}; {len(cells)} cells, "
        f"{flagged} with |z| > 4 -> {args.out}"
    )
    return EXIT_OK


def cmd_leftover(args) -> int:
    kappa = _kappa(args.kappa, True)
    cfg = DiscreteConfig(args.N, kappa, 0.0, Rule.M2, args.x)
    emp = leftover_distribution(cfg, args.x, args.replicates, derive_rng_stream(RngSpec(args.seed)))
    stat = leftover_chain_stationary(LeftoverChain.from_kappa(kappa, args.x))
    law = leftover_overshoot_law(kappa, args.x)
    b = kappa.denominator
    rows = ((j, str(Fraction(j, b)), repr(float(emp[j])), repr(float(stat[j])), repr(float(law[j])))
            for j in range(b))
    write_csv(args.out, ("j", "leftover", "empirical", "chain_stationary", "overshoot_law"),
              rows, _config(args), args.seed)
    tv = 0.5 * float(np.abs(emp - 1.0 / b).sum())
    _say(f"leftover: TV(empirical, uniform) = {tv:.4f} -> {args.out}")
    return EXIT_OK


def cmd_concentration(args) -> int:
    rule = Rule(args.rule)
    kappa = _kappa(args.kappa, rule is Rule.M2)

    def rows():
        for i, n in enumerate(args.N):
            cfg = DiscreteConfig(n, kappa, 0.0, rule, args.x)
            p = concentration_probe(cfg, args.x, args.a, args.replicates,
                                    derive_rng_stream(RngSpec(args.seed, i)))
            yield n, repr(p), repr(chebyshev_bound(n, args.a))

    write_csv(args.out, ("N", "probability", "chebyshev_bound"), rows(), _config(args), args.seed)
    _say(f"concentration: {len(args.N)} sizes -> {args.out}")
    return EXIT_OK


def cmd_sibuya(args) -> int:
    dist = SibuyaDist.from_alpha(args.alpha)
    ks = np.arange(1, args.kmax + 1)
    pmf = dist.pmf(ks)
    header = ["k", "pmf"]
    emp = None
    if args.simulate:
        z = stationary_sample(args.alpha, args.horizon, args.n0, args.replicates,
                              RngSpec(args.seed), args.threads)
        emp = empirical_pmf(z, args.kmax)
        header.append("empirical")
    rows = (
        [int(k), repr(float(p))] + ([repr(float(emp[i]))] if emp is not None else [])
        for i, (k, p) in enumerate(zip(ks, pmf))
    )
    write_csv(args.out, header, rows, _config(args), args.seed)
    tail = ""
    if emp is not None:
        tail = f", TV on 1..{args.kmax} = {0.5 * float(np.abs(emp - pmf).sum()):.4f}"
    _say(f"sibuya: gamma = {dist.gamma}{tail} -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# sweeps


def _cell_seed(master: int, i: int) -> int:
    seq = np.random.SeedSequence(master, spawn_key=(i,))
    return int(seq.generate_state(1, np.uint64)[0])


def cmd_sweep(args) -> int:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(args.config):
        raise ConfigError(f"cannot read config file {args.config!r}")
    if not cp.has_section("sweep") or "command" not in cp["sweep"]:
        raise ConfigError("config needs a [sweep] section with a 'command' key")
    command = cp["sweep"]["command"].strip()
    if command not in COMMANDS or command == "sweep":
        raise ConfigError(f"[sweep] command: unknown or not sweepable: {command!r}")
    try:
        master = int(cp["sweep"].get("seed", "0"))
    except ValueError:
        raise ConfigError("[sweep] seed must be an integer")
    params = dict(cp["params"]) if cp.has_section("params") else {}
    keys = sorted(params)
    values = [[v.strip() for v in params[k].split(",")] if ":" not in params[k] else [params[k].strip()]
              for k in keys]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parser = build_parser()
    manifest = []
    failed = 0
    for i, combo in enumerate(itertools.product(*values)):
        seed = _cell_seed(master, i)
        out = out_dir / f"cell_{i:04d}.csv"
        argv = [command]
        for k, v in zip(keys, combo):
            flag = "--" + k
            if v.lower() in ("true", "yes"):
                argv.append(flag)
            elif v.lower() not in ("false", "no"):
                argv += [flag, v]
        argv += ["--seed", str(seed), "--out", str(out)]
        if args.threads:
            argv += ["--threads", str(args.threads)]
        label = ";".join(f"{k}={v}" for k, v in zip(keys, combo))
        try:
            ns = parser.parse_args(argv)
            ns.func(ns)
            manifest.append((i, label, seed, out.name, file_sha256(out), "ok"))
        except Exception as exc:  # a failed cell is recorded and the sweep goes on
            failed += 1
            msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            manifest.append((i, label, seed, out.name, "", msg))
    write_csv(out_dir / "manifest.csv", ("cell", "params", "seed", "output", "sha256", "status"),
              manifest, {"config": Path(args.config).read_text(), "command": command}, master)
    _say(f"sweep: {len(manifest)} cells, {failed} failed -> {out_dir / 'manifest.csv'}")
    return EXIT_PARTIAL if failed else EXIT_OK


COMMANDS = {
    "simulate-discrete": cmd_simulate_discrete,
    "simulate-diffusion": cmd_simulate_diffusion,
    "fixation": cmd_fixation,
    "fixation-time": cmd_fixation_time,
    "aseg": cmd_aseg,
    "duality-check": cmd_duality_check,
    "leftover": cmd_leftover,
    "concentration": cmd_concentration,
    "sibuya": cmd_sibuya,
    "sweep": cmd_sweep,
}


def _unit(text: str) -> float:
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return v


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"{text} is negative")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wfeff", description="Wright-Fisher model with efficiency: experiments")
    p.add_argument("--version", action="version", version=f"wfeff {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_default):
        sp.add_argument("--seed", type=count, default=0, help="master seed (64-bit)")
        sp.add_argument("--out", default=out_default, help="output CSV path")
        # single-stream subcommands accept it too, so sweeps can pass it blindly
        sp.add_argument("--threads", type=count, default=None,
                        help="worker threads (default: $WFEFF_THREADS or 1)")

    def diffusion_opts(sp, variant_flag="--variant"):
        sp.add_argument(variant_flag, dest="variant", choices=("m1", "m2"), default="m1")
        sp.add_argument("--kappa", default="0.3", help="decimal or a/b (a/b required for m2)")
        sp.add_argument("--alpha", type=_nonneg, default=0.0)
        sp.add_argument("--caseii-sum-from", type=int, choices=(1, 2), default=2)

    sp = sub.add_parser("simulate-discrete", help="one discrete trajectory")
    sp.add_argument("--rule", choices=("m1", "m2"), default="m1")
    sp.add_argument("--N", type=count, required=True)
    sp.add_argument("--kappa", default="3/10")
    sp.add_argument("--s", type=float, default=0.0)
    sp.add_argument("--x0", type=_unit, default=0.5)
    sp.add_argument("--max-generations", type=count, default=None)
    common(sp, "trajectory.csv")
    sp.set_defaults(func=cmd_simulate_discrete)

    sp = sub.add_parser("simulate-diffusion", help="a diffusion path or an absorption study")
    diffusion_opts(sp)
    sp.add_argument("--x0", type=_unit, default=0.5)
    sp.add_argument("--dt", type=_positive, default=1e-3)
    sp.add_argument("--horizon", type=_positive, default=None)
    sp.add_argument("--until-absorption", action="store_true")
    sp.add_argument("--replicates", type=count, default=0,
                    help="if positive, run an absorption study instead of one path")
    common(sp, "diffusion.csv")
    sp.set_defaults(func=cmd_simulate_diffusion)

    sp = sub.add_parser("fixation", help="inefficient fixation probability curve")
    diffusion_opts(sp, "--rule")
    sp.add_argument("--grid-y", type=grid, default=grid("0:1:0.05"))
    sp.add_argument("--method", choices=("closed_form", "quadrature", "monte_carlo"), default="closed_form")
    sp.add_argument("--replicates", type=count, default=10_000)
    sp.add_argument("--dt", type=_positive, default=1e-4)
    common(sp, "fixation.csv")
    sp.set_defaults(func=cmd_fixation)

    sp = sub.add_parser("fixation-time", help="expected absorption time")
    diffusion_opts(sp, "--rule")
    sp.add_argument("--grid-x", type=grid, default=grid("0.1:0.9:0.1"))
    sp.add_argument("--method", choices=("closed_form", "quadrature", "monte_carlo"), default="closed_form")
    sp.add_argument("--replicates", type=count, default=10_000)
    sp.add_argument("--dt", type=_positive, default=1e-4)
    common(sp, "fixation_time.csv")
    sp.set_defaults(func=cmd_fixation_time)

    sp = sub.add_parser("aseg", help="ASEG count path, typed graph or pgf estimate")
    sp.add_argument("--mode", choices=("count", "graph", "pgf"), default="count")
    sp.add_argument("--n0", type=count, default=2)
    sp.add_argument("--alpha", type=_nonneg, default=0.0)
    sp.add_argument("--kappa", type=_unit, default=0.5)
    sp.add_argument("--horizon", type=_nonneg, default=1.0)
    sp.add_argument("--x", type=_unit, default=0.5)
    sp.add_argument("--replicates", type=count, default=10_000)
    sp.add_argument("--ceiling", type=count, default=DEFAULT_CEILING)
    sp.add_argument("--leap-above", type=count, default=None)
    common(sp, "aseg.csv")
    sp.set_defaults(func=cmd_aseg)

    sp = sub.add_parser("duality-check", help="generator identity and Monte Carlo duality grid")
    sp.add_argument("--grid", choices=("default", "small"), default="default")
    sp.add_argument("--replicates", type=count, default=100_000)
    sp.add_argument("--dt", type=_positive, default=1e-4)
    common(sp, "duality.csv")
    sp.set_defaults(func=cmd_duality_check)

    sp = sub.add_parser("leftover", help="leftover resource law under rule M2")
    sp.add_argument("--kappa", default="3/10")
    sp.add_argument("--N", type=count, default=10_000)
    sp.add_argument("--x", type=_unit, default=0.5)
    sp.add_argument("--replicates", type=count, default=10_000)
    common(sp, "leftover.csv")
    sp.set_defaults(func=cmd_leftover)

    sp = sub.add_parser("concentration", help="generation-size concentration probe")
    sp.add_argument("--rule", choices=("m1", "m2"), default="m1")
    sp.add_argument("--kappa", default="3/10")
    sp.add_argument("--N", type=int_list, default=[1000, 10_000, 100_000])
    sp.add_argument("--x", type=_unit, default=0.5)
    sp.add_argument("--a", type=float, default=-0.4)
    sp.add_argument("--replicates", type=count, default=1000)
    common(sp, "concentration.csv")
    sp.set_defaults(func=cmd_concentration)

    sp = sub.add_parser("sibuya", help="Sibuya pmf, optionally against simulated Z_T")
    sp.add_argument("--alpha", type=_nonneg, default=0.25)
    sp.add_argument("--kmax", type=count, default=10)
    sp.add_argument("--simulate", action="store_true")
    sp.add_argument("--horizon", type=_positive, default=200.0)
    sp.add_argument("--n0", type=count, default=5)
    sp.add_argument("--replicates", type=count, default=10_000)
    common(sp, "sibuya.csv")
    sp.set_defaults(func=cmd_sibuya)

    sp = sub.add_parser("sweep", help="run a subcommand over a parameter cross product")
    sp.add_argument("--config", required=True, help="INI file with [sweep] and [params]")
    sp.add_argument("--out-dir", default="sweep_out")
    sp.add_argument("--threads", type=count, default=None)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"wfeff: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InvalidArgument as exc:
        print(f"wfeff {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        print(f"wfeff {args.command}: interrupted; partial output left as *.partial", file=sys.stderr)
        return EXIT_PARTIAL
    except Exception as exc:
        print(f"wfeff {args.command}: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
