"""Command-line entry point.

    impactflow solve       --config run.ini --out DIR
    impactflow simulate    --config run.ini --out DIR --seed 7
    impactflow reproduce   fixed-gamma-phi10 --out DIR
    impactflow compare     --config run.ini --out DIR
    impactflow closed-form --config run.ini

Configs are INI files (``key = value`` inside ``[section]``); every key is
checked against the schema below before anything is computed.  Exit codes:
0 success, 2 invalid config, 3 quadratic impact not convex
(``gamma < alpha1*beta1/8``), 4 inadmissible strategy, 5 unknown scenario.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from impactflow import __version__
from impactflow.dp_solver import (
    ConditionDError,
    DpParams,
    extract_strategy,
    solve,
    total_mi_cost,
    write_solution_csv,
    write_strategy_csv,
)
from impactflow.experiments import (
    SCENARIOS,
    compare_random_vs_deterministic,
    random_admissible_strategies,
    run_scenario,
    write_rows,
)
from impactflow.impact_model import ImpactSpec, j_operator, linear_value
from impactflow.levy_noise import SubordinatorSpec
from impactflow.market_sim import (
    InadmissibleStrategyError,
    MarketSpec,
    Strategy,
    mc_expected_utility,
    near_block_strategy,
)

log = logging.getLogger("impactflow")

EXIT_CONFIG = 2
EXIT_CONDITION_D = 3
EXIT_INADMISSIBLE = 4
EXIT_UNKNOWN_SCENARIO = 5


class ConfigError(ValueError):
    pass


def _nonneg(x):
    return x >= 0


def _pos(x):
    return x > 0


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# section -> key -> (parser, default, check, description of the check)
SCHEMA = {
    "market": {
        "sigma": (float, 0.0, _nonneg, ">= 0"),
        "mu_tilde": (float, 0.05, _nonneg, ">= 0"),
        "bound": (float, None, _pos, "> 0"),
    },
    "impact": {
        "p": (int, 2, lambda v: v in (1, 2), "1 or 2"),
        "alpha0": (float, 0.01, _pos, "> 0"),
    },
    "noise": {
        "gamma": (float, 1.0, _nonneg, ">= 0"),
        "alpha1": (float, 0.0, _nonneg, ">= 0"),
        "beta1": (float, 2.0, _pos, "> 0"),
    },
    "state": {
        "w": (float, 0.0, None, ""),
        "phi0": (float, 1.0, _nonneg, ">= 0"),
        "s": (float, 1.0, _pos, "> 0"),
        "t": (float, 1.0, lambda v: 0 < v <= 1, "in (0, 1]"),
    },
    "dp": {
        "n": (int, 500, lambda v: v >= 1, ">= 1"),
        "m": (int, 2000, lambda v: v >= 2, ">= 2"),
        "phi_max": (float, None, _pos, "> 0"),
        "refine": (_bool, True, None, ""),
    },
    "mc": {
        "paths": (int, 10_000, lambda v: v >= 1, ">= 1"),
        "steps": (int, 1000, lambda v: v >= 1, ">= 1"),
        "mode": (_choice("random", "deterministic"), "random", None, ""),
        "strategy": (_choice("near-block", "constant", "file"), "near-block", None, ""),
        "psi": (float, None, _nonneg, ">= 0"),
        "delta": (float, 1e-3, _pos, "> 0"),
        "rate": (float, None, _nonneg, ">= 0"),
        "strategy_file": (str, None, None, ""),
        "cash_rule": (_choice("left", "bridge"), "left", None, ""),
    },
    "compare": {
        "strategies": (int, 50, lambda v: v >= 1, ">= 1"),
        "intervals": (int, 10, lambda v: v >= 1, ">= 1"),
    },
    "io": {
        "plots": (_bool, False, None, ""),
        "values": (_choice("all", "final"), "all", None, ""),
    },
    "run": {
        "seed": (int, 0, _nonneg, ">= 0"),
    },
}


def load_config(path: str | os.PathLike | None) -> dict:
    """Parse and validate a config file; missing keys take their defaults."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    cfg = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv, _, check, desc = SCHEMA[section][key]
            try:
                value = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: invalid value {raw!r} ({exc})") from exc
            if isinstance(value, float) and not math.isfinite(value):
                raise ConfigError(f"{section}.{key}: must be finite")
            if check is not None and not check(value):
                raise ConfigError(f"{section}.{key}: must be {desc}, got {raw.strip()}")
            cfg[section][key] = value
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    lines = [command]
    for sec in sorted(cfg):
        for key in sorted(cfg[sec]):
            lines.append(f"{sec}.{key}={cfg[sec][key]!r}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def _header(command, cfg):
    return [f"impactflow {__version__}", f"config_hash {config_hash(command, cfg)}",
            f"seed {cfg['run']['seed']}"]


def _build_specs(cfg):
    try:
        market = MarketSpec.from_mu_tilde(cfg["market"]["mu_tilde"], cfg["market"]["sigma"],
                                          cfg["market"]["bound"])
        impact = ImpactSpec(cfg["impact"]["p"], cfg["impact"]["alpha0"])
        noise = SubordinatorSpec(cfg["noise"]["gamma"], cfg["noise"]["alpha1"], cfg["noise"]["beta1"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return market, impact, noise


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return repr(float(x))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(cfg, args) -> int:
    _, impact, noise = _build_specs(cfg)
    if impact.p != 2:
        raise ConfigError("impact.p: solve requires p = 2 (use closed-form for p = 1)")
    st, dp = cfg["state"], cfg["dp"]
    phi0 = st["phi0"]
    phi_max = dp["phi_max"] if dp["phi_max"] is not None else (phi0 if phi0 > 0 else 1.0)
    if phi0 > phi_max:
        raise ConfigError("dp.phi_max: must be >= state.phi0")
    try:
        params = DpParams.for_horizon(dp["n"], st["t"], cfg["market"]["mu_tilde"], impact, noise,
                                      phi_max, m=dp["m"], refine=dp["refine"])
    except ConditionDError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sol = solve(params)
    strategy, holdings = extract_strategy(sol, phi0)
    out = _out_dir(args)
    header = _header("solve", cfg)
    if cfg["io"]["values"] == "final":
        sol_rows = [(params.k_max, float(p), float(f), float(q))
                    for p, f, q in zip(sol.grid, sol.value[-1], sol.policy[-1])]
        write_rows(out / "values.csv", header, ["k", "phi", "f", "psi_star"], sol_rows)
    else:
        write_solution_csv(out / "values.csv", sol, header)
    write_strategy_csv(out / "strategy.csv", strategy, holdings, header)
    f = float(sol.f(params.k_max, phi0))
    tc = total_mi_cost(f, phi0, 1.0) if phi0 > 0 and f > 0 else None
    t = params.k_max / params.n
    print(f"f({t!r}, {phi0!r}) = {_fmt(f)}")
    print(f"value = {_fmt(st['w'] + st['s'] * f)}")
    print(f"TC({phi0!r}) = {_fmt(tc)}")
    print(f"terminal_holdings = {_fmt(holdings[-1])}")
    return 0


def _read_strategy_file(path) -> Strategy:
    """CSV with columns ``t`` (interval end) and ``zeta``; ``#`` lines are skipped."""
    try:
        with open(path) as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        ends = np.array([float(r["t"]) for r in rows])
        rates = np.array([float(r["zeta"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"mc.strategy_file: cannot read strategy ({exc})") from exc
    if ends.size and ends[0] == 0.0:
        # strategy.csv from `solve` repeats the first rate at t = 0
        ends, rates = ends[1:], rates[1:]
    return Strategy(np.concatenate([[0.0], ends]), rates)


def _strategy_from_config(cfg) -> Strategy:
    mc, st = cfg["mc"], cfg["state"]
    kind = mc["strategy"]
    if kind == "near-block":
        psi = st["phi0"] if mc["psi"] is None else mc["psi"]
        try:
            return near_block_strategy(psi, mc["delta"], st["t"])
        except ValueError as exc:
            raise ConfigError(f"mc.delta: {exc}") from exc
    if kind == "constant":
        rate = st["phi0"] / st["t"] if mc["rate"] is None else mc["rate"]
        return Strategy.constant(rate, st["t"])
    if mc["strategy_file"] is None:
        raise ConfigError("mc.strategy_file: required when mc.strategy = file")
    return _read_strategy_file(mc["strategy_file"])


def cmd_simulate(cfg, args) -> int:
    market, impact, noise = _build_specs(cfg)
    st, mc = cfg["state"], cfg["mc"]
    strategy = _strategy_from_config(cfg)
    strategy.check_admissible(st["phi0"])
    strategy.step_rates(mc["steps"])
    seed = cfg["run"]["seed"]
    est = mc_expected_utility(market, impact, noise, strategy, mc["steps"], mc["mode"], paths=mc["paths"],
                              seed=seed, w=st["w"], phi0=st["phi0"], s=st["s"], cash_rule=mc["cash_rule"],
                              threads=args.threads)
    lines = [
        f"estimate = {_fmt(est.estimate)}",
        f"std_error = {_fmt(est.std_error)}",
        f"paths = {est.paths}",
        f"seed = {est.seed}",
    ]
    if impact.p == 1 and mc["strategy"] == "near-block":
        psi = st["phi0"] if mc["psi"] is None else mc["psi"]
        if psi == st["phi0"]:
            closed = linear_value(st["w"], st["phi0"], st["s"], noise.gamma, impact.alpha0)
            diff = abs(est.estimate - closed)
            ok = not math.isnan(est.std_error) and diff <= 3.0 * est.std_error
            lines += [f"closed_form = {_fmt(closed)}", f"abs_diff = {_fmt(diff)}",
                      f"within_3se = {str(ok).lower()}"]
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out is not None:
        out = _out_dir(args)
        with open(out / "report.txt", "w") as fh:
            for line in _header("simulate", cfg):
                fh.write(f"# {line}\n")
            fh.write(report)
    return 0


def cmd_compare(cfg, args) -> int:
    market, impact, noise = _build_specs(cfg)
    st, mc, cmp_ = cfg["state"], cfg["mc"], cfg["compare"]
    seed = cfg["run"]["seed"]
    strategies = random_admissible_strategies(cmp_["strategies"], st["phi0"], st["t"],
                                              np.random.default_rng(seed), cmp_["intervals"])
    rows = compare_random_vs_deterministic(strategies, market, impact, noise, mc["paths"], seed,
                                           mc["steps"], st["phi0"], st["w"], st["s"], args.threads)
    out = _out_dir(args)
    write_rows(out / "comparison.csv", _header("compare", cfg),
               ["strategy_id", "mc_random", "mc_random_se", "deterministic_value",
                "analytic_random", "analytic_deterministic", "inequality_holds"],
               [(r.strategy_id, r.mc_random, r.mc_random_se, r.deterministic_value, r.analytic_random,
                 r.analytic_deterministic, str(r.inequality_holds).lower()) for r in rows])
    held = sum(r.inequality_holds for r in rows)
    print(f"strategies = {len(rows)}")
    print(f"inequality_holds = {held}/{len(rows)}")
    return 0


def cmd_closed_form(cfg, args) -> int:
    _, impact, noise = _build_specs(cfg)
    if impact.p != 1:
        raise ConfigError("impact.p: closed-form values exist only for p = 1")
    st = cfg["state"]
    value = linear_value(st["w"], st["phi0"], st["s"], noise.gamma, impact.alpha0)
    ju = j_operator(lambda w, phi, s: w, st["w"], st["phi0"], st["s"], noise.gamma * impact.h_inf)
    proceeds = value - st["w"]
    tc = total_mi_cost(proceeds, st["phi0"], st["s"]) if st["phi0"] > 0 and proceeds > 0 else None
    print(f"value = {_fmt(value)}")
    print(f"j_operator = {_fmt(ju)}")
    print(f"TC = {_fmt(tc)}")
    return 0


def cmd_reproduce(name, args) -> int:
    if name not in SCENARIOS:
        sys.stderr.write(f"unknown scenario {name!r}; valid names: {', '.join(sorted(SCENARIOS))}\n")
        return EXIT_UNKNOWN_SCENARIO
    sc = SCENARIOS[name]
    seed = args.seed if args.seed is not None else 0
    result = run_scenario(sc, _out_dir(args), seed=seed, threads=args.threads, plots=args.plots)
    if result.tc:
        print(f"{'alpha1':>8} {'phi0':>8} {'gamma':>10} {'beta1':>10} {'value':>12} {'tc':>10} {'phi_t':>10}")
        for a1, phi0, gamma, beta1, value, tc in result.tc:
            term = result.trajectories.get((a1, phi0))
            print(f"{a1:8g} {phi0:8g} {gamma:10.6f} {beta1:10.6f} {value:12.6f} {tc:10.6f} "
                  f"{(term[-1] if term is not None else float('nan')):10.4f}")
    for a1, phi0, est, se, closed in result.mc:
        print(f"alpha1={a1:g} phi0={phi0:g} estimate={est!r} se={se!r} closed_form={closed!r}")
    if result.comparison:
        held = sum(r.inequality_holds for r in result.comparison)
        print(f"inequality_holds = {held}/{len(result.comparison)}")
    for path in result.files:
        print(f"wrote {path}")
    return 0


def _threads(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("IMPACTFLOW_THREADS")
    if env:
        try:
            n = int(env)
            if n >= 1:
                return n
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impactflow", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"impactflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_out=True):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", default="out" if need_out else None, help="output directory")
        p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
        p.add_argument("--threads", type=int, help="worker threads (default: $IMPACTFLOW_THREADS or all cores)")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("solve", help="dynamic program for quadratic impact"))
    common(sub.add_parser("simulate", help="Monte Carlo value of one strategy"), need_out=False)
    rep = sub.add_parser("reproduce", help="run a named reproduction scenario")
    rep.add_argument("scenario")
    rep.add_argument("--plots", action="store_true", help="also write SVG plots")
    common(rep)
    common(sub.add_parser("compare", help="random versus averaged impact on random strategies"))
    common(sub.add_parser("closed-form", help="closed-form values for linear impact"), need_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        sys.stderr.write("--seed must be an unsigned 64-bit integer\n")
        return EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        sys.stderr.write("--threads must be >= 1\n")
        return EXIT_CONFIG
    args.threads = _threads(args.threads)
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args.scenario, args)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        handler = {"solve": cmd_solve, "simulate": cmd_simulate, "compare": cmd_compare,
                   "closed-form": cmd_closed_form}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except ConditionDError as exc:
        sys.stderr.write(f"noise: {exc}\n")
        return EXIT_CONDITION_D
    except InadmissibleStrategyError as exc:
        sys.stderr.write(f"inadmissible strategy: {exc}\n")
        return EXIT_INADMISSIBLE


if __name__ == "__main__":
    sys.exit(main())
