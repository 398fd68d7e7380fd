"""Reproduction scenarios for the log-quadratic and log-linear impact examples.

Base parameters: ``alpha0 = 0.01``, ``t = 1``, ``mu_tilde = 0.05``, ``w = 0``,
``s = 1``, ``n = 500``.  Two noise families are studied:

* fixed gamma: ``gamma = 1``, ``beta1 = 2``, ``alpha1`` in {0, 1, 3};
* fixed expected impact: ``gamma + alpha1*beta1 = 1`` and ``alpha1*beta1**2 = 0.5``
  for ``alpha1`` in {0.5, 1}, compared with ``gamma = 1, alpha1 = 0``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from impactflow.dp_solver import DpParams, extract_strategy, solve, total_mi_cost
from impactflow.impact_model import ImpactSpec, linear_value
from impactflow.levy_noise import SubordinatorSpec, laplace_exponent
from impactflow.market_sim import (
    MarketSpec,
    Strategy,
    mc_expected_utility,
    near_block_strategy,
)

log = logging.getLogger(__name__)

__all__ = [
    "BASE_PARAMS",
    "ExperimentScenario",
    "ComparisonRow",
    "ScenarioResult",
    "SCENARIOS",
    "resolve_fixed_gamma_tilde",
    "noise_for",
    "active_cells",
    "is_constant_speed",
    "is_speed_increasing",
    "random_admissible_strategies",
    "expected_cash_left_rule",
    "compare_random_vs_deterministic",
    "run_scenario",
    "write_rows",
    "file_header",
]

BASE_PARAMS = {"alpha0": 0.01, "t": 1.0, "mu_tilde": 0.05, "w": 0.0, "s": 1.0, "n": 500}

_EQ_TOL = 1e-14


def resolve_fixed_gamma_tilde(alpha1: float, mean: float = 1.0, variance: float = 0.5) -> tuple[float, float]:
    """Solve ``gamma + alpha1*beta1 = mean`` and ``alpha1*beta1**2 = variance`` for ``(gamma, beta1)``."""
    if not alpha1 > 0:
        raise ValueError(f"alpha1 must be positive, got {alpha1}")
    beta1 = math.sqrt(variance / alpha1)
    gamma = mean - alpha1 * beta1
    if gamma < 0:
        if gamma > -_EQ_TOL:
            gamma = 0.0
        else:
            raise ValueError(f"alpha1={alpha1} makes gamma negative ({gamma})")
    return gamma, beta1


def noise_for(family: str, alpha1: float) -> SubordinatorSpec:
    if family in ("fixed-gamma", "linear"):
        return SubordinatorSpec(gamma=1.0, alpha1=alpha1, beta1=2.0)
    if family in ("fixed-gamma-tilde",):
        if alpha1 == 0:
            return SubordinatorSpec(gamma=1.0, alpha1=0.0, beta1=1.0)
        gamma, beta1 = resolve_fixed_gamma_tilde(alpha1)
        return SubordinatorSpec(gamma=gamma, alpha1=alpha1, beta1=beta1)
    raise ValueError(f"unknown noise family {family!r}")


# shape detectors ------------------------------------------------------------

def active_cells(rates, rel_tol: float = 1e-9) -> np.ndarray:
    """Indices of intervals where the selling rate is (numerically) positive."""
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0 or rates.max() <= 0:
        return np.array([], dtype=int)
    return np.nonzero(rates > rel_tol * rates.max())[0]


def is_constant_speed(rates, max_cv: float = 0.05) -> bool:
    """Coefficient of variation below ``max_cv`` on the active region minus its two end cells."""
    rates = np.asarray(rates, dtype=float)
    idx = active_cells(rates)
    if idx.size < 3:
        return False
    inner = rates[idx[0] + 1: idx[-1]]
    if inner.size == 0:
        return False
    mean = inner.mean()
    return bool(mean > 0 and inner.std() / mean < max_cv)


def is_speed_increasing(rates, margin: float = 0.10) -> bool:
    """Rate on the last active cell exceeds the first by at least ``margin`` (relative)."""
    rates = np.asarray(rates, dtype=float)
    idx = active_cells(rates)
    if idx.size < 2:
        return False
    return bool(rates[idx[-1]] > (1.0 + margin) * rates[idx[0]])


# random-versus-deterministic impact -------------------------------------------

def random_admissible_strategies(count: int, phi0: float, t: float, rng: np.random.Generator,
                                 intervals: int = 10) -> list[Strategy]:
    """Rates uniform on ``[0, 2*phi0/t]`` on equal intervals, scaled down to sell at most ``phi0``."""
    out = []
    bp = np.linspace(0.0, t, intervals + 1)
    for _ in range(count):
        rates = rng.uniform(0.0, 2.0 * phi0 / t, intervals)
        total = math.fsum(rates * (t / intervals))
        if total > phi0:
            rates = rates * (phi0 / total) * (1.0 - 1e-12)
        out.append(Strategy(bp, rates))
    return out


def expected_cash_left_rule(strategy: Strategy, steps: int, market: MarketSpec, impact: ImpactSpec,
                            noise: SubordinatorSpec, mode: str, w: float = 0.0, s: float = 1.0) -> float:
    """Exact expectation of the simulated terminal cash (left-endpoint rule).

    Each step multiplies the expected price by ``exp(-dt*(mu_tilde + psi_L(g(zeta))))``
    in random mode and ``exp(-dt*(mu_tilde + gamma_tilde*g(zeta)))`` in deterministic mode.
    """
    rates = strategy.step_rates(steps)
    dt = strategy.horizon / steps
    g = impact.g(rates)
    if mode == "random":
        decay = laplace_exponent(noise, g)
    else:
        decay = noise.gamma_tilde * g
    log_mean = -np.concatenate([[0.0], np.cumsum(dt * (market.mu_tilde + decay))])[:-1]
    return w + s * math.fsum(rates * dt * np.exp(log_mean))


@dataclass(frozen=True)
class ComparisonRow:
    strategy_id: int
    mc_random: float
    mc_random_se: float
    deterministic_value: float
    analytic_random: float
    analytic_deterministic: float

    @property
    def inequality_holds(self) -> bool:
        return self.mc_random + 3.0 * self.mc_random_se >= self.deterministic_value


def compare_random_vs_deterministic(strategies, market: MarketSpec, impact: ImpactSpec,
                                    noise: SubordinatorSpec, paths: int, seed: int, steps: int,
                                    phi0: float, w: float = 0.0, s: float = 1.0,
                                    threads: int = 1) -> list[ComparisonRow]:
    """Risk-neutral value of each fixed strategy with random and with averaged impact.

    The deterministic-impact value is simulated on the same Brownian draws;
    with ``sigma = 0`` a single path gives it exactly.
    """
    rows = []
    det_paths = 1 if market.sigma == 0 else paths
    for i, strat in enumerate(strategies):
        rnd = mc_expected_utility(market, impact, noise, strat, steps, "random", paths=paths,
                                  seed=seed + i, w=w, phi0=phi0, s=s, threads=threads)
        det = mc_expected_utility(market, impact, noise, strat, steps, "deterministic",
                                  paths=det_paths, seed=seed + i, w=w, phi0=phi0, s=s, threads=threads)
        rows.append(ComparisonRow(
            strategy_id=i,
            mc_random=rnd.estimate,
            mc_random_se=rnd.std_error,
            deterministic_value=det.estimate,
            analytic_random=expected_cash_left_rule(strat, steps, market, impact, noise, "random", w, s),
            analytic_deterministic=expected_cash_left_rule(strat, steps, market, impact, noise,
                                                           "deterministic", w, s),
        ))
    return rows


# scenarios ------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentScenario:
    """Named parameter bundle.  ``family`` picks the noise law and the engine.

    ``fixed-gamma`` / ``fixed-gamma-tilde`` run the dynamic program,
    ``linear`` runs near-block Monte Carlo, ``comparison`` the random versus
    averaged impact suite.
    """

    name: str
    family: str
    phi0: tuple = (1.0,)
    alpha1: tuple = (0.0,)
    n: int = 500
    t: float = 1.0
    alpha0: float = 0.01
    mu_tilde: float = 0.05
    sigma: float = 0.0
    w: float = 0.0
    s: float = 1.0
    m: int | None = None
    outputs: tuple = ("values", "strategy", "trajectory", "tc")
    paths: int = 20_000
    steps: int = 500
    delta: float = 1e-3
    strategies: int = 50
    comparison_alpha1: float = 1.0

    def __post_init__(self):
        if self.family not in ("fixed-gamma", "fixed-gamma-tilde", "linear", "comparison"):
            raise ValueError(f"unknown family {self.family!r}")
        if any(p < 0 for p in self.phi0):
            raise ValueError("phi0 must be non-negative")
        if not self.mu_tilde > 0:
            raise ValueError("mu_tilde must be positive")

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def market(self) -> MarketSpec:
        return MarketSpec.from_mu_tilde(self.mu_tilde, self.sigma)


def _fixed(name, family, phi0, alpha1, outputs=("values", "strategy", "trajectory", "tc")):
    return ExperimentScenario(name=name, family=family, phi0=phi0, alpha1=alpha1, outputs=outputs)


SCENARIOS: dict[str, ExperimentScenario] = {
    s.name: s for s in [
        _fixed("fixed-gamma-phi1", "fixed-gamma", (1.0,), (0.0, 1.0, 3.0)),
        _fixed("fixed-gamma-phi10", "fixed-gamma", (10.0,), (0.0, 1.0, 3.0)),
        _fixed("fixed-gamma-phi100", "fixed-gamma", (100.0,), (0.0, 1.0, 3.0)),
        _fixed("fixed-gamma-tilde-phi1", "fixed-gamma-tilde", (1.0,), (0.0, 0.5, 1.0)),
        _fixed("fixed-gamma-tilde-phi10", "fixed-gamma-tilde", (10.0,), (0.0, 0.5, 1.0)),
        _fixed("fixed-gamma-tilde-phi100", "fixed-gamma-tilde", (100.0,), (0.0, 0.5, 1.0)),
        _fixed("fixed-gamma-tilde-tc", "fixed-gamma-tilde", (1.0, 10.0), (0.0, 0.5, 1.0), ("tc",)),
        ExperimentScenario(name="linear-invariance", family="linear", phi0=(1.0,), alpha1=(0.0, 1.0, 3.0),
                           sigma=0.1, paths=100_000, steps=10_000, delta=1e-3, outputs=("values",)),
        ExperimentScenario(name="random-vs-deterministic", family="comparison", phi0=(1.0,),
                           alpha1=(1.0,), paths=20_000, steps=500, outputs=("comparison",)),
    ]
}


@dataclass
class ScenarioResult:
    scenario: ExperimentScenario
    seed: int
    values: list = field(default_factory=list)       # (alpha1, phi0, phi, f) rows
    strategies: dict = field(default_factory=dict)   # (alpha1, phi0) -> Strategy
    trajectories: dict = field(default_factory=dict)  # (alpha1, phi0) -> holdings
    tc: list = field(default_factory=list)           # (alpha1, phi0, gamma, beta1, value, tc)
    comparison: list = field(default_factory=list)   # ComparisonRow
    mc: list = field(default_factory=list)           # (alpha1, estimate, se, closed_form)
    files: list = field(default_factory=list)

    def terminal_holdings(self, alpha1, phi0) -> float:
        return float(self.trajectories[(alpha1, phi0)][-1])


def file_header(scenario_hash: str, seed: int) -> list[str]:
    from impactflow import __version__
    return [f"impactflow {__version__}", f"config_hash {scenario_hash}", f"seed {seed}"]


def write_rows(path, header_lines, columns, rows) -> None:
    """CSV with ``#`` comment header; floats in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _run_dp(sc: ExperimentScenario, result: ScenarioResult):
    impact = ImpactSpec(2, sc.alpha0)
    for phi0 in sc.phi0:
        for a1 in sc.alpha1:
            noise = noise_for(sc.family, a1)
            if phi0 == 0:
                result.tc.append((a1, phi0, noise.gamma, noise.beta1, 0.0, math.nan))
                continue
            params = DpParams.for_horizon(sc.n, sc.t, sc.mu_tilde, impact, noise, phi0, m=sc.m)
            log.info("solving %s alpha1=%s phi0=%s", sc.name, a1, phi0)
            sol = solve(params)
            k = params.k_max
            if "values" in sc.outputs:
                result.values.extend((a1, phi0, float(p), float(v)) for p, v in zip(sol.grid, sol.value[k]))
            strat, holdings = extract_strategy(sol, phi0)
            result.strategies[(a1, phi0)] = strat
            result.trajectories[(a1, phi0)] = holdings
            value = sc.w + sc.s * float(sol.f(k, phi0))
            result.tc.append((a1, phi0, noise.gamma, noise.beta1, value, total_mi_cost(value - sc.w, phi0, sc.s)))


def _run_linear(sc: ExperimentScenario, result: ScenarioResult, seed: int, threads: int):
    impact = ImpactSpec(1, sc.alpha0)
    market = sc.market()
    for phi0 in sc.phi0:
        strat = near_block_strategy(phi0, sc.delta, sc.t)
        for a1 in sc.alpha1:
            noise = noise_for(sc.family, a1)
            est = mc_expected_utility(market, impact, noise, strat, sc.steps, "random", paths=sc.paths,
                                      seed=seed, w=sc.w, phi0=phi0, s=sc.s, cash_rule="bridge",
                                      threads=threads)
            closed = linear_value(sc.w, phi0, sc.s, noise.gamma, sc.alpha0)
            result.mc.append((a1, phi0, est.estimate, est.std_error, closed))


def _run_comparison(sc: ExperimentScenario, result: ScenarioResult, seed: int, threads: int):
    impact = ImpactSpec(2, sc.alpha0)
    noise = noise_for("fixed-gamma", sc.comparison_alpha1)
    phi0 = sc.phi0[0]
    strategies = random_admissible_strategies(sc.strategies, phi0, sc.t, np.random.default_rng(seed))
    result.comparison = compare_random_vs_deterministic(
        strategies, sc.market(), impact, noise, sc.paths, seed, sc.steps, phi0, sc.w, sc.s, threads)


def run_scenario(sc: ExperimentScenario, out_dir: str | os.PathLike | None = None, seed: int = 0,
                 threads: int = 1, plots: bool = False) -> ScenarioResult:
    """Run one scenario and, if ``out_dir`` is given, write its CSV (and SVG) files."""
    result = ScenarioResult(sc, seed)
    if sc.family in ("fixed-gamma", "fixed-gamma-tilde"):
        _run_dp(sc, result)
    elif sc.family == "linear":
        _run_linear(sc, result, seed, threads)
    else:
        _run_comparison(sc, result, seed, threads)
    if out_dir is not None:
        _write_bundle(result, Path(out_dir), plots)
    return result


def _write_bundle(result: ScenarioResult, out: Path, plots: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    header = file_header(sc.config_hash(), result.seed)

    def emit(name, columns, rows):
        path = out / name
        write_rows(path, header, columns, rows)
        result.files.append(path)

    if sc.family in ("fixed-gamma", "fixed-gamma-tilde"):
        if "values" in sc.outputs:
            emit("values.csv", ["alpha1", "phi0", "phi", "f"], result.values)
        if "strategy" in sc.outputs:
            rows = []
            for (a1, phi0), strat in result.strategies.items():
                rows.extend((a1, phi0, float(t), float(z)) for t, z in zip(strat.breakpoints[1:], strat.rates))
            emit("strategy.csv", ["alpha1", "phi0", "t", "zeta"], rows)
        if "trajectory" in sc.outputs:
            rows = []
            for (a1, phi0), hold in result.trajectories.items():
                strat = result.strategies[(a1, phi0)]
                rows.extend((a1, phi0, float(t), float(p)) for t, p in zip(strat.breakpoints, hold))
            emit("trajectory.csv", ["alpha1", "phi0", "t", "phi"], rows)
        if "tc" in sc.outputs:
            emit("tc.csv", ["alpha1", "phi0", "gamma", "beta1", "value", "tc"], result.tc)
    elif sc.family == "linear":
        emit("values.csv", ["alpha1", "phi0", "mc_estimate", "mc_se", "closed_form"], result.mc)
    else:
        emit("comparison.csv",
             ["strategy_id", "mc_random", "mc_random_se", "deterministic_value",
              "analytic_random", "analytic_deterministic", "inequality_holds"],
             [(r.strategy_id, r.mc_random, r.mc_random_se, r.deterministic_value,
               r.analytic_random, r.analytic_deterministic, str(r.inequality_holds).lower())
              for r in result.comparison])
    if plots:
        from impactflow.plots import scenario_plots
        result.files.extend(scenario_plots(result, out, header))
