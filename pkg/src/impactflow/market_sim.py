"""Monte Carlo simulation of cash, holdings and price under a deterministic schedule.

Per step of length ``dt`` the log-price moves by
``sigma*dB - mu*dt - g(zeta)*dL`` where ``dL`` is a subordinator increment
(random mode) or ``gamma_tilde*dt`` (deterministic mode).  Selling uses the
left-endpoint rate of the step.

Random numbers: paths are processed in fixed blocks of ``BLOCK_SIZE`` lanes.
Brownian draws come from one sequential stream per block, impact-noise draws
from a stream keyed by ``(seed, block, step)``.  A path's draws therefore
depend only on the seed, its index and the step index, so results do not
change with the thread count or the total number of paths.  Noise is drawn
only on steps where the rate is positive; steps with zero rate see no impact
whatever ``dL`` is, so common random numbers across strategies are kept.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from impactflow.impact_model import ImpactSpec
from impactflow.levy_noise import SubordinatorSpec, make_stream, sample_increment

__all__ = [
    "BLOCK_SIZE",
    "InadmissibleStrategyError",
    "MarketSpec",
    "Strategy",
    "PathResult",
    "MCEstimate",
    "near_block_strategy",
    "simulate_paths",
    "simulate_path",
    "mc_expected_utility",
    "risk_neutral",
    "write_path_records",
]

BLOCK_SIZE = 4096
_GRID_TOL = 1e-9
_ADMISSIBLE_TOL = 1e-12


class InadmissibleStrategyError(ValueError):
    pass


@dataclass(frozen=True)
class MarketSpec:
    """Constant volatility ``sigma`` and downward drift ``b = -mu`` of the log-price."""

    sigma: float = 0.0
    mu: float = 0.0
    bound: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ValueError(f"mu must be finite and >= 0, got {self.mu}")
        if self.bound is not None and self.sigma + self.mu > self.bound:
            raise ValueError(f"|sigma| + |mu| = {self.sigma + self.mu} exceeds bound K = {self.bound}")

    @classmethod
    def from_mu_tilde(cls, mu_tilde: float, sigma: float = 0.0, bound: float | None = None) -> "MarketSpec":
        return cls(sigma=sigma, mu=mu_tilde + 0.5 * sigma * sigma, bound=bound)

    @property
    def mu_tilde(self) -> float:
        return self.mu - 0.5 * self.sigma * self.sigma


@dataclass(frozen=True)
class Strategy:
    """Piecewise-constant selling rate.

    ``rates[i]`` applies on ``(breakpoints[i], breakpoints[i+1]]`` (and at time 0
    for the first piece); ``breakpoints[0] == 0`` and ``breakpoints[-1]`` is the horizon.
    """

    breakpoints: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        rt = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "rates", rt)
        if bp.ndim != 1 or rt.ndim != 1 or bp.size != rt.size + 1 or rt.size == 0:
            raise InadmissibleStrategyError("need len(breakpoints) == len(rates) + 1 >= 2")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise InadmissibleStrategyError("breakpoints must start at 0 and increase strictly")
        if not np.all(np.isfinite(rt)) or np.any(rt < 0):
            raise InadmissibleStrategyError("rates must be finite and non-negative")

    @classmethod
    def constant(cls, rate: float, horizon: float = 1.0) -> "Strategy":
        return cls(np.array([0.0, horizon]), np.array([rate]))

    @classmethod
    def zero(cls, horizon: float = 1.0) -> "Strategy":
        return cls.constant(0.0, horizon)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def total(self) -> float:
        return math.fsum(self.rates * np.diff(self.breakpoints))

    def rate_at(self, t: float) -> float:
        """Left-continuous evaluation."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        i = int(np.searchsorted(self.breakpoints, t, side="left")) - 1
        return float(self.rates[max(i, 0)])

    def check_admissible(self, phi0: float) -> None:
        if self.total() > phi0 + _ADMISSIBLE_TOL:
            raise InadmissibleStrategyError(
                f"strategy sells {self.total()!r} > initial holdings {phi0!r}"
            )

    def step_rates(self, steps: int) -> np.ndarray:
        """Rate on each of ``steps`` equal steps; every breakpoint must be a grid point."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        pos = self.breakpoints / self.horizon * steps
        idx = np.rint(pos).astype(np.int64)
        if np.any(np.abs(pos - idx) > _GRID_TOL * max(steps, 1)):
            raise InadmissibleStrategyError(f"strategy breakpoints do not lie on a {steps}-step grid")
        return np.repeat(self.rates, np.diff(idx))


@dataclass
class PathResult:
    terminal_cash: float
    terminal_holdings: float
    terminal_price: float
    min_log_price: float
    log_price: np.ndarray | None = field(default=None, repr=False)
    cash: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_error: float
    paths: int
    seed: int


def near_block_strategy(psi: float, delta: float, t: float = 1.0) -> Strategy:
    """Sell ``psi`` at constant rate ``psi / delta`` on ``[0, delta]``, nothing afterwards."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if delta > t:
        raise ValueError(f"delta={delta} exceeds horizon t={t}")
    if psi < 0:
        raise ValueError(f"psi must be non-negative, got {psi}")
    if delta == t:
        return Strategy(np.array([0.0, t]), np.array([psi / delta]))
    return Strategy(np.array([0.0, delta, t]), np.array([psi / delta, 0.0]))


def risk_neutral(w, phi, s):
    return w


@dataclass(frozen=True)
class _Setup:
    market: MarketSpec
    impact: ImpactSpec
    noise: SubordinatorSpec
    rates: np.ndarray
    dt: float
    mode: str
    seed: int
    w: float
    phi0: float
    s: float
    cash_rule: str


def _prepare(market, impact, noise, strategy, steps, mode, seed, w, phi0, s, cash_rule):
    if mode not in ("random", "deterministic"):
        raise ValueError(f"mode must be 'random' or 'deterministic', got {mode!r}")
    if cash_rule not in ("left", "bridge"):
        raise ValueError(f"cash_rule must be 'left' or 'bridge', got {cash_rule!r}")
    if s <= 0:
        raise ValueError("initial price must be positive")
    if phi0 < 0:
        raise ValueError("initial holdings must be non-negative")
    strategy.check_admissible(phi0)
    rates = strategy.step_rates(steps)
    return _Setup(market, impact, noise, rates, strategy.horizon / steps, mode, int(seed),
                  float(w), float(phi0), float(s), cash_rule)


def _run_block(cfg: _Setup, block: int, lanes: int, record: bool):
    """Simulate one block of ``BLOCK_SIZE`` lanes and keep the first ``lanes``."""
    steps = cfg.rates.size
    dt = cfg.dt
    sigma_sqdt = cfg.market.sigma * math.sqrt(dt)
    drift = cfg.market.mu * dt
    gamma_tilde = cfg.noise.gamma_tilde
    brownian = make_stream(cfg.seed, 0, block, 0) if sigma_sqdt > 0 else None

    x = np.full(BLOCK_SIZE, math.log(cfg.s))
    cash = np.full(BLOCK_SIZE, cfg.w)
    x_min = x.copy()
    xs = np.empty((steps + 1, lanes)) if record else None
    ws = np.empty((steps + 1, lanes)) if record else None
    if record:
        xs[0], ws[0] = x[:lanes], cash[:lanes]

    for k in range(steps):
        rate = cfg.rates[k]
        dx = np.full(BLOCK_SIZE, -drift)
        if brownian is not None:
            dx += sigma_sqdt * brownian.standard_normal(BLOCK_SIZE)
        gz = cfg.impact.g(rate)
        if gz > 0:
            if cfg.mode == "random" and cfg.noise.has_jumps:
                dl = sample_increment(cfg.noise, dt, make_stream(cfg.seed, 1 + k, block, 1), BLOCK_SIZE)
                dx -= gz * dl
            else:
                dx -= gz * gamma_tilde * dt
        if rate > 0:
            price = np.exp(x)
            if cfg.cash_rule == "left":
                cash += rate * price * dt
            else:
                # exact integral of exp(X) along the straight line between the step endpoints
                small = np.abs(dx) < 1e-12
                factor = np.where(small, 1.0 + 0.5 * dx, np.expm1(dx) / np.where(small, 1.0, dx))
                cash += rate * price * dt * factor
        x += dx
        np.minimum(x_min, x, out=x_min)
        if record:
            xs[k + 1], ws[k + 1] = x[:lanes], cash[:lanes]
    return cash[:lanes], np.exp(x[:lanes]), x_min[:lanes], xs, ws


def _terminal_holdings(cfg: _Setup) -> float:
    return cfg.phi0 - math.fsum(cfg.rates * cfg.dt)


def simulate_paths(
    market: MarketSpec,
    impact: ImpactSpec,
    noise: SubordinatorSpec,
    strategy: Strategy,
    steps: int,
    mode: str = "random",
    seed: int = 0,
    paths: int = 1,
    w: float = 0.0,
    phi0: float = 1.0,
    s: float = 1.0,
    cash_rule: str = "left",
    threads: int = 1,
    record: bool = False,
):
    """Simulate ``paths`` independent paths; returns a dict of per-path arrays.

    Keys: ``cash``, ``holdings``, ``price``, ``min_log_price`` and, with
    ``record=True``, ``log_price`` and ``cash_path`` of shape ``(steps + 1, paths)``.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    cfg = _prepare(market, impact, noise, strategy, steps, mode, seed, w, phi0, s, cash_rule)
    n_blocks = -(-paths // BLOCK_SIZE)
    lanes = [min(BLOCK_SIZE, paths - b * BLOCK_SIZE) for b in range(n_blocks)]

    def job(b):
        return _run_block(cfg, b, lanes[b], record)

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, range(n_blocks)))
    else:
        parts = [job(b) for b in range(n_blocks)]

    out = {
        "cash": np.concatenate([p[0] for p in parts]),
        "price": np.concatenate([p[1] for p in parts]),
        "min_log_price": np.concatenate([p[2] for p in parts]),
    }
    out["holdings"] = np.full(paths, _terminal_holdings(cfg))
    if record:
        out["log_price"] = np.concatenate([p[3] for p in parts], axis=1)
        out["cash_path"] = np.concatenate([p[4] for p in parts], axis=1)
    return out


def simulate_path(
    market: MarketSpec,
    impact: ImpactSpec,
    noise: SubordinatorSpec,
    strategy: Strategy,
    steps: int,
    mode: str = "random",
    seed: int = 0,
    path_index: int = 0,
    w: float = 0.0,
    phi0: float = 1.0,
    s: float = 1.0,
    cash_rule: str = "left",
    record: bool = False,
) -> PathResult:
    """Simulate path number ``path_index`` of the stream ``seed``.

    The result is identical to entry ``path_index`` of :func:`simulate_paths`
    with the same seed.
    """
    cfg = _prepare(market, impact, noise, strategy, steps, mode, seed, w, phi0, s, cash_rule)
    block, lane = divmod(int(path_index), BLOCK_SIZE)
    cash, price, x_min, xs, ws = _run_block(cfg, block, lane + 1, record)
    return PathResult(
        terminal_cash=float(cash[lane]),
        terminal_holdings=_terminal_holdings(cfg),
        terminal_price=float(price[lane]),
        min_log_price=float(x_min[lane]),
        log_price=None if xs is None else xs[:, lane].copy(),
        cash=None if ws is None else ws[:, lane].copy(),
    )


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    # shifted, exactly-rounded sums: independent of summation order
    n = values.size
    ref = float(values[0])
    mean = ref + math.fsum(values - ref) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def mc_expected_utility(
    market: MarketSpec,
    impact: ImpactSpec,
    noise: SubordinatorSpec,
    strategy: Strategy,
    steps: int,
    mode: str = "random",
    utility: Callable = risk_neutral,
    paths: int = 10_000,
    seed: int = 0,
    w: float = 0.0,
    phi0: float = 1.0,
    s: float = 1.0,
    cash_rule: str = "left",
    threads: int = 1,
    records_path: str | os.PathLike | None = None,
) -> MCEstimate:
    """Sample mean and standard error of ``utility(W_t, phi_t, S_t)``.

    With a single path the standard error is NaN.
    """
    sim = simulate_paths(market, impact, noise, strategy, steps, mode, seed, paths,
                         w, phi0, s, cash_rule, threads)
    values = np.asarray(utility(sim["cash"], sim["holdings"], sim["price"]), dtype=float)
    values = np.broadcast_to(values, sim["cash"].shape)
    if records_path is not None:
        write_path_records(records_path, sim)
    mean, se = _mean_and_se(values)
    return MCEstimate(mean, se, paths, int(seed))


def write_path_records(path: str | os.PathLike, sim: dict, header_lines: list[str] | None = None) -> None:
    """Per-path CSV with columns ``path_id, W_t, phi_t, S_t``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "W_t", "phi_t", "S_t"])
        for i, (wt, ph, st) in enumerate(zip(sim["cash"], sim["holdings"], sim["price"])):
            writer.writerow([i, repr(float(wt)), repr(float(ph)), repr(float(st))])
