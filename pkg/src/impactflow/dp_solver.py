"""Backward induction for the discrete deterministic liquidation problem.

For quadratic impact and Gamma noise the risk-neutral value is ``w + s * f``
where ``f^n_k(phi)`` maximises

    sum_l psi_l * exp(-mu_tilde * l / n - sum_{m <= l} I(psi_m)),
    I(psi) = n*gamma*alpha0*psi^2 + (alpha1/n) * log(n^2*alpha0*beta1*psi^2 + 1),

over sale sequences with ``sum psi_l <= phi``.  Factoring out the first term
gives the recursion

    f_k(phi) = max_{0 <= psi <= phi} exp(-I(psi)) * (psi + exp(-mu_tilde/n) * f_{k-1}(phi - psi)),

with ``f_0 = 0``, solved here on a uniform holdings grid.  ``f_{k-1}`` is
linearly interpolated off the grid, so on each grid cell the objective is
``exp(-I)`` times an affine function of ``psi``; under ``gamma >= alpha1*beta1/8``
``I`` is convex and the objective is log-concave on every cell, which makes
the golden-section polish on the cells around the best grid point exact up
to its tolerance.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from impactflow.impact_model import ImpactSpec, check_condition_d
from impactflow.levy_noise import SubordinatorSpec
from impactflow.market_sim import Strategy

__all__ = [
    "ConditionDError",
    "DpParams",
    "DpSolution",
    "default_grid_size",
    "step_cost",
    "one_step_objective",
    "scan_width",
    "solve",
    "optimal_sale",
    "extract_strategy",
    "total_mi_cost",
    "value_function",
    "write_solution_csv",
    "write_strategy_csv",
]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_PSI_TOL = 1e-10


class ConditionDError(ValueError):
    """Raised when ``gamma < alpha1 * beta1 / 8``."""


def default_grid_size(phi_max: float) -> int:
    """Number of holdings intervals: 2000, independent of the holdings range."""
    return 2000


@dataclass(frozen=True)
class DpParams:
    """Discrete problem on ``k_max`` steps of length ``1/n`` and ``m + 1`` holdings nodes on ``[0, phi_max]``."""

    n: int
    k_max: int
    mu_tilde: float
    impact: ImpactSpec
    noise: SubordinatorSpec
    phi_max: float
    m: int = 2000
    refine: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if self.m < 2:
            raise ValueError(f"grid needs m >= 2 intervals, got {self.m}")
        if not (math.isfinite(self.phi_max) and self.phi_max > 0):
            raise ValueError(f"phi_max must be positive and finite, got {self.phi_max}")
        if not (math.isfinite(self.mu_tilde) and self.mu_tilde >= 0):
            raise ValueError(f"mu_tilde must be non-negative, got {self.mu_tilde}")
        if self.impact.p != 2:
            raise ValueError("the dynamic program is defined for quadratic impact (p = 2)")
        if not check_condition_d(self.noise):
            raise ConditionDError(
                f"impact convexity condition fails: gamma={self.noise.gamma} < alpha1*beta1/8="
                f"{self.noise.alpha1 * self.noise.beta1 / 8}"
            )

    @classmethod
    def for_horizon(cls, n, t, mu_tilde, impact, noise, phi_max, m=None, refine=True):
        """Parameters with ``k_max = [n t]``."""
        k_max = int(math.floor(n * t + 1e-9))
        return cls(n, k_max, mu_tilde, impact, noise, phi_max,
                   default_grid_size(phi_max) if m is None else m, refine)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.phi_max, self.m + 1)

    @property
    def step(self) -> float:
        return self.phi_max / self.m

    @property
    def discount(self) -> float:
        return math.exp(-self.mu_tilde / self.n)


@dataclass
class DpSolution:
    """``value[k, j] = f^n_k(grid[j])`` and ``policy[k, j]`` the optimal first sale."""

    params: DpParams
    value: np.ndarray
    policy: np.ndarray
    grid: np.ndarray = field(repr=False)

    def f(self, k: int, phi):
        """``f_k`` interpolated linearly in holdings."""
        return np.interp(phi, self.grid, self.value[k])


def step_cost(psi, params: DpParams):
    """Cost exponent ``I(psi)`` of selling ``psi`` in one step."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < 0):
        raise ValueError("step_cost requires psi >= 0")
    n, a0 = params.n, params.impact.alpha0
    nz = params.noise
    sq = psi * psi
    out = n * nz.gamma * a0 * sq + (nz.alpha1 / n) * np.log1p(n * n * a0 * nz.beta1 * sq)
    return float(out) if out.ndim == 0 else out


def one_step_objective(psi, f_next, params: DpParams):
    """``exp(-I(psi)) * (psi + exp(-mu_tilde/n) * f_next)`` where ``f_next = f_{k-1}(phi - psi)``."""
    return np.exp(-step_cost(psi, params)) * (psi + params.discount * np.asarray(f_next, dtype=float))


def _polish(lo, hi, f_lo, f_hi, params):
    """Vectorised golden section on cells ``[lo, hi]`` where ``f_{k-1}`` runs linearly from ``f_lo`` to ``f_hi``.

    Returns the best interior point found and its objective value.
    """
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)
    slope = (f_hi - f_lo) / safe

    def obj(x):
        return one_step_objective(x, f_lo + slope * (x - lo), params)

    a, b = lo.copy(), hi.copy()
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = obj(c), obj(d)
    iters = int(math.ceil(math.log(_PSI_TOL / max(float(width.max(initial=0.0)), _PSI_TOL)) / math.log(_INV_PHI))) + 1
    for _ in range(max(iters, 0)):
        left = fc >= fd
        # shrink towards the better interior point
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _INV_PHI * (b - a)
        new_d = a + _INV_PHI * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        fc_prev, fd_prev = fc, fd
        c, d = c_next, d_next
        fc = np.where(left, obj(c), fd_prev)
        fd = np.where(left, fc_prev, obj(d))
    x = np.where(fc >= fd, c, d)
    return x, obj(x)


def scan_width(params: DpParams) -> int:
    """Number of grid sales that can possibly be optimal, from any holdings.

    Since ``f_{k-1}`` is non-decreasing, the objective at ``psi`` is at most
    ``exp(-I(psi)) * (psi + rho*f_{k-1}(phi))`` while the maximum is at least
    ``max(rho*f_{k-1}(phi), g1)`` with ``g1 = max psi*exp(-I(psi))``.  Hence an
    optimal sale needs ``psi >= g1 * (exp(I(psi)) - 1)``, a condition that holds
    on an interval ``[0, cap]`` because ``I`` is convex.  One cell of margin is
    added for the polishing step.
    """
    psis = np.arange(params.m + 1) * params.step
    costs = step_cost(psis, params)
    gains = psis * np.exp(-costs)
    i_star = int(np.argmax(gains))
    g1 = float(gains[i_star])
    with np.errstate(over="ignore"):
        feasible = psis >= g1 * np.expm1(costs)
    last = int(np.nonzero(feasible)[0].max())
    return min(max(i_star, last) + 2, params.m) + 1


def _layer(f_prev, params, costs, width):
    """One backward step on the grid: returns ``(f_k, psi*_k)``."""
    h = params.step
    m = params.m
    psis = np.arange(width) * h
    rho = params.discount
    padded = np.concatenate([np.full(width - 1, -np.inf), f_prev])
    # shifted[j, i] = f_prev[j - i], -inf where i > j
    shifted = np.lib.stride_tricks.sliding_window_view(padded, width)[:, ::-1]
    table = np.exp(-costs[:width])[None, :] * (psis[None, :] + rho * shifted)
    best_i = np.argmax(table, axis=1)  # first maximum: ties go to the smaller sale
    rows = np.arange(m + 1)
    best_v = table[rows, best_i]
    best_psi = psis[best_i]
    if not params.refine:
        return best_v, best_psi

    for side in (-1, 1):
        lo_i = best_i if side == 1 else best_i - 1
        valid = (lo_i >= 0) & (lo_i + 1 <= rows)
        if not np.any(valid):
            continue
        j = rows[valid]
        li = lo_i[valid]
        lo = li * h
        hi = (li + 1) * h
        # phi - psi runs from grid[j - li] down to grid[j - li - 1]
        x, v = _polish(lo, hi, f_prev[j - li], f_prev[j - li - 1], params)
        better = v > best_v[valid] * (1.0 + 1e-15) + 1e-300
        take = j[better]
        best_v[take] = v[better]
        best_psi[take] = x[better]
    return best_v, best_psi


def solve(params: DpParams) -> DpSolution:
    """Fill ``f_k`` and the optimal first sale for ``k = 0..k_max`` on the holdings grid."""
    m = params.m
    grid = params.grid
    value = np.zeros((params.k_max + 1, m + 1))
    policy = np.zeros((params.k_max + 1, m + 1))
    costs = step_cost(np.arange(m + 1) * params.step, params)
    width = scan_width(params)
    for k in range(1, params.k_max + 1):
        f_k, psi_k = _layer(value[k - 1], params, costs, width)
        f_k[0] = 0.0
        psi_k[0] = 0.0
        value[k] = f_k
        policy[k] = psi_k
    return DpSolution(params, value, policy, grid)


def optimal_sale(solution: DpSolution, k: int, phi: float) -> tuple[float, float]:
    """Best first sale and value with ``k`` steps left from arbitrary holdings ``phi``.

    Candidate sales are those landing exactly on grid nodes, plus ``psi = 0``;
    between consecutive candidates ``f_{k-1}`` is linear, and the cells next
    to the best candidate are polished as in :func:`solve`.  On grid nodes
    this reproduces the stored policy.
    """
    params = solution.params
    if k < 1:
        return 0.0, 0.0
    if phi < 0 or phi > params.phi_max * (1 + 1e-12):
        raise ValueError(f"holdings {phi} outside [0, {params.phi_max}]")
    phi = min(phi, params.phi_max)
    if phi == 0:
        return 0.0, 0.0
    grid = solution.grid
    f_prev = solution.value[k - 1]
    below = int(np.searchsorted(grid, phi, side="right"))  # nodes grid[:below] <= phi
    nodes = grid[:below][::-1]
    psis = phi - nodes
    f_at = f_prev[:below][::-1]
    if psis[0] > 0:
        # phi is off the grid: prepend psi = 0
        psis = np.concatenate([[0.0], psis])
        f_at = np.concatenate([[float(np.interp(phi, grid, f_prev))], f_at])
    else:
        psis[0] = 0.0
    values = one_step_objective(psis, f_at, params)
    i = int(np.argmax(values))
    best_psi, best_v = float(psis[i]), float(values[i])
    if params.refine:
        for lo_i in (i - 1, i):
            if 0 <= lo_i < psis.size - 1:
                x, v = _polish(psis[lo_i:lo_i + 1], psis[lo_i + 1:lo_i + 2],
                               f_at[lo_i:lo_i + 1], f_at[lo_i + 1:lo_i + 2], params)
                if v[0] > best_v * (1.0 + 1e-15) + 1e-300:
                    best_psi, best_v = float(x[0]), float(v[0])
    return best_psi, best_v


def extract_strategy(solution: DpSolution, phi0: float):
    """Forward pass from ``phi0``: returns ``(strategy, holdings)``.

    ``strategy`` sells at rate ``n * psi_l`` on ``(l/n, (l+1)/n]``; ``holdings``
    has ``k_max + 1`` entries, the holdings at each grid time.
    """
    params = solution.params
    n, k_max = params.n, params.k_max
    if phi0 < 0 or phi0 > params.phi_max * (1 + 1e-12):
        raise ValueError(f"phi0={phi0} outside the holdings grid [0, {params.phi_max}]")
    if k_max == 0:
        raise ValueError("no time steps to trade on")
    holdings = np.empty(k_max + 1)
    sales = np.zeros(k_max)
    holdings[0] = phi = min(float(phi0), params.phi_max)
    for l in range(k_max):
        psi, _ = optimal_sale(solution, k_max - l, phi)
        psi = min(psi, phi)
        sales[l] = psi
        phi = max(phi - psi, 0.0)
        holdings[l + 1] = phi
    breakpoints = np.arange(k_max + 1) / n
    return Strategy(breakpoints, sales * n), holdings


def total_mi_cost(value_at_phi: float, phi: float, s: float = 1.0) -> float:
    """``-log(value / (phi * s))``: log loss of proceeds relative to frictionless selling."""
    if not (value_at_phi > 0 and phi > 0 and s > 0):
        raise ValueError("total_mi_cost requires positive value, holdings and price")
    return -math.log(value_at_phi / (phi * s))


def value_function(solution: DpSolution, t: float, phi: float, w: float = 0.0, s: float = 1.0) -> float:
    """``w + s * f^n_{nt}(phi)``; ``t`` must be a multiple of ``1/n`` not beyond ``k_max / n``."""
    n = solution.params.n
    k = int(round(n * t))
    if abs(n * t - k) > 1e-9 or k < 0 or k > solution.params.k_max:
        raise ValueError(f"t={t} is not on the time grid of the solution")
    if phi < 0 or phi > solution.params.phi_max * (1 + 1e-12):
        raise ValueError(f"phi={phi} outside the holdings grid")
    return w + s * float(solution.f(k, phi))


def write_solution_csv(path, solution: DpSolution, header_lines=None) -> None:
    """Columns ``k, phi, f, psi_star``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "phi", "f", "psi_star"])
        for k in range(solution.value.shape[0]):
            for j, phi in enumerate(solution.grid):
                writer.writerow([k, repr(float(phi)), repr(float(solution.value[k, j])),
                                 repr(float(solution.policy[k, j]))])


def write_strategy_csv(path, strategy: Strategy, holdings, header_lines=None) -> None:
    """Columns ``t, zeta, phi``; ``zeta`` is the rate on the interval ending at ``t``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "zeta", "phi"])
        bp = strategy.breakpoints
        for i, t in enumerate(bp):
            zeta = strategy.rates[max(i - 1, 0)] if i > 0 else strategy.rates[0]
            writer.writerow([repr(float(t)), repr(float(zeta)), repr(float(holdings[i]))])
