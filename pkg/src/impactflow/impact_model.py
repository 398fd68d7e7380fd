"""Power-law impact functions, the small-time block-sale limit and closed forms.

Impact acts multiplicatively on the price: selling at speed ``zeta`` moves the
log-price by ``-g(zeta) dL`` with ``g(zeta) = alpha0 * zeta**p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from impactflow.levy_noise import SubordinatorSpec

__all__ = [
    "ImpactSpec",
    "EffectiveDecay",
    "block_proceeds_factor",
    "golden_section_max",
    "j_operator",
    "linear_value",
    "sell_off_value_linear",
    "check_condition_d",
    "check_convexity_condition",
]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ImpactSpec:
    """``g(zeta) = alpha0 * zeta**p`` with ``p`` in {1, 2}."""

    p: int
    alpha0: float

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError(f"impact exponent p must be 1 or 2, got {self.p}")
        if not (math.isfinite(self.alpha0) and self.alpha0 > 0):
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")

    def g(self, zeta):
        return self.alpha0 * np.asarray(zeta, dtype=float) ** self.p if np.ndim(zeta) else self.alpha0 * float(zeta) ** self.p

    def h(self, zeta):
        """Marginal impact ``g'``."""
        if self.p == 1:
            return self.alpha0 * np.ones_like(np.asarray(zeta, dtype=float)) if np.ndim(zeta) else self.alpha0
        return 2.0 * self.alpha0 * (np.asarray(zeta, dtype=float) if np.ndim(zeta) else float(zeta))

    @property
    def h_inf(self) -> float:
        return self.alpha0 if self.p == 1 else math.inf


@dataclass(frozen=True)
class EffectiveDecay:
    """Deterministic decay rate of the expected discounted price for quadratic impact.

    ``g_hat(zeta) = gamma*alpha0*zeta^2 + alpha1*log(alpha0*beta1*zeta^2 + 1)`` is the
    Laplace exponent of ``L`` evaluated at ``g(zeta)``; ``q = mu_tilde + g_hat``.
    """

    mu_tilde: float
    alpha0: float
    noise: SubordinatorSpec

    def __post_init__(self):
        if not self.mu_tilde > 0:
            raise ValueError(f"mu_tilde must be positive, got {self.mu_tilde}")
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")

    def g_hat(self, zeta):
        z2 = np.square(np.asarray(zeta, dtype=float))
        out = self.noise.gamma * self.alpha0 * z2 + self.noise.alpha1 * np.log1p(
            self.alpha0 * self.noise.beta1 * z2
        )
        return float(out) if out.ndim == 0 else out

    def q(self, zeta):
        return self.mu_tilde + self.g_hat(zeta)


def block_proceeds_factor(x):
    """``(1 - exp(-x)) / x`` with the removable singularity at 0 handled by a series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 - x / 2.0 + x * x / 6.0, -np.expm1(-safe) / safe)
    return float(out) if out.ndim == 0 else out


def golden_section_max(fun: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10):
    """Maximise a unimodal scalar function on ``[lo, hi]``; returns ``(x, f(x))``.

    Endpoints are included in the comparison so boundary optima are exact.
    """
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
    best = max([(fun(lo), -0, lo), (fc, -1, c), (fd, -2, d), (fun(hi), -3, hi)])
    return best[2], best[0]


def j_operator(
    u: Callable,
    w: float,
    phi: float,
    s: float,
    gamma_h_inf: float,
    grid_points: int = 4097,
    tol: float = 1e-10,
) -> float:
    """Value of the best instantaneous partial block sale.

    ``sup_{psi in [0, phi]} u(w + s*(1 - exp(-c*psi))/c, phi - psi, s*exp(-c*psi))``
    with ``c = gamma * h(inf)`` (and ``u(w + psi*s, phi - psi, s)`` when ``c = 0``).
    The supremum is located by a uniform scan and polished by golden section on
    the bracketing interval, since the objective need not be concave.
    """
    if phi < 0 or s < 0:
        raise ValueError("j_operator requires phi >= 0 and s >= 0")
    if gamma_h_inf < 0:
        raise ValueError("gamma_h_inf must be non-negative")
    if phi == 0:
        return float(u(w, 0.0, s))

    def objective(psi):
        psi = np.asarray(psi, dtype=float)
        cash = w + s * psi * block_proceeds_factor(gamma_h_inf * psi)
        return u(cash, phi - psi, s * np.exp(-gamma_h_inf * psi))

    psis = np.linspace(0.0, phi, grid_points)
    try:
        values = np.asarray(objective(psis), dtype=float)
        if values.shape != psis.shape:
            raise TypeError
    except (TypeError, ValueError):
        values = np.array([float(objective(x)) for x in psis])
    i = int(np.argmax(values))
    lo, hi = psis[max(i - 1, 0)], psis[min(i + 1, grid_points - 1)]
    _, refined = golden_section_max(lambda x: float(objective(x)), lo, hi, tol)
    return max(float(values[i]), refined)


def linear_value(w: float, phi: float, s: float, gamma: float, alpha0: float) -> float:
    """Risk-neutral value ``w + (1 - exp(-gamma*alpha0*phi)) / (gamma*alpha0) * s`` for ``p = 1``.

    Does not depend on the horizon or on the jump parameters of the noise.
    """
    if phi < 0 or s < 0:
        raise ValueError("linear_value requires phi >= 0 and s >= 0")
    if gamma < 0 or alpha0 < 0:
        raise ValueError("gamma and alpha0 must be non-negative")
    return w + phi * s * block_proceeds_factor(gamma * alpha0 * phi)


def sell_off_value_linear(U: Callable[[float], float], w, phi, s, gamma, alpha0) -> float:
    """Sell-off value ``U(w + (1 - exp(-gamma*alpha0*phi)) / (gamma*alpha0) * s)``.

    Valid for concave non-decreasing ``U`` and a non-positive price drift;
    the caller is responsible for those two conditions.
    """
    return U(linear_value(w, phi, s, gamma, alpha0))


def check_condition_d(spec: SubordinatorSpec) -> bool:
    """``gamma >= alpha1 * beta1 / 8``: the risk-neutral problem reduces to a deterministic one."""
    return spec.gamma >= spec.alpha1 * spec.beta1 / 8.0


def check_convexity_condition(spec: SubordinatorSpec) -> bool:
    """``gamma >= alpha1 / 2``."""
    return spec.gamma >= spec.alpha1 / 2.0
