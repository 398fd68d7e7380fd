"""Drift-plus-Gamma subordinator driving the random size of market impact.

The process is ``L_t = gamma * t + G_t`` where ``G_t ~ Gamma(alpha1 * t, beta1)``
(shape, scale).  Its Levy measure is ``nu(dz) = alpha1 / z * exp(-z / beta1) dz``.

Increments are always drawn in aggregate from the exact Gamma law; jumps are
never generated one by one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SubordinatorSpec",
    "LevyMoments",
    "moments",
    "laplace_exponent",
    "levy_density",
    "standard_gamma",
    "gamma_variates",
    "sample_increment",
    "discrete_noise",
    "make_stream",
]


@dataclass(frozen=True)
class SubordinatorSpec:
    """Law of the impact clock ``L``.

    Attributes
    ----------
    gamma : float
        Drift per unit time (>= 0).
    alpha1 : float
        Gamma shape per unit time (>= 0). ``alpha1 = 0`` gives ``L_t = gamma * t``.
    beta1 : float
        Gamma scale (> 0).
    """

    gamma: float
    alpha1: float = 0.0
    beta1: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "alpha1", "beta1"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.alpha1 < 0:
            raise ValueError(f"alpha1 must be non-negative, got {self.alpha1}")
        if self.beta1 <= 0:
            raise ValueError(f"beta1 must be positive, got {self.beta1}")

    @property
    def gamma_tilde(self) -> float:
        """E[L_1]."""
        return self.gamma + self.alpha1 * self.beta1

    @property
    def has_jumps(self) -> bool:
        return self.alpha1 > 0


@dataclass(frozen=True)
class LevyMoments:
    mean_rate: float
    variance_rate: float
    norm1: float
    norm2: float


def moments(spec: SubordinatorSpec) -> LevyMoments:
    """Closed-form moments of ``L`` per unit time and the norms of its Levy measure.

    ``norm_p = (int z^p nu(dz))^(1/p)``; for the Gamma measure
    ``int z nu(dz) = alpha1 * beta1`` and ``int z^2 nu(dz) = alpha1 * beta1**2``.
    """
    a, b = spec.alpha1, spec.beta1
    return LevyMoments(
        mean_rate=spec.gamma + a * b,
        variance_rate=a * b * b,
        norm1=a * b,
        norm2=b * math.sqrt(a),
    )


def laplace_exponent(spec: SubordinatorSpec, lam):
    """``psi(lam)`` with ``E[exp(-lam * L_t)] = exp(-t * psi(lam))``.

    Accepts a scalar or an array of non-negative arguments.
    """
    arr = np.asarray(lam, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("laplace_exponent requires lam >= 0")
    out = spec.gamma * arr + spec.alpha1 * np.log1p(spec.beta1 * arr)
    return float(out) if out.ndim == 0 else out


def levy_density(spec: SubordinatorSpec, z):
    """Density of the Levy measure ``alpha1 / z * exp(-z / beta1)`` on ``z > 0``."""
    z = np.asarray(z, dtype=float)
    return spec.alpha1 / z * np.exp(-z / spec.beta1)


def _marsaglia_tsang(shape: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # Valid for shape >= 1.
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        v = 1.0 + c * x
        positive = v > 0
        v = np.where(positive, v, 1.0) ** 3
        with np.errstate(divide="ignore"):
            log_u = np.log(u)
        accept = positive & (
            (u < 1.0 - 0.0331 * x**4) | (log_u < 0.5 * x * x + d * (1.0 - v + np.log(v)))
        )
        out[pending[accept]] = d * v[accept]
        pending = pending[~accept]
    return out


def standard_gamma(shape: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact unit-scale Gamma variates for any shape > 0.

    Marsaglia-Tsang squeeze/rejection for shape >= 1; for shape < 1 the boost
    ``G_a = G_{a+1} * U**(1/a)`` keeps the acceptance rate of the shape >= 1
    case.  At very small shapes most variates are far below the smallest
    double and come out as exactly 0, which is the correctly rounded value.
    """
    if shape <= 0:
        raise ValueError(f"shape must be positive, got {shape}")
    if shape >= 1.0:
        return _marsaglia_tsang(shape, size, rng)
    g = _marsaglia_tsang(shape + 1.0, size, rng)
    u = rng.random(size)
    with np.errstate(divide="ignore", under="ignore"):
        return g * np.exp(np.log(u) / shape)


def gamma_variates(shape: float, scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if shape == 0:
        return np.zeros(size)
    return scale * standard_gamma(shape, size, rng)


def sample_increment(spec: SubordinatorSpec, dt: float, rng: np.random.Generator, size: int | None = None):
    """Draw ``L_{r+dt} - L_r = gamma * dt + Gamma(alpha1 * dt, beta1)``.

    Returns a float when ``size`` is None, otherwise an array of ``size`` draws.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = 1 if size is None else int(size)
    jumps = gamma_variates(spec.alpha1 * dt, spec.beta1, n, rng)
    out = spec.gamma * dt + jumps
    return float(out[0]) if size is None else out


def discrete_noise(spec: SubordinatorSpec, n: int, rng: np.random.Generator, size: int | None = None):
    """Discrete-model impact noise ``c = gamma + Gamma(alpha1 / n, n * beta1)``.

    Equal in law to ``n * (L_{1/n} - L_0)``, i.e. the time-``1/n`` increment
    rescaled to unit mean rate.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    m = 1 if size is None else int(size)
    out = spec.gamma + gamma_variates(spec.alpha1 / n, n * spec.beta1, m, rng)
    return float(out[0]) if size is None else out


def make_stream(seed: int, *indices: int) -> np.random.Generator:
    """Counter-based stream keyed by ``seed`` and up to three indices.

    The draws depend only on the arguments, never on creation order, so
    work can be split across threads without changing results.
    """
    if len(indices) > 3:
        raise ValueError("at most three stream indices are supported")
    key = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
    counter = np.zeros(4, dtype=np.uint64)
    for pos, idx in enumerate(indices, start=1):
        if idx < 0:
            raise ValueError("stream indices must be non-negative")
        counter[pos] = idx
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
