"""Truncated normal distributions with hard bound guarantees.

Sampling is by inverse-CDF transform, so every draw lands inside the
truncation interval by construction.  When the interval sits entirely in the
upper tail the computation is reflected into the lower tail, where the normal
CDF and its inverse keep full precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateTruncationError, InvalidArgumentError

MIN_TRUNCATION_MASS = 1e-300
_SQRT_2PI = np.sqrt(2.0 * np.pi)
_P_LO = 1e-300
_P_HI = np.nextafter(1.0, 0.0)


def norm_cdf(x):
    """Standard normal CDF, elementwise."""
    return special.ndtr(x)


def norm_cdf_inv(p):
    """Inverse standard normal CDF; p must lie strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise InvalidArgumentError(f"probability must lie in (0, 1), got {p}")
    return special.ndtri(p)


def _phi(z):
    """Standard normal density, with phi(+-inf) = 0."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    finite = np.isfinite(z)
    out[finite] = np.exp(-0.5 * z[finite] ** 2) / _SQRT_2PI
    return out


def _interval_mass(alpha: float, beta: float) -> float:
    """Phi(beta) - Phi(alpha), computed in whichever tail keeps precision."""
    if alpha > 0:
        return float(special.ndtr(-alpha) - special.ndtr(-beta))
    return float(special.ndtr(beta) - special.ndtr(alpha))


@dataclass(frozen=True)
class TruncatedNormalSpec:
    """Normal(mu, sigma^2) restricted to [lb, ub]; bounds may be infinite."""

    mu: float
    sigma: float
    lb: float
    ub: float

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise InvalidArgumentError(f"mu must be finite, got {self.mu}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")
        if np.isnan(self.lb) or np.isnan(self.ub) or self.lb >= self.ub:
            raise InvalidArgumentError(f"bounds must satisfy lb < ub, got [{self.lb}, {self.ub}]")
        if self.mass <= MIN_TRUNCATION_MASS:
            raise DegenerateTruncationError(
                f"truncation [{self.lb}, {self.ub}] of N({self.mu}, {self.sigma}^2) has no mass"
            )

    @property
    def alpha(self) -> float:
        return (self.lb - self.mu) / self.sigma

    @property
    def beta(self) -> float:
        return (self.ub - self.mu) / self.sigma

    @property
    def mass(self) -> float:
        return _interval_mass(self.alpha, self.beta)


def tn_sample(spec: TruncatedNormalSpec, n: int, seed) -> np.ndarray:
    """Draw n samples by inverse-CDF transform; all lie in [lb, ub].

    ``seed`` is an int-like seed or a numpy Generator.
    """
    if n < 0:
        raise InvalidArgumentError(f"sample count must be >= 0, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(n)
    alpha, beta = spec.alpha, spec.beta
    if alpha > 0:
        # interval in the upper tail: work on the mirrored interval [-beta, -alpha]
        p_lo = special.ndtr(-beta)
        p = p_lo + u * (special.ndtr(-alpha) - p_lo)
        z = -special.ndtri(np.clip(p, _P_LO, _P_HI))
    else:
        p_lo = special.ndtr(alpha)
        p = p_lo + u * (special.ndtr(beta) - p_lo)
        z = special.ndtri(np.clip(p, _P_LO, _P_HI))
    return np.clip(spec.mu + spec.sigma * z, spec.lb, spec.ub)


def tn_pdf(spec: TruncatedNormalSpec, x) -> np.ndarray:
    """Density of the truncated normal; exactly 0 outside [lb, ub]."""
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)):
        raise InvalidArgumentError("pdf evaluated at NaN")
    z = np.where(np.isfinite(arr), (arr - spec.mu) / spec.sigma, np.inf)
    inside = (arr >= spec.lb) & (arr <= spec.ub)
    dens = _phi(z) / (spec.sigma * spec.mass)
    out = np.where(inside, dens, 0.0)
    return out if out.ndim else float(out)


def tn_cdf(spec: TruncatedNormalSpec, x) -> np.ndarray:
    """CDF of the truncated normal, clipped to [0, 1]."""
    arr = np.asarray(x, dtype=float)
    z = np.clip((arr - spec.mu) / spec.sigma, spec.alpha, spec.beta)
    if spec.alpha > 0:
        num = special.ndtr(-spec.alpha) - special.ndtr(-z)
    else:
        num = special.ndtr(z) - special.ndtr(spec.alpha)
    out = np.clip(num / spec.mass, 0.0, 1.0)
    return out if out.ndim else float(out)


def tn_mean(spec: TruncatedNormalSpec) -> float:
    """Analytic mean: mu + sigma (phi(alpha) - phi(beta)) / mass."""
    a, b = np.asarray(spec.alpha), np.asarray(spec.beta)
    return spec.mu + spec.sigma * float(_phi(a) - _phi(b)) / spec.mass
