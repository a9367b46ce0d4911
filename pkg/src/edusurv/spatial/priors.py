"""Penalized-complexity style hyperpriors.

All three families are exceedance-calibrated shrinkage priors toward a base
model: exponential on a standard deviation (base model: effect absent),
a numerically constructed distance-based prior on the BYM2 mixing proportion
(base model: pure IID), and a truncated exponential on the beta-binomial
intra-cluster correlation (base model: binomial).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ..errors import NumericalError


@dataclass(frozen=True)
class PcPriorParams:
    """Exceedance statements, one per hyperparameter family.

    ``P(sigma > u_sigma) = alpha_sigma`` for every standard deviation,
    ``P(lambda > u_mix) = alpha_mix`` for the BYM2 mixing proportion, and
    ``P(rho > u_rho) = alpha_rho`` for the intra-cluster correlation.
    ``sd_beta`` is the plain normal prior sd on the grade intercepts.
    """

    u_sigma: float = 1.0
    alpha_sigma: float = 0.01
    u_mix: float = 0.5
    alpha_mix: float = 2.0 / 3.0
    u_rho: float = 0.25
    alpha_rho: float = 0.01
    sd_beta: float = 3.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "PcPriorParams":
        return cls(**(d or {}))


class SdPrior:
    """Exponential prior p(sigma) = theta * exp(-theta * sigma)."""

    def __init__(self, u: float, alpha: float):
        if not (u > 0 and 0 < alpha < 1):
            raise NumericalError(f"invalid sd prior statement P(sigma>{u})={alpha}")
        self.theta = -np.log(alpha) / u

    def logpdf(self, sigma: float) -> float:
        if sigma <= 0:
            return -np.inf
        return float(np.log(self.theta) - self.theta * sigma)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.exponential(1.0 / self.theta))


class TruncatedExpUnit:
    """Exponential restricted to [0, 1) with P(x > u) = alpha under truncation."""

    def __init__(self, u: float, alpha: float):
        if not (0 < u < 1 and 0 < alpha < 1):
            raise NumericalError(f"invalid exceedance statement P(x>{u})={alpha}")

        def tail(theta):
            return (np.exp(-theta * u) - np.exp(-theta)) / -np.expm1(-theta) - alpha

        # tail(theta->0) = 1-u; decreasing in theta
        if 1 - u <= alpha:
            raise NumericalError(
                f"exceedance P(x>{u})={alpha} not reachable by a decreasing prior"
            )
        self.theta = float(brentq(tail, 1e-8, 1e4))
        self._norm = -np.expm1(-self.theta)

    def logpdf(self, x: float) -> float:
        if not 0.0 <= x < 1.0:
            return -np.inf
        return float(np.log(self.theta) - self.theta * x - np.log(self._norm))

    def sample(self, rng: np.random.Generator) -> float:
        un = rng.uniform()
        return float(-np.log1p(-un * self._norm) / self.theta)


class Bym2MixingPrior:
    """Distance-based prior on the BYM2 mixing proportion, built numerically.

    The distance from the IID base model is d(lam) = sqrt(2 KLD(lam)) where
    the BYM2 covariance contribution has eigenvalues 1 - lam + lam*gamma_i
    (gamma_i from the generalized inverse of the scaled ICAR, zeros included
    for per-component null dimensions). The prior is exponential in d with the
    rate calibrated so P(lam > u) = alpha.
    """

    GRID = 2001

    def __init__(self, gamma: np.ndarray, u: float, alpha: float):
        gamma = np.asarray(gamma, dtype=float)
        if len(gamma) == 0:
            raise NumericalError("BYM2 mixing prior needs at least one dimension")
        lam = np.linspace(0.0, 1.0, self.GRID)[:-1]  # exclude lam = 1 endpoint
        eigs = 1.0 - lam[:, None] + lam[:, None] * gamma[None, :]
        with np.errstate(divide="ignore"):
            kld = 0.5 * np.sum(eigs - 1.0 - np.log(eigs), axis=1)
        dist = np.sqrt(np.maximum(2.0 * kld, 0.0))
        ddist = np.gradient(dist, lam)
        self._lam = lam
        self._dist = dist
        self._ddist = np.abs(ddist)

        if np.allclose(dist, 0.0):
            # structure indistinguishable from IID: flat prior
            self.theta = 0.0
            self._logpdf_grid = np.zeros_like(lam)
            self._cdf = np.linspace(0.0, 1.0, len(lam))
            return

        def exceedance(theta):
            w = np.exp(-theta * dist) * self._ddist
            cdf = np.cumsum(w)
            cdf /= cdf[-1]
            return (1.0 - float(np.interp(u, lam, cdf))) - alpha

        lo, hi = 1e-8, 1e4
        flo, fhi = exceedance(lo), exceedance(hi)
        if flo * fhi > 0:
            # requested exceedance not bracketed; fall back to the closest end
            self.theta = lo if abs(flo) < abs(fhi) else hi
        else:
            self.theta = float(brentq(exceedance, lo, hi))
        w = np.exp(-self.theta * dist) * self._ddist
        w = np.maximum(w, 1e-300)
        norm = np.trapz(w, lam)
        self._logpdf_grid = np.log(w / norm)
        cdf = np.cumsum(w)
        self._cdf = cdf / cdf[-1]

    def logpdf(self, lam: float) -> float:
        if not 0.0 <= lam < 1.0:
            return -np.inf
        return float(np.interp(lam, self._lam, self._logpdf_grid))

    def sample(self, rng: np.random.Generator) -> float:
        return float(np.interp(rng.uniform(), self._cdf, self._lam))
