"""Convex bounds used by the successive approximation loops.

Every bound here is tangent to the quantity it replaces at its expansion
point (equal value and gradient) and one-sided everywhere else:

* ``log_ratio_lower`` / ``log_ratio_upper`` bracket log(1 + x/y);
* ``bilinear_upper`` / ``bilinear_lower`` bracket the product x*y;
* rate surrogates apply the log-ratio bounds to the ZF SINR, giving a
  concave lower and a convex upper bound on the per-session rate;
* the penalty terms measure how far a point is from (a) delivering
  exactly the data it promises and (b) having a binary assignment, and
  their majorants are the convex upper bounds minimized per iteration.

Functions are unit-agnostic: callers pick a consistent scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import NetworkConfig, UEProfile

__all__ = [
    "DENOM_FLOOR",
    "log_ratio_lower",
    "log_ratio_upper",
    "bilinear_upper",
    "bilinear_lower",
    "RateLowerBound",
    "RateUpperBound",
    "rate_lower_surrogate",
    "rate_upper_surrogate",
    "penalty_V1",
    "penalty_V2",
    "penalty_V1_majorant",
    "penalty_V2_majorant",
]

# Expansion denominators are floored here so that iterates with idle UEs
# (zero power) still produce finite, well-conditioned bounds.
DENOM_FLOOR = 1e-12


def _require_positive(**vals):
    for name, v in vals.items():
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")


def log_ratio_lower(x: float, y: float, x0: float, y0: float) -> float:
    """Concave-in-(1/x, y) lower bound on log(1 + x/y), tight at (x0, y0)."""
    _require_positive(x=x, y=y, x0=x0, y0=y0)
    s = x0 + y0
    return float(np.log1p(x0 / y0) + 2.0 * x0 / s - x0**2 / (s * x) - x0 * y / (s * y0))


def log_ratio_upper(x: float, y: float, x0: float, y0: float) -> float:
    """Convex upper bound on log(1 + x/y) (linear in x + y minus log y)."""
    _require_positive(x=x, y=y, x0=x0, y0=y0)
    s = x0 + y0
    return float(np.log(s) + (x + y - s) / s - np.log(y))


def bilinear_upper(x, y, x0, y0):
    """Convex upper bound on x*y, tight at (x0, y0)."""
    return 0.25 * ((x + y) ** 2 - 2.0 * (x0 - y0) * (x - y) + (x0 - y0) ** 2)


def bilinear_lower(x, y, x0, y0):
    """Concave lower bound on x*y, tight at (x0, y0)."""
    return -0.25 * ((x - y) ** 2 - 2.0 * (x0 + y0) * (x + y) + (x0 + y0) ** 2)


@dataclass(frozen=True)
class RateLowerBound:
    """Concave lower bound on one UE's session rate.

    value(eta) = scale * (const - inv_coef * upsilon0 / Upsilon(eta)
                          - phi_coef * Phi(eta))
    with Upsilon(eta) = gain * eta_k (desired-signal term) and
    Phi(eta) = interf * sum(eta) + 1 (interference-plus-noise term).
    The 1/Upsilon piece is the only non-linear part; it is kept in the
    normalized form upsilon0/Upsilon so conic liftings stay O(1).
    """

    k: int
    gain: float  # coefficient of eta_k inside Upsilon
    interf: float  # coefficient of sum(eta) inside Phi
    upsilon0: float
    phi0: float
    scale: float  # prelog * B / ln 2
    const: float
    inv_coef: float  # multiplies upsilon0 / Upsilon
    phi_coef: float  # multiplies Phi

    def value(self, eta_session: np.ndarray) -> float:
        eta_session = np.asarray(eta_session, dtype=float)
        ups = max(self.gain * eta_session[self.k], DENOM_FLOOR)
        phi = self.interf * float(np.sum(eta_session)) + 1.0
        return self.scale * (
            self.const - self.inv_coef * self.upsilon0 / ups - self.phi_coef * phi
        )


@dataclass(frozen=True)
class RateUpperBound:
    """Convex upper bound on one UE's session rate.

    value(eta) = scale * (const + (Upsilon(eta) + Phi(eta)) / denom0
                          - log Phi(eta))
    where denom0 = Upsilon0 + Phi0 is frozen at the expansion point.
    """

    k: int
    gain: float
    interf: float
    upsilon0: float
    phi0: float
    scale: float
    const: float  # log(denom0) - 1
    denom0: float

    def value(self, eta_session: np.ndarray) -> float:
        eta_session = np.asarray(eta_session, dtype=float)
        ups = self.gain * eta_session[self.k]
        phi = self.interf * float(np.sum(eta_session)) + 1.0
        return self.scale * (self.const + (ups + phi) / self.denom0 - np.log(phi))


def _sinr_terms(k: int, K_i: int, profiles: list[UEProfile], config: NetworkConfig):
    p = profiles[k]
    gain = (config.M - K_i) * config.rho * p.sigma2
    interf = config.rho * (p.beta - p.sigma2)
    return gain, interf


def rate_lower_surrogate(
    eta_expansion: np.ndarray,
    k: int,
    K_i: int,
    profiles: list[UEProfile],
    config: NetworkConfig,
) -> RateLowerBound:
    """Expand the concave rate lower bound at the given power iterate."""
    eta_expansion = np.asarray(eta_expansion, dtype=float)
    gain, interf = _sinr_terms(k, K_i, profiles, config)
    ups0 = max(gain * eta_expansion[k], DENOM_FLOOR)
    phi0 = max(interf * float(np.sum(eta_expansion)) + 1.0, DENOM_FLOOR)
    s = ups0 + phi0
    scale = config.prelog * config.B / np.log(2.0)
    return RateLowerBound(
        k=k,
        gain=gain,
        interf=interf,
        upsilon0=ups0,
        phi0=phi0,
        scale=scale,
        const=float(np.log1p(ups0 / phi0) + 2.0 * ups0 / s),
        inv_coef=ups0 / s,
        phi_coef=ups0 / (s * phi0),
    )


def rate_upper_surrogate(
    eta_expansion: np.ndarray,
    k: int,
    K_i: int,
    profiles: list[UEProfile],
    config: NetworkConfig,
) -> RateUpperBound:
    """Expand the convex rate upper bound at the given power iterate."""
    eta_expansion = np.asarray(eta_expansion, dtype=float)
    gain, interf = _sinr_terms(k, K_i, profiles, config)
    ups0 = max(gain * eta_expansion[k], DENOM_FLOOR)
    phi0 = max(interf * float(np.sum(eta_expansion)) + 1.0, DENOM_FLOOR)
    denom0 = ups0 + phi0
    scale = config.prelog * config.B / np.log(2.0)
    return RateUpperBound(
        k=k,
        gain=gain,
        interf=interf,
        upsilon0=ups0,
        phi0=phi0,
        scale=scale,
        const=float(np.log(denom0) - 1.0),
        denom0=denom0,
    )


def penalty_V1(r_tilde: np.ndarray, t_tilde: np.ndarray, S: np.ndarray) -> float:
    """Total over-promise of the rate-time products vs the data split."""
    return float(np.sum(np.asarray(r_tilde) * np.asarray(t_tilde) - np.asarray(S)))


def penalty_V2(a: np.ndarray) -> float:
    """Distance of the assignment matrix from {0,1} (zero iff binary)."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(a - a**2))


def penalty_V1_majorant(
    r_tilde: np.ndarray,
    t_tilde: np.ndarray,
    S: np.ndarray,
    r_tilde0: np.ndarray,
    t_tilde0: np.ndarray,
) -> float:
    """Convex upper bound on penalty_V1, tight at the expansion point."""
    r, t = np.asarray(r_tilde, dtype=float), np.asarray(t_tilde, dtype=float)
    r0, t0 = np.asarray(r_tilde0, dtype=float), np.asarray(t_tilde0, dtype=float)
    return float(np.sum(bilinear_upper(r, t, r0, t0) - np.asarray(S)))


def penalty_V2_majorant(a: np.ndarray, a0: np.ndarray) -> float:
    """Convex (affine) upper bound on penalty_V2, tight at the expansion."""
    a = np.asarray(a, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    return float(np.sum(a - 2.0 * a0 * a + a0**2))
