"""Drive-power saturation of the spin ensemble.

The spin dip visibility is

    Y(P) = (g_e / g) / (1 + 4 L^2 / (g_i g_par)),   L^2 = alpha * P

so the fraction of spins left in the ground state is N_eq/N = Y / (g_e/g)
and the collective coupling renormalizes to G sqrt(N_eq/N).  Rates are in
MHz, powers in mW and alpha in MHz^2/mW.  The magnon mode is taken as
power independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import NeverStrongError, UndefinedVisibilityError, ValidationError


@dataclass(frozen=True)
class SaturationParams:
    alpha: float = 1.0
    gamma_par: float = 1.0
    gamma_e: float = 10.0
    gamma_i: float = 20.0

    def __post_init__(self):
        for name in ("alpha", "gamma_par", "gamma_e", "gamma_i"):
            if getattr(self, name) < 0:
                raise ValidationError(name, f"must be >= 0 (got {getattr(self, name)})")

    @property
    def gamma(self):
        return self.gamma_e + self.gamma_i


def dbm_to_mw(dbm):
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw):
    return 10.0 * math.log10(mw)


def _saturation_ratio(p_in_mW, sp: SaturationParams):
    """4 L^2 / (g_i g_par); infinite when the spins cannot relax at finite drive."""
    if p_in_mW < 0:
        raise ValidationError("p_in_mW", f"must be >= 0 (got {p_in_mW})")
    drive = 4.0 * sp.alpha * p_in_mW
    relax = sp.gamma_i * sp.gamma_par
    if drive == 0:
        return 0.0
    if relax == 0:
        return math.inf
    return drive / relax


def equilibrium_fraction(p_in_mW, sp: SaturationParams) -> float:
    """N_eq / N in [0, 1]."""
    r = _saturation_ratio(p_in_mW, sp)
    return 0.0 if math.isinf(r) else 1.0 / (1.0 + r)


def visibility(p_in_mW, sp: SaturationParams) -> float:
    if sp.gamma == 0:
        raise UndefinedVisibilityError("visibility undefined for zero total spin linewidth")
    return sp.gamma_e / sp.gamma * equilibrium_fraction(p_in_mW, sp)


def effective_coupling(G_MHz, n_fraction) -> float:
    if not 0 <= n_fraction <= 1:
        raise ValidationError("n_fraction", f"must lie in [0, 1] (got {n_fraction})")
    return G_MHz * math.sqrt(n_fraction)


def threshold_power(G, kappa, gamma, sp: SaturationParams) -> float:
    """Smallest power (mW) where G sqrt(N_eq/N) falls to max(kappa, gamma).

    Returns ``math.inf`` when both losses vanish: the system stays strongly
    coupled at every finite power.
    """
    loss = max(kappa, gamma)
    if loss == 0:
        if G > 0:
            return math.inf
        raise NeverStrongError("zero coupling is never strong")
    if G <= loss:
        raise NeverStrongError(f"G={G} MHz does not exceed max(kappa, gamma)={loss} MHz")
    if sp.alpha == 0:
        return math.inf
    # 1 / (1 + 4 a P / (g_i g_par)) = (loss / G)^2
    return sp.gamma_i * sp.gamma_par * ((G / loss) ** 2 - 1.0) / (4.0 * sp.alpha)


def calibrate_alpha(G, kappa, gamma, threshold_mW, gamma_i, gamma_par) -> float:
    """alpha (MHz^2/mW) that places the strong-coupling threshold at ``threshold_mW``."""
    loss = max(kappa, gamma)
    if G <= loss:
        raise NeverStrongError(f"G={G} MHz does not exceed max(kappa, gamma)={loss} MHz")
    if threshold_mW <= 0:
        raise ValidationError("threshold_mW", "must be > 0")
    return gamma_i * gamma_par * ((G / loss) ** 2 - 1.0) / (4.0 * threshold_mW)


def half_saturation_power(sp: SaturationParams) -> float:
    """Power where 4 L^2 = g_i g_par, i.e. the visibility halves."""
    if sp.alpha == 0:
        return math.inf
    return sp.gamma_i * sp.gamma_par / (4.0 * sp.alpha)


def fit_alpha(p_in_mW, upsilon, sp: SaturationParams, alpha0=None) -> float:
    """Least-squares alpha (MHz^2/mW) from a measured visibility curve; other rates held fixed."""
    p = np.asarray(p_in_mW, dtype=float)
    y = np.asarray(upsilon, dtype=float)
    if p.shape != y.shape or p.size < 2:
        raise ValidationError("upsilon", "need matching power and visibility arrays of length >= 2")
    if sp.gamma == 0:
        raise UndefinedVisibilityError("visibility undefined for zero total spin linewidth")
    relax = sp.gamma_i * sp.gamma_par
    if relax == 0:
        raise ValidationError("gamma_par", "alpha is not identifiable without spin relaxation")
    v0 = sp.gamma_e / sp.gamma

    def resid(x):
        return v0 / (1.0 + 4.0 * np.exp(x[0]) * p / relax) - y

    if alpha0 is None:
        # invert the point closest to half saturation for a starting guess
        k = int(np.argmin(np.abs(y - v0 / 2)))
        ratio = v0 / max(y[k], 1e-300) - 1.0
        alpha0 = relax * max(ratio, 1e-6) / (4.0 * max(p[k], 1e-300))
    sol = least_squares(resid, [math.log(alpha0)], method="lm", xtol=1e-15, ftol=1e-15)
    return float(math.exp(sol.x[0]))
