"""Background processing and Lorentzian dip fitting of transmission maps.

Dips are modelled as

    y(f) = baseline - depth * (w/2)^2 / ((f - f_m)^2 + (w/2)^2)

with f_m and f in GHz.  Fit results report w_m in MHz.  Coupling
extraction works on power traces |S21|^2, where an isolated side-coupled
resonance is an exact Lorentzian whose full width equals the total decay
rate of the mode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.signal import find_peaks

from .errors import (CrossingNotResolved, DegenerateFit, FitError, NoDipFound, NonConvergence,
                     ValidationError)
from .hybrid_response import SpectrumMap

log = logging.getLogger(__name__)

MAX_ITER = 200
GTOL = 1e-10
MIN_POINTS = 8


@dataclass
class Trace:
    f_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.f_axis = np.asarray(self.f_axis, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.f_axis.shape != self.values.shape or self.f_axis.ndim != 1:
            raise ValidationError("values", "f_axis and values must be 1-D arrays of equal length")
        if len(self.f_axis) > 1 and not np.all(np.diff(self.f_axis) > 0):
            if np.all(np.diff(self.f_axis) < 0):
                self.f_axis = self.f_axis[::-1]
                self.values = self.values[::-1]
            else:
                raise ValidationError("f_axis", "must be strictly monotone")

    def window(self, window=None) -> "Trace":
        if window is None:
            return self
        lo, hi = sorted(window)
        sel = (self.f_axis >= lo) & (self.f_axis <= hi)
        return Trace(self.f_axis[sel], self.values[sel])


@dataclass
class LorentzianFit:
    """One fitted dip.  Covariance is ordered (f_m [GHz], w_m [MHz], depth, baseline)."""

    f_m: float
    w_m: float
    depth: float
    baseline: float
    covariance: np.ndarray = field(repr=False)
    residual_norm: float = 0.0
    n_iter: int = 0

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def to_dict(self):
        err = self.stderr
        return {"f_m_GHz": self.f_m, "w_m_MHz": self.w_m, "depth": self.depth,
                "baseline": self.baseline, "f_m_err_GHz": float(err[0]),
                "w_m_err_MHz": float(err[1]), "residual_norm": self.residual_norm,
                "error_model": "jacobian_covariance"}


@dataclass
class CouplingExtract:
    G: float
    crossing_field: float
    kappa: float
    gamma: float
    cooperativity: float
    G_half_separation: float = float("nan")
    separations: Optional[np.ndarray] = field(default=None, repr=False)
    fields: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {"G_MHz": self.G, "crossing_field_mT": self.crossing_field, "kappa_MHz": self.kappa,
                "gamma_MHz": self.gamma, "cooperativity": self.cooperativity,
                "G_half_separation_MHz": self.G_half_separation}


def cooperativity(G, kappa, gamma):
    return G ** 2 / (kappa * gamma)


# ---------------------------------------------------------------------------
# model


def lorentzian(f, f_m, w, depth, baseline):
    hw2 = (w / 2) ** 2
    return baseline - depth * hw2 / ((f - f_m) ** 2 + hw2)


def lorentzian_jacobian(f, f_m, w, depth, baseline):
    """Columns d/d(f_m, w, depth, baseline)."""
    hw2 = (w / 2) ** 2
    x = f - f_m
    den = x ** 2 + hw2
    shape = hw2 / den
    d_fm = -depth * hw2 * 2 * x / den ** 2
    d_w = -depth * (w / 2) * x ** 2 / den ** 2
    return np.column_stack([d_fm, d_w, -shape, np.ones_like(f)])


def multi_lorentzian(f, params):
    """Shared baseline: params = (f1, w1, d1, f2, w2, d2, ..., baseline)."""
    p = np.asarray(params)
    y = np.full_like(f, p[-1], dtype=float)
    for k in range(0, len(p) - 1, 3):
        y = y + lorentzian(f, p[k], p[k + 1], p[k + 2], 0.0)
    return y


def multi_lorentzian_jacobian(f, params):
    p = np.asarray(params)
    cols = []
    for k in range(0, len(p) - 1, 3):
        cols.append(lorentzian_jacobian(f, p[k], p[k + 1], p[k + 2], 0.0)[:, :3])
    cols.append(np.ones((len(f), 1)))
    return np.hstack(cols)


# ---------------------------------------------------------------------------
# optimizer


def levenberg_marquardt(residual, jacobian, x0, max_iter=MAX_ITER, gtol=GTOL, xtol=1e-13,
                        ftol=1e-15, history=None):
    """Damped Gauss-Newton with Marquardt scaling; the cost never increases.

    Returns (x, cost, n_iter).  Raises NonConvergence carrying the best
    parameters when the iteration cap is hit first.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    g0 = None
    floor = cost * 1e-28
    for it in range(1, max_iter + 1):
        Jm = jacobian(x)
        g = Jm.T @ r
        gnorm = np.linalg.norm(g, np.inf)
        if g0 is None:
            g0 = max(gnorm, 1e-300)
        if gnorm <= gtol * g0 or cost <= floor:
            return x, cost, it - 1
        A = Jm.T @ Jm
        d = np.diag(A).copy()
        d[d <= 0] = 1.0
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            xn = x + step
            rn = residual(xn)
            cn = 0.5 * float(rn @ rn)
            if np.isfinite(cn) and cn <= cost:
                improved = True
                break
            lam *= 10
        if not improved:
            # no descent direction left at working precision
            return x, cost, it
        rel_step = np.linalg.norm(step) / (np.linalg.norm(x) + xtol)
        rel_cost = (cost - cn) / max(cost, 1e-300)
        x, r, cost = xn, rn, cn
        if history is not None:
            history.append(cost)
        lam = max(lam / 10, 1e-12)
        if rel_step < xtol or rel_cost < ftol:
            return x, cost, it
    raise NonConvergence(f"Levenberg-Marquardt hit the iteration cap ({max_iter})", best=x)


def _covariance(Jm, r, n_par):
    dof = max(len(r) - n_par, 1)
    s2 = float(r @ r) / dof
    try:
        return np.linalg.pinv(Jm.T @ Jm) * s2
    except np.linalg.LinAlgError:
        return np.full((n_par, n_par), np.nan)


# ---------------------------------------------------------------------------
# dip detection


def _mad(v):
    return float(np.median(np.abs(v - np.median(v))))


def prominence_threshold(values):
    """3 x MAD of the trace, floored at 8 sigma of the point-to-point noise.

    The MAD of a noise-only trace is about 0.67 sigma, so on its own it lets
    noise spikes through; the floor (sigma from the MAD of first differences)
    sits above the largest noise prominence seen in long random traces.
    """
    v = np.asarray(values, dtype=float)
    sigma = 1.4826 * _mad(np.diff(v)) / np.sqrt(2) if v.size > 2 else 0.0
    return max(3.0 * _mad(v), 8.0 * sigma)


def find_dips(trace: Trace, max_dips=None):
    """Indices of prominence-qualified minima, deepest first."""
    y = trace.values
    thresh = prominence_threshold(y)
    base = float(np.median(y))
    if not base - y.min() > thresh:
        return []
    idx, props = find_peaks(-y, prominence=max(thresh, 1e-300))
    if len(idx) == 0:
        k = int(np.argmin(y))
        if 0 < k < len(y) - 1 or base - y[k] > thresh:
            idx, prom = np.array([k]), np.array([base - y[k]])
        else:
            return []
    else:
        prom = props["prominences"]
    order = np.lexsort((idx, -prom))
    out = [int(idx[k]) for k in order]
    return out[:max_dips] if max_dips else out


def _half_width(f, y, k, baseline):
    depth = baseline - y[k]
    level = baseline - depth / 2
    lo = k
    while lo > 0 and y[lo - 1] < level:
        lo -= 1
    hi = k
    while hi < len(y) - 1 and y[hi + 1] < level:
        hi += 1
    df = np.median(np.diff(f))
    return max(f[hi] - f[lo] + df, 2 * df)


def _check_points(trace):
    if len(trace.f_axis) < MIN_POINTS:
        raise ValidationError("trace", f"need >= {MIN_POINTS} points in the fit window "
                                       f"(got {len(trace.f_axis)})")


def _single_from_params(p, cov, resid, n_iter):
    f_m, w, depth, baseline = p
    scale = np.array([1.0, 1e3, 1.0, 1.0])
    return LorentzianFit(f_m=float(f_m), w_m=float(abs(w) * 1e3), depth=float(depth),
                         baseline=float(baseline), covariance=cov * np.outer(scale, scale),
                         residual_norm=float(np.linalg.norm(resid)), n_iter=n_iter)


def fit_dip(trace: Trace, window=None) -> LorentzianFit:
    """Least-squares Lorentzian fit of the deepest dip in ``trace``."""
    tr = trace.window(window)
    _check_points(tr)
    f, y = tr.f_axis, tr.values
    dips = find_dips(tr)
    if not dips:
        raise NoDipFound("no dip above the 3 x MAD prominence threshold")
    k = dips[0]
    baseline = float(np.median(y))
    x0 = np.array([f[k], _half_width(f, y, k, baseline), baseline - y[k], baseline])

    def res(p):
        return lorentzian(f, *p) - y

    def jac(p):
        return lorentzian_jacobian(f, *p)

    p, _, n_iter = levenberg_marquardt(res, jac, x0)
    p[1] = abs(p[1])
    r = res(p)
    fit = _single_from_params(p, _covariance(jac(p), r, 4), r, n_iter)
    if fit.depth < 0:
        raise NoDipFound("fitted feature is a peak, not a dip")
    return fit


def fit_double_dip(trace: Trace, init=None, window=None) -> Tuple[LorentzianFit, LorentzianFit]:
    """Two Lorentzian dips on a shared baseline; returned with centers ascending.

    ``init`` may give two approximate centers (GHz) or full (f, w[GHz], depth)
    triples.
    """
    tr = trace.window(window)
    _check_points(tr)
    f, y = tr.f_axis, tr.values
    df = float(np.median(np.diff(f)))
    baseline = float(np.median(y))
    if init is None:
        dips = find_dips(tr, max_dips=2)
        if not dips:
            raise NoDipFound("no dip above the 3 x MAD prominence threshold")
        if len(dips) < 2:
            raise DegenerateFit("only one prominence-separated minimum")
        triples = [(f[k], _half_width(f, y, k, baseline), baseline - y[k]) for k in dips]
    else:
        triples = []
        for item in init:
            if np.ndim(item) == 0:
                k = int(np.argmin(np.abs(f - item)))
                triples.append((float(item), 4 * df, max(baseline - y[k], 1e-6)))
            else:
                triples.append(tuple(float(v) for v in item))
        if len(triples) != 2:
            raise ValidationError("init", "need exactly two dips")
    # sharing the baseline between two half-width estimates overestimates the widths of close dips
    sep = abs(triples[0][0] - triples[1][0])
    triples = [(c, min(w, max(sep, 2 * df)), d) for c, w, d in triples]
    triples.sort(key=lambda t: t[0])
    x0 = np.array([*triples[0], *triples[1], baseline])

    def res(p):
        return multi_lorentzian(f, p) - y

    def jac(p):
        return multi_lorentzian_jacobian(f, p)

    p, _, n_iter = levenberg_marquardt(res, jac, x0)
    p[1], p[4] = abs(p[1]), abs(p[4])
    r = res(p)
    cov = _covariance(jac(p), r, 7)
    if p[3] < p[0]:
        perm = [3, 4, 5, 0, 1, 2, 6]
        p = p[perm]
        cov = cov[np.ix_(perm, perm)]
    if abs(p[3] - p[0]) < df:
        raise DegenerateFit(f"centers {p[0]:.6f} and {p[3]:.6f} GHz closer than the grid step")
    fits = []
    for k in (0, 3):
        idx = [k, k + 1, k + 2, 6]
        fits.append(_single_from_params(np.array([p[k], p[k + 1], p[k + 2], p[6]]),
                                        cov[np.ix_(idx, idx)], r, n_iter))
    return fits[0], fits[1]


# ---------------------------------------------------------------------------
# map processing


def _magnitude(m: SpectrumMap):
    return np.asarray(m.magnitude, dtype=float)


def pseudo_derivative(m: SpectrumMap) -> SpectrumMap:
    """d|S21|/dB0 by centered differences (one-sided at the edges), per mT."""
    if len(m.b0_axis) < 2:
        raise ValidationError("b0_axis", "pseudo-derivative needs at least two field points")
    d = np.gradient(_magnitude(m), m.b0_axis, axis=0, edge_order=1)
    meta = dict(m.metadata, processing="pseudo_derivative")
    return SpectrumMap(m.b0_axis.copy(), m.f_axis.copy(), d, meta)


def background_subtract(m: SpectrumMap) -> SpectrumMap:
    """Remove the per-frequency median over the field axis from |S21|."""
    mag = _magnitude(m)
    out = mag - np.median(mag, axis=0, keepdims=True)
    meta = dict(m.metadata, processing="background_subtract")
    return SpectrumMap(m.b0_axis.copy(), m.f_axis.copy(), out, meta)


# ---------------------------------------------------------------------------
# coupling extraction


def power_traces(m: SpectrumMap):
    return _magnitude(m) ** 2


@dataclass
class _FieldFit:
    b0: float
    fits: tuple


def _fit_map(m: SpectrumMap, crossing_window=None, f_window=None):
    power = power_traces(m)
    out = []
    for i, b in enumerate(m.b0_axis):
        if crossing_window is not None and not (min(crossing_window) <= b <= max(crossing_window)):
            continue
        tr = Trace(m.f_axis, power[i]).window(f_window)
        try:
            fits = fit_double_dip(tr)
        except (FitError, ValidationError):
            continue
        # two dips sitting within half a width of each other are one dip fitted twice
        if fits[1].f_m - fits[0].f_m < 0.5e-3 * min(fits[0].w_m, fits[1].w_m):
            continue
        if min(fits[0].depth, fits[1].depth) <= prominence_threshold(tr.values):
            continue
        lo, hi = tr.f_axis[0], tr.f_axis[-1]
        if not all(lo <= ft.f_m <= hi for ft in fits):
            continue
        out.append(_FieldFit(float(b), fits))
    return out


def _vertex(b, sep):
    """Minimum of sep(B) from a quadratic fit of sep^2 around the sampled minimum."""
    k = int(np.argmin(sep))
    near = np.abs(np.arange(len(sep)) - k) <= max(3, len(sep) // 20)
    sel = near & (sep < 1.5 * sep[k])
    if sel.sum() >= 5:
        c2, c1, c0 = np.polyfit(b[sel], sep[sel] ** 2, 2)
        if c2 > 0:
            b_min = -c1 / (2 * c2)
            s2 = c0 - c1 ** 2 / (4 * c2)
            if b[sel].min() <= b_min <= b[sel].max() and s2 > 0:
                return float(b_min), float(math.sqrt(s2))
    return float(b[k]), float(sep[k])


def _coupled_power(params, b_rel, f, crosstalk):
    """|S21|^2 of one magnon and one spin mode with linear dispersions about the crossing.

    params = (m0, m1, s0, s1, G, k_e, k_i, g_e, g_i, scale); frequencies in
    GHz, slopes in GHz/mT, rates in MHz.
    """
    m0, m1, s0, s1, G, ke, ki, ge, gi, scale = params
    ke, ki, ge, gi, G = abs(ke), abs(ki), abs(ge), abs(gi), abs(G)
    wm = (m0 + m1 * b_rel)[:, None]
    ws = (s0 + s1 * b_rel)[:, None]
    k = (ke + ki) * 1e-3
    g = (ge + gi) * 1e-3
    chi = 0.5j * math.sqrt(ke * ge) * 1e-3 if crosstalk else 0.0
    a = f[None, :] - wm + 0.5j * k
    d = f[None, :] - ws + 0.5j * g
    b = G * 1e-3 + chi
    vm, vs = math.sqrt(ke * 1e-3 / 2), math.sqrt(ge * 1e-3 / 2)
    quad = (d * vm * vm - 2 * b * vm * vs + a * vs * vs) / (a * d - b * b)
    return scale * np.abs(1 - 1j * quad) ** 2


def _numeric_jacobian(fun, p, steps):
    cols = []
    for k, h in enumerate(steps):
        q = p.copy()
        q[k] += h
        qm = p.copy()
        qm[k] -= h
        cols.append((fun(q) - fun(qm)) / (2 * h))
    return np.column_stack(cols)


def fit_coupled_modes(b0, f_axis, power, init, crosstalk=True):
    """Global fit of power traces near a crossing with the two-mode transmission model.

    ``power`` has shape (len(b0), len(f_axis)).  ``init`` is the 10-vector
    (m0, m1, s0, s1, G, k_e, k_i, g_e, g_i, scale) with the dispersions
    referenced to ``init_field`` = mean of ``b0``.  Returns (params, covariance).
    """
    b0 = np.asarray(b0, dtype=float)
    f = np.asarray(f_axis, dtype=float)
    y = np.asarray(power, dtype=float).ravel()
    b_rel = b0 - b0.mean()
    crosstalk = bool(crosstalk)

    def res(p):
        return _coupled_power(p, b_rel, f, crosstalk).ravel() - y

    steps = np.array([1e-7, 1e-9, 1e-7, 1e-9, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-7])

    def jac(p):
        return _numeric_jacobian(res, p, steps)

    p, _, _ = levenberg_marquardt(res, jac, np.asarray(init, dtype=float))
    p[4:9] = np.abs(p[4:9])
    return p, _covariance(jac(p), res(p), len(p))


def normal_mode_splitting(G, kappa_e, kappa_i, gamma_e, gamma_i, crosstalk=True):
    """(splitting, mean polariton FWHM) in MHz at zero detuning."""
    from .hybrid_response import effective_hamiltonian
    H = effective_hamiltonian([0.0, 0.0], [kappa_e, gamma_e], [kappa_i, gamma_i],
                              np.array([[0.0, G], [G, 0.0]]), crosstalk)
    lam = np.linalg.eigvals(H) * 1e3
    return float(abs(lam[0].real - lam[1].real)), float(-np.mean(lam.imag) * 2)


def _rate_split(total, depth, baseline):
    """External share of a notch from its power depth: |S21|min = 1 - k_e/k."""
    frac = 1 - math.sqrt(max(1 - depth / baseline, 0.0)) if baseline > 0 else 0.5
    frac = min(max(frac, 0.02), 0.98)
    return total * frac, total * (1 - frac)


def extract_coupling(m: SpectrumMap, crossing_window=None, f_window=None, n_asymptotic=None,
                     crosstalk=True, max_traces=15) -> CouplingExtract:
    """Coupling, linewidths and cooperativity of one anticrossing in ``m``.

    Stage one fits two Lorentzian dips per field and locates the minimum
    center separation; the widths of the magnon-like and spin-like dips
    at the window edges give first estimates of kappa and gamma (the
    magnon-like dip is the one whose center moves least from end to end).
    Stage two fits the traces around the minimum globally with the
    two-mode transmission model, which removes the bias of reading G off
    overlapping, interfering dips.  The crossing counts as resolved when
    the fitted normal-mode splitting at zero detuning exceeds the mean
    polariton linewidth.
    """
    fits = _fit_map(m, crossing_window, f_window)
    if len(fits) < 5:
        raise CrossingNotResolved(f"only {len(fits)} field points show two dips")
    b = np.array([x.b0 for x in fits])
    sep = np.array([(x.fits[1].f_m - x.fits[0].f_m) * 1e3 for x in fits])
    k = int(np.argmin(sep))
    if k == 0 or k == len(sep) - 1:
        raise CrossingNotResolved("no minimum of the dip separation inside the field window")
    b_x, sep_min = _vertex(b, sep)

    n_end = n_asymptotic or max(3, len(fits) // 10)
    low, high = fits[:n_end], fits[-n_end:]
    lo_l = np.median([x.fits[0].f_m for x in low])
    lo_u = np.median([x.fits[1].f_m for x in low])
    hi_l = np.median([x.fits[0].f_m for x in high])
    hi_u = np.median([x.fits[1].f_m for x in high])
    b_lo = np.median([x.b0 for x in low])
    b_hi = np.median([x.b0 for x in high])
    # magnon-like dip: upper at low field and lower at high field, or the reverse
    if abs(lo_u - hi_l) <= abs(lo_l - hi_u):
        mag_pick, spin_pick = (1, 0), (0, 1)
        mag_line, spin_line = (lo_u, hi_l), (lo_l, hi_u)
    else:
        mag_pick, spin_pick = (0, 1), (1, 0)
        mag_line, spin_line = (lo_l, hi_u), (lo_u, hi_l)
    mag_dips = [x.fits[mag_pick[0]] for x in low] + [x.fits[mag_pick[1]] for x in high]
    spin_dips = [x.fits[spin_pick[0]] for x in low] + [x.fits[spin_pick[1]] for x in high]
    kappa0 = float(np.median([d.w_m for d in mag_dips]))
    gamma0 = float(np.median([d.w_m for d in spin_dips]))
    g_half = sep_min / 2
    G0 = math.sqrt(g_half ** 2 + ((kappa0 - gamma0) / 4) ** 2)

    # stage two: coupled-mode refinement on the traces nearest the crossing
    power = power_traces(m)
    f = m.f_axis
    fsel = np.ones(len(f), bool) if f_window is None else (f >= min(f_window)) & (f <= max(f_window))
    rows = np.where(np.isin(m.b0_axis, b))[0]
    near = rows[np.argsort(np.abs(m.b0_axis[rows] - b_x))[:max_traces]]
    near = np.sort(near)
    b_fit = m.b0_axis[near]
    b_ref = b_fit.mean()
    dm = (mag_line[1] - mag_line[0]) / (b_hi - b_lo)
    ds = (spin_line[1] - spin_line[0]) / (b_hi - b_lo)
    mid = 0.5 * (mag_line[0] + mag_line[1] + dm * (2 * b_ref - b_lo - b_hi))
    mid_s = 0.5 * (spin_line[0] + spin_line[1] + ds * (2 * b_ref - b_lo - b_hi))
    baseline = float(np.median([d.baseline for d in mag_dips + spin_dips]))
    ke0, ki0 = _rate_split(kappa0, float(np.median([d.depth for d in mag_dips])), baseline)
    ge0, gi0 = _rate_split(gamma0, float(np.median([d.depth for d in spin_dips])), baseline)
    init = np.array([mid, dm, mid_s, ds, G0, ke0, ki0, ge0, gi0, baseline])
    try:
        p, _ = fit_coupled_modes(b_fit, f[fsel], power[np.ix_(near, fsel)], init, crosstalk)
    except NonConvergence as exc:
        log.warning("coupled-mode refinement did not converge (%s); using its best iterate", exc)
        p = np.asarray(exc.best)
        p[4:9] = np.abs(p[4:9])
    G, ke, ki, ge, gi = (float(v) for v in p[4:9])
    kappa, gamma = ke + ki, ge + gi
    if p[1] != p[3]:
        b_x = float(b_ref + (p[2] - p[0]) / (p[1] - p[3]))
    split, width = normal_mode_splitting(G, ke, ki, ge, gi, crosstalk)
    if split < width:
        raise CrossingNotResolved(f"normal-mode splitting {split:.1f} MHz below the polariton "
                                  f"linewidth {width:.1f} MHz (G = {G:.1f} MHz)")
    return CouplingExtract(G=G, crossing_field=b_x, kappa=kappa, gamma=gamma,
                           cooperativity=cooperativity(G, kappa, gamma), G_half_separation=g_half,
                           separations=sep, fields=b)
