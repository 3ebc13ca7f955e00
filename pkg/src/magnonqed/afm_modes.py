"""Macrospin model of a layered biaxial antiferromagnet.

Moments are unit vectors in the crystal frame (a, b, c) = (x, y, z), with
b the easy axis, a the intermediate axis and c the hard axis.  The reduced
energy (tesla per moment) of a set of layers coupled by an exchange matrix
J is

    E = 1/2 sum_ij J_ij m_i.m_j
        + sum_i [H_a/2 (m_i.a)^2 + H_c/2 (m_i.c)^2 - B.m_i]

The two-sublattice model is the special case J = [[0, H_E], [H_E, 0]].
Dynamics are the undamped Landau-Lifshitz equations linearized about a
local minimum, dm_i/dt = -gamma m_i x H_eff,i with H_eff,i = -dE/dm_i.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DegenerateModeError, SolverError, StabilityError, ValidationError
from .spin_levels import MU_B_GHZ_PER_T

log = logging.getLogger(__name__)

A_HAT = np.array([1.0, 0.0, 0.0])
B_HAT = np.array([0.0, 1.0, 0.0])
C_HAT = np.array([0.0, 0.0, 1.0])

LINEAR_ELLIPTICITY = 0.1
GRAD_TOL = 1e-11
MAX_NEWTON_ITER = 400


@dataclass(frozen=True)
class MagnetParams:
    """Exchange and anisotropy fields in tesla."""

    H_E: float = 0.392
    H_a: float = 0.380
    H_c: float = 1.32
    g: float = 2.0

    def __post_init__(self):
        if not self.H_E > 0:
            raise ValidationError("H_E", f"must be > 0 (got {self.H_E})")
        if self.H_a < 0:
            raise ValidationError("H_a", f"must be >= 0 (got {self.H_a})")
        if self.H_c < 0:
            raise ValidationError("H_c", f"must be >= 0 (got {self.H_c})")
        if self.H_c < self.H_a:
            raise ValidationError("H_c", f"invariant H_c >= H_a violated (H_c={self.H_c}, H_a={self.H_a})")
        if not self.g > 0:
            raise ValidationError("g", "must be > 0")

    @property
    def gamma(self) -> float:
        """Gyromagnetic ratio in GHz/T."""
        return self.g * MU_B_GHZ_PER_T


@dataclass(frozen=True)
class FieldConfig:
    """Field magnitude ``b0`` (T) at ``theta`` degrees from b, inside the ab-plane."""

    b0: float = 0.0
    theta: float = 90.0

    def __post_init__(self):
        if self.b0 < 0:
            raise ValidationError("b0", f"must be >= 0 (got {self.b0})")
        if not 0 <= self.theta <= 90:
            raise ValidationError("theta", f"must satisfy 0 <= theta <= 90 (got {self.theta})")

    @property
    def direction(self) -> np.ndarray:
        t = np.radians(self.theta)
        return np.sin(t) * A_HAT + np.cos(t) * B_HAT

    @property
    def vector(self) -> np.ndarray:
        return self.b0 * self.direction


@dataclass(frozen=True)
class Equilibrium:
    moments: np.ndarray
    energy: float
    gradient_norm: float

    @property
    def m1(self) -> np.ndarray:
        return self.moments[0]

    @property
    def m2(self) -> np.ndarray:
        return self.moments[1]


@dataclass
class ModeSolution:
    frequency: float
    sublattice_ellipses: np.ndarray
    net_orbit: np.ndarray
    chirality: str
    ellipticity: float
    branch_label: str = ""
    tangent_vector: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class StackingConfig:
    """Random-stacking chain.

    Bonds are antiferromagnetic with strength H_E/2 each, so that a layer
    with two regular neighbours feels the bulk exchange field H_E.  With
    probability ``fault_probability`` a bond is rescaled by
    ``fault_coupling_scale`` (negative values make it ferromagnetic).
    """

    n_layers: int = 20
    fault_probability: float = 0.1
    fault_coupling_scale: float = 0.5
    seed: int = 0
    boundary: str = "periodic"

    def __post_init__(self):
        if int(self.n_layers) != self.n_layers or self.n_layers < 2:
            raise ValidationError("n_layers", f"must be an integer >= 2 (got {self.n_layers})")
        if not 0 <= self.fault_probability <= 1:
            raise ValidationError("fault_probability", "must lie in [0, 1]")
        if self.boundary not in ("periodic", "open"):
            raise ValidationError("boundary", "must be 'periodic' or 'open'")


# ---------------------------------------------------------------------------
# energy landscape


def two_sublattice_exchange(mag: MagnetParams) -> np.ndarray:
    return np.array([[0.0, mag.H_E], [mag.H_E, 0.0]])


def chain_exchange(mag: MagnetParams, cfg: StackingConfig) -> np.ndarray:
    n = int(cfg.n_layers)
    rng = np.random.default_rng(cfg.seed)
    bonds = [(i, i + 1) for i in range(n - 1)]
    if cfg.boundary == "periodic":
        bonds.append((n - 1, 0))
    faults = rng.random(len(bonds)) < cfg.fault_probability
    J = np.zeros((n, n))
    if cfg.boundary == "periodic":
        strength = mag.H_E / 2
    else:
        strength = mag.H_E
    for (i, j), faulted in zip(bonds, faults):
        s = strength * (cfg.fault_coupling_scale if faulted else 1.0)
        J[i, j] += s
        J[j, i] += s
    return J


def energy(moments, J, mag: MagnetParams, bvec) -> float:
    m = np.asarray(moments)
    exch = 0.5 * np.einsum("ij,ik,jk->", J, m, m)
    anis = 0.5 * mag.H_a * np.sum(m[:, 0] ** 2) + 0.5 * mag.H_c * np.sum(m[:, 2] ** 2)
    return float(exch + anis - np.sum(m @ bvec))


def energy_gradient(moments, J, mag: MagnetParams, bvec) -> np.ndarray:
    """dE/dm_i as an (N, 3) array (unconstrained Euclidean gradient)."""
    m = np.asarray(moments)
    g = J @ m
    g[:, 0] += mag.H_a * m[:, 0]
    g[:, 2] += mag.H_c * m[:, 2]
    return g - bvec


def tangent_bases(moments) -> np.ndarray:
    """(N, 2, 3) array of (e1, e2) with e1 x e2 = m for every moment."""
    m = np.asarray(moments, dtype=float)
    ref = np.where((np.abs(m[:, 2]) < 0.9)[:, None], C_HAT, A_HAT)
    e1 = _cross(ref, m)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return np.stack([e1, _cross(m, e1)], axis=1)


def _cross(u, v):
    # row-wise cross product; np.cross carries heavy overhead for 3-vectors
    return np.stack([u[:, 1] * v[:, 2] - u[:, 2] * v[:, 1],
                     u[:, 2] * v[:, 0] - u[:, 0] * v[:, 2],
                     u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]], axis=1)


def _projector(bases) -> np.ndarray:
    """3N x 2N block-diagonal matrix mapping tangent coordinates to dm."""
    n = len(bases)
    T = np.zeros((n, 3, n, 2))
    idx = np.arange(n)
    T[idx, :, idx, :] = bases.transpose(0, 2, 1)
    return T.reshape(3 * n, 2 * n)


def _euclidean_hessian(J, mag: MagnetParams) -> np.ndarray:
    n = len(J)
    anis = np.diag([mag.H_a, 0.0, mag.H_c])
    return np.kron(J, np.eye(3)) + np.kron(np.eye(n), anis)


def stiffness_matrix(moments, J, mag: MagnetParams, bvec, bases=None, hess=None) -> np.ndarray:
    """Second variation of E in tangent coordinates (2N x 2N, symmetric)."""
    if bases is None:
        bases = tangent_bases(moments)
    if hess is None:
        hess = _euclidean_hessian(J, mag)
    T = _projector(bases)
    grad = energy_gradient(moments, J, mag, bvec)
    lam = np.einsum("ij,ij->i", moments, grad)
    K = T.T @ hess @ T - np.diag(np.repeat(lam, 2))
    return (K + K.T) / 2


def tangent_gradient(moments, J, mag, bvec, bases=None) -> np.ndarray:
    if bases is None:
        bases = tangent_bases(moments)
    grad = energy_gradient(moments, J, mag, bvec)
    return np.einsum("kij,kj->ki", bases, grad).ravel()


# ---------------------------------------------------------------------------
# minimization


def _retract(moments, bases, step):
    d = step.reshape(-1, 2)
    new = moments + d[:, :1] * bases[:, 0] + d[:, 1:] * bases[:, 1]
    return new / np.linalg.norm(new, axis=1, keepdims=True)


def _descend(m0, J, mag, bvec, max_iter=MAX_NEWTON_ITER):
    """Projected Newton descent with a gradient fallback off the convex region."""
    m = m0 / np.linalg.norm(m0, axis=1, keepdims=True)
    e = energy(m, J, mag, bvec)
    scale = max(1.0, np.abs(J).sum() + mag.H_c + np.linalg.norm(bvec))
    hess = _euclidean_hessian(J, mag)
    gnorm = np.inf
    for _ in range(max_iter):
        bases = tangent_bases(m)
        g = tangent_gradient(m, J, mag, bvec, bases)
        gnorm = np.linalg.norm(g)
        if gnorm < GRAD_TOL:
            return m, e, gnorm, True
        K = stiffness_matrix(m, J, mag, bvec, bases, hess)
        kmin = np.linalg.eigvalsh(K)[0]
        shift = 0.0 if kmin > 1e-6 * scale else (1e-3 * scale - kmin)
        step = -np.linalg.solve(K + shift * np.eye(len(K)), g)
        t = 1.0
        while t > 1e-12:
            trial = _retract(m, bases, t * step)
            et = energy(trial, J, mag, bvec)
            if et <= e + 1e-14 * scale:
                break
            t *= 0.5
        else:
            # energy flat to rounding: accept the full Newton step if it shrinks the gradient
            trial = _retract(m, bases, step)
            if np.linalg.norm(tangent_gradient(trial, J, mag, bvec)) >= gnorm:
                return m, e, gnorm, gnorm < 1e-8
            et = energy(trial, J, mag, bvec)
        m, e = trial, et
    return m, e, gnorm, gnorm < 1e-8


def _symmetry_images(moments, bvec, swap_allowed):
    """Images of a state under energy-preserving reflections."""
    images = [moments]
    flips = [np.array([1.0, 1.0, -1.0])]
    if abs(bvec[1]) < 1e-15:
        flips.append(np.array([1.0, -1.0, 1.0]))
    if abs(bvec[0]) < 1e-15:
        flips.append(np.array([-1.0, 1.0, 1.0]))
    for f in flips:
        images += [img * f for img in images]
    if swap_allowed:
        images += [img[::-1] for img in images]
    return images


def _canonical_key(moments):
    m0 = moments[0]
    return tuple(np.round([m0[1], m0[0], m0[2]], 9))


def _seeds(n, bhat, b0, mag, alt=None):
    if alt is None:
        alt = np.array([(-1.0) ** k for k in range(n)])
    perp = np.cross(C_HAT, bhat)
    cos_a = min(1.0, b0 / (2 * mag.H_E + mag.H_a)) if b0 > 0 else 0.0
    sin_a = np.sqrt(1 - cos_a ** 2)
    seeds = [
        np.outer(alt, B_HAT),
        np.tile(bhat, (n, 1)),
        cos_a * np.tile(bhat, (n, 1)) + sin_a * np.outer(alt, perp),
        cos_a * np.tile(bhat, (n, 1)) + sin_a * np.outer(alt, C_HAT),
        np.outer(alt, A_HAT),
    ]
    return seeds


def minimize_energy(J, mag: MagnetParams, bvec, restarts=8, rng=None, extra_seeds=(),
                    swap_allowed=False) -> Equilibrium:
    """Global minimum over analytic seeds plus random restarts."""
    n = len(J)
    rng = np.random.default_rng(0) if rng is None else rng
    bvec = np.asarray(bvec, dtype=float)
    b0 = np.linalg.norm(bvec)
    bhat = bvec / b0 if b0 > 0 else B_HAT
    starts = list(extra_seeds) + _seeds(n, bhat, b0, mag)
    for _ in range(restarts):
        starts.append(rng.normal(size=(n, 3)))
    found = []
    last_g = np.inf
    for s in starts:
        s = np.asarray(s, dtype=float)
        # tiny deterministic tilt lifts exact saddle starts off symmetry planes
        s = s + 1e-7 * np.arange(1, 3 * n + 1).reshape(n, 3) / (3 * n)
        m, e, gnorm, ok = _descend(s, J, mag, bvec)
        last_g = gnorm
        if not ok:
            continue
        K = stiffness_matrix(m, J, mag, bvec)
        if np.linalg.eigvalsh(K)[0] < -1e-9:
            continue
        found.append((e, m, gnorm))
    if not found:
        raise SolverError("equilibrium minimizer did not converge", residual=float(last_g))
    emin = min(f[0] for f in found)
    tol = 1e-10 * max(1.0, abs(emin))
    best = None
    for e, m, gnorm in found:
        if e > emin + tol:
            continue
        for img in _symmetry_images(m, bvec, swap_allowed):
            if abs(energy(img, J, mag, bvec) - e) > tol:
                continue
            key = _canonical_key(img)
            if best is None or key > best[0]:
                best = (key, img, e)
    _, m, e = best
    gnorm = np.linalg.norm(tangent_gradient(m, J, mag, bvec))
    return Equilibrium(moments=m, energy=e, gradient_norm=float(gnorm))


def equilibrium(mag: MagnetParams, field: FieldConfig, restarts=8, seed=0) -> Equilibrium:
    """Global-minimum sublattice configuration of the two-sublattice model."""
    return minimize_energy(two_sublattice_exchange(mag), mag, field.vector, restarts=restarts,
                           rng=np.random.default_rng(seed), swap_allowed=True)


# ---------------------------------------------------------------------------
# linearized dynamics

_JBLOCK = np.array([[0.0, -1.0], [1.0, 0.0]])


def dynamical_matrix(moments, J, mag, bvec):
    """Return (A, K, bases) with d/dt x = A x in tangent coordinates (A in GHz, angular/2pi)."""
    bases = tangent_bases(moments)
    K = stiffness_matrix(moments, J, mag, bvec, bases)
    Jsym = np.kron(np.eye(len(moments)), _JBLOCK)
    return mag.gamma * Jsym @ K, K, bases


def _check_stability(A, K, bases=None):
    kw, kv = np.linalg.eigh(K)
    scale = max(1.0, np.abs(K).max())
    if kw[0] >= -1e-9 * scale:
        return
    name = "mode 0"
    if bases is not None and len(bases) == 2:
        # the softest direction is in-phase (acoustic) or anti-phase (optical) precession
        dm = (_projector(bases) @ kv[:, 0]).reshape(2, 3)
        name = "acoustic" if np.linalg.norm(dm.sum(0)) >= np.linalg.norm(dm[0] - dm[1]) else "optical"
    raise StabilityError(
        f"unstable equilibrium: negative stiffness (min {kw[0]:.3e}); offending branch {name}",
        branch=name)


def _hermitian_modes(K, gamma):
    """Positive frequencies and right eigenvectors of A = gamma J K (K >= 0).

    L = K^(1/2) gives L A L^-1 = gamma L J L, real antisymmetric, so i L J L is
    Hermitian and eigh applies.
    """
    kw, q = np.linalg.eigh(K)
    kw = np.clip(kw, 0.0, None)
    sq = np.sqrt(kw)
    L = (q * sq) @ q.T
    with np.errstate(divide="ignore"):
        inv = np.where(sq > 1e-14, 1.0 / np.where(sq > 0, sq, 1.0), 0.0)
    Linv = (q * inv) @ q.T
    n = len(K) // 2
    Jsym = np.kron(np.eye(n), _JBLOCK)
    H = 1j * (L @ Jsym @ L)
    nu, U = np.linalg.eigh((H + H.conj().T) / 2)
    # eigenvalue nu of iLJL corresponds to A-eigenvalue -i*gamma*nu
    order = np.argsort(nu)[:n]
    freqs = -gamma * nu[order]
    return freqs, U[:, order], L, Linv


def _orbit_shape(v, axis):
    re, im = v.real, v.imag
    s = np.linalg.svd(np.column_stack([re, im]), compute_uv=False)
    ell = float(s[1] / s[0]) if s[0] > 1e-14 else 0.0
    ell = min(max(ell, 0.0), 1.0)
    if ell < LINEAR_ELLIPTICITY:
        return "linear", ell
    # with x(t) = Re(v exp(i w t)) the orbit rotates about Im v x Re v
    spin = np.dot(np.cross(im, re), axis)
    return ("RH" if spin > 0 else "LH"), ell


def _fix_phase(vecs, ref):
    k = int(np.argmax(np.abs(ref)))
    ph = np.abs(ref[k]) / ref[k] if np.abs(ref[k]) > 0 else 1.0
    return vecs * ph


def modes_from_state(moments, J, mag, bvec, axis, check=True) -> List[ModeSolution]:
    """Positive-frequency normal modes of an arbitrary N-layer equilibrium."""
    A, K, bases = dynamical_matrix(moments, J, mag, bvec)
    if check:
        _check_stability(A, K)
    freqs, U, L, Linv = _hermitian_modes(K, mag.gamma)
    T = _projector(bases)
    out = []
    for k in range(len(freqs)):
        r = Linv @ U[:, k]
        dm = (T @ r).reshape(-1, 3)
        norm = np.sqrt(np.sum(np.abs(dm) ** 2))
        dm = dm / norm
        net = dm.sum(axis=0)
        ref = net if np.linalg.norm(net) > 1e-12 else dm[0]
        dm = _fix_phase(dm, ref)
        net = _fix_phase(net, ref)
        chir, ell = _orbit_shape(net, axis)
        out.append(ModeSolution(frequency=float(abs(freqs[k])), sublattice_ellipses=dm,
                                net_orbit=net, chirality=chir, ellipticity=ell,
                                tangent_vector=r / norm))
    return sorted(out, key=lambda s: s.frequency)


def _label_branches(modes):
    def c_fraction(mode):
        v = mode.net_orbit
        tot = np.sum(np.abs(v) ** 2)
        return np.abs(v[2]) ** 2 / tot if tot > 1e-24 else 0.0

    acoustic = max(range(len(modes)), key=lambda k: (round(c_fraction(modes[k]), 12), -k))
    for k, mode in enumerate(modes):
        mode.branch_label = "acoustic" if k == acoustic else "optical"
    return modes


def linearized_modes(mag: MagnetParams, field: FieldConfig, eq: Equilibrium) -> List[ModeSolution]:
    """Two normal modes of the two-sublattice model, sorted by frequency.

    The acoustic branch is the one whose net dynamic moment has the largest
    hard-axis (c) fraction: uniform precession about an in-plane field or
    net moment always tips the net moment out of plane.
    """
    J = two_sublattice_exchange(mag)
    bvec = field.vector
    A, K, bases = dynamical_matrix(eq.moments, J, mag, bvec)
    _check_stability(A, K, bases)
    return _label_branches(modes_from_state(eq.moments, J, mag, bvec, field.direction, check=False))


def magnon_mode(mag: MagnetParams, field: FieldConfig, branch="acoustic", restarts=8,
                seed=0) -> ModeSolution:
    eq = equilibrium(mag, field, restarts=restarts, seed=seed)
    modes = linearized_modes(mag, field, eq)
    if branch in ("acoustic", "optical"):
        return next(m for m in modes if m.branch_label == branch)
    if branch == "lower":
        return modes[0]
    if branch == "upper":
        return modes[1]
    raise ValidationError("branch", f"unknown branch {branch!r}")


def mode_rf_field(mode: ModeSolution) -> np.ndarray:
    """Unit-normalized dynamic net moment of ``mode`` in the crystal frame."""
    v = np.asarray(mode.net_orbit, dtype=complex)
    scale = np.sqrt(np.sum(np.abs(mode.sublattice_ellipses) ** 2)) if mode.sublattice_ellipses is not None else 1.0
    n = np.linalg.norm(v)
    if n < 1e-9 * max(scale, 1e-300):
        raise DegenerateModeError("mode has no net dynamic moment (fully compensated)")
    v = v / n
    return _fix_phase(v, v)


# ---------------------------------------------------------------------------
# random stacking


def _uniform_weights(K, U, L, Linv, bases):
    """Residue weight of each mode for a spatially uniform drive, normalized to sum 1."""
    T = _projector(bases)
    n = len(bases)
    sum_map = np.kron(np.ones((1, n)), np.eye(3)) @ T  # 3 x 2N net-moment map
    Jsym = np.kron(np.eye(n), _JBLOCK)
    w = []
    for k in range(U.shape[1]):
        u = U[:, k]
        r = Linv @ u
        left = u.conj() @ L
        w.append(abs(left @ Jsym @ sum_map.T @ sum_map @ r))
    w = np.array(w)
    total = w.sum()
    return w / total if total > 0 else w


def stacking_spectrum(mag: MagnetParams, field: FieldConfig, cfg: StackingConfig,
                      point_index=0, restarts=8):
    """Normal modes of the faulted N-layer chain as (frequency GHz, weight) pairs."""
    J = chain_exchange(mag, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(point_index)]))
    eq = minimize_energy(J, mag, field.vector, restarts=restarts, rng=rng)
    A, K, bases = dynamical_matrix(eq.moments, J, mag, field.vector)
    _check_stability(A, K)
    freqs, U, L, Linv = _hermitian_modes(K, mag.gamma)
    weights = _uniform_weights(K, U, L, Linv, bases)
    order = np.argsort(freqs)
    return [(float(abs(freqs[k])), float(weights[k])) for k in order]


def _stacking_point(args):
    mag, field, cfg, idx, restarts = args
    return stacking_spectrum(mag, field, cfg, point_index=idx, restarts=restarts)


def stacking_sweep(mag: MagnetParams, fields: Sequence[FieldConfig], cfg: StackingConfig,
                   jobs=1, restarts=8):
    """``stacking_spectrum`` over a field sweep; per-point RNG streams come from (seed, index)."""
    tasks = [(mag, f, cfg, i, restarts) for i, f in enumerate(fields)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_stacking_point, tasks))
    return [_stacking_point(t) for t in tasks]
