"""Single-ion spin Hamiltonian with zero-field splitting and Zeeman terms.

Energies are in GHz (E/h), fields in mT at the public surface.  The basis
is the S_z eigenbasis ordered m = S, S-1, ..., -S.

Two zero-field-splitting conventions are supported:

``standard``
    H_zfs = D S_z^2 + E (S_x^2 - S_y^2)
``stevens``
    H_zfs = D (3 S_z^2 - S(S+1)) + E (S_x^2 - S_y^2), i.e. D is read as the
    second-order Stevens coefficient B_2^0.  For S = 7/2 this triples the
    level spacings of the standard form.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import SolverError, ValidationError

MU_B_GHZ_PER_T = 13.9962449  # mu_B / h
K_B_GHZ_PER_K = 20.8366191  # k_B / h

_CONVENTIONS = ("standard", "stevens")
_MAX_SPIN = 50
DEGENERACY_TOL = 1e-8  # GHz


@dataclass(frozen=True)
class SpinEnsembleParams:
    """Parameters of one spin species (or one crystal domain).

    ``phi`` is the angle in degrees between the applied field and the
    spin easy z-axis; the field lies in the x-z plane of the spin frame.
    ``zero_field_gap`` (GHz), when set, shifts the qubit gap so that it
    takes that value at zero field.
    """

    S: float = 3.5
    D: float = -1.23
    E: float = 0.0031
    g: float = 2.0
    phi: float = 0.0
    n_spins: float = 1.0
    convention: str = "standard"
    zero_field_gap: Optional[float] = None
    temperature: float = 0.0

    def __post_init__(self):
        two_s = Fraction(self.S).limit_denominator(1000) * 2
        if two_s.denominator != 1 or two_s < 1 or abs(float(two_s) - 2 * self.S) > 1e-12:
            raise ValidationError("S", f"2S+1 must be an integer >= 2 (got S={self.S})")
        if self.S > _MAX_SPIN:
            raise ValidationError("S", f"spin too large for dense diagonalization (S={self.S} > {_MAX_SPIN})")
        if abs(self.E) > abs(self.D) / 3 + 1e-15:
            raise ValidationError("E", f"|E| <= |D|/3 required (D={self.D}, E={self.E})")
        if not 0 <= self.phi < 360:
            raise ValidationError("phi", f"must satisfy 0 <= phi < 360 (got {self.phi})")
        if self.n_spins < 0:
            raise ValidationError("n_spins", "must be >= 0")
        if self.convention not in _CONVENTIONS:
            raise ValidationError("convention", f"must be one of {_CONVENTIONS}")
        if self.temperature < 0:
            raise ValidationError("temperature", "must be >= 0")

    @property
    def dim(self) -> int:
        return int(round(2 * self.S)) + 1

    def with_phi(self, phi: float) -> "SpinEnsembleParams":
        return replace(self, phi=phi % 360.0)


@dataclass(frozen=True)
class LevelSet:
    """Eigen-decomposition at one field point.

    ``transition_table`` rows are ``(i, j, frequency_GHz, weight)`` for
    i < j, with weight the transverse dipole strength
    (|<j|S+|i>|^2 + |<j|S-|i>|^2) / 2.
    """

    energies: np.ndarray
    transition_table: list
    eigenvectors: np.ndarray = field(repr=False)
    populations: np.ndarray = field(repr=False)

    def transition(self, i, j):
        for row in self.transition_table:
            if row[0] == i and row[1] == j:
                return row
        raise KeyError((i, j))


def spin_operators(S):
    """Return (Sx, Sy, Sz, S+, S-) as dense complex matrices."""
    m = np.arange(S, -S - 1, -1)
    n = len(m)
    sp = np.zeros((n, n), dtype=complex)
    # <m+1|S+|m> = sqrt(S(S+1) - m(m+1))
    sp[np.arange(n - 1), np.arange(1, n)] = np.sqrt(S * (S + 1) - m[1:] * (m[1:] + 1))
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz, sp, sm


def zfs_hamiltonian(params: SpinEnsembleParams) -> np.ndarray:
    sx, sy, sz, _, _ = spin_operators(params.S)
    rhombic = params.E * (sx @ sx - sy @ sy)
    if params.convention == "stevens":
        S = params.S
        axial = params.D * (3 * sz @ sz - S * (S + 1) * np.eye(params.dim))
    else:
        axial = params.D * sz @ sz
    return axial + rhombic


def zeeman_hamiltonian(params: SpinEnsembleParams, field_T) -> np.ndarray:
    """Zeeman term for an arbitrary field vector (x, y, z) in tesla."""
    sx, sy, sz, _, _ = spin_operators(params.S)
    bx, by, bz = np.asarray(field_T, dtype=float)
    return params.g * MU_B_GHZ_PER_T * (bx * sx + by * sy + bz * sz)


def field_vector(params: SpinEnsembleParams, b0_mT: float) -> np.ndarray:
    phi = np.radians(params.phi)
    b = b0_mT * 1e-3
    return np.array([b * np.sin(phi), 0.0, b * np.cos(phi)])


def build_hamiltonian(params: SpinEnsembleParams, b0_mT: float) -> np.ndarray:
    """Hermitian (2S+1)x(2S+1) spin Hamiltonian in GHz."""
    if b0_mT < 0:
        raise ValidationError("b0_mT", f"must be >= 0 (got {b0_mT})")
    h = zfs_hamiltonian(params) + zeeman_hamiltonian(params, field_vector(params, b0_mT))
    # symmetrize away rounding so downstream Hermitian solvers see exact symmetry
    return (h + h.conj().T) / 2


def _diagonalize(h):
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigensolver failed: {exc}", residual=float("nan")) from exc
    resid = np.linalg.norm(h @ v - v * w)
    scale = max(1.0, np.linalg.norm(h))
    if not np.isfinite(resid) or resid > 1e-9 * scale:
        raise SolverError("eigensolver did not converge", residual=float(resid))
    return w, v


def _transverse_weights(params, vecs):
    _, _, _, sp, sm = spin_operators(params.S)
    up = vecs.conj().T @ sp @ vecs
    down = vecs.conj().T @ sm @ vecs
    return (np.abs(up) ** 2 + np.abs(down) ** 2) / 2


def thermal_populations(energies, temperature):
    if temperature <= 0:
        pops = np.zeros_like(energies)
        ground = np.abs(energies - energies[0]) < DEGENERACY_TOL
        pops[ground] = 1.0 / ground.sum()
        return pops
    boltz = np.exp(-(energies - energies[0]) / (K_B_GHZ_PER_K * temperature))
    return boltz / boltz.sum()


def energy_levels(params: SpinEnsembleParams, b0_mT: float) -> LevelSet:
    h = build_hamiltonian(params, b0_mT)
    w, v = _diagonalize(h)
    weights = _transverse_weights(params, v)
    n = len(w)
    table = [(i, j, float(w[j] - w[i]), float(weights[j, i]))
             for i in range(n) for j in range(i + 1, n)]
    return LevelSet(energies=w, transition_table=table, eigenvectors=v,
                    populations=thermal_populations(w, params.temperature))


def _manifolds(energies):
    groups = [[0]]
    for k in range(1, len(energies)):
        if energies[k] - energies[groups[-1][-1]] < DEGENERACY_TOL:
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def _raw_gap(params, b0_mT):
    h = build_hamiltonian(params, b0_mT)
    w, v = _diagonalize(h)
    weights = _transverse_weights(params, v)
    groups = _manifolds(w)
    # summing over degenerate manifolds keeps the selection basis-independent
    ground = groups[0]
    best, best_w = None, -1.0
    for grp in groups[1:]:
        wt = weights[np.ix_(grp, ground)].sum()
        if wt > best_w + 1e-12:
            best, best_w = grp, wt
    if best is None:
        return 0.0
    return float(w[best[0]] - w[ground[0]])


def qubit_gap(params: SpinEnsembleParams, b0_mT: float) -> float:
    """Frequency (GHz) of the strongest transverse-dipole transition out of the ground state."""
    gap = _raw_gap(params, b0_mT)
    if params.zero_field_gap is not None:
        gap += params.zero_field_gap - _raw_gap(params, 0.0)
    return gap


def qubit_gap_curve(params: SpinEnsembleParams, b0_mT) -> np.ndarray:
    b0 = np.atleast_1d(np.asarray(b0_mT, dtype=float))
    offset = 0.0
    if params.zero_field_gap is not None:
        offset = params.zero_field_gap - _raw_gap(params, 0.0)
    return np.array([_raw_gap(params, b) + offset for b in b0])
