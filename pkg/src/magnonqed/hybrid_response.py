"""Transmission of magnon and spin modes side-coupled to one transmission line.

Input-output model: every mode k has a frequency, an external decay rate
into the line and an intrinsic decay rate.  With the effective Hamiltonian

    H_eff = diag(w_k) - G_coh - (i/2) (diag(k_int) + W)

where W = w w^T (line-mediated dissipative cross terms) or diag(k_ext) when
the cross terms are disabled and w = sqrt(k_ext), the transmission is

    S21(w) = 1 - i v^T (w - H_eff)^-1 v,    v = w / sqrt(2).

For one magnon and one spin mode this is the 2x2 matrix

    M = [[w - w_M + i k/2, G + chi], [G + chi, w - Delta + i g/2]],
    chi = i sqrt(k_e g_e) / 2.

Frequencies are in GHz and rates / couplings in MHz (all divided by 2 pi).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import afm_modes, spin_levels
from .afm_modes import C_HAT, FieldConfig, MagnetParams, StackingConfig
from .errors import DegenerateModeError, PoleError, ValidationError
from .spin_levels import SpinEnsembleParams

log = logging.getLogger(__name__)

MHZ = 1e-3  # GHz per MHz


@dataclass(frozen=True)
class CouplingParams:
    G: float = 130.0
    kappa_e: float = 60.0
    kappa_i: float = 65.0
    gamma_e: float = 10.0
    gamma_i: float = 20.0
    include_line_crosstalk: bool = True

    def __post_init__(self):
        for name in ("G", "kappa_e", "kappa_i", "gamma_e", "gamma_i"):
            if getattr(self, name) < 0:
                raise ValidationError(name, f"must be >= 0 (got {getattr(self, name)})")

    @property
    def kappa(self) -> float:
        return self.kappa_e + self.kappa_i

    @property
    def gamma(self) -> float:
        return self.gamma_e + self.gamma_i

    @property
    def cooperativity(self) -> float:
        return self.G ** 2 / (self.kappa * self.gamma)


@dataclass
class SpectrumMap:
    """Complex (or processed real) transmission on a (field, frequency) grid.

    ``polar`` optionally holds the exact (magnitude, phase) arrays a map was
    read from, so that polar files round-trip without a Cartesian detour.
    It is not updated if ``s21`` is modified in place.
    """

    b0_axis: np.ndarray
    f_axis: np.ndarray
    s21: np.ndarray
    metadata: dict = field(default_factory=dict)
    polar: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.b0_axis = np.asarray(self.b0_axis, dtype=float)
        self.f_axis = np.asarray(self.f_axis, dtype=float)
        self.s21 = np.asarray(self.s21)
        if self.s21.shape != (len(self.b0_axis), len(self.f_axis)):
            raise ValidationError("s21", f"shape {self.s21.shape} does not match axes "
                                         f"({len(self.b0_axis)}, {len(self.f_axis)})")
        for name, ax in (("b0_axis", self.b0_axis), ("f_axis", self.f_axis)):
            d = np.diff(ax)
            if len(ax) > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise ValidationError(name, "axis must be strictly monotone")

    @property
    def magnitude(self) -> np.ndarray:
        if self.polar is not None:
            return self.polar[0]
        return np.abs(self.s21) if np.iscomplexobj(self.s21) else self.s21

    @property
    def phase(self) -> np.ndarray:
        if self.polar is not None:
            return self.polar[1]
        if not np.iscomplexobj(self.s21):
            raise ValidationError("s21", "phase needs a complex map")
        return np.angle(self.s21)

    def trace(self, index):
        return self.f_axis, self.magnitude[index]


@dataclass(frozen=True)
class PolaritonBranch:
    frequency: float
    linewidth: float
    mixing_angle_xi: float
    brightness: float
    magnon_weight: float


# ---------------------------------------------------------------------------
# transmission


def effective_hamiltonian(freqs, k_ext, k_int, coupling, crosstalk=True):
    """Non-Hermitian H_eff in GHz.  ``coupling`` is the symmetric coherent-coupling matrix (MHz)."""
    freqs = np.asarray(freqs, dtype=float)
    k_ext = np.asarray(k_ext, dtype=float) * MHZ
    k_int = np.asarray(k_int, dtype=float) * MHZ
    w = np.sqrt(k_ext)
    W = np.outer(w, w) if crosstalk else np.diag(k_ext)
    H = np.diag(freqs).astype(complex) - np.asarray(coupling, dtype=float) * MHZ
    return H - 0.5j * (np.diag(k_int) + W)


def transmission(omega, H_eff, k_ext):
    """S21 over ``omega`` (GHz) for a given effective Hamiltonian."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = H_eff.shape[0]
    v = np.sqrt(np.asarray(k_ext, dtype=float) * MHZ / 2)
    M = omega[:, None, None] * np.eye(n) - H_eff[None]
    try:
        x = np.linalg.solve(M, np.broadcast_to(v, (len(omega), n))[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise PoleError("transmission evaluated on a lossless pole") from exc
    return 1 - 1j * (x @ v)


def _two_mode(magnon_freq, spin_freq, cp: CouplingParams):
    C = np.array([[0.0, cp.G], [cp.G, 0.0]])
    H = effective_hamiltonian([magnon_freq, spin_freq], [cp.kappa_e, cp.gamma_e],
                              [cp.kappa_i, cp.gamma_i], C, cp.include_line_crosstalk)
    return H, [cp.kappa_e, cp.gamma_e]


def s21(omega, magnon_freq, spin_freq, cp: CouplingParams):
    """Complex transmission of one magnon mode coupled to one spin mode."""
    H, k_ext = _two_mode(magnon_freq, spin_freq, cp)
    out = transmission(omega, H, k_ext)
    return out[0] if np.ndim(omega) == 0 else out


def multimode_hamiltonian(magnon_freqs, magnon_weights, spin_freqs, spin_shares, G_scales,
                          cp: CouplingParams):
    """Enlarged H_eff: several magnon modes and spin domains, no direct magnon-magnon coupling.

    ``magnon_weights`` split kappa_e and G between magnon modes,
    ``spin_shares`` split gamma_e and G between spin domains and
    ``G_scales`` (per domain) multiply the coupling, e.g. chiral factors.
    """
    mw = np.asarray(magnon_weights, dtype=float)
    ss = np.asarray(spin_shares, dtype=float)
    nm, ns = len(mw), len(ss)
    freqs = np.concatenate([magnon_freqs, spin_freqs])
    k_ext = np.concatenate([cp.kappa_e * mw, cp.gamma_e * ss])
    k_int = np.concatenate([np.full(nm, cp.kappa_i), np.full(ns, cp.gamma_i)])
    C = np.zeros((nm + ns, nm + ns))
    g = cp.G * np.outer(np.sqrt(mw), np.sqrt(ss) * np.asarray(G_scales, dtype=float))
    C[:nm, nm:] = g
    C[nm:, :nm] = g.T
    return effective_hamiltonian(freqs, k_ext, k_int, C, cp.include_line_crosstalk), k_ext


# ---------------------------------------------------------------------------
# polaritons


def mixing_angle(magnon_freq, spin_freq, G_MHz):
    """xi = atan(G / |Delta - w_M|); pi/2 on resonance."""
    detuning = abs(spin_freq - magnon_freq) / MHZ
    return math.atan2(G_MHz, detuning)


def polariton_branches(magnon_freq, spin_freq, cp: CouplingParams):
    """(lower, upper) polariton branches from the eigenvalues of H_eff."""
    H, k_ext = _two_mode(magnon_freq, spin_freq, cp)
    lam, vecs = np.linalg.eig(H)
    order = np.argsort(lam.real)
    lam, vecs = lam[order], vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    w = np.sqrt(np.asarray(k_ext))
    bright = np.abs(w @ vecs) ** 2
    total = bright.sum()
    bright = bright / total if total > 0 else np.zeros(2)
    xi = mixing_angle(magnon_freq, spin_freq, cp.G)
    cos2, sin2 = math.cos(xi / 2) ** 2, math.sin(xi / 2) ** 2
    # the branch on the magnon side of the gap carries cos^2(xi/2)
    if spin_freq >= magnon_freq:
        weights = (cos2, sin2)
    else:
        weights = (sin2, cos2)
    return tuple(
        PolaritonBranch(frequency=float(lam[k].real), linewidth=float(-2 * lam[k].imag / MHZ),
                        mixing_angle_xi=xi, brightness=float(bright[k]), magnon_weight=weights[k])
        for k in range(2))


# ---------------------------------------------------------------------------
# chirality


def spin_easy_axis(spins: SpinEnsembleParams, field: FieldConfig) -> np.ndarray:
    """Spin z-axis in the crystal frame: the field direction rotated by phi about c."""
    bhat = field.direction
    p = math.radians(spins.phi)
    return math.cos(p) * bhat + math.sin(p) * np.cross(C_HAT, bhat)


def chiral_projection(mode_field, spins: SpinEnsembleParams, field: FieldConfig, reference=1.0):
    """Co-rotating circular component of the mode field about the spin axis.

    The spin transition rotates right-handed about the local easy axis
    oriented along the field projection.  The raw amplitude is 1 for a
    co-rotating circular field, 0 for a counter-rotating one and 1/sqrt(2)
    for a linear field perpendicular to the axis; the result is divided by
    ``reference``.
    """
    h = np.asarray(mode_field, dtype=complex)
    norm = np.linalg.norm(h)
    if norm < 1e-12:
        raise DegenerateModeError("zero mode field")
    h = h / norm
    z = spin_easy_axis(spins, field)
    s = np.dot(z, field.direction)
    axis = z if s >= 0 else -z
    e1 = C_HAT
    e2 = np.cross(axis, e1)
    raw = abs(np.dot(e1 + 1j * e2, h)) / math.sqrt(2)
    return raw / reference


def reference_field(spins: SpinEnsembleParams, field: FieldConfig):
    """Field along a (theta = 90) with the same |B0| and the same crystal spin axis."""
    ref = FieldConfig(b0=field.b0, theta=90.0)
    phi_ref = (spins.phi + 90.0 - field.theta) % 360.0
    return spins.with_phi(phi_ref), ref


def acoustic_reference_projection(mag: MagnetParams, spins: SpinEnsembleParams, field: FieldConfig,
                                  restarts=8, seed=0):
    """Raw chiral factor of the acoustic mode with the field along a (normalization point)."""
    sp_ref, f_ref = reference_field(spins, field)
    mode = afm_modes.magnon_mode(mag, f_ref, "acoustic", restarts=restarts, seed=seed)
    return chiral_projection(afm_modes.mode_rf_field(mode), sp_ref, f_ref)


# ---------------------------------------------------------------------------
# maps


@dataclass
class DispersionPoint:
    b0_mT: float
    magnon_freqs: np.ndarray
    magnon_weights: np.ndarray
    spin_freqs: np.ndarray
    G_scales: np.ndarray


def _dispersion_point(args):
    (idx, b0_mT, mag, spins, theta, branch, stacking, chiral_scaling, restarts, seed) = args
    field = FieldConfig(b0=b0_mT * 1e-3, theta=theta)
    point_seed = np.random.SeedSequence([int(seed), idx]).generate_state(1)[0]
    if stacking is not None:
        spectrum = afm_modes.stacking_spectrum(mag, field, stacking, point_index=idx, restarts=restarts)
        mf = np.array([f for f, _ in spectrum])
        mw = np.array([w for _, w in spectrum])
        mode = None
        if chiral_scaling:
            mode = afm_modes.magnon_mode(mag, field, branch, restarts=restarts, seed=point_seed)
    else:
        mode = afm_modes.magnon_mode(mag, field, branch, restarts=restarts, seed=point_seed)
        mf, mw = np.array([mode.frequency]), np.array([1.0])
    sf = np.array([spin_levels.qubit_gap(s, b0_mT) for s in spins])
    scales = np.ones(len(spins))
    if chiral_scaling:
        h = afm_modes.mode_rf_field(mode)
        for k, s in enumerate(spins):
            ref = acoustic_reference_projection(mag, s, field, restarts=restarts, seed=point_seed)
            scales[k] = chiral_projection(h, s, field, reference=ref)
    return DispersionPoint(b0_mT, mf, mw, sf, scales)


def dispersion(mag, spins, field_sweep, theta=90.0, branch="acoustic", stacking=None,
               chiral_scaling=False, restarts=8, seed=0, jobs=1) -> List[DispersionPoint]:
    spins = _as_list(spins)
    tasks = [(i, float(b), mag, spins, theta, branch, stacking, chiral_scaling, restarts, seed)
             for i, b in enumerate(field_sweep)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_dispersion_point, tasks))
    return [_dispersion_point(t) for t in tasks]


def _as_list(spins):
    if isinstance(spins, SpinEnsembleParams):
        return [spins]
    return list(spins)


def spin_shares(spins):
    n = np.array([s.n_spins for s in spins], dtype=float)
    if n.sum() <= 0:
        return np.full(len(spins), 1.0 / len(spins))
    return n / n.sum()


def map_from_dispersion(points: Sequence[DispersionPoint], f_axis, cp: CouplingParams,
                        shares=None, metadata=None) -> SpectrumMap:
    f_axis = np.asarray(f_axis, dtype=float)
    rows = []
    for pt in points:
        ss = np.full(len(pt.spin_freqs), 1.0 / len(pt.spin_freqs)) if shares is None else shares
        H, k_ext = multimode_hamiltonian(pt.magnon_freqs, pt.magnon_weights, pt.spin_freqs, ss,
                                         pt.G_scales, cp)
        rows.append(transmission(f_axis, H, k_ext))
    b0 = np.array([pt.b0_mT for pt in points])
    return SpectrumMap(b0, f_axis, np.array(rows), dict(metadata or {}))


def map_from_frequencies(b0_axis, f_axis, magnon_freqs, spin_freqs, cp: CouplingParams,
                         metadata=None) -> SpectrumMap:
    """Map for one magnon and one spin mode with prescribed dispersions (GHz per field point)."""
    pts = [DispersionPoint(b, np.array([m]), np.array([1.0]), np.array([s]), np.array([1.0]))
           for b, m, s in zip(b0_axis, magnon_freqs, spin_freqs)]
    return map_from_dispersion(pts, f_axis, cp, metadata=metadata)


def spectrum_map(mag: MagnetParams, spins: Union[SpinEnsembleParams, Sequence[SpinEnsembleParams]],
                 field_sweep, f_axis, cp: CouplingParams, chiral_scaling=False, theta=90.0,
                 branch="acoustic", stacking: Optional[StackingConfig] = None, restarts=8,
                 seed=0, jobs=1) -> SpectrumMap:
    """Forward-simulated S21 over a field sweep (mT) and frequency axis (GHz)."""
    spins = _as_list(spins)
    field_sweep = np.asarray(field_sweep, dtype=float)
    pts = dispersion(mag, spins, field_sweep, theta=theta, branch=branch, stacking=stacking,
                     chiral_scaling=chiral_scaling, restarts=restarts, seed=seed, jobs=jobs)
    meta = {
        "magnet": asdict(mag),
        "spins": [asdict(s) for s in spins],
        "coupling": asdict(cp),
        "theta": theta,
        "branch": branch,
        "chiral_scaling": bool(chiral_scaling),
        "stacking": asdict(stacking) if stacking is not None else None,
        "seed": seed,
        "G_scales": [pt.G_scales.tolist() for pt in pts] if chiral_scaling else None,
    }
    return map_from_dispersion(pts, f_axis, cp, shares=spin_shares(spins), metadata=meta)
