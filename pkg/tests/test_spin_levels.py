import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnonqed.errors import ValidationError
from magnonqed.spin_levels import (MU_B_GHZ_PER_T, SpinEnsembleParams, build_hamiltonian,
                                   energy_levels, qubit_gap, qubit_gap_curve, spin_operators,
                                   zeeman_hamiltonian, zfs_hamiltonian)
from oracles import jacobi_eigvalsh, spin_hamiltonian_elements

MEASURED = dict(S=3.5, D=-1.23, E=0.0031, g=2.0)

spin_values = st.sampled_from([0.5, 1.0, 1.5, 2.0, 2.5, 3.5, 4.5])


@st.composite
def spin_params(draw, conventions=("standard", "stevens")):
    S = draw(spin_values)
    D = draw(st.floats(-3, 3).filter(lambda d: abs(d) > 1e-3))
    E = draw(st.floats(0, 1)) * abs(D) / 3 * draw(st.sampled_from([-1, 1]))
    g = draw(st.floats(1.5, 2.5))
    phi = draw(st.floats(0, 359.999))
    return SpinEnsembleParams(S=S, D=D, E=E, g=g, phi=phi,
                              convention=draw(st.sampled_from(conventions)))


def test_diagonal_at_zero_field_without_rhombic_term():
    p = SpinEnsembleParams(D=-1.23, E=0.0)
    H = build_hamiltonian(p, 0.0)
    m = np.arange(3.5, -4.5, -1)
    assert np.allclose(H, np.diag(-1.23 * m ** 2), atol=1e-14)
    assert np.abs(H.imag).max() == 0


def test_gap_between_lowest_doublets_standard_convention():
    p = SpinEnsembleParams(D=-1.23, E=0.0)
    e = energy_levels(p, 0.0).energies
    assert e[2] - e[0] == pytest.approx(6 * 1.23, abs=1e-12)
    assert qubit_gap(p, 0.0) == pytest.approx(7.38, abs=1e-12)


def test_stevens_convention_triples_spacing():
    p = SpinEnsembleParams(D=-1.23, E=0.0, convention="stevens")
    assert qubit_gap(p, 0.0) == pytest.approx(3 * 7.38, abs=1e-12)


def test_kramers_pairs_with_rhombic_term():
    e = energy_levels(SpinEnsembleParams(**MEASURED), 0.0).energies
    assert np.all(np.abs(e[0::2] - e[1::2]) < 1e-9)
    assert np.all(np.diff(e[0::2]) > 1e-3)


def test_matches_independent_diagonalizer_measured_point():
    p = SpinEnsembleParams(**MEASURED, phi=49.0)
    ref = jacobi_eigvalsh(spin_hamiltonian_elements(3.5, -1.23, 0.0031, 2.0, 49.0, 100.0))
    assert np.max(np.abs(energy_levels(p, 100.0).energies - ref)) < 1e-9


def test_hamiltonian_matches_element_formulas_both_conventions():
    for conv in ("standard", "stevens"):
        p = SpinEnsembleParams(**MEASURED, phi=31.0, convention=conv)
        ref = spin_hamiltonian_elements(3.5, -1.23, 0.0031, 2.0, 31.0, 250.0, stevens=conv == "stevens")
        assert np.max(np.abs(build_hamiltonian(p, 250.0) - ref)) < 1e-12


def test_pure_zeeman_ladder():
    p = SpinEnsembleParams(D=0.0, E=0.0, phi=0.0)
    e = energy_levels(p, 1000.0).energies
    assert np.allclose(np.diff(e), 2 * MU_B_GHZ_PER_T, atol=1e-12)
    assert qubit_gap(p, 1000.0) == pytest.approx(27.99249, abs=1e-5)


def test_level_set_invariants():
    lv = energy_levels(SpinEnsembleParams(**MEASURED, phi=46.0), 185.0)
    assert len(lv.energies) == 8 and np.all(np.diff(lv.energies) >= 0)
    for i, j, f, w in lv.transition_table:
        assert i < j
        assert f == pytest.approx(lv.energies[j] - lv.energies[i], abs=1e-12)
        assert w >= 0
    assert len(lv.transition_table) == 28
    assert lv.populations[0] == 1.0


def test_gap_is_strongest_transition_out_of_ground():
    p = SpinEnsembleParams(**MEASURED, phi=46.0)
    lv = energy_levels(p, 300.0)
    best = max((row for row in lv.transition_table if row[0] == 0), key=lambda r: r[3])
    assert qubit_gap(p, 300.0) == pytest.approx(best[2], abs=1e-12)


def test_gap_selection_when_ground_state_is_upper_m():
    # field antiparallel to z: the ground state is m=+7/2, so S- is the allowed direction
    p = SpinEnsembleParams(**MEASURED, phi=144.0, convention="stevens")
    q = SpinEnsembleParams(**MEASURED, phi=36.0, convention="stevens")
    for b in (50.0, 150.0, 300.0):
        assert qubit_gap(p, b) == pytest.approx(qubit_gap(q, b), abs=1e-9)


def test_zero_field_gap_offset():
    p = SpinEnsembleParams(**MEASURED, phi=46.0, zero_field_gap=22.3)
    raw = SpinEnsembleParams(**MEASURED, phi=46.0)
    assert qubit_gap(p, 0.0) == pytest.approx(22.3, abs=1e-12)
    assert qubit_gap(p, 200.0) - qubit_gap(raw, 200.0) == pytest.approx(22.3 - qubit_gap(raw, 0.0), abs=1e-12)


def test_crossing_with_magnon_near_185_mT():
    from scipy.optimize import brentq
    from magnonqed.afm_modes import FieldConfig, MagnetParams, magnon_mode
    p = SpinEnsembleParams(**MEASURED, phi=46.0, convention="stevens")
    mag = MagnetParams()
    f = lambda b: qubit_gap(p, b) - magnon_mode(mag, FieldConfig(b0=b * 1e-3, theta=90.0)).frequency
    b_x = brentq(f, 120.0, 260.0, xtol=1e-6)
    assert abs(b_x - 185.0) < 5.0


def test_curve_matches_pointwise():
    p = SpinEnsembleParams(**MEASURED, phi=46.0, zero_field_gap=20.0)
    b = np.linspace(0, 400, 9)
    assert np.allclose(qubit_gap_curve(p, b), [qubit_gap(p, x) for x in b], atol=1e-12)


@pytest.mark.parametrize("kwargs, path", [
    (dict(S=1.25), "S"),
    (dict(S=0.0), "S"),
    (dict(S=60.5), "S"),
    (dict(D=-1.0, E=0.5), "E"),
    (dict(phi=360.0), "phi"),
    (dict(phi=-1.0), "phi"),
    (dict(convention="other"), "convention"),
])
def test_validation(kwargs, path):
    with pytest.raises(ValidationError) as exc:
        SpinEnsembleParams(**kwargs)
    assert exc.value.path == path


def test_negative_field_rejected():
    with pytest.raises(ValidationError):
        build_hamiltonian(SpinEnsembleParams(), -1.0)


@settings(max_examples=60, deadline=None)
@given(spin_params(), st.floats(0, 2000))
def test_hermitian(p, b):
    H = build_hamiltonian(p, b)
    assert np.max(np.abs(H - H.conj().T)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(spin_params(conventions=("standard",)), st.floats(0, 2000))
def test_trace_invariance(p, b):
    m = np.arange(p.S, -p.S - 1, -1)
    assert np.trace(build_hamiltonian(p, b)).real == pytest.approx(p.D * np.sum(m ** 2), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(spin_params())
def test_kramers_half_integer(p):
    if p.dim % 2 == 1:
        return
    e = energy_levels(p, 0.0).energies
    assert np.all(np.abs(e[0::2] - e[1::2]) < 1e-9)


@settings(max_examples=40, deadline=None)
@given(spin_params(), st.floats(0, 1500), st.floats(0, 2 * math.pi))
def test_rotation_consistency(p, b, alpha):
    # the field can be placed anywhere on the cone at angle phi about z
    phi = math.radians(p.phi)
    bt = b * 1e-3
    vec = bt * np.array([math.sin(phi) * math.cos(alpha), math.sin(phi) * math.sin(alpha), math.cos(phi)])
    if abs(p.E) > 0:
        # the rhombic term breaks the rotation about z; compare only the axial problem
        p = SpinEnsembleParams(S=p.S, D=p.D, E=0.0, g=p.g, phi=p.phi, convention=p.convention)
    H = zfs_hamiltonian(p) + zeeman_hamiltonian(p, vec)
    ref = np.linalg.eigvalsh(H)
    assert np.allclose(energy_levels(p, b).energies, ref, atol=1e-9)


def test_perturbative_limit_is_quadratic_for_transverse_field():
    # With E = 0 a transverse field has no first-order matrix element inside the
    # |m| = 7/2 or 5/2 doublets.  A rhombic term admixes m = -+1/2 into them and
    # adds a small linear splitting, so the axial problem is the clean case.
    p = SpinEnsembleParams(S=3.5, D=-1.23, E=0.0, phi=90.0)
    d0 = qubit_gap(p, 0.0)
    for h, tol in ((2.0, 1e-3), (0.25, 1e-4), (0.05, 1e-5)):
        d1, d2 = qubit_gap(p, h) - d0, qubit_gap(p, 2 * h) - d0
        assert d2 / d1 == pytest.approx(4.0, rel=tol)


def test_spin_operator_commutator():
    sx, sy, sz, sp, sm = spin_operators(3.5)
    assert np.allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-12)
    assert np.allclose(sx @ sx + sy @ sy + sz @ sz, 3.5 * 4.5 * np.eye(8), atol=1e-12)
