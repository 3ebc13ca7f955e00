import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnonqed import afm_modes
from magnonqed.afm_modes import (A_HAT, B_HAT, C_HAT, Equilibrium, FieldConfig, MagnetParams,
                                 ModeSolution, StackingConfig, chain_exchange, dynamical_matrix,
                                 equilibrium, linearized_modes, magnon_mode, minimize_energy,
                                 mode_rf_field, modes_from_state, stacking_spectrum,
                                 stacking_sweep, tangent_gradient, two_sublattice_exchange)
from magnonqed.errors import (DegenerateModeError, SolverError, StabilityError, ValidationError)
from oracles import (afmr_neel_b, afmr_saturated_a, afmr_saturated_b, afmr_zero_field,
                     fd_tangent_gradient, neel_limit)

MAG = MagnetParams()


def freqs(mag, field):
    return [m.frequency for m in linearized_modes(mag, field, equilibrium(mag, field))]


@st.composite
def magnets(draw):
    H_E = draw(st.floats(0.05, 2.0))
    H_a = draw(st.floats(0.02, 1.0))
    H_c = H_a + draw(st.floats(0.0, 2.0))
    return MagnetParams(H_E=H_E, H_a=H_a, H_c=H_c, g=draw(st.floats(1.8, 2.2)))


# --- equilibrium -----------------------------------------------------------


def test_zero_field_neel_state_along_b():
    eq = equilibrium(MAG, FieldConfig(b0=0.0))
    assert np.allclose(eq.m1, B_HAT, atol=1e-9)
    assert np.allclose(eq.m2, -B_HAT, atol=1e-9)


def test_saturated_along_a_at_1p5_T():
    eq = equilibrium(MAG, FieldConfig(b0=1.5, theta=90.0))
    assert np.allclose(eq.m1, A_HAT, atol=1e-8)
    assert np.allclose(eq.m2, A_HAT, atol=1e-8)


def test_symmetric_canting_at_0p3_T():
    field = FieldConfig(b0=0.3, theta=90.0)
    eq = equilibrium(MAG, field)
    assert eq.m1 @ B_HAT == pytest.approx(-(eq.m2 @ B_HAT), abs=1e-9)
    assert eq.m1 @ A_HAT == pytest.approx(eq.m2 @ A_HAT, abs=1e-9)
    # canting angle of a biaxial antiferromagnet with field along a
    assert eq.m1 @ A_HAT == pytest.approx(0.3 / (2 * MAG.H_E + MAG.H_a), rel=1e-8)
    fd = fd_tangent_gradient(eq.moments, MAG.H_E, MAG.H_a, MAG.H_c, field.vector)
    assert np.linalg.norm(fd) < 1e-8


def test_equilibrium_invariants():
    for th in (0.0, 30.0, 60.0, 90.0):
        for b in (0.05, 0.2, 0.6, 1.0):
            eq = equilibrium(MAG, FieldConfig(b0=b, theta=th))
            assert np.allclose(np.linalg.norm(eq.moments, axis=1), 1.0, atol=1e-10)
            assert eq.gradient_norm < 1e-8


@settings(max_examples=30, deadline=None)
@given(magnets(), st.floats(0, 2.0), st.floats(0, 90), st.integers(0, 2 ** 31))
def test_analytic_gradient_matches_finite_differences(mag, b, th, seed):
    # arbitrary (non-equilibrium) configurations exercise the full gradient
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(2, 3))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    bvec = FieldConfig(b0=b, theta=th).vector
    J = two_sublattice_exchange(mag)
    g = tangent_gradient(m, J, mag, bvec)
    fd = fd_tangent_gradient(m, mag.H_E, mag.H_a, mag.H_c, bvec)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-4 * max(1.0, np.abs(g).max()) * 1e-2)


def test_solver_error_carries_gradient(monkeypatch):
    monkeypatch.setattr(afm_modes, "_descend", lambda *a, **k: (a[0], 0.0, 0.123, False))
    with pytest.raises(SolverError) as exc:
        equilibrium(MAG, FieldConfig(b0=0.1))
    assert exc.value.residual == pytest.approx(0.123)


# --- linearized modes ------------------------------------------------------


def test_zero_field_frequencies_match_analytic():
    ref = np.array(afmr_zero_field(MAG.H_E, MAG.H_a, MAG.H_c)) * MAG.gamma
    assert np.allclose(freqs(MAG, FieldConfig(b0=0.0)), ref, rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(magnets(), st.floats(0.0, 0.9))
def test_neel_b_branch_matches_analytic(mag, frac):
    # the Neel state is the global minimum below both the spin-flop field and H_E
    b = frac * neel_limit(mag)
    field = FieldConfig(b0=b, theta=0.0)
    eq = equilibrium(mag, field)
    assert abs(eq.m1 @ B_HAT) > 1 - 1e-9
    ref = np.array(afmr_neel_b(mag.H_E, mag.H_a, mag.H_c, b)) * mag.gamma
    assert np.allclose([m.frequency for m in linearized_modes(mag, field, eq)], ref, rtol=1e-6)


@settings(max_examples=25, deadline=None)
@given(magnets(), st.floats(1.05, 3.0))
def test_saturated_a_matches_analytic(mag, factor):
    b = factor * (2 * mag.H_E + mag.H_a)
    field = FieldConfig(b0=b, theta=90.0)
    eq = equilibrium(mag, field)
    assert np.allclose(eq.moments, [A_HAT, A_HAT], atol=1e-8)
    modes = {m.branch_label: m.frequency for m in linearized_modes(mag, field, eq)}
    ac, op = np.array(afmr_saturated_a(mag.H_E, mag.H_a, mag.H_c, b)) * mag.gamma
    assert modes["acoustic"] == pytest.approx(ac, rel=1e-6)
    assert modes["optical"] == pytest.approx(op, rel=1e-6)


def test_saturated_b_matches_analytic():
    b = 2.0
    field = FieldConfig(b0=b, theta=0.0)
    eq = equilibrium(MAG, field)
    assert np.allclose(eq.moments, [B_HAT, B_HAT], atol=1e-8)
    ac, op = np.array(afmr_saturated_b(MAG.H_E, MAG.H_a, MAG.H_c, b)) * MAG.gamma
    modes = {m.branch_label: m.frequency for m in linearized_modes(MAG, field, eq)}
    assert modes["acoustic"] == pytest.approx(ac, rel=1e-8)
    assert modes["optical"] == pytest.approx(op, rel=1e-8)


def test_dense_eigensolver_route_agrees():
    for th, b in ((90.0, 0.3), (0.0, 0.2), (45.0, 0.5)):
        field = FieldConfig(b0=b, theta=th)
        eq = equilibrium(MAG, field)
        A, _, _ = dynamical_matrix(eq.moments, two_sublattice_exchange(MAG), MAG, field.vector)
        lam = np.linalg.eigvals(A)
        ref = np.sort(np.abs(lam.imag[lam.imag > 0]))
        assert np.allclose(freqs(MAG, field), ref, rtol=1e-10)


def test_easy_axis_field_gives_opposite_circular_modes():
    modes = linearized_modes(MAG, FieldConfig(b0=0.2, theta=0.0),
                             equilibrium(MAG, FieldConfig(b0=0.2, theta=0.0)))
    assert {m.chirality for m in modes} == {"LH", "RH"}
    for m in modes:
        # orbit lies in the ac-plane, perpendicular to the field
        assert abs(m.net_orbit[1]) < 1e-9


def test_acoustic_orbit_along_hard_axis_for_field_along_a():
    mode = magnon_mode(MAG, FieldConfig(b0=0.3, theta=90.0))
    v = mode.net_orbit
    assert abs(v[2]) > abs(v[0]) and abs(v[2]) > abs(v[1])
    assert abs(v[0]) < 1e-9


def test_mode_invariants():
    for th in (0.0, 45.0, 90.0):
        for b in (0.0, 0.15, 0.4, 0.9, 1.4):
            modes = linearized_modes(MAG, FieldConfig(b0=b, theta=th),
                                     equilibrium(MAG, FieldConfig(b0=b, theta=th)))
            assert len(modes) == 2
            assert sorted(m.branch_label for m in modes) == ["acoustic", "optical"]
            for m in modes:
                assert m.frequency >= 0
                assert 0 <= m.ellipticity <= 1
                assert (m.chirality == "linear") == (m.ellipticity < afm_modes.LINEAR_ELLIPTICITY)


def test_acoustic_branch_continuous_below_saturation():
    prev = None
    for b in np.arange(0.0, 1.16, 0.005):
        f = magnon_mode(MAG, FieldConfig(b0=b, theta=90.0)).frequency
        if prev is not None:
            assert abs(f - prev) < 0.2
        prev = f


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(0.0, 90.0))
def test_reflection_of_b_with_sublattice_exchange(b, th):
    field = FieldConfig(b0=b, theta=th)
    J = two_sublattice_exchange(MAG)
    bvec = field.vector
    mirror = bvec * np.array([1.0, -1.0, 1.0])
    eq = minimize_energy(J, MAG, bvec, swap_allowed=True)
    eq_m = minimize_energy(J, MAG, mirror, swap_allowed=True)
    assert eq.energy == pytest.approx(eq_m.energy, abs=1e-10)
    f1 = [m.frequency for m in modes_from_state(eq.moments, J, MAG, bvec, field.direction)]
    f2 = [m.frequency for m in modes_from_state(eq_m.moments, J, MAG, mirror, field.direction)]
    assert np.allclose(f1, f2, rtol=1e-8)
    # the mirrored state with sublattices exchanged is itself an equilibrium of the mirrored field
    img = (eq.moments * np.array([1.0, -1.0, 1.0]))[::-1]
    assert np.linalg.norm(tangent_gradient(img, J, MAG, mirror)) < 1e-8


def test_stability_error_names_branch():
    field = FieldConfig(b0=0.0)
    hard = Equilibrium(moments=np.array([C_HAT, -C_HAT]), energy=0.0, gradient_norm=0.0)
    with pytest.raises(StabilityError) as exc:
        linearized_modes(MAG, field, hard)
    assert exc.value.branch in ("acoustic", "optical")


# --- rf field --------------------------------------------------------------


def test_rf_field_is_normalized_net_orbit():
    mode = magnon_mode(MAG, FieldConfig(b0=0.185, theta=90.0))
    v = mode_rf_field(mode)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert abs(v[2]) > abs(v[0])
    assert abs(v[0]) < 1e-9


def test_circular_mode_about_b():
    uni = MagnetParams(H_E=0.4, H_a=0.5, H_c=0.5)
    field = FieldConfig(b0=0.1, theta=0.0)
    for mode in linearized_modes(uni, field, equilibrium(uni, field)):
        v = mode_rf_field(mode)
        assert abs(v @ B_HAT) < 1e-9
        assert abs(v[0]) == pytest.approx(abs(v[2]), rel=1e-8)
        assert abs(abs(np.angle(v[2] / v[0], deg=True)) - 90) < 1e-6


def test_linear_mode_phase():
    field = FieldConfig(b0=0.0)
    for mode in linearized_modes(MAG, field, equilibrium(MAG, field)):
        v = mode_rf_field(mode)
        nz = np.abs(v) > 1e-9
        phases = np.angle(v[nz], deg=True)
        diffs = np.mod(phases - phases[0], 180.0)
        assert np.all(np.minimum(diffs, 180 - diffs) < 1e-6)


def test_degenerate_mode():
    m = ModeSolution(frequency=1.0, sublattice_ellipses=np.array([[1, 0, 0], [-1, 0, 0]], complex),
                     net_orbit=np.zeros(3, complex), chirality="linear", ellipticity=0.0)
    with pytest.raises(DegenerateModeError):
        mode_rf_field(m)


# --- stacking --------------------------------------------------------------


def test_two_layer_chain_reduces_to_two_sublattices():
    cfg = StackingConfig(n_layers=2, fault_probability=0.0, boundary="open")
    for th, b in ((90.0, 0.0), (90.0, 0.3), (0.0, 0.15), (60.0, 0.7)):
        field = FieldConfig(b0=b, theta=th)
        spectrum = [f for f, _ in stacking_spectrum(MAG, field, cfg)]
        assert np.allclose(spectrum, freqs(MAG, field), rtol=1e-8)


def test_periodic_chain_matches_bulk_without_faults():
    cfg = StackingConfig(n_layers=8, fault_probability=0.0)
    field = FieldConfig(b0=0.2, theta=90.0)
    spectrum = stacking_spectrum(MAG, field, cfg)
    bulk = freqs(MAG, field)
    strong = [f for f, w in spectrum if w > 1e-6]
    # only the uniform modes couple to a uniform drive; they sit at the bulk frequencies
    assert all(np.min(np.abs(np.array(bulk) - f)) < 1e-7 * f for f in strong)
    assert sum(w for _, w in spectrum) == pytest.approx(1.0)


def test_stacking_deterministic():
    cfg = StackingConfig(n_layers=12, fault_probability=0.3, seed=7)
    field = FieldConfig(b0=0.22, theta=90.0)
    a = stacking_spectrum(MAG, field, cfg, point_index=3)
    b = stacking_spectrum(MAG, field, cfg, point_index=3)
    assert a == b


def test_stacking_matches_dense_eigensolver():
    cfg = StackingConfig(n_layers=20, fault_probability=0.1, seed=1)
    J = chain_exchange(MAG, cfg)
    for b in (0.1, 0.22, 0.4):
        field = FieldConfig(b0=b, theta=90.0)
        spectrum = np.array([f for f, _ in stacking_spectrum(MAG, field, cfg)])
        eq = minimize_energy(J, MAG, field.vector,
                             rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
        A, _, _ = dynamical_matrix(eq.moments, J, MAG, field.vector)
        lam = np.linalg.eigvals(A)
        ref = np.sort(np.abs(lam.imag))[::2]
        assert np.allclose(np.sort(spectrum), ref, rtol=1e-7, atol=1e-7)
        assert spectrum.max() - spectrum.min() > 0


def test_sweep_serial_equals_parallel():
    cfg = StackingConfig(n_layers=6, fault_probability=0.3, seed=2)
    fields = [FieldConfig(b0=b, theta=90.0) for b in (0.1, 0.2, 0.3)]
    assert stacking_sweep(MAG, fields, cfg, jobs=1) == stacking_sweep(MAG, fields, cfg, jobs=2)


def test_fault_changes_bond():
    cfg = StackingConfig(n_layers=50, fault_probability=0.5, fault_coupling_scale=-1.0, seed=3)
    J = chain_exchange(MAG, cfg)
    vals = set(np.round(J[J != 0], 12))
    assert vals == {round(MAG.H_E / 2, 12), round(-MAG.H_E / 2, 12)}


# --- validation ------------------------------------------------------------


@pytest.mark.parametrize("kwargs, path", [
    (dict(H_E=0.0), "H_E"), (dict(H_a=-0.1), "H_a"), (dict(H_a=2.0, H_c=1.0), "H_c"), (dict(g=0.0), "g"),
])
def test_magnet_validation(kwargs, path):
    with pytest.raises(ValidationError) as exc:
        MagnetParams(**kwargs)
    assert exc.value.path == path


@pytest.mark.parametrize("kwargs", [dict(b0=-1.0), dict(theta=91.0), dict(theta=-1.0)])
def test_field_validation(kwargs):
    with pytest.raises(ValidationError):
        FieldConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(n_layers=1), dict(fault_probability=1.5), dict(boundary="x")])
def test_stacking_validation(kwargs):
    with pytest.raises(ValidationError):
        StackingConfig(**kwargs)
