from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermbath import hilbert as H
from thermbath.lindblad import MasterEquation, evolve
from thermbath.lvc import (
    BathSpec,
    ImperfectionSpec,
    LvcModel,
    ModeSpec,
    build_hamiltonian,
    build_master_equation,
    default_cutoff,
    initial_donor_state,
    nbar_from_temperature,
    single_mode,
    temperature_from_nbar,
)
from thermbath.transfer import simulate_transfer


def _brute_force_h(de, v, g, w, cutoff):
    sx = np.array([[0, 1], [1, 0]])
    sz = np.diag([1.0, -1.0])
    a = np.diag(np.sqrt(np.arange(1, cutoff)), 1)
    x = a + a.T
    i2, im = np.eye(2), np.eye(cutoff)
    return (0.5 * de * np.kron(sz, im) + v * np.kron(sx, im)
            + 0.5 * g * np.kron(sz, x) + w * np.kron(i2, a.T @ a))


def test_hamiltonian_matches_kronecker_assembly():
    m = single_mode(3.0, 0.2, 1.1, cutoff=9)
    assert np.allclose(build_hamiltonian(m).matrix, _brute_force_h(3.0, 0.2, 1.1, 1.0, 9))


def test_bare_spin_splitting():
    m = single_mode(2.0, 0.0, 0.0, cutoff=2)
    w = np.linalg.eigvalsh(build_hamiltonian(m).matrix)
    assert np.allclose(w, [-1, 0, 1, 2])


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-1, 1), st.floats(-2, 2), st.floats(0.1, 2), st.floats(-1, 1))
def test_hamiltonian_hermitian(de, v, g1, w2, g2):
    m = LvcModel(de, v, (ModeSpec(g1, 1.0), ModeSpec(g2, w2)), cutoffs=(4, 3))
    h = build_hamiltonian(m).matrix
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_two_mode_reference_parameters():
    m = LvcModel(0.5, 0.13, (ModeSpec(0.33, 1.0, BathSpec(0.013, 0.1)),
                             ModeSpec(0.20, 0.6, BathSpec(0.006, 0.02))),
                 ImperfectionSpec(0.0004, 0.004), cutoffs=(4, 3))
    eq = build_master_equation(m)
    assert len(eq.dissipators) == 7
    rates = [d.rate for d in eq.dissipators]
    assert rates == pytest.approx([0.013 * 1.1, 0.013 * 0.1, 0.006 * 1.02, 0.006 * 0.02,
                                   0.0004, 0.004, 0.004])


def test_dissipator_counts():
    assert len(build_master_equation(single_mode(1, 0.2, 1.1, gamma=0.1, cutoff=4)).dissipators) == 2
    eq = build_master_equation(single_mode(1, 0.2, 1.1, gamma=0.036, nbar=0.15, gamma_z=0.0014,
                                           gamma_m=0.016, cutoff=4))
    assert [d.rate for d in eq.dissipators] == pytest.approx(
        [0.036 * 1.15, 0.036 * 0.15, 0.0014, 0.016])
    lay = eq.layout
    assert eq.dissipators[2].jump.allclose(H.sigma_y(lay))
    assert eq.dissipators[3].jump.allclose(H.number_op(lay, 0))


def test_model_validation():
    with pytest.raises(ValueError):
        LvcModel(0, 0.1, ())
    with pytest.raises(ValueError):
        ModeSpec(1.0, 0.0)
    with pytest.raises(ValueError):
        BathSpec(-0.1, 0.0)
    with pytest.raises(ValueError):
        ImperfectionSpec(0.0, -1.0)
    with pytest.raises(ValueError):
        single_mode(1, 0.1, 1.0, cutoff=1)


def test_model_dict_roundtrip():
    m = single_mode(3.0, 0.2, 1.1, gamma=0.036, nbar=0.15, gamma_z=0.0014, gamma_m=0.016)
    back = LvcModel.from_dict(m.to_dict())
    assert back.to_dict() == m.to_dict()


def test_initial_state_vacuum_limit():
    m = single_mode(1.0, 0.2, 0.0, cutoff=5)
    rho = initial_donor_state(m)
    ref = np.zeros((10, 10))
    ref[0, 0] = 1
    assert np.allclose(rho.matrix, ref)


def test_initial_state_mean_position():
    # donor well centred at -g/(2 omega) in the (a + a^H)/2 quadrature
    m = single_mode(3.0, 0.2, 1.1, nbar=0.15)
    rho = initial_donor_state(m)
    x = 0.5 * (H.mode_op(m.layout, 0) + H.mode_op(m.layout, 0).dag())
    assert H.expectation(rho, x).real == pytest.approx(-0.55, abs=1e-6)
    assert rho.discarded_mass < 1e-6
    acc = initial_donor_state(m, site="acceptor")
    assert H.expectation(acc, x).real == pytest.approx(0.55, abs=1e-6)


def test_initial_state_cutoff_guard():
    with pytest.raises(H.TruncationError):
        initial_donor_state(single_mode(3.0, 0.2, 1.1, nbar=0.8, cutoff=6))


def test_default_cutoff_keeps_tail_small():
    for nb, g in [(0.15, 1.1), (0.8, 1.1), (0.02, 0.2)]:
        m = single_mode(3.0, 0.2, g, nbar=nb)
        assert initial_donor_state(m).discarded_mass < 1e-6
    assert default_cutoff(0.0, 0.0) >= 2


def test_preparation_protocol_reaches_constructed_state():
    nb, g, gam = 0.15, 1.1, 0.036
    m = single_mode(3.0, 0.2, g, gamma=gam, nbar=nb, cutoff=14)
    eq = build_master_equation(m)
    h_unc = eq.hamiltonian - 0.2 * H.sigma_x(m.layout)
    prep = MasterEquation(h_unc, eq.dissipators)
    start = H.tensor(H.DensityMatrix.from_ket(H.HilbertLayout(True, ()), [1, 0]),
                     H.thermal_state(H.HilbertLayout(False, (14,)), 0, nb))
    ts = evolve(start, prep, [0.0, 6 / gam], store_states=True)
    assert H.fidelity(ts.states[-1], initial_donor_state(m)) >= 0.999


def test_no_coupling_keeps_donor_population():
    m = single_mode(2.0, 0.0, 1.1, gamma=0.05, nbar=0.3, cutoff=16)
    ts = simulate_transfer(m, 40.0, dt=0.5)
    assert np.max(np.abs(ts["P_D"] - 1.0)) < 1e-6


def test_parity_mirror_dynamics():
    m = single_mode(2.5, 0.2, 1.1, gamma=0.05, nbar=0.3, gamma_z=0.002, gamma_m=0.01, cutoff=16)
    mirror = single_mode(-2.5, 0.2, -1.1, gamma=0.05, nbar=0.3, gamma_z=0.002, gamma_m=0.01,
                         cutoff=16)
    grid = np.linspace(0, 30, 61)
    sz = H.sigma_z(m.layout)
    a = evolve(initial_donor_state(m), build_master_equation(m), grid, {"sz": sz})
    b = evolve(initial_donor_state(mirror, site="acceptor"), build_master_equation(mirror), grid,
               {"sz": sz})
    p_d = 0.5 * (1 + a["sz"])
    p_a_mirror = 0.5 * (1 - b["sz"])
    assert np.max(np.abs(p_d - p_a_mirror)) < 1e-8


def test_spectator_mode_reduces_to_single_mode():
    one = single_mode(2.0, 0.2, 1.1, gamma=0.05, nbar=0.2, gamma_z=0.002, gamma_m=0.01, cutoff=16)
    two = LvcModel(2.0, 0.2, (ModeSpec(1.1, 1.0, BathSpec(0.05, 0.2)), ModeSpec(0.0, 0.6)),
                   ImperfectionSpec(0.002, 0.01), cutoffs=(16, 2))
    a = simulate_transfer(one, 30.0, dt=0.25)
    b = simulate_transfer(two, 30.0, dt=0.25)
    assert np.max(np.abs(a["P_D"] - b["P_D"])) < 1e-7


def test_temperature_map():
    assert temperature_from_nbar(0.15) == pytest.approx(0.49, abs=0.005)
    assert temperature_from_nbar(0.80) == pytest.approx(1.23, abs=0.005)
    assert temperature_from_nbar(100.0) / 100.5 == pytest.approx(1.0, rel=0.01)
    assert temperature_from_nbar(0.0) == 0.0
    assert nbar_from_temperature(temperature_from_nbar(0.37)) == pytest.approx(0.37, rel=1e-12)
    with pytest.raises(ValueError):
        temperature_from_nbar(-1.0)
