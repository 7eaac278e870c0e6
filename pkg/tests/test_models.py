from __future__ import annotations

import numpy as np
import pytest

from combqtt.lindblad import evolve_lindblad, second_order_step
from combqtt.models import (CatParams, KerrParams, TransmonParams, branch_analysis, cat_initial_state, cat_model,
                            cat_target_state, coupled_hamiltonian_dense, dressed_drive_frequency, kerr_model,
                            semiclassical_kerr, transmon_branch_analysis, transmon_cavity_model,
                            transmon_eigenbasis, transmon_initial_state, z_gate_error)
from combqtt.operators import local
from combqtt.oracle import embed, ladder
from combqtt.purified import CompressionBudget, ModeLayout, from_pure_product, reduced_density_matrix
from combqtt.quantics import annihilation_mpo, coherent_state_qtt, fock_state_qtt
from combqtt.schrodinger import evolve
from combqtt.tt import TruncationPolicy

TWO_PI = 2 * np.pi


# ---------------------------------------------------------------- Kerr

def test_kerr_dense_hamiltonian():
    p = KerrParams(R=5, alpha0=2.0)
    H, psi0 = kerr_model(p)
    n = np.arange(32.0)
    assert np.abs(H.h0.to_dense() - np.diag(p.omega0 * n + p.K / 2 * n * (n - 1))).max() < 1e-10
    a = ladder(32)
    assert np.abs(H.h1.to_dense() - (a @ a + a.T @ a.T)).max() < 1e-10
    assert abs(np.linalg.norm(psi0.to_dense()) - 1.0) < 1e-12


def test_kerr_harmonic_limit_rotates_rigidly():
    p = KerrParams(R=6, alpha0=1.5, K=0.0, amplitudes=(0.0, 0.0))
    H, psi0 = kerr_model(p)
    grid = np.linspace(0, 1, 21)
    traj = evolve(H, psi0, grid, "tdvp_magnus", TruncationPolicy(1e-12), {"a": annihilation_mpo(6)},
                  keep_states=True)
    assert np.abs(traj.observables["a"] - 1.5 * np.exp(-1j * grid)).max() < 1e-8
    # rigid: Fock populations unchanged
    p0 = np.abs(traj.states[0].to_dense()) ** 2
    assert np.abs(np.abs(traj.states[-1].to_dense()) ** 2 - p0).max() < 1e-10


def test_semiclassical_free_rotation():
    p = KerrParams(K=0.0, amplitudes=(0.0, 0.0), alpha0=2.0)
    grid = np.linspace(0, 3, 31)
    alpha = semiclassical_kerr(p, grid)
    assert np.abs(alpha - 2.0 * np.exp(-1j * grid)).max() < 1e-8


def test_default_kerr_parameters():
    p = KerrParams()
    assert (p.omega0, p.K, p.alpha0, p.R) == (1.0, 1 / 25, 4.0, 8)


# ---------------------------------------------------------------- cat qubit

def test_cat_dense_hamiltonian():
    p = CatParams(alpha2=2.0, R_a=4, R_b=3, kappa_a=0.01, kappa_phi=0.02)
    model = cat_model(p)
    a, b = ladder(16), ladder(8)
    dims = [16, 8]
    ref = (p.g2 * embed({0: a.T @ a.T, 1: b}, dims) + p.g2 * embed({0: a @ a, 1: b.T}, dims)
           + p.eps_d * embed({1: b + b.T}, dims) + p.eps_zeta * embed({0: a + a.T}, dims))
    assert np.abs(model.dense_hamiltonian(0.0) - ref).max() < 1e-10
    jumps = model.dense_jumps()
    assert np.abs(jumps[0] - np.sqrt(p.kappa_b) * embed({1: b}, dims)).max() < 1e-10
    assert np.abs(jumps[1] - np.sqrt(p.kappa_a) * embed({0: a}, dims)).max() < 1e-10
    assert np.abs(jumps[2] - np.sqrt(p.kappa_phi) * embed({0: a.T @ a}, dims)).max() < 1e-10


def test_cat_defaults_and_derived_quantities():
    p = CatParams(alpha2=4.0)
    assert p.eps_zeta == pytest.approx(0.04)
    assert p.eps_d == pytest.approx(-4.0)
    assert p.gate_time == pytest.approx(np.pi / (4 * 2.0 * 0.04))


def test_cat_rejects_small_memory():
    with pytest.raises(ValueError):
        cat_model(CatParams(alpha2=4.0, R_a=3))


def test_cat_coherent_state_is_stabilized():
    p = CatParams(alpha2=2.0, R_a=4, R_b=3, eps_z=0.0)
    model = cat_model(p)
    alpha = p.alpha
    lay = ModeLayout((p.R_a, p.R_b))
    grid = np.linspace(0, 10 / p.kappa_b, 11)
    obs = {"a": local(0, annihilation_mpo(p.R_a))}
    for sign in (+1, -1):
        s = from_pure_product([coherent_state_qtt(sign * alpha, p.R_a), fock_state_qtt(0, p.R_b)], lay)
        traj = evolve_lindblad(model, s, grid, "order2", CompressionBudget.uniform(1e-10), obs, substeps=10)
        a_t = np.asarray(traj.observables["a"])
        assert np.abs(a_t - sign * alpha).max() <= 1e-2 * alpha


def test_identity_gate_has_zero_error():
    p = CatParams(alpha2=2.0, R_a=4, R_b=3, theta=0.0)
    assert z_gate_error(p, cat_initial_state(p)) < 1e-12
    assert abs(np.linalg.norm(cat_target_state(p, np.pi)) - 1.0) < 1e-12


# ---------------------------------------------------------------- transmon

@pytest.fixture(scope="module")
def small_basis():
    return transmon_eigenbasis(TransmonParams(R_t=4))


def test_transmon_frequency_from_exact_diagonalization(small_basis):
    # exact charge-basis diagonalization at E_C = 0.28 GHz, E_J/E_C = 50
    assert small_basis.frequency_ghz == pytest.approx(5.303737, abs=1e-6)


def test_transmon_charge_diagonal_vanishes(small_basis):
    assert np.abs(np.diag(small_basis.charge)).max() < 1e-12


def test_transmon_mpos_match_dense(small_basis):
    assert np.abs(small_basis.n_mpo.to_dense() - small_basis.charge).max() < 1e-10
    assert np.abs(np.diag(small_basis.h_mpo.to_dense()).real - small_basis.energies).max() < 1e-9
    assert np.abs(small_basis.number_mpo.to_dense() - np.diag(np.arange(16.0))).max() < 1e-12


def test_transmon_cavity_dense_hamiltonian():
    p = TransmonParams(R_t=3, R_c=4, eps_d=0.1)
    model, basis, wd = transmon_cavity_model(p)
    a = ladder(16)
    dims = [8, 16]
    ref = (embed({0: np.diag(basis.energies)}, dims) + TWO_PI * p.omega_r * embed({1: a.T @ a}, dims)
           - 1j * TWO_PI * p.g * embed({0: basis.charge, 1: a - a.T}, dims))
    t = 0.37
    ref = ref + TWO_PI * p.eps_d * np.sin(TWO_PI * wd * t) * (-1j) * embed({1: a - a.T}, dims)
    assert np.abs(model.dense_hamiltonian(t) - ref).max() < 1e-9
    assert np.abs(coupled_hamiltonian_dense(p, basis) - model.dense_hamiltonian(0.0)).max() < 1e-9


def test_dressed_drive_frequency():
    p = TransmonParams(R_t=4, R_c=5)
    assert dressed_drive_frequency(p) == pytest.approx(7.5218, abs=1e-3)


def test_uncoupled_product_states_are_stationary():
    p = TransmonParams(R_t=3, R_c=3, g=0.0, eps_d=0.0, kappa=0.0)
    model, _, _ = transmon_cavity_model(p)
    s = transmon_initial_state(p, 1, 2)
    out, _ = second_order_step(model, s, 0.0, 0.005, CompressionBudget.uniform(1e-12))
    for m in (0, 1):
        assert np.abs(reduced_density_matrix(out, m) - reduced_density_matrix(s, m)).max() < 1e-12


def test_branch_analysis_decoupled_limit():
    p = TransmonParams(R_t=3, R_c=4, g=0.0)
    table = transmon_branch_analysis(p, n_c_max=6)
    for i_t in range(8):
        nc, nt = table.branch(i_t)
        assert np.allclose(nt, i_t, atol=1e-12)
        assert np.allclose(nc, np.arange(7), atol=1e-12)
    assert not table.ill_defined
    assert table.crossing(0) is None


def test_branch_analysis_is_deterministic_and_flags_weak_labels():
    p = TransmonParams(R_t=3, R_c=5)
    t1 = transmon_branch_analysis(p, n_c_max=20, transmon_levels=range(3))
    t2 = transmon_branch_analysis(p, n_c_max=20, transmon_levels=range(3))
    assert t1.labels == t2.labels and t1.n_t == t2.n_t and t1.ill_defined == t2.ill_defined
    for key, ov in t1.overlap.items():
        assert ov >= 0.5 or key in t1.ill_defined


def test_branch_analysis_dimension_check():
    with pytest.raises(ValueError):
        branch_analysis(np.eye(6), np.eye(6), np.eye(6), np.eye(6), 2, 4)
