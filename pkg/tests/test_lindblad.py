from __future__ import annotations

import numpy as np
import pytest

from combqtt.lindblad import (KrausMap, LindbladModel, apply_kraus, evolve_lindblad, first_order_step,
                              second_order_step)
from combqtt.operators import OperatorSum, local
from combqtt.oracle import dense_kraus, dense_lindblad, embed, ladder, trace_distance
from combqtt.purified import CompressionBudget, ModeLayout, from_pure_product, from_pure_state, purity
from combqtt.quantics import annihilation_mpo, coherent_state_qtt, fock_state_qtt, number_mpo
from combqtt.tt import MatrixProductOperator

TIGHT = CompressionBudget.uniform(1e-12)


def _damping_model(kappa=1.0, R=2, hamiltonian=None):
    lay = ModeLayout((R,))
    h0 = hamiltonian if hamiltonian is not None else local(0, number_mpo(R), 0.0)
    jumps = (local(0, annihilation_mpo(R), np.sqrt(kappa)),) if kappa else ()
    return LindbladModel(h0, jumps, lay)


def test_identity_kraus_map():
    s = from_pure_product([coherent_state_qtt(0.7, 3)])
    out = apply_kraus(KrausMap.from_operators([OperatorSum.identity()]), s, TIGHT)
    assert np.abs(out.to_dense() - s.to_dense()).max() < 1e-12


def test_complete_dephasing_halves_purity():
    plus = from_pure_state(np.array([1.0, 1.0]) / np.sqrt(2), ModeLayout((1,)))
    P0 = MatrixProductOperator.product([np.diag([1.0, 0.0])])
    P1 = MatrixProductOperator.product([np.diag([0.0, 1.0])])
    out = apply_kraus(KrausMap.from_operators([local(0, P0), local(0, P1)]), plus, TIGHT)
    assert purity(out) == pytest.approx(0.5, abs=1e-13)


def test_kraus_map_matches_dense():
    R, p = 4, 0.2
    s = from_pure_product([coherent_state_qtt(0.8, R)])
    a = annihilation_mpo(R)
    kmap = KrausMap.from_operators([OperatorSum.identity(np.sqrt(1 - p)), local(0, a, np.sqrt(p))])
    out = apply_kraus(kmap, s, TIGHT).to_dense()
    ref = dense_kraus([np.sqrt(1 - p) * np.eye(16), np.sqrt(p) * ladder(16)], s.to_dense())
    assert np.abs(out - ref).max() < 1e-12


def test_first_order_without_dynamics_is_identity():
    model = _damping_model(kappa=0.0)
    s = from_pure_product([coherent_state_qtt(0.5, 2, max_fill=0.5)])
    out, tr = first_order_step(model, s, 0.0, 0.1, TIGHT)
    assert tr == pytest.approx(1.0, abs=1e-14)
    assert np.abs(out.to_dense() - s.to_dense()).max() < 1e-13


def _damping_error(scheme, h, T=1.0):
    model = _damping_model()
    s = from_pure_product([fock_state_qtt(1, 2)])
    grid = np.linspace(0.0, T, int(round(T / h)) + 1)
    traj = evolve_lindblad(model, s, grid, scheme, TIGHT, {"n": local(0, number_mpo(2))})
    n = np.real(traj.observables["n"])
    return np.abs(n - np.exp(-grid)).max()


def test_amplitude_damping_orders():
    e1 = [_damping_error("order1", h) for h in (0.1, 0.05)]
    e2 = [_damping_error("order2", h) for h in (0.1, 0.05)]
    assert 0.7 < np.log2(e1[0] / e1[1]) < 1.3
    assert 1.5 < np.log2(e2[0] / e2[1]) < 2.5
    assert e2[1] < e1[1]


def test_pre_normalization_trace_orders():
    model = _damping_model(kappa=1.0, R=2, hamiltonian=local(0, number_mpo(2), 0.7))
    s = from_pure_product([coherent_state_qtt(0.6, 2, max_fill=0.5)])
    for step, order in ((first_order_step, 1), (second_order_step, 2)):
        dev = [abs(step(model, s, 0.0, h, TIGHT)[1] - 1.0) for h in (0.02, 0.01)]
        assert np.log2(dev[0] / dev[1]) == pytest.approx(order + 1, abs=0.3)


def test_tiny_step_is_identity():
    model = _damping_model()
    s = from_pure_product([fock_state_qtt(1, 2)])
    out, _ = second_order_step(model, s, 0.0, 1e-9, TIGHT)
    assert np.abs(out.to_dense() - s.to_dense()).max() < 1e-8


def test_step_rejects_non_positive_h():
    with pytest.raises(ValueError):
        first_order_step(_damping_model(), from_pure_product([fock_state_qtt(1, 2)]), 0.0, 0.0, TIGHT)


def _two_mode_model(kappa=0.5, drive=True):
    R = (2, 2)
    lay = ModeLayout(R)
    a, b = annihilation_mpo(2), annihilation_mpo(2)
    h0 = local(0, number_mpo(2), 0.4) + OperatorSum.product({0: a.adjoint(), 1: b}, 0.3) \
        + OperatorSum.product({0: a, 1: b.adjoint()}, 0.3)
    h1 = local(0, a) + local(0, a.adjoint())
    jumps = (local(1, b, np.sqrt(kappa)),) if kappa else ()
    return LindbladModel(h0, jumps, lay, h1 if drive else None, (lambda t: 0.2 * np.cos(1.3 * t)) if drive else None)


def test_closed_limit_stays_pure_and_matches_dense():
    model = _two_mode_model(kappa=0.0)
    s = from_pure_product([coherent_state_qtt(0.5, 2, max_fill=0.5), fock_state_qtt(0, 2)])
    grid = np.linspace(0, 1, 11)
    traj = evolve_lindblad(model, s, grid, "order2", TIGHT, substeps=10, keep_states=True)
    assert min(traj.purity) > 1 - 1e-8
    ref = dense_lindblad(model.dense_hamiltonian, [], s.to_dense(), grid, substeps=200)
    assert trace_distance(traj.states[-1].to_dense(), ref[-1]) < 1e-4


def test_small_model_matches_dense_oracle_and_stays_positive():
    model = _two_mode_model()
    s = from_pure_product([coherent_state_qtt(0.5, 2, max_fill=0.5), fock_state_qtt(0, 2)])
    grid = np.linspace(0, 1, 6)
    traj = evolve_lindblad(model, s, grid, "order2", TIGHT, substeps=20, keep_states=True)
    ref = dense_lindblad(model.dense_hamiltonian, model.dense_jumps(), s.to_dense(), grid, substeps=200)
    for st_, r in zip(traj.states, ref):
        rho = st_.to_dense()
        assert np.linalg.eigvalsh(rho).min() > -1e-12
        assert trace_distance(rho, r) < 1e-4
    assert max(traj.purity) <= 1 + 1e-10


def test_trajectory_columns_and_determinism():
    model = _two_mode_model()
    s = from_pure_product([coherent_state_qtt(0.5, 2, max_fill=0.5), fock_state_qtt(0, 2)])
    grid = np.linspace(0, 0.2, 3)
    obs = {"n_a": local(0, number_mpo(2))}
    t1 = evolve_lindblad(model, s, grid, "order2", TIGHT, obs, keep_states=True)
    t2 = evolve_lindblad(model, s, grid, "order2", TIGHT, obs, keep_states=True)
    cols = t1.columns()
    assert list(cols) == ["t", "re_n_a", "im_n_a", "purity", "trace", "chi_q", "chi_e", "chi_mu", "elements"]
    assert all(np.array_equal(x, y) for x, y in zip(t1.states[-1].backbone.cores, t2.states[-1].backbone.cores))
    assert not t1.failed


def test_evolve_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        evolve_lindblad(_damping_model(), from_pure_product([fock_state_qtt(1, 2)]), [0, 0.1], "order3")


def test_decay_operator_is_positive():
    model = _two_mode_model()
    heff = model.effective(0.0).to_dense([4, 4])
    anti = -(heff - heff.conj().T) / 2j  # = (1/2) sum L^+ L
    assert np.linalg.eigvalsh(anti).min() > -1e-12
    H = model.dense_hamiltonian(0.3)
    assert np.abs(H - H.conj().T).max() < 1e-12
