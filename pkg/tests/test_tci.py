from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from combqtt.models import TransmonParams, transmon_eigenbasis
from combqtt.quantics import (bit_weights, coherent_amplitudes, default_box_length, hermite_transform_mpo,
                              position_grid)
from combqtt.tci import FunctionOracle, TCIWarning, tci_build, tci_build_2d
from combqtt.tt import TensorTrain, TruncationPolicy, truncate


def _oracle(func, R):
    w = bit_weights(R)
    return FunctionOracle(lambda idx: func(idx @ w), (2,) * R)


def test_constant_function_rank_one():
    res = tci_build(_oracle(lambda n: np.ones(n.shape), 10))
    assert res.tt.max_bond == 1
    assert np.allclose(res.tt.to_dense(), 1.0, atol=1e-14)


def test_linear_function_rank_two():
    res = tci_build(_oracle(lambda n: n.astype(float), 10))
    assert res.tt.max_bond == 2
    assert np.abs(res.tt.to_dense() - np.arange(1024)).max() < 1e-10


def test_sqrt_rank_and_heldout_error():
    f = _oracle(np.sqrt, 12)
    res = tci_build(f, tol=1e-12)
    assert res.converged
    assert res.tt.max_bond <= 10
    rng = np.random.default_rng(99)
    idx = rng.integers(0, 2, size=(1000, 12))
    exact = np.sqrt(idx @ bit_weights(12))
    assert np.abs(res.tt.evaluate(idx) - exact).max() <= 1e-12 * np.sqrt(4095) * 1.0001
    # polynomial in R * rank^2, far from the 4096 entries times a large factor
    assert res.calls < 40 * 12 * 10**2


def test_interpolates_exactly_at_pivots():
    f = _oracle(lambda n: np.exp(-n / 50.0) * np.cos(n / 7.0), 8)
    res = tci_build(f, tol=1e-10, recompress=False)
    w = bit_weights(8)
    worst = 0.0
    for k in range(1, 8):
        for left in res.pivots_left[k]:
            for right in res.pivots_right[k]:
                x = np.array([tuple(left) + tuple(right)])
                worst = max(worst, abs(res.tt.evaluate(x)[0] - f.func(x)[0]))
    assert worst < 1e-12
    assert np.abs(res.tt.to_dense() - f.func(np.arange(256)[:, None] // w % 2)).max() < 1e-9


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_polynomials_have_rank_degree_plus_one(degree):
    coeffs = np.arange(1.0, degree + 2.0)
    res = tci_build(_oracle(lambda n: np.polyval(coeffs, n / 64.0), 8), tol=1e-13)
    assert res.tt.max_bond <= degree + 1
    ref = np.polyval(coeffs, np.arange(256) / 64.0)
    assert np.abs(res.tt.to_dense() - ref).max() < 1e-12 * np.abs(ref).max()


def test_error_decreases_with_rank_cap():
    errs = []
    for cap in (2, 4, 6, 8):
        with pytest.warns(TCIWarning):
            res = tci_build(_oracle(np.sqrt, 12), tol=1e-14, max_rank=cap)
        errs.append(res.error)
    for a, b in zip(errs, errs[1:]):
        assert b <= 2.0 * a


def test_rejects_non_positive_tolerance():
    with pytest.raises(ValueError):
        tci_build(_oracle(np.sqrt, 4), tol=0.0)


def test_vanishing_origin_uses_probe_pivot():
    # f(0) = 0, a zero initial pivot would give a zero train
    res = tci_build(_oracle(lambda n: (n == 37).astype(float), 8))
    assert abs(res.tt.evaluate(np.array([[0, 0, 1, 0, 0, 1, 0, 1]]))[0] - 1.0) < 1e-12


def test_oracle_counts_calls():
    f = _oracle(np.sqrt, 4)
    f(np.zeros((5, 4), dtype=int))
    assert f.calls == 5


def test_deterministic():
    a = tci_build(_oracle(np.sqrt, 10), tol=1e-10)
    b = tci_build(_oracle(np.sqrt, 10), tol=1e-10)
    assert all(np.array_equal(x, y) for x, y in zip(a.tt.cores, b.tt.cores))


def test_2d_identity_rank_one():
    op, _ = tci_build_2d(lambda r, c: (r == c).astype(float), 6, 6)
    assert op.max_bond == 1
    assert np.allclose(op.to_dense(), np.eye(64))


def _optimal_bonds(mat, R, tol):
    t = mat.reshape((2,) * (2 * R)).transpose([x for k in range(R) for x in (k, R + k)])
    return truncate(TensorTrain.from_dense(t.reshape(-1), [4] * R), TruncationPolicy(tol)).bonds


def test_2d_transmon_charge_operator_small():
    basis = transmon_eigenbasis(TransmonParams(R_t=4), tol=1e-10)
    assert basis.n_mpo.max_bond <= 10
    assert np.abs(basis.n_mpo.to_dense() - basis.charge).max() < 1e-10 * np.abs(basis.charge).max()


def test_2d_transmon_charge_operator_matches_optimal_rank():
    # 32 eigenstates reach above the barrier; the optimal middle bond is 15
    basis = transmon_eigenbasis(TransmonParams(R_t=5), tol=1e-10)
    assert basis.n_mpo.bonds == _optimal_bonds(basis.charge, 5, 1e-10)
    assert np.abs(basis.n_mpo.to_dense() - basis.charge).max() < 1e-10 * np.abs(basis.charge).max()


def _round_trip_fidelity(R_n, R_x):
    M = hermite_transform_mpo(R_n, R_x).to_dense()
    psi = coherent_amplitudes(np.sqrt(2**R_n / 3.0), np.arange(2**R_n))
    psi /= np.linalg.norm(psi)
    back = M.conj().T @ (M @ psi)
    return abs(np.vdot(psi, back)) ** 2


def test_hermite_vacuum_is_gaussian():
    R_n, R_x = 4, 8
    L = default_box_length(R_n)
    M = hermite_transform_mpo(R_n, R_x).to_dense()
    x = position_grid(R_x, L)
    ref = np.pi**-0.25 * np.exp(-x**2 / 2) * np.sqrt(L / 2**R_x)
    assert np.abs(M[:, 0] - ref).max() < 1e-8


def test_hermite_round_trip_fidelity():
    assert _round_trip_fidelity(6, 10) > 0.999
    assert _round_trip_fidelity(6, 4) < 0.99


@given(st.integers(0, 2**31 - 1))
def test_property_random_affine_is_rank_two(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(2)
    res = tci_build(_oracle(lambda n: a * n + b + 3.0, 8), tol=1e-12)
    assert res.tt.max_bond <= 2
    assert np.abs(res.tt.to_dense() - (a * np.arange(256) + b + 3.0)).max() < 1e-10 * (1 + 256 * abs(a))
