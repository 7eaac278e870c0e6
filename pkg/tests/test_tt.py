from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from combqtt import serialize
from combqtt.quantics import (annihilation_mpo, coherent_state_qtt, creation_mpo, diagonal_mpo, fock_state_qtt,
                              function_qtt, number_mpo, shift_mpo)
from combqtt.tt import (MatrixProductOperator, TensorTrain, TruncationPolicy, add, als_linear_solve, apply_mpo,
                        canonicalize, inner, linear_combination, mpo_mul, norm, truncate)

from conftest import dense_ladder


def _orthogonality(tt: TensorTrain, center: int) -> float:
    worst = 0.0
    for i, c in enumerate(tt.cores):
        if i < center:
            m = c.reshape(-1, c.shape[2])
            worst = max(worst, np.abs(m.conj().T @ m - np.eye(m.shape[1])).max())
        elif i > center:
            m = c.reshape(c.shape[0], -1)
            worst = max(worst, np.abs(m @ m.conj().T - np.eye(m.shape[0])).max())
    return worst


# ---------------------------------------------------------------- canonical form

def test_canonicalize_product_state_keeps_rank_one():
    tt = TensorTrain.product([np.array([1.0, 2.0]), np.array([0.0, 3.0]), np.array([1.0, 1.0])])
    out = canonicalize(tt, 0)
    assert out.bonds == (1, 1)
    assert np.allclose(out.to_dense(), tt.to_dense(), atol=1e-14)


def test_canonicalize_random_preserves_amplitude(rng):
    tt = TensorTrain.random([2] * 6, 3, rng)
    out = canonicalize(tt, 3)
    idx = np.array([[1, 0, 1, 1, 0, 0]])
    assert abs(out.evaluate(idx)[0] - tt.evaluate(idx)[0]) < 1e-12
    assert np.allclose(out.to_dense(), tt.to_dense(), atol=1e-12)
    assert out.center == 3
    assert _orthogonality(out, 3) < 1e-12


def test_canonicalize_idempotent(rng):
    tt = TensorTrain.random([2] * 5, 4, rng)
    once = canonicalize(tt, 2)
    twice = canonicalize(once, 2)
    assert once.bonds == twice.bonds


def test_canonicalize_center_out_of_range(rng):
    tt = TensorTrain.random([2] * 3, 2, rng)
    with pytest.raises(IndexError):
        canonicalize(tt, 3)


def test_center_norm_equals_total_norm(rng):
    tt = TensorTrain.random([2] * 6, 3, rng)
    out = canonicalize(tt, 4)
    assert abs(np.linalg.norm(out.cores[4]) - np.linalg.norm(tt.to_dense())) < 1e-12 * np.linalg.norm(tt.to_dense())


# ---------------------------------------------------------------- truncation

def test_truncate_product_state_unchanged():
    tt = fock_state_qtt(5, 4)
    out = truncate(tt, TruncationPolicy(1e-3))
    assert out.bonds == (1, 1, 1)
    assert np.allclose(out.to_dense(), tt.to_dense())


def test_two_term_sum_has_rank_two():
    a = TensorTrain.basis_state([0, 1, 0, 1])
    b = TensorTrain.basis_state([1, 0, 1, 0])
    out = truncate(add(a, b), TruncationPolicy(1e-12))
    assert out.bonds == (2, 2, 2)


def test_sqrt_qtt_rank_at_most_ten():
    tt = function_qtt(np.sqrt, 12, tol=1e-12)
    tt = truncate(tt, TruncationPolicy(1e-12))
    assert tt.max_bond <= 10


def test_truncate_respects_rank_cap_and_error_bound(rng):
    tt = TensorTrain.random([2] * 8, 6, rng)
    tol = 1e-2
    out = truncate(tt, TruncationPolicy(tol, max_rank=4))
    assert out.max_bond <= 4
    loose = truncate(tt, TruncationPolicy(tol))
    ref = tt.to_dense()
    err = np.linalg.norm(loose.to_dense() - ref) / np.linalg.norm(ref)
    assert err <= np.sqrt(8) * tol


def test_lossless_policy_is_exact(rng):
    tt = TensorTrain.random([2] * 6, 5, rng)
    out = truncate(tt, TruncationPolicy.lossless())
    assert np.allclose(out.to_dense(), tt.to_dense(), atol=1e-12)


def test_policy_rejects_bad_values():
    with pytest.raises(ValueError):
        TruncationPolicy(-1.0)
    with pytest.raises(ValueError):
        TruncationPolicy(1e-8, 0)


# ---------------------------------------------------------------- addition and inner products

def test_add_cancellation(rng):
    a = TensorTrain.random([2] * 5, 3, rng)
    out = truncate(add(a, a.scale(-1.0)), TruncationPolicy(1e-12))
    assert norm(out) <= 1e-12


def test_add_fock_states_dense():
    out = add(fock_state_qtt(0, 4), fock_state_qtt(1, 4))
    ref = np.zeros(16)
    ref[:2] = 1.0
    assert np.allclose(out.to_dense(), ref, atol=1e-15)


def test_add_zero(rng):
    a = TensorTrain.random([2] * 5, 3, rng)
    out = add(a, TensorTrain.zeros([2] * 5))
    ref = a.to_dense()
    assert np.linalg.norm(out.to_dense() - ref) < 1e-14 * np.linalg.norm(ref)


def test_add_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        add(TensorTrain.random([2] * 4, 2, rng), TensorTrain.random([2] * 5, 2, rng))


def test_add_bonds_before_truncation(rng):
    a = TensorTrain.random([2] * 5, 3, rng)
    b = TensorTrain.random([2] * 5, 2, rng)
    assert add(a, b).bonds == tuple(x + y for x, y in zip(a.bonds, b.bonds))


def test_inner_normalized_and_orthogonal():
    psi = coherent_state_qtt(1.5, 6)
    assert abs(inner(psi, psi) - 1.0) < 1e-12
    assert abs(inner(fock_state_qtt(3, 4), fock_state_qtt(5, 4))) == 0.0


def test_coherent_overlap_closed_form():
    a = coherent_state_qtt(1.0, 8)
    b = coherent_state_qtt(1.0 + 0.5j, 8)
    assert abs(abs(inner(a, b)) ** 2 - np.exp(-0.25)) < 1e-10
    assert abs(inner(a, b) - np.vdot(a.to_dense(), b.to_dense())) < 1e-12


def test_inner_conjugate_symmetric(rng):
    a = TensorTrain.random([2] * 5, 3, rng)
    b = TensorTrain.random([2] * 5, 2, rng)
    assert abs(inner(a, b) - np.conj(inner(b, a))) < 1e-10


# ---------------------------------------------------------------- operators

def test_identity_mpo_application(rng):
    psi = TensorTrain.random([2] * 5, 3, rng)
    out = apply_mpo(MatrixProductOperator.identity([2] * 5), psi, "zipup", TruncationPolicy(1e-14))
    ref = psi.to_dense()
    assert np.linalg.norm(out.to_dense() - ref) < 1e-14 * np.linalg.norm(ref)


def test_annihilation_on_fock_five():
    out = apply_mpo(annihilation_mpo(4), fock_state_qtt(5, 4))
    ref = np.zeros(16)
    ref[4] = np.sqrt(5.0)
    assert np.abs(out.to_dense() - ref).max() < 1e-12


def test_number_expectation_on_coherent_state():
    psi = coherent_state_qtt(2.0, 7)
    out = apply_mpo(number_mpo(7), psi, "zipup", TruncationPolicy(1e-14))
    assert abs(inner(psi, out) - 4.0) < 1e-10
    dense = np.diag(np.arange(128.0)) @ psi.to_dense()
    assert np.abs(out.to_dense() - dense).max() < 1e-10


def test_zipup_and_fit_agree(rng):
    op = MatrixProductOperator(tuple(rng.standard_normal((1 if i == 0 else 3, 2, 2, 1 if i == 5 else 3))
                                     for i in range(6)))
    psi = TensorTrain.random([2] * 6, 3, rng)
    pol = TruncationPolicy(1e-12)
    a = apply_mpo(op, psi, "zipup", pol).to_dense()
    b = apply_mpo(op, psi, "fit", pol).to_dense()
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-8


def test_apply_mpo_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        apply_mpo(number_mpo(4), TensorTrain.random([2] * 5, 2, rng))


def test_mpo_mul_identity():
    b = number_mpo(5)
    out = mpo_mul(MatrixProductOperator.identity([2] * 5), b)
    assert np.allclose(out.to_dense(), b.to_dense())


def test_shift_times_sqrt_diagonal_is_annihilation():
    B = diagonal_mpo(function_qtt(np.sqrt, 6))
    A = mpo_mul(shift_mpo(6, 1), B, TruncationPolicy(1e-13))
    assert np.abs(A.to_dense() - dense_ladder(64)).max() < 1e-12


def test_creation_times_annihilation_is_number():
    out = mpo_mul(creation_mpo(5), annihilation_mpo(5))
    assert np.abs(out.to_dense() - np.diag(np.arange(32.0))).max() < 1e-11


def test_mpo_mul_dimension_mismatch():
    with pytest.raises(ValueError):
        mpo_mul(number_mpo(4), number_mpo(5))


# ---------------------------------------------------------------- linear solves

def test_als_identity_solves_in_one_pass(rng):
    b = TensorTrain.random([2] * 4, 2, rng)
    x, res = als_linear_solve(MatrixProductOperator.identity([2] * 4), b, b, TruncationPolicy(1e-12))
    assert res < 1e-12
    assert np.allclose(x.to_dense(), b.to_dense())


def test_als_diagonal_solve():
    A = diagonal_mpo(function_qtt(lambda n: 1.0 + n / 16.0, 4))
    b = TensorTrain.product([np.ones(2)] * 4)
    x0 = TensorTrain.product([np.ones(2)] * 4)
    x, res = als_linear_solve(A, b, x0, TruncationPolicy(1e-12))
    ref = 1.0 / (1.0 + np.arange(16) / 16.0)
    assert res < 1e-10
    assert np.abs(x.to_dense() - ref).max() < 1e-10


def test_als_crank_nicolson_step_matches_dense():
    R, h = 5, 0.01
    n = number_mpo(R)
    ident = MatrixProductOperator.identity([2] * R)
    psi = coherent_state_qtt(1.0, R)
    rhs = apply_mpo(linear_combination_mpo(ident, n, -0.5j * h), psi, "zipup", TruncationPolicy(1e-14))
    lhs = [(1.0, ident), (0.5j * h, n)]
    x, res = als_linear_solve(lhs, rhs, psi, TruncationPolicy(1e-12), max_sweeps=3)
    assert res < 1e-8
    H = np.diag(np.arange(32.0))
    ref = np.linalg.solve(np.eye(32) + 0.5j * h * H, (np.eye(32) - 0.5j * h * H) @ psi.to_dense())
    assert np.abs(x.to_dense() - ref).max() < 1e-9
    assert np.abs(ref - expm(-1j * h * H) @ psi.to_dense()).max() < 1e-5


def linear_combination_mpo(ident, op, c):
    from combqtt.tt import mpo_linear_combination
    return mpo_linear_combination([(1.0, ident), (c, op)], TruncationPolicy(1e-14))


# ---------------------------------------------------------------- serialization

def test_serialization_round_trip(tmp_path, rng):
    tt = TensorTrain.random([2] * 5, 3, rng)
    path = tmp_path / "tt.bin"
    serialize.save(path, tt)
    assert path.read_bytes()[:4] == b"QTT1"
    back = serialize.load(path)
    assert all(np.array_equal(x, y) for x, y in zip(back.cores, tt.cores))
    op = number_mpo(4)
    back_op = serialize.from_bytes(serialize.to_bytes(op))
    assert isinstance(back_op, MatrixProductOperator)
    assert np.array_equal(back_op.to_dense(), op.to_dense())


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        serialize.from_bytes(b"NOPE" + bytes(16))


# ---------------------------------------------------------------- properties

seeds = st.integers(min_value=0, max_value=2**31 - 1)


@given(seed=seeds, L=st.integers(2, 7), rank=st.integers(1, 4), center=st.integers(0, 6))
def test_property_canonicalize_preserves_tensor(seed, L, rank, center):
    rng = np.random.default_rng(seed)
    tt = TensorTrain.random([2] * L, rank, rng)
    c = min(center, L - 1)
    out = canonicalize(tt, c)
    ref = tt.to_dense()
    assert np.abs(out.to_dense() - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())
    assert abs(norm(out) - np.linalg.norm(ref)) <= 1e-12 * np.linalg.norm(ref)
    assert _orthogonality(out, c) < 1e-10


@given(seed=seeds, L=st.integers(2, 8))
def test_property_reconstruction_after_tight_truncation(seed, L):
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(2**L) + 1j * rng.standard_normal(2**L)
    tt = truncate(TensorTrain.from_dense(vec, [2] * L), TruncationPolicy(1e-12))
    assert np.abs(tt.to_dense() - vec).max() < 1e-10


@given(seed=seeds)
def test_property_addition_commutative_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (TensorTrain.random([2] * 5, 2, rng) for _ in range(3))
    pol = TruncationPolicy(1e-12)
    ab = add(a, b, pol).to_dense()
    ba = add(b, a, pol).to_dense()
    assert np.abs(ab - ba).max() < 1e-9 * np.abs(ab).max()
    left = add(add(a, b, pol), c, pol).to_dense()
    right = add(a, add(b, c, pol), pol).to_dense()
    assert np.abs(left - right).max() < 1e-9 * np.abs(left).max()


@given(seed=seeds)
def test_property_truncation_monotone(seed):
    rng = np.random.default_rng(seed)
    tt = TensorTrain.random([2] * 7, 5, rng)
    ref = tt.to_dense()
    errs = [np.linalg.norm(truncate(tt, TruncationPolicy(tol)).to_dense() - ref) for tol in (1e-1, 1e-2, 1e-3)]
    assert errs[1] <= errs[0] + 1e-12 and errs[2] <= errs[1] + 1e-12


@given(seed=seeds)
def test_property_zipup_fit_agree(seed):
    rng = np.random.default_rng(seed)
    psi = TensorTrain.random([2] * 5, 4, rng)
    op = MatrixProductOperator(tuple(rng.standard_normal((1 if i == 0 else 2, 2, 2, 1 if i == 4 else 2))
                                     for i in range(5)))
    pol = TruncationPolicy(1e-12)
    a = apply_mpo(op, psi, "zipup", pol).to_dense()
    b = apply_mpo(op, psi, "fit", pol).to_dense()
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)
