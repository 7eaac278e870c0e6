from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from combqtt.quantics import (annihilation_mpo, annihilation_power_mpo, cat_state_qtt, coherent_state_qtt,
                              creation_mpo, diagonal_mpo, fock_state_qtt, function_qtt, number_mpo,
                              number_power_mpo, polynomial_qtt, quadrature_mpo, quantics_decode, quantics_encode,
                              shift_mpo, stirling_first_kind, _log_falling)
from combqtt.tt import (TensorTrain, TruncationPolicy, apply_mpo, compress_mpo, inner, mpo_mul, norm,
                        truncate)

from conftest import dense_ladder


def test_encode_examples():
    assert quantics_encode(0, 4) == (0, 0, 0, 0)
    assert quantics_encode(5, 4) == (0, 1, 0, 1)
    assert quantics_encode(15, 4) == (1, 1, 1, 1)


def test_encode_out_of_range():
    with pytest.raises(ValueError):
        quantics_encode(16, 4)
    with pytest.raises(ValueError):
        quantics_encode(-1, 4)


@given(st.integers(1, 20).flatmap(lambda R: st.tuples(st.just(R), st.integers(0, 2**R - 1))))
def test_property_encode_decode_round_trip(args):
    R, n = args
    assert quantics_decode(quantics_encode(n, R)) == n


def test_diagonal_mpo_of_constant_is_identity():
    op = diagonal_mpo(TensorTrain.product([np.ones(2)] * 5))
    assert op.max_bond == 1
    assert np.allclose(op.to_dense(), np.eye(32))


def test_diagonal_mpo_of_linear_function():
    op = diagonal_mpo(function_qtt(lambda n: n.astype(float), 5))
    assert np.abs(op.to_dense() - np.diag(np.arange(32.0))).max() < 1e-12


def test_diagonal_mpo_of_sqrt():
    op = diagonal_mpo(function_qtt(np.sqrt, 8))
    assert np.abs(op.to_dense() - np.diag(np.sqrt(np.arange(256.0)))).max() < 1e-11


@pytest.mark.parametrize("R,m", [(4, 0), (4, 1), (5, 3), (5, -2), (6, 17)])
def test_shift_mpo_dense(R, m):
    ref = np.eye(2**R, k=m)
    assert np.array_equal(shift_mpo(R, m).to_dense().real, ref)


def test_shift_by_one_rank_two():
    assert shift_mpo(8, 1).max_bond == 2


def test_shift_out_of_range():
    with pytest.raises(ValueError):
        shift_mpo(4, 16)


def test_annihilation_dense():
    op = annihilation_mpo(8)
    assert np.abs(op.to_dense() - dense_ladder(256)).max() < 1e-12 * 16


def _capped_error(op, exact, cap):
    c = compress_mpo(op, TruncationPolicy(1e-16, cap)).to_dense()
    return np.linalg.norm(c - exact) / np.linalg.norm(exact)


@pytest.mark.parametrize("R", [8, 12])
def test_operator_ranks_at_high_precision(R):
    a = dense_ladder(2**R)
    assert _capped_error(annihilation_mpo(R), a, 10) < 1e-12
    assert _capped_error(quadrature_mpo(R), a + a.T, 10) < 1e-12
    assert _capped_error(annihilation_power_mpo(R, 2), a @ a, 8) < 1e-12
    # the full ladder MPO at rank 8 sits just above 1e-12
    assert _capped_error(annihilation_mpo(R), a, 8) < 1e-11


@pytest.mark.parametrize("m", [1, 2, 3])
def test_falling_factorial_diagonal_rank_eight(m):
    R = 12
    f = lambda n: np.exp(_log_falling(n, m))
    tt = truncate(function_qtt(f, R, 1e-13), TruncationPolicy(1e-16, 8))
    exact = f(np.arange(2.0**R))
    assert np.abs(tt.to_dense() - exact).max() < 5e-12 * exact.max()


def test_creation_is_adjoint():
    for R in (3, 6, 8):
        a = annihilation_mpo(R).to_dense()
        assert np.abs(creation_mpo(R).to_dense() - a.conj().T).max() < 1e-10


def test_quadrature_rank_ten():
    op = compress_mpo(quadrature_mpo(12), TruncationPolicy(1e-12))
    assert op.max_bond <= 10


def test_annihilation_on_vacuum_is_zero():
    out = apply_mpo(annihilation_mpo(6), fock_state_qtt(0, 6))
    assert norm(out) < 1e-14


def test_annihilation_coherent_eigenvalue():
    R = 10
    alpha = 2.0 ** ((R - 1) / 2)
    psi = coherent_state_qtt(alpha, R, max_fill=0.5)
    ratio = inner(psi, apply_mpo(annihilation_mpo(R), psi, "zipup", TruncationPolicy(1e-14))) / alpha
    assert abs(ratio - 1.0) < 1e-12


def test_annihilation_power_one_equals_annihilation():
    assert np.abs(annihilation_power_mpo(6, 1).to_dense() - annihilation_mpo(6).to_dense()).max() < 1e-12


def test_annihilation_squared_on_fock_four():
    out = apply_mpo(annihilation_power_mpo(5, 2), fock_state_qtt(4, 5))
    ref = np.zeros(32)
    ref[2] = np.sqrt(12.0)
    assert np.abs(out.to_dense() - ref).max() < 1e-11


def test_annihilation_squared_matches_product():
    a = annihilation_mpo(6)
    prod = mpo_mul(a, a).to_dense()
    assert np.abs(annihilation_power_mpo(6, 2).to_dense() - prod).max() < 1e-10


def test_annihilation_power_large_levels_do_not_overflow():
    op = annihilation_power_mpo(9, 3).to_dense()
    n = 400
    assert np.isfinite(op).all()
    assert abs(op[n - 3, n] - np.sqrt(n * (n - 1) * (n - 2))) < 1e-9 * n**1.5


def test_number_power_examples():
    assert number_power_mpo(5, 1).max_bond == 2
    n = np.arange(32.0)
    assert np.abs(number_power_mpo(5, 2).to_dense() - np.diag(n * (n - 1))).max() < 1e-10
    assert number_power_mpo(10, 3).max_bond == 4


@pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
def test_number_power_is_exact_rank_m_plus_one(m):
    R = 7
    n = np.arange(2.0**R)
    ref = np.ones_like(n)
    for p in range(m):
        ref = ref * (n - p)
    op = number_power_mpo(R, m)
    assert op.max_bond <= m + 1
    assert np.abs(np.diag(op.to_dense()) - ref).max() <= 1e-12 * max(1.0, ref.max())


def test_stirling_numbers():
    # n(n-1)(n-2) = n^3 - 3n^2 + 2n
    assert np.array_equal(stirling_first_kind(3), [0, 2, -3, 1])


def test_polynomial_qtt_exact():
    tt = polynomial_qtt([1.0, -2.0, 0.5], 6)
    n = np.arange(64.0)
    assert tt.max_bond <= 3
    assert np.abs(tt.to_dense() - (1 - 2 * n + 0.5 * n**2)).max() < 1e-10


def test_commutator_is_identity_away_from_cutoff():
    R = 6
    a = annihilation_mpo(R).to_dense()
    comm = a @ a.conj().T - a.conj().T @ a
    k = 2**R - 2
    assert np.abs(comm[:k, :k] - np.eye(k)).max() < 1e-10


def test_coherent_state_examples():
    vac = coherent_state_qtt(0.0, 5)
    assert np.array_equal(vac.to_dense(), fock_state_qtt(0, 5).to_dense())
    psi = coherent_state_qtt(2.0, 7)
    assert abs(inner(psi, apply_mpo(number_mpo(7), psi, "zipup", TruncationPolicy(1e-14))) - 4.0) < 1e-9
    big = coherent_state_qtt(4.0, 8)
    assert abs(norm(big) - 1.0) < 1e-10


def test_coherent_state_rejects_overfilled_space():
    with pytest.raises(ValueError):
        coherent_state_qtt(4.0, 5)


def test_cat_state_parity():
    even = cat_state_qtt(2.0, 6, +1).to_dense()
    odd = cat_state_qtt(2.0, 6, -1).to_dense()
    assert np.abs(even[1::2]).max() < 1e-12
    assert np.abs(odd[0::2]).max() < 1e-12
    assert abs(np.vdot(even, odd)) < 1e-12


# frozen reference values from dense evaluation
def test_frozen_coherent_amplitude():
    psi = coherent_state_qtt(1.5 + 0.5j, 6).to_dense()
    # exp(-|a|^2/2) a^3 / sqrt(6), a = 1.5 + 0.5i
    assert abs(psi[3] - (0.2631714604377051 + 0.3801365539655741j)) < 1e-12
