"""Quantics-encoded bosonic states and operators.

An integer ``n < 2**R`` is stored as its R binary digits, most significant
first.  Operators follow the Fock convention ``a|n> = sqrt(n)|n-1>``.
"""
from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import gammaln

from .tci import FunctionOracle, tci_build, tci_build_2d
from .tt import (
    MatrixProductOperator,
    TensorTrain,
    TruncationPolicy,
    mpo_linear_combination,
    mpo_mul,
    norm,
)

__all__ = [
    "quantics_encode",
    "quantics_decode",
    "bit_weights",
    "all_indices",
    "diagonal_mpo",
    "function_qtt",
    "shift_mpo",
    "annihilation_mpo",
    "creation_mpo",
    "annihilation_power_mpo",
    "number_mpo",
    "number_power_mpo",
    "polynomial_qtt",
    "stirling_first_kind",
    "quadrature_mpo",
    "coherent_amplitudes",
    "coherent_state_qtt",
    "fock_state_qtt",
    "cat_state_qtt",
    "default_box_length",
    "position_grid",
    "hermite_functions",
    "hermite_transform_mpo",
    "pad_sites",
    "drop_unit_sites",
]


def quantics_encode(n: int, R: int) -> tuple[int, ...]:
    """Binary digits of ``n``, most significant first."""
    if R < 1 or not 0 <= n < 2**R:
        raise ValueError(f"n={n} out of range for R={R}")
    return tuple((n >> (R - 1 - i)) & 1 for i in range(R))


def quantics_decode(bits) -> int:
    out = 0
    for b in bits:
        if b not in (0, 1):
            raise ValueError("bits must be 0 or 1")
        out = 2 * out + int(b)
    return out


def bit_weights(R: int) -> np.ndarray:
    return 2 ** np.arange(R - 1, -1, -1, dtype=np.int64)


def all_indices(R: int) -> np.ndarray:
    """All bit tuples in numeric order, shape ``(2**R, R)``."""
    n = np.arange(2**R, dtype=np.int64)
    return ((n[:, None] >> np.arange(R - 1, -1, -1)) & 1).astype(np.int64)


def diagonal_mpo(qtt: TensorTrain) -> MatrixProductOperator:
    """Diagonal operator whose diagonal is the given train."""
    cores = []
    for c in qtt.cores:
        d = c.shape[1]
        w = np.zeros((c.shape[0], d, d, c.shape[2]), dtype=complex)
        for s in range(d):
            w[:, s, s, :] = c[:, s, :]
        cores.append(w)
    return MatrixProductOperator(tuple(cores))


def function_qtt(func, R: int, tol: float = 1e-12, max_rank: int = 64, seed: int = 0) -> TensorTrain:
    """TCI of ``func(n)`` on ``n < 2**R`` (vectorized over integer arrays)."""
    w = bit_weights(R)
    oracle = FunctionOracle(lambda idx: func(idx @ w), (2,) * R)
    return tci_build(oracle, tol, max_rank, seed).tt


def shift_mpo(R: int, m: int) -> MatrixProductOperator:
    """Operator with entries ``delta(i + m, j)``, no wrap-around.

    Built from a binary adder; the bond carries the carry bit so the rank is
    at most 2 for any ``m``.
    """
    if abs(m) >= 2**R:
        raise ValueError("|m| must be below 2**R")
    if m < 0:
        op = shift_mpo(R, -m)
        return MatrixProductOperator(tuple(c.transpose(0, 2, 1, 3) for c in op.cores))
    mbits = quantics_encode(m, R)
    cores = []
    for k in range(R):
        # left bond = carry out toward the more significant site
        w = np.zeros((2, 2, 2, 2), dtype=complex)
        for cin in (0, 1):
            for i in (0, 1):
                total = i + mbits[k] + cin
                w[total // 2, i, total % 2, cin] = 1.0
        if k == 0:
            w = w[:1]
        if k == R - 1:
            w = w[..., :1]
        cores.append(w)
    return MatrixProductOperator(tuple(cores), f"shift({m})")


def _log_falling(n: np.ndarray, m: int) -> np.ndarray:
    """``0.5 * log(n (n-1) ... (n-m+1))`` summed term by term, -inf for n < m."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    ok = n >= m
    for p in range(m):
        out[ok] += 0.5 * np.log(n[ok] - p)
    out[~ok] = -np.inf
    return out


def annihilation_power_mpo(R: int, m: int = 1, tol: float = 1e-12) -> MatrixProductOperator:
    """``a**m`` with entries ``delta(n+m, n') sqrt(n'!/(n'-m)!)``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    diag = function_qtt(lambda n: np.exp(_log_falling(n, m)), R, tol / 10.0)
    op = mpo_mul(shift_mpo(R, m), diagonal_mpo(diag), TruncationPolicy(tol / 10.0))
    return MatrixProductOperator(op.cores, "a" if m == 1 else f"a^{m}")


@lru_cache(maxsize=64)
def _annihilation_cached(R: int, m: int, tol: float) -> MatrixProductOperator:
    return annihilation_power_mpo(R, m, tol)


def annihilation_mpo(R: int, tol: float = 1e-12) -> MatrixProductOperator:
    """Quantics MPO of the annihilation operator, ``a = T diag(sqrt(n))``."""
    return _annihilation_cached(R, 1, tol)


def creation_mpo(R: int, tol: float = 1e-12) -> MatrixProductOperator:
    op = annihilation_mpo(R, tol).adjoint()
    return MatrixProductOperator(op.cores, "adag")


def quadrature_mpo(R: int, tol: float = 1e-12) -> MatrixProductOperator:
    """``a + a^dagger``."""
    a = annihilation_mpo(R, tol)
    return mpo_linear_combination([(1.0, a), (1.0, a.adjoint())], TruncationPolicy(tol / 10.0))


def polynomial_qtt(coeffs, R: int) -> TensorTrain:
    """Exact train of ``sum_k coeffs[k] * n**k``; rank at most ``len(coeffs)``.

    The bond carries the powers of the partial binary sum.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    deg = len(coeffs) - 1
    w = bit_weights(R).astype(np.float64)
    cores = []
    for k in range(R):
        c = np.zeros((deg + 1, 2, deg + 1), dtype=complex)
        for j in range(deg + 1):
            for l in range(j + 1):
                c[l, 0, j] = comb(j, l) * (0.0 ** (j - l))
                c[l, 1, j] = comb(j, l) * w[k] ** (j - l)
        cores.append(c)
    cores[0] = cores[0][:1]
    cores[-1] = np.einsum("lsj,j->ls", cores[-1], coeffs)[:, :, None]
    return TensorTrain(tuple(cores))


def stirling_first_kind(m: int) -> np.ndarray:
    """Signed Stirling numbers ``s(m, k)``, ``k = 0..m``."""
    s = np.zeros(m + 1, dtype=np.float64)
    s[0] = 1.0
    for p in range(m):
        # multiply the polynomial by (n - p)
        s[1:] = s[:-1] - p * s[1:]
        s[0] = -p * s[0]
    return s


def _falling_qtt(R: int, m: int) -> TensorTrain:
    """Exact train of ``n (n-1) ... (n-m+1)``.

    The bond carries falling powers of the partial sum; Vandermonde's identity
    ``(x + y)_j = sum_l C(j, l) (x)_l (y)_{j-l}`` keeps every entry a
    non-negative integer.
    """
    w = bit_weights(R)
    cores = []
    for k in range(R):
        c = np.zeros((m + 1, 2, m + 1), dtype=complex)
        for j in range(m + 1):
            for l in range(j + 1):
                c[l, 0, j] = 1.0 if j == l else 0.0
                ff = 1.0
                for p in range(j - l):
                    ff *= float(w[k] - p)
                c[l, 1, j] = comb(j, l) * ff
        cores.append(c)
    cores[0] = cores[0][:1]
    cores[-1] = cores[-1][:, :, m:]
    return TensorTrain(tuple(cores))


def number_power_mpo(R: int, m: int = 1) -> MatrixProductOperator:
    """Exact diagonal MPO of ``(a^dagger)**m a**m``; rank ``m + 1``."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return MatrixProductOperator.identity([2] * R)
    return MatrixProductOperator(diagonal_mpo(_falling_qtt(R, m)).cores, "n" if m == 1 else f"n^({m})")


def number_mpo(R: int) -> MatrixProductOperator:
    return number_power_mpo(R, 1)


# ---------------------------------------------------------------- states

def coherent_amplitudes(alpha: complex, n: np.ndarray) -> np.ndarray:
    """``exp(-|alpha|^2/2) alpha^n / sqrt(n!)`` in the log domain."""
    n = np.asarray(n, dtype=np.float64)
    r = abs(alpha)
    if r == 0.0:
        return (n == 0).astype(complex)
    logmag = -0.5 * r * r + n * np.log(r) - 0.5 * gammaln(n + 1.0)
    return np.exp(logmag) * np.exp(1j * n * np.angle(alpha))


def coherent_state_qtt(alpha: complex, R: int, tol: float = 1e-12, max_fill: float = 1.0 / 3.0,
                       seed: int = 0) -> TensorTrain:
    """Normalized coherent state ``|alpha>`` in the Fock quantics layout.

    ``max_fill`` bounds ``|alpha|^2 / 2**R`` so the Poisson tail fits inside
    the truncated space.
    """
    if abs(alpha) ** 2 > max_fill * 2**R * (1.0 + 1e-12):
        raise ValueError(f"|alpha|^2 = {abs(alpha) ** 2:g} too large for R={R}")
    if alpha == 0:
        return fock_state_qtt(0, R)
    tt = function_qtt(lambda n: coherent_amplitudes(alpha, n), R, tol, seed=seed)
    return tt.scale(1.0 / norm(tt))


def fock_state_qtt(n: int, R: int) -> TensorTrain:
    return TensorTrain.basis_state(quantics_encode(n, R))


def cat_state_qtt(alpha: complex, R: int, parity: int = +1, tol: float = 1e-12,
                  max_fill: float = 1.0 / 3.0) -> TensorTrain:
    """Normalized ``|alpha> + parity |-alpha>``."""
    if abs(alpha) ** 2 > max_fill * 2**R * (1.0 + 1e-12):
        raise ValueError(f"|alpha|^2 = {abs(alpha) ** 2:g} too large for R={R}")
    sign = 1.0 if parity >= 0 else -1.0

    def amp(n):
        return coherent_amplitudes(alpha, n) * (1.0 + sign * (-1.0) ** n)

    tt = function_qtt(amp, R, tol)
    return tt.scale(1.0 / norm(tt))


# ---------------------------------------------------------------- position basis

def default_box_length(R_n: int) -> float:
    """Box wide enough to hold the highest retained Hermite function."""
    return 2.0 * np.sqrt(2.0 * 2**R_n) + 8.0


def position_grid(R_x: int, L: float) -> np.ndarray:
    """``x = -L/2 + L * sum_i sigma_i / 2**i``."""
    return -L / 2.0 + L * np.arange(2**R_x) / 2**R_x


def hermite_functions(x: np.ndarray, n_max: int) -> np.ndarray:
    """Table ``phi_n(x)`` for ``n < n_max`` by the normalized three-term recurrence.

    The Gaussian factor is carried as a running log-scale so that large ``|x|``
    does not underflow before the polynomial growth compensates.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((x.size, n_max))
    logscale = -0.5 * x**2 - 0.25 * np.log(np.pi)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    out[:, 0] = np.exp(logscale)
    for n in range(1, n_max):
        nxt = np.sqrt(2.0 / n) * x * cur - np.sqrt((n - 1) / n) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > 1e100
        if np.any(big):
            f = np.where(big, np.abs(cur), 1.0)
            cur = cur / f
            prev = prev / f
            logscale = logscale + np.log(f)
        out[:, n] = cur * np.exp(np.minimum(logscale, 700.0))
    return out


def hermite_transform_mpo(R_n: int, R_x: int, L: float | None = None, tol: float = 1e-10,
                          max_rank: int = 200) -> MatrixProductOperator:
    """Fock-to-position change of basis ``M[x_j, n] = phi_n(x_j) sqrt(dx)``.

    Rows are position bits, columns Fock bits, interleaved site by site.  The
    inverse map is the adjoint.
    """
    if L is None:
        L = default_box_length(R_n)
    if R_x + R_n > 26:
        raise ValueError("grid too large for the tabulated kernel")
    x = position_grid(R_x, L)
    table = hermite_functions(x, 2**R_n) * np.sqrt(L / 2**R_x)

    def kernel(j, n):
        return table[j, n]

    op, _ = tci_build_2d(kernel, R_x, R_n, tol, max_rank)
    return MatrixProductOperator(op.cores, "hermite")


def pad_sites(tt: TensorTrain, length: int) -> TensorTrain:
    """Append trailing dimension-1 sites up to ``length`` sites."""
    extra = length - len(tt)
    if extra < 0:
        raise ValueError("train already longer than requested")
    cores = list(tt.cores) + [np.ones((1, 1, 1), dtype=complex)] * extra
    return TensorTrain(tuple(cores))


def drop_unit_sites(tt: TensorTrain) -> TensorTrain:
    """Absorb dimension-1 sites into their neighbours."""
    cores: list[np.ndarray] = []
    pending = None
    for c in tt.cores:
        if c.shape[1] == 1:
            m = c[:, 0, :]
            if cores:
                cores[-1] = np.tensordot(cores[-1], m, axes=(2, 0))
            else:
                pending = m if pending is None else pending @ m
            continue
        if pending is not None:
            c = np.tensordot(pending, c, axes=(1, 0))
            pending = None
        cores.append(c)
    if not cores:
        raise ValueError("train has no non-trivial site")
    return TensorTrain(tuple(cores))
