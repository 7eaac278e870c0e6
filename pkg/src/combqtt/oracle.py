"""Dense brute-force references.

Everything here works on full vectors and matrices and is deliberately
independent of the tensor-network code paths.  Dimensions are hard capped.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DIM_CAP",
    "ladder",
    "dense_schrodinger",
    "dense_lindblad",
    "lindblad_rhs",
    "dense_kraus",
    "partial_trace",
    "trace_distance",
    "dense_from_tt",
    "embed",
]

DIM_CAP = 2**13


def _check_dim(dim: int, cap: int = DIM_CAP) -> None:
    if dim > cap:
        raise ValueError(f"dense dimension {dim} exceeds cap {cap}")


def ladder(n: int) -> np.ndarray:
    """Truncated annihilation operator on ``n`` Fock levels."""
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def embed(ops: dict[int, np.ndarray], dims: Sequence[int]) -> np.ndarray:
    """Kronecker product with identities on unlisted modes (mode 0 leftmost)."""
    out = np.ones((1, 1), dtype=complex)
    for k, d in enumerate(dims):
        out = np.kron(out, ops.get(k, np.eye(d)))
    return out


def _rk4(rhs: Callable[[float, np.ndarray], np.ndarray], y: np.ndarray, t: float, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + h / 2, y + h / 2 * k1)
    k3 = rhs(t + h / 2, y + h / 2 * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def dense_schrodinger(hamiltonian: Callable[[float], np.ndarray], psi0: np.ndarray,
                      t_grid: Sequence[float], substeps: int = 100) -> np.ndarray:
    """RK4 at ``h / substeps``; returns states at every grid point."""
    psi = np.asarray(psi0, dtype=complex).copy()
    _check_dim(psi.size, 2**12)
    t_grid = np.asarray(t_grid, dtype=float)
    out = [psi.copy()]

    def rhs(t, y):
        return -1j * (hamiltonian(t) @ y)

    for k in range(len(t_grid) - 1):
        h = (t_grid[k + 1] - t_grid[k]) / substeps
        t = t_grid[k]
        for s in range(substeps):
            psi = _rk4(rhs, psi, t + s * h, h)
        out.append(psi.copy())
    return np.array(out)


def lindblad_rhs(H: np.ndarray, jumps: Sequence[np.ndarray], rho: np.ndarray) -> np.ndarray:
    """``-i[H, rho] + sum_k (L rho L^+ - {L^+ L, rho}/2)``."""
    out = -1j * (H @ rho - rho @ H)
    for L in jumps:
        ld = L.conj().T
        ll = ld @ L
        out += L @ rho @ ld - 0.5 * (ll @ rho + rho @ ll)
    return out


def dense_lindblad(hamiltonian: Callable[[float], np.ndarray], jumps: Sequence[np.ndarray], rho0: np.ndarray,
                   t_grid: Sequence[float], substeps: int = 100) -> np.ndarray:
    """RK4 on the master equation at ``h / substeps``; states at grid points."""
    rho = np.asarray(rho0, dtype=complex).copy()
    _check_dim(rho.shape[0] ** 2, 2**20)
    t_grid = np.asarray(t_grid, dtype=float)
    jumps = [np.asarray(L, dtype=complex) for L in jumps]
    out = [rho.copy()]

    def rhs(t, y):
        return lindblad_rhs(hamiltonian(t), jumps, y)

    for k in range(len(t_grid) - 1):
        h = (t_grid[k + 1] - t_grid[k]) / substeps
        t = t_grid[k]
        for s in range(substeps):
            rho = _rk4(rhs, rho, t + s * h, h)
        out.append(rho.copy())
    return np.array(out)


def dense_kraus(ops: Sequence[np.ndarray], rho: np.ndarray) -> np.ndarray:
    """``sum_i A_i rho A_i^+``."""
    return sum(A @ rho @ A.conj().T for A in ops)


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: int) -> np.ndarray:
    """Reduced matrix of mode ``keep``."""
    dims = list(dims)
    t = rho.reshape(dims + dims)
    m = len(dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:m])
    cols = list(letters[m:2 * m])
    for k in range(m):
        if k != keep:
            cols[k] = rows[k]
    spec = "".join(rows) + "".join(cols) + "->" + rows[keep] + cols[keep]
    return np.einsum(spec, t)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``0.5 * ||a - b||_1`` for Hermitian matrices."""
    ev = np.linalg.eigvalsh(0.5 * ((a - b) + (a - b).conj().T))
    return float(0.5 * np.abs(ev).sum())


def dense_from_tt(obj):
    """Dense vector, matrix, or density matrix of a network."""
    from .purified import PurifiedDensityMatrix
    from .tt import MatrixProductOperator, TensorTrain

    if isinstance(obj, PurifiedDensityMatrix):
        psi = obj.to_dense_psi()
        return psi @ psi.conj().T
    if isinstance(obj, (TensorTrain, MatrixProductOperator)):
        return obj.to_dense()
    raise TypeError(f"unsupported type {type(obj).__name__}")
