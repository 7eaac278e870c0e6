"""Closed-system time evolution of tensor-train states.

Integrators for ``i d psi/dt = (H0 + f(t) H1) psi``: global RK4, a
Taylor-expanded Crank-Nicolson step solved by ALS, and symmetric one-site
TDVP, optionally with a fourth-order Magnus average of the drive.
"""
from __future__ import annotations

import time as _time
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from .tt import (
    MatrixProductOperator,
    TensorTrain,
    TruncationPolicy,
    als_linear_solve,
    apply_mpo,
    apply_terms,
    canonicalize,
    compress_mpo,
    inner,
    linear_combination,
    mpo_linear_combination,
    mpo_mul,
    norm,
    pad_bonds,
)

__all__ = [
    "TimeDependentHamiltonian",
    "StiffnessError",
    "KrylovError",
    "IntegratorReport",
    "Trajectory",
    "rk4_step",
    "crank_nicolson_step",
    "magnus_average",
    "magnus_terms",
    "tdvp_step",
    "expm_krylov",
    "evolve",
    "overlap_error",
]

GAUSS_OFFSET = np.sqrt(3.0) / 6.0
KRYLOV_DIM = 30
KRYLOV_TOL = 1e-12
TDVP_BOND_FLOOR = 8


class StiffnessError(RuntimeError):
    """Explicit step blew up the norm; the step size is too large."""


class KrylovError(RuntimeError):
    """Lanczos exponential failed to converge."""


@dataclass(frozen=True, eq=False)
class TimeDependentHamiltonian:
    """``H(t) = H0 + f(t) H1`` with lazily precomputed products."""

    h0: MatrixProductOperator
    h1: MatrixProductOperator | None = None
    drive: Callable[[float], float] | None = None

    def f(self, t: float) -> float:
        if self.h1 is None or self.drive is None:
            return 0.0
        return float(self.drive(t))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.h0.col_dims

    def terms(self, t: float) -> list[tuple[complex, MatrixProductOperator]]:
        out = [(1.0, self.h0)]
        if self.h1 is not None:
            out.append((self.f(t), self.h1))
        return out

    @cached_property
    def commutator(self) -> MatrixProductOperator:
        """``[H0, H1]`` (anti-Hermitian)."""
        if self.h1 is None:
            raise ValueError("no driven part")
        a = mpo_mul(self.h0, self.h1)
        b = mpo_mul(self.h1, self.h0)
        return compress_mpo(mpo_linear_combination([(1.0, a), (-1.0, b)]), TruncationPolicy(1e-14))

    @cached_property
    def squares(self) -> list[tuple[str, MatrixProductOperator]]:
        """``H0^2``, ``H0 H1 + H1 H0`` and ``H1^2`` (the last two only when driven)."""
        pol = TruncationPolicy(1e-14)
        out = [("h0h0", compress_mpo(mpo_mul(self.h0, self.h0), pol))]
        if self.h1 is not None:
            anti = mpo_linear_combination([(1.0, mpo_mul(self.h0, self.h1)), (1.0, mpo_mul(self.h1, self.h0))])
            out.append(("anti", compress_mpo(anti, pol)))
            out.append(("h1h1", compress_mpo(mpo_mul(self.h1, self.h1), pol)))
        return out

    def square_terms(self, t: float) -> list[tuple[complex, MatrixProductOperator]]:
        """``H(t)^2`` as a weighted list."""
        f = self.f(t)
        weights = {"h0h0": 1.0, "anti": f, "h1h1": f * f}
        return [(weights[name], op) for name, op in self.squares]


@dataclass
class IntegratorReport:
    times: list[float] = field(default_factory=list)
    max_bond: list[int] = field(default_factory=list)
    norms: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    padded_floor: int | None = None
    wall_time: float = 0.0


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    norms: np.ndarray
    max_bond: np.ndarray
    states: list[TensorTrain]
    report: IntegratorReport

    def columns(self) -> list[tuple[str, np.ndarray]]:
        cols = [("t", self.times)]
        for name, vals in self.observables.items():
            if np.iscomplexobj(vals):
                cols.append((f"re_{name}", vals.real))
                cols.append((f"im_{name}", vals.imag))
            else:
                cols.append((name, vals))
        cols.append(("norm", self.norms))
        cols.append(("max_chi_q", self.max_bond.astype(float)))
        return cols

    def to_text(self) -> str:
        cols = self.columns()
        lines = ["# " + " ".join(name for name, _ in cols)]
        for k in range(len(self.times)):
            lines.append(" ".join(f"{float(c[k]):.17g}" for _, c in cols))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- explicit and implicit global steps

def rk4_step(H: TimeDependentHamiltonian, psi: TensorTrain, t: float, h: float,
             policy: TruncationPolicy) -> TensorTrain:
    """Classical RK4 on ``d psi/dt = -i H(t) psi`` with recompression."""

    def rhs(tau, state):
        return apply_terms([(-1j * c, m) for c, m in H.terms(tau)], state, policy)

    n0 = norm(psi)
    k1 = rhs(t, psi)
    k2 = rhs(t + h / 2, linear_combination([(1.0, psi), (h / 2, k1)], policy))
    k3 = rhs(t + h / 2, linear_combination([(1.0, psi), (h / 2, k2)], policy))
    k4 = rhs(t + h, linear_combination([(1.0, psi), (h, k3)], policy))
    out = linear_combination([(1.0, psi), (h / 6, k1), (h / 3, k2), (h / 3, k3), (h / 6, k4)], policy)
    n1 = norm(out)
    if not np.isfinite(n1) or abs(n1 - n0) > 0.1 * n0:
        raise StiffnessError(f"RK4 norm changed from {n0:.6g} to {n1:.6g} in one step of size {h:g}; "
                             "reduce the step or use an implicit method")
    return out


def _taylor_half_step(H: TimeDependentHamiltonian, tau: float, half: float):
    """Terms of ``1 - i half H(tau) - half^2/2 H(tau)^2``."""
    ident = MatrixProductOperator.identity(H.dims)
    terms = [(1.0, ident)]
    terms += [(-1j * half * c, m) for c, m in H.terms(tau)]
    terms += [(-0.5 * half * half * c, m) for c, m in H.square_terms(tau)]
    return terms


def crank_nicolson_step(H: TimeDependentHamiltonian, psi: TensorTrain, t: float, h: float,
                        policy: TruncationPolicy) -> tuple[TensorTrain, float]:
    """Solve ``U(t+h, -h/2) psi(t+h) = U(t, h/2) psi(t)`` with Taylor propagators.

    Returns the new state and the ALS residual.
    """
    rhs = apply_terms(_taylor_half_step(H, t, h / 2), psi, policy)
    lhs = _taylor_half_step(H, t + h, -h / 2)
    return als_linear_solve(lhs, rhs, psi, policy)


# ---------------------------------------------------------------- Magnus averaging

def magnus_average(H: TimeDependentHamiltonian, t: float, h: float) -> tuple[float, complex]:
    """Coefficients of ``H_Omega = H0 + c_sum H1 + c_comm [H0, H1]``.

    Two-point Gauss-Legendre nodes ``t + (1/2 -+ sqrt(3)/6) h``.
    """
    f1 = H.f(t + (0.5 - GAUSS_OFFSET) * h)
    f2 = H.f(t + (0.5 + GAUSS_OFFSET) * h)
    c_sum = 0.5 * (f1 + f2)
    c_comm = 1j * np.sqrt(3.0) * h * (f2 - f1) / 12.0
    return c_sum, c_comm


def magnus_terms(H: TimeDependentHamiltonian, t: float, h: float) -> list[tuple[complex, MatrixProductOperator]]:
    if H.h1 is None:
        return [(1.0, H.h0)]
    c_sum, c_comm = magnus_average(H, t, h)
    terms = [(1.0, H.h0), (c_sum, H.h1)]
    if c_comm != 0:
        terms.append((c_comm, H.commutator))
    return terms


# ---------------------------------------------------------------- TDVP

def expm_krylov(matvec: Callable[[np.ndarray], np.ndarray], v: np.ndarray, dt: float,
                tol: float = KRYLOV_TOL, max_dim: int = KRYLOV_DIM, _depth: int = 0) -> np.ndarray:
    """``exp(-1j * dt * H) v`` for Hermitian ``H`` given by ``matvec``.

    Lanczos with full reorthogonalization; if the subspace cap is reached the
    interval is split in two.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0 or dt == 0.0:
        return v.copy()
    n = v.size
    m_cap = min(max_dim, n)
    basis = np.zeros((m_cap + 1, n), dtype=complex)
    alpha = np.zeros(m_cap)
    beta = np.zeros(m_cap)
    basis[0] = v / beta0
    for j in range(m_cap):
        w = matvec(basis[j])
        alpha[j] = np.vdot(basis[j], w).real
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        tri = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        evals, evecs = np.linalg.eigh(tri)
        coef = evecs @ (np.exp(-1j * dt * evals) * evecs[0].conj())
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])) or m == n:
            return beta0 * (basis[:m].T @ coef)
        if abs(beta[j] * coef[-1]) < tol:
            return beta0 * (basis[:m].T @ coef)
        basis[j + 1] = w / beta[j]
    if _depth > 12:
        raise KrylovError("Krylov exponential did not converge")
    half = expm_krylov(matvec, v, dt / 2, tol, max_dim, _depth + 1)
    return expm_krylov(matvec, half, dt / 2, tol, max_dim, _depth + 1)


def _env_left(env, bra, op, ket):
    # env (x,w,a), bra (x,s,y), op (w,s,t,v), ket (a,t,b) -> (y,v,b)
    t = np.tensordot(env, ket, axes=([2], [0]))
    t = np.tensordot(t, op, axes=([1, 2], [0, 2]))
    t = np.tensordot(t, bra.conj(), axes=([0, 2], [0, 1]))
    return t.transpose(2, 1, 0)


def _env_right(env, bra, op, ket):
    # bra (x,s,y), op (w,s,t,v), ket (a,t,b), env (y,v,b) -> (x,w,a)
    t = np.tensordot(ket, env, axes=([2], [2]))
    t = np.tensordot(t, op, axes=([1, 3], [2, 3]))
    t = np.tensordot(t, bra.conj(), axes=([1, 3], [2, 1]))
    return t.transpose(2, 1, 0)


def _site_apply(left, op, v, right):
    # left (x,w,a), op (w,s,t,v), v (a,t,b), right (y,v,b) -> (x,s,y)
    t = np.tensordot(left, v, axes=([2], [0]))
    t = np.tensordot(t, op, axes=([1, 2], [0, 2]))
    return np.tensordot(t, right, axes=([1, 3], [2, 1]))


def _bond_apply(left, v, right):
    # left (x,w,a), v (a,b), right (y,w,b) -> (x,y)
    t = np.tensordot(left, v, axes=([2], [0]))
    return np.tensordot(t, right, axes=([1, 2], [1, 2]))


def tdvp_step(terms: Sequence[tuple[complex, MatrixProductOperator]], psi: TensorTrain, h: float) -> TensorTrain:
    """One symmetric one-site TDVP step for the Hermitian ``sum_j c_j H_j``.

    Left-to-right then right-to-left, each with half step ``h/2``; bonds are
    unchanged.
    """
    n = len(psi)
    psi = canonicalize(psi, 0)
    cores = list(psi.cores)
    ops = [m for _, m in terms]
    coefs = [c for c, _ in terms]
    nt = len(ops)
    one = np.ones((1, 1, 1), dtype=complex)
    left = [[one] + [None] * n for _ in range(nt)]
    right = [[None] * n + [one] for _ in range(nt)]
    for i in range(n - 1, 0, -1):
        for j in range(nt):
            right[j][i] = _env_right(right[j][i + 1], cores[i], ops[j].cores[i], cores[i])
    dt = h / 2.0

    def site_matvec(i, shape):
        def mv(v):
            v = v.reshape(shape)
            out = np.zeros(shape, dtype=complex)
            for j in range(nt):
                out += coefs[j] * _site_apply(left[j][i], ops[j].cores[i], v, right[j][i + 1])
            return out.reshape(-1)
        return mv

    def bond_matvec(b, shape):
        # zero-site operator on the bond between sites b-1 and b
        def mv(v):
            v = v.reshape(shape)
            out = np.zeros(shape, dtype=complex)
            for j in range(nt):
                out += coefs[j] * _bond_apply(left[j][b], v, right[j][b])
            return out.reshape(-1)
        return mv

    for i in range(n):
        sh = cores[i].shape
        cores[i] = expm_krylov(site_matvec(i, sh), cores[i].reshape(-1), dt).reshape(sh)
        if i < n - 1:
            chi, d, chr_ = sh
            q, r = np.linalg.qr(cores[i].reshape(chi * d, chr_))
            cores[i] = q.reshape(chi, d, -1)
            for j in range(nt):
                left[j][i + 1] = _env_left(left[j][i], cores[i], ops[j].cores[i], cores[i])
            r = expm_krylov(bond_matvec(i + 1, r.shape), r.reshape(-1), -dt).reshape(r.shape)
            cores[i + 1] = np.tensordot(r, cores[i + 1], axes=(1, 0))
    for i in range(n - 1, -1, -1):
        sh = cores[i].shape
        cores[i] = expm_krylov(site_matvec(i, sh), cores[i].reshape(-1), dt).reshape(sh)
        if i > 0:
            chi, d, chr_ = sh
            q, r = np.linalg.qr(cores[i].reshape(chi, d * chr_).T)
            cores[i] = q.T.reshape(-1, d, chr_)
            lq = r.T
            for j in range(nt):
                right[j][i] = _env_right(right[j][i + 1], cores[i], ops[j].cores[i], cores[i])
            lq = expm_krylov(bond_matvec(i, lq.shape), lq.reshape(-1), -dt).reshape(lq.shape)
            cores[i - 1] = np.tensordot(cores[i - 1], lq, axes=(2, 0))
    return TensorTrain(tuple(cores), 0)


# ---------------------------------------------------------------- driver

def overlap_error(reference: np.ndarray | TensorTrain, psi: TensorTrain) -> float:
    """``1 - |<ref|psi>|`` for normalized inputs."""
    if isinstance(reference, TensorTrain):
        ov = inner(reference, psi) / (norm(reference) * norm(psi))
    else:
        vec = psi.to_dense()
        ov = np.vdot(reference, vec) / (np.linalg.norm(reference) * np.linalg.norm(vec))
    return float(1.0 - abs(ov))


def _expect(op: MatrixProductOperator, psi: TensorTrain) -> complex:
    return inner(psi, apply_mpo(op, psi, "exact")) / inner(psi, psi).real


def evolve(H: TimeDependentHamiltonian, psi0: TensorTrain, t_grid: Sequence[float], method: str = "rk4",
           policy: TruncationPolicy | None = None, observables: Mapping[str, MatrixProductOperator] | None = None,
           bond_floor: int = TDVP_BOND_FLOOR, keep_states: bool = False) -> Trajectory:
    """Propagate ``psi0`` over a uniform grid; ``method`` is one of
    ``rk4``, ``cn``, ``tdvp_plain`` or ``tdvp_magnus``."""
    policy = policy or TruncationPolicy()
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 1:
        raise ValueError("empty time grid")
    steps = np.diff(t_grid)
    if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-14):
        raise ValueError("time grid must be uniform")
    if steps.size and steps[0] <= 0:
        raise ValueError("time grid must be increasing")
    if method not in ("rk4", "cn", "tdvp_plain", "tdvp_magnus"):
        raise ValueError(f"unknown method {method!r}")
    observables = dict(observables or {})
    report = IntegratorReport()
    psi = psi0
    if method.startswith("tdvp"):
        psi = pad_bonds(psi0, bond_floor)
        report.padded_floor = bond_floor
    start = _time.perf_counter()
    obs_vals = {k: [] for k in observables}
    states = []

    def record(t, state, resid):
        report.times.append(float(t))
        report.max_bond.append(state.max_bond)
        report.norms.append(norm(state))
        report.residuals.append(resid)
        for k, op in observables.items():
            obs_vals[k].append(_expect(op, state))
        if keep_states:
            states.append(state)

    record(t_grid[0], psi, 0.0)
    for k in range(len(t_grid) - 1):
        t, h = t_grid[k], t_grid[k + 1] - t_grid[k]
        resid = 0.0
        if method == "rk4":
            psi = rk4_step(H, psi, t, h, policy)
        elif method == "cn":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                psi, resid = crank_nicolson_step(H, psi, t, h, policy)
        elif method == "tdvp_plain":
            psi = tdvp_step(H.terms(t), psi, h)
        else:
            psi = tdvp_step(magnus_terms(H, t, h), psi, h)
        record(t + h, psi, resid)
    report.wall_time = _time.perf_counter() - start
    if not keep_states:
        states = [psi]
    obs = {k: np.array(v) for k, v in obs_vals.items()}
    for k, v in obs.items():
        if np.allclose(v.imag, 0.0, atol=1e-12 * max(1.0, np.abs(v).max(initial=0.0))):
            obs[k] = v.real
    return Trajectory(t_grid.copy(), obs, np.array(report.norms), np.array(report.max_bond), states, report)
