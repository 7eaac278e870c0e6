"""Lindblad evolution as Kraus maps acting on purified states.

With ``H_eff = H - (i/2) sum_k L_k^+ L_k`` the first-order map is
``rho -> U rho U^+ + h sum_k L_k rho L_k^+`` with ``U = 1 - i h H_eff``.
The second-order map replaces ``U`` by ``U' = U - (h^2/2) H_eff^2`` and adds
the composite branches ``(h/2)(U L + L U)`` and ``(h^2/2) L_j L_k``.  Each
step is renormalized to unit trace.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .operators import OperatorSum
from .purified import (
    CompressionBudget,
    PurifiedDensityMatrix,
    apply_operator,
    compress,
    expectation,
    gram,
    matrix_add,
    renormalize,
    scale,
    vector_add,
)
from .quantics import diagonal_mpo
from .tt import TensorTrain, TruncationPolicy

__all__ = [
    "Polynomial",
    "KrausBranch",
    "KrausMap",
    "LindbladModel",
    "LindbladTrajectory",
    "TraceCollapse",
    "apply_factor",
    "apply_kraus",
    "first_order_map",
    "second_order_map",
    "first_order_step",
    "second_order_step",
    "evolve_lindblad",
]

TRACE_FLOOR = 1e-14


class TraceCollapse(FloatingPointError):
    """The unnormalized trace fell below the floor during a step."""


@dataclass(frozen=True, eq=False)
class Polynomial:
    """``sum_k coeffs[k] * op**k``, applied by Horner's rule."""

    op: OperatorSum
    coeffs: tuple[complex, ...]


Factor = OperatorSum | Polynomial


@dataclass(frozen=True, eq=False)
class KrausBranch:
    """``rho -> weight * A rho A^+`` with ``A = factors[0] @ factors[1] @ ...``."""

    weight: float
    factors: tuple[Factor, ...]


@dataclass(frozen=True, eq=False)
class KrausMap:
    branches: tuple[KrausBranch, ...]

    @classmethod
    def from_operators(cls, ops: Sequence[OperatorSum]) -> "KrausMap":
        return cls(tuple(KrausBranch(1.0, (op,)) for op in ops))


def apply_factor(state: PurifiedDensityMatrix, factor: Factor, budget: CompressionBudget) -> PurifiedDensityMatrix:
    """``Psi -> A Psi`` keeping the ``mu`` basis fixed."""
    if isinstance(factor, OperatorSum):
        return apply_operator(state, factor, budget, mu=False)
    coeffs = factor.coeffs
    if not any(t.coef != 0 for t in factor.op):
        return scale(state, coeffs[0])
    acc = scale(state, coeffs[-1])
    for c in reversed(coeffs[:-1]):
        acc = apply_operator(acc, factor.op)
        if c != 0:
            acc = vector_add(acc, scale(state, c))
        acc = compress(acc, budget, mu=False)
    return acc


def apply_kraus(kmap: KrausMap, state: PurifiedDensityMatrix, budget: CompressionBudget) -> PurifiedDensityMatrix:
    """``sum_i A_i rho A_i^+`` with branches summed in declaration order.

    Partial products shared between branches (same trailing factors) are
    computed once.
    """
    memo: dict[tuple[int, ...], PurifiedDensityMatrix] = {(): state}
    total = None
    for br in kmap.branches:
        key: tuple[int, ...] = ()
        cur = state
        for f in reversed(br.factors):
            key = key + (id(f),)
            if key not in memo:
                memo[key] = apply_factor(cur, f, budget)
            cur = memo[key]
        cur = scale(cur, np.sqrt(br.weight))
        total = cur if total is None else matrix_add(total, cur)
    return compress(total, budget)


# ---------------------------------------------------------------- model

@dataclass(eq=False)
class LindbladModel:
    """``H(t) = H0 + f(t) H1`` with jump operators, over a mode layout.

    ``diagonal`` optionally holds per-mode real energy vectors that are split
    off and propagated exactly (symmetric splitting around the Kraus step).
    """

    h0: OperatorSum
    jumps: tuple[OperatorSum, ...]
    layout: "object"
    h1: OperatorSum | None = None
    drive: Callable[[float], float] | None = None
    diagonal: Mapping[int, np.ndarray] | None = None
    name: str = "lindblad"
    _decay: OperatorSum = field(init=False, repr=False)
    _phase_cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.jumps = tuple(self.jumps)
        decay = OperatorSum()
        for L in self.jumps:
            decay = decay + L.adjoint().matmul(L)
        self._decay = decay.simplify()
        self.h0 = self.h0.simplify()
        if self.h1 is not None:
            self.h1 = self.h1.simplify()
        self._heff_cache: dict[float, OperatorSum] = {}

    def f(self, t: float) -> float:
        return 0.0 if self.drive is None or self.h1 is None else float(self.drive(t))

    def hamiltonian(self, t: float) -> OperatorSum:
        ft = self.f(t)
        if ft == 0.0:
            return self.h0
        return (self.h0 + self.h1.scale(ft)).simplify()

    def effective(self, t: float) -> OperatorSum:
        """``H(t) - (i/2) sum_k L_k^+ L_k``."""
        ft = self.f(t)
        if ft not in self._heff_cache:
            if len(self._heff_cache) > 4:
                self._heff_cache.clear()
            op = self.hamiltonian(t)
            if len(self._decay):
                op = op + self._decay.scale(-0.5j)
            self._heff_cache[ft] = op.simplify()
        return self._heff_cache[ft]

    def phase_factor(self, h: float) -> OperatorSum | None:
        """``exp(-i D h)`` for the split diagonal part, one MPO per mode."""
        if not self.diagonal:
            return None
        if h not in self._phase_cache:
            factors = {}
            for m, energies in self.diagonal.items():
                bits = self.layout.bits[m]
                phases = np.exp(-1j * h * np.asarray(energies, dtype=float))
                qtt = TensorTrain.from_dense(phases, [2] * bits, TruncationPolicy(1e-15))
                factors[m] = diagonal_mpo(qtt)
            self._phase_cache[h] = OperatorSum.product(factors)
        return self._phase_cache[h]

    # dense views for oracle comparisons
    def dense_hamiltonian(self, t: float) -> np.ndarray:
        dims = list(self.layout.dims)
        out = self.h0.to_dense(dims)
        if self.h1 is not None:
            out = out + self.f(t) * self.h1.to_dense(dims)
        if self.diagonal:
            for m, energies in self.diagonal.items():
                ops = {k: np.eye(d) for k, d in enumerate(dims)}
                ops[m] = np.diag(np.asarray(energies, dtype=complex))
                mat = np.ones((1, 1), dtype=complex)
                for k in range(len(dims)):
                    mat = np.kron(mat, ops[k])
                out = out + mat
        return out

    def dense_jumps(self) -> list[np.ndarray]:
        dims = list(self.layout.dims)
        return [L.to_dense(dims) for L in self.jumps]


def first_order_map(model: LindbladModel, t: float, h: float) -> KrausMap:
    heff = model.effective(t + h / 2)
    U = Polynomial(heff, (1.0, -1j * h))
    branches = [KrausBranch(1.0, (U,))]
    branches += [KrausBranch(h, (L,)) for L in model.jumps]
    return KrausMap(tuple(branches))


def second_order_map(model: LindbladModel, t: float, h: float) -> KrausMap:
    heff = model.effective(t + h / 2)
    U2 = Polynomial(heff, (1.0, -1j * h, -0.5 * h * h))
    U1 = Polynomial(heff, (1.0, -1j * h))
    branches = [KrausBranch(1.0, (U2,))]
    for L in model.jumps:
        branches.append(KrausBranch(h / 2, (U1, L)))
        branches.append(KrausBranch(h / 2, (L, U1)))
    for Lj in model.jumps:
        for Lk in model.jumps:
            branches.append(KrausBranch(h * h / 2, (Lj, Lk)))
    return KrausMap(tuple(branches))


def _step(kmap: KrausMap, model: LindbladModel, state: PurifiedDensityMatrix, h: float,
          budget: CompressionBudget) -> tuple[PurifiedDensityMatrix, float]:
    phase = model.phase_factor(h / 2)
    if phase is not None:
        state = apply_operator(state, phase, budget, mu=False)
    out = apply_kraus(kmap, state, budget)
    if phase is not None:
        out = apply_operator(out, phase, budget, mu=False)
    tr = float(np.real(np.trace(gram(out))))
    if not tr > TRACE_FLOOR:
        raise TraceCollapse(f"trace {tr:.3e} below {TRACE_FLOOR}")
    return renormalize(out.with_trace(tr)), tr


def first_order_step(model: LindbladModel, state: PurifiedDensityMatrix, t: float, h: float,
                     budget: CompressionBudget) -> tuple[PurifiedDensityMatrix, float]:
    """One first-order Kraus step; returns the state and the pre-normalization trace."""
    if not h > 0:
        raise ValueError("step must be positive")
    return _step(first_order_map(model, t, h), model, state, h, budget)


def second_order_step(model: LindbladModel, state: PurifiedDensityMatrix, t: float, h: float,
                      budget: CompressionBudget) -> tuple[PurifiedDensityMatrix, float]:
    """One second-order Kraus step; returns the state and the pre-normalization trace."""
    if not h > 0:
        raise ValueError("step must be positive")
    return _step(second_order_map(model, t, h), model, state, h, budget)


# ---------------------------------------------------------------- driver

@dataclass
class LindbladTrajectory:
    times: list[float] = field(default_factory=list)
    observables: dict[str, list[complex]] = field(default_factory=dict)
    purity: list[float] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)
    chi_q: list[int] = field(default_factory=list)
    chi_e: list[int] = field(default_factory=list)
    chi_mu: list[int] = field(default_factory=list)
    elements: list[int] = field(default_factory=list)
    states: list[PurifiedDensityMatrix] = field(default_factory=list)
    failed: bool = False
    error: str | None = None
    wall_time: float = 0.0

    def record(self, t: float, state: PurifiedDensityMatrix, trace: float,
               observables: Mapping[str, OperatorSum], keep_state: bool) -> None:
        g = gram(state)
        tr = float(np.real(np.trace(g)))
        self.times.append(float(t))
        self.purity.append(float(np.real(np.vdot(g, g))) / tr**2)
        self.trace.append(float(trace))
        self.chi_q.append(state.chi_q)
        self.chi_e.append(state.chi_e)
        self.chi_mu.append(state.chi_mu)
        self.elements.append(state.element_count)
        for name, op in observables.items():
            self.observables.setdefault(name, []).append(expectation(state, op) / tr)
        if keep_state:
            self.states.append(state)

    def columns(self) -> dict[str, np.ndarray]:
        cols: dict[str, np.ndarray] = {"t": np.array(self.times)}
        for name, vals in self.observables.items():
            v = np.array(vals, dtype=complex)
            cols[f"re_{name}"] = v.real
            cols[f"im_{name}"] = v.imag
        cols["purity"] = np.array(self.purity)
        cols["trace"] = np.array(self.trace)
        cols["chi_q"] = np.array(self.chi_q, dtype=float)
        cols["chi_e"] = np.array(self.chi_e, dtype=float)
        cols["chi_mu"] = np.array(self.chi_mu, dtype=float)
        cols["elements"] = np.array(self.elements, dtype=float)
        return cols


def evolve_lindblad(model: LindbladModel, state0: PurifiedDensityMatrix, t_grid: Sequence[float],
                    scheme: str = "order2", budget: CompressionBudget | None = None,
                    observables: Mapping[str, OperatorSum] | None = None, substeps: int = 1,
                    keep_states: bool = False,
                    callback: Callable[[float, PurifiedDensityMatrix], None] | None = None) -> LindbladTrajectory:
    """Kraus evolution over a uniform grid, ``substeps`` steps per interval.

    A failing step ends the run; the partial trajectory is returned with
    ``failed`` set.
    """
    step = {"order1": first_order_step, "order2": second_order_step}.get(scheme)
    if step is None:
        raise ValueError(f"unknown scheme {scheme!r}")
    budget = budget or CompressionBudget()
    observables = dict(observables or {})
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size > 2 and not np.allclose(np.diff(t_grid), t_grid[1] - t_grid[0], rtol=1e-9, atol=0):
        raise ValueError("time grid must be uniform")
    traj = LindbladTrajectory()
    start = _time.perf_counter()
    state = renormalize(state0)
    traj.record(t_grid[0], state, 1.0, observables, keep_states)
    if callback:
        callback(float(t_grid[0]), state)
    try:
        for k in range(len(t_grid) - 1):
            h = (t_grid[k + 1] - t_grid[k]) / substeps
            tr = 1.0
            for s in range(substeps):
                state, tr = step(model, state, t_grid[k] + s * h, h, budget)
            traj.record(t_grid[k + 1], state, tr, observables, keep_states)
            if callback:
                callback(float(t_grid[k + 1]), state)
    except (TraceCollapse, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        traj.failed = True
        traj.error = f"{type(exc).__name__}: {exc}"
    traj.wall_time = _time.perf_counter() - start
    return traj
