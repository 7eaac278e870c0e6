"""Physical models: driven Kerr oscillator, stabilized cat qubit, transmon
coupled to a readout cavity, plus the dressed-state branch labelling.

Frequencies of the transmon model are angular (rad/ns) when built from
parameters given in GHz.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .lindblad import LindbladModel
from .operators import OperatorSum, local
from .purified import ModeLayout, PurifiedDensityMatrix, from_pure_product, reduced_density_matrix
from .quantics import (
    annihilation_mpo,
    annihilation_power_mpo,
    cat_state_qtt,
    coherent_amplitudes,
    coherent_state_qtt,
    diagonal_mpo,
    fock_state_qtt,
    function_qtt,
    number_mpo,
    number_power_mpo,
)
from .schrodinger import TimeDependentHamiltonian
from .tci import tci_build_2d
from .tt import MatrixProductOperator, TensorTrain, TruncationPolicy, mpo_linear_combination

__all__ = [
    "KerrParams",
    "kerr_model",
    "kerr_drive",
    "semiclassical_kerr",
    "CatParams",
    "cat_model",
    "cat_initial_state",
    "cat_target_state",
    "z_gate_error",
    "TransmonParams",
    "TransmonEigenbasis",
    "transmon_eigenbasis",
    "transmon_cavity_model",
    "dressed_drive_frequency",
    "coupled_hamiltonian_dense",
    "transmon_initial_state",
    "BranchTable",
    "branch_analysis",
    "transmon_branch_analysis",
]

TWO_PI = 2.0 * np.pi
OPERATOR_POLICY = TruncationPolicy(1e-14)


# ---------------------------------------------------------------- Kerr oscillator

@dataclass(frozen=True)
class KerrParams:
    omega0: float = 1.0
    K: float = 1.0 / 25.0
    alpha0: complex = 4.0
    R: int = 8
    amplitudes: tuple[float, ...] = (2.0 / 100.0, 2.0 * np.pi / 100.0)
    frequencies: tuple[float, ...] = (np.sqrt(2.0), np.sqrt(3.0))
    max_fill: float = 1.0 / 3.0


def kerr_drive(p: KerrParams) -> Callable[[float], float]:
    amps = np.asarray(p.amplitudes, dtype=float)
    freqs = np.asarray(p.frequencies, dtype=float)

    def f(t: float) -> float:
        return float(np.sum(amps * np.cos(freqs * t)))

    return f


def kerr_model(p: KerrParams = KerrParams()) -> tuple[TimeDependentHamiltonian, TensorTrain]:
    """``H0 = w0 n + (K/2) a^+2 a^2``, ``H1 = a^2 + a^+2``, coherent start."""
    n = number_mpo(p.R)
    terms = [(p.omega0, n)]
    if p.K != 0:
        terms.append((p.K / 2.0, number_power_mpo(p.R, 2)))
    h0 = mpo_linear_combination(terms, OPERATOR_POLICY)
    a2 = annihilation_power_mpo(p.R, 2)
    h1 = mpo_linear_combination([(1.0, a2), (1.0, a2.adjoint())], OPERATOR_POLICY)
    drive = kerr_drive(p) if any(p.amplitudes) else None
    H = TimeDependentHamiltonian(h0, h1 if drive else None, drive)
    psi0 = coherent_state_qtt(p.alpha0, p.R, max_fill=p.max_fill)
    return H, psi0


def semiclassical_kerr(p: KerrParams, t_grid: Sequence[float], substeps: int = 10) -> np.ndarray:
    """``i da/dt = w0 a + 2 f(t) conj(a) + K |a|^2 a`` by RK4 at ``h / substeps``."""
    f = kerr_drive(p)
    t_grid = np.asarray(t_grid, dtype=float)

    def rhs(t, a):
        return -1j * (p.omega0 * a + 2.0 * f(t) * np.conj(a) + p.K * abs(a) ** 2 * a)

    a = complex(p.alpha0)
    out = [a]
    for k in range(len(t_grid) - 1):
        h = (t_grid[k + 1] - t_grid[k]) / substeps
        t = t_grid[k]
        for s in range(substeps):
            ts = t + s * h
            k1 = rhs(ts, a)
            k2 = rhs(ts + h / 2, a + h / 2 * k1)
            k3 = rhs(ts + h / 2, a + h / 2 * k2)
            k4 = rhs(ts + h, a + h * k3)
            a = a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(a)
    return np.array(out)


# ---------------------------------------------------------------- cat qubit

@dataclass(frozen=True)
class CatParams:
    """Two-photon stabilized cat qubit (memory ``a``) with a lossy buffer ``b``.

    The stabilized states are ``|+-alpha>`` with real ``alpha = sqrt(alpha2)``,
    which fixes ``eps_d = -g2 alpha^2``.  ``eps_z`` defaults to
    ``(1/10)(4 g2^2 / kappa_b)``.
    """

    alpha2: float = 4.0
    g2: float = 1.0
    kappa_b: float = 10.0
    kappa_a: float = 0.0
    kappa_phi: float = 0.0
    eps_z: float | None = None
    theta: float = np.pi
    R_a: int = 5
    R_b: int = 3
    max_fill: float = 1.0 / 3.0

    @property
    def alpha(self) -> float:
        return float(np.sqrt(self.alpha2))

    @property
    def eps_d(self) -> float:
        return -self.g2 * self.alpha2

    @property
    def eps_zeta(self) -> float:
        return 0.1 * 4.0 * self.g2**2 / self.kappa_b if self.eps_z is None else float(self.eps_z)

    @property
    def gate_time(self) -> float:
        """``T_Z = theta / (4 alpha eps_Z)``."""
        if self.eps_zeta == 0:
            return 0.0
        return self.theta / (4.0 * self.alpha * self.eps_zeta)

    @property
    def adiabatic_ratio(self) -> float:
        """``8 |alpha| g2 / kappa_b``; should be small."""
        return 8.0 * self.alpha * self.g2 / self.kappa_b


def cat_model(p: CatParams) -> LindbladModel:
    """``g2 a^+2 b + g2 a^2 b^+ + eps_d (b + b^+) + eps_Z (a + a^+)`` with losses."""
    if 3.0 * p.alpha2 > 2**p.R_a:
        raise ValueError(f"R_a={p.R_a} too small for |alpha|^2={p.alpha2} (need 3|alpha|^2 <= 2**R_a)")
    if p.adiabatic_ratio > 1.0:
        warnings.warn(f"8|alpha|g2/kappa_b = {p.adiabatic_ratio:.2f} is not small", RuntimeWarning, stacklevel=2)
    a = annihilation_mpo(p.R_a)
    ad = a.adjoint()
    a2 = annihilation_power_mpo(p.R_a, 2)
    a2d = a2.adjoint()
    b = annihilation_mpo(p.R_b)
    bd = b.adjoint()
    x_b = mpo_linear_combination([(1.0, b), (1.0, bd)], OPERATOR_POLICY)
    x_a = mpo_linear_combination([(1.0, a), (1.0, ad)], OPERATOR_POLICY)
    h = OperatorSum.product({0: a2d, 1: b}, p.g2) + OperatorSum.product({0: a2, 1: bd}, np.conj(p.g2))
    h = h + local(1, x_b, p.eps_d)
    if p.eps_zeta:
        h = h + local(0, x_a, p.eps_zeta)
    jumps = [local(1, b, np.sqrt(p.kappa_b))]
    if p.kappa_a > 0:
        jumps.append(local(0, a, np.sqrt(p.kappa_a)))
    if p.kappa_phi > 0:
        jumps.append(local(0, number_mpo(p.R_a), np.sqrt(p.kappa_phi)))
    layout = ModeLayout((p.R_a, p.R_b), names=("a", "b"))
    return LindbladModel(h, tuple(jumps), layout, name="cat")


def cat_initial_state(p: CatParams, parity: int = +1) -> PurifiedDensityMatrix:
    """``|C_parity> (x) |0>``."""
    mem = cat_state_qtt(p.alpha, p.R_a, parity, max_fill=p.max_fill)
    return from_pure_product([mem, fock_state_qtt(0, p.R_b)], ModeLayout((p.R_a, p.R_b), names=("a", "b")))


def cat_target_state(p: CatParams, theta: float | None = None) -> np.ndarray:
    """Dense ``cos(theta/2)|C+> - i sin(theta/2)|C->`` on ``2**R_a`` levels."""
    theta = p.theta if theta is None else theta
    n = np.arange(2**p.R_a)
    plus = coherent_amplitudes(p.alpha, n) * (1 + (-1.0) ** n)
    minus = coherent_amplitudes(p.alpha, n) * (1 - (-1.0) ** n)
    plus /= np.linalg.norm(plus)
    minus /= np.linalg.norm(minus)
    return np.cos(theta / 2) * plus - 1j * np.sin(theta / 2) * minus


def z_gate_error(p: CatParams, state: PurifiedDensityMatrix | np.ndarray, theta: float | None = None) -> float:
    """``1 - <C_target| rho_a |C_target>`` for the memory's reduced state."""
    rho_a = reduced_density_matrix(state, 0) if isinstance(state, PurifiedDensityMatrix) else np.asarray(state)
    rho_a = rho_a / np.trace(rho_a).real
    tgt = cat_target_state(p, theta)
    return float(1.0 - np.real(np.vdot(tgt, rho_a @ tgt)))


# ---------------------------------------------------------------- transmon

@dataclass(frozen=True)
class TransmonParams:
    """Parameters in GHz (divided by ``2 pi``); models use angular units."""

    E_C: float = 0.28
    EJ_over_EC: float = 50.0
    omega_r: float = 7.5
    g: float = 0.25
    kappa: float = 0.02
    eps_d: float = 0.0
    omega_d: float | None = None
    n_g: float = 0.0
    charge_cutoff: int = 500
    R_t: int = 4
    R_c: int = 7

    @property
    def E_J(self) -> float:
        return self.EJ_over_EC * self.E_C


@dataclass
class TransmonEigenbasis:
    energies: np.ndarray  # angular, lowest 2**R_t, ground state at 0
    charge: np.ndarray  # n_t matrix elements in the kept eigenbasis
    all_energies: np.ndarray = field(repr=False)
    frequency_ghz: float = 0.0  # (eps_1 - eps_0) / 2 pi
    h_mpo: MatrixProductOperator | None = None
    n_mpo: MatrixProductOperator | None = None
    number_mpo: MatrixProductOperator | None = None
    ranks: dict = field(default_factory=dict)


def _charge_basis_eigensystem(p: TransmonParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenpairs of ``4 E_C (n - n_g)^2 - E_J cos(phi)`` in the charge basis.

    At ``n_g = 0`` the even and odd sectors under ``n -> -n`` are diagonalized
    separately so that every eigenvector has a definite parity, even where
    levels above the well are nearly degenerate.
    """
    if p.charge_cutoff < 100:
        raise ValueError("charge cutoff must be at least 100")
    nc = p.charge_cutoff
    n = np.arange(-nc, nc + 1, dtype=float)
    ec, ej = TWO_PI * p.E_C, TWO_PI * p.E_J
    if p.n_g != 0:
        w, v = sla.eigh_tridiagonal(4.0 * ec * (n - p.n_g) ** 2, -0.5 * ej * np.ones(n.size - 1))
    else:
        k = np.arange(0, nc + 1, dtype=float)
        off = -0.5 * ej * np.ones(nc)
        off[0] *= np.sqrt(2.0)
        we, ve = sla.eigh_tridiagonal(4.0 * ec * k**2, off)
        wo, vo = sla.eigh_tridiagonal(4.0 * ec * k[1:] ** 2, -0.5 * ej * np.ones(nc - 1))
        even = np.zeros((n.size, we.size))
        even[nc] = ve[0]
        even[nc + 1:] = ve[1:] / np.sqrt(2.0)
        even[:nc] = ve[1:][::-1] / np.sqrt(2.0)
        odd = np.zeros((n.size, wo.size))
        odd[nc + 1:] = vo / np.sqrt(2.0)
        odd[:nc] = -vo[::-1] / np.sqrt(2.0)
        w = np.concatenate([we, wo])
        v = np.concatenate([even, odd], axis=1)
        order = np.argsort(w, kind="stable")
        w, v = w[order], v[:, order]
    # deterministic sign: largest component positive
    idx = np.argmax(np.abs(v) > np.abs(v).max(axis=0) * (1 - 1e-9), axis=0)
    v = v * np.sign(v[idx, np.arange(v.shape[1])])[None, :]
    return w, v, n


def transmon_eigenbasis(p: TransmonParams, tol: float = 1e-12, max_rank: int = 64,
                        seed: int = 0) -> TransmonEigenbasis:
    """Diagonalize the transmon in the charge basis and build eigenbasis MPOs."""
    w, v, n = _charge_basis_eigensystem(p)
    N = 2**p.R_t
    energies = w[:N] - w[0]
    vk = v[:, :N]
    charge = vk.T @ (n[:, None] * vk)
    charge = 0.5 * (charge + charge.T)
    h_qtt = function_qtt(lambda idx: energies[idx], p.R_t, tol, max_rank, seed)
    h_mpo = diagonal_mpo(h_qtt)
    n_mpo, _ = tci_build_2d(lambda r, c: charge[r, c], p.R_t, p.R_t, tol, max_rank, seed)
    num_mpo = number_mpo(p.R_t)
    ranks = {"h": h_mpo.max_bond, "n": n_mpo.max_bond, "number": num_mpo.max_bond}
    return TransmonEigenbasis(energies, charge, w - w[0], float((w[1] - w[0]) / TWO_PI),
                              h_mpo, n_mpo, num_mpo, ranks)


def coupled_hamiltonian_dense(p: TransmonParams, basis: TransmonEigenbasis | None = None) -> np.ndarray:
    """Undriven ``H_t + w_r a^+a - i g n_t (a - a^+)`` (transmon slow index)."""
    basis = basis or transmon_eigenbasis(p)
    Nc = 2**p.R_c
    a = np.diag(np.sqrt(np.arange(1, Nc, dtype=float)), 1)
    It = np.eye(basis.energies.size)
    Ic = np.eye(Nc)
    H = np.kron(np.diag(basis.energies), Ic) + TWO_PI * p.omega_r * np.kron(It, a.T @ a)
    H = H - 1j * TWO_PI * p.g * np.kron(basis.charge, a - a.T)
    return 0.5 * (H + H.conj().T)


def dressed_drive_frequency(p: TransmonParams, basis: TransmonEigenbasis | None = None,
                            states: Sequence[int] = (0, 1)) -> float:
    """Average dressed cavity frequency over transmon states, in GHz.

    For each transmon level the dressed ``|i,0>`` and ``|i,1>`` are found by
    maximum overlap; the cavity frequency is their energy difference.
    """
    basis = basis or transmon_eigenbasis(p)
    H = coupled_hamiltonian_dense(p, basis)
    E, V = np.linalg.eigh(H)
    Nc = 2**p.R_c
    freqs = []
    for i in states:
        k0 = int(np.argmax(np.abs(V[i * Nc, :]) ** 2))
        k1 = int(np.argmax(np.abs(V[i * Nc + 1, :]) ** 2))
        freqs.append(E[k1] - E[k0])
    return float(np.mean(freqs) / TWO_PI)


def transmon_cavity_model(p: TransmonParams, basis: TransmonEigenbasis | None = None,
                          split_diagonal: bool = True) -> tuple[LindbladModel, TransmonEigenbasis, float]:
    """Lab-frame transmon (eigenbasis, mode 0) plus cavity (Fock, mode 1).

    ``H0 = H_t + w_r a^+a - i g n_t (a - a^+)``, ``H1 = -i (a - a^+)`` with
    ``f(t) = eps_d sin(w_d t)`` and one jump ``sqrt(kappa) a``.  With
    ``split_diagonal`` the bare energies are propagated exactly and kept out
    of the Kraus step.  Returns the model, the basis and ``w_d`` in GHz.
    """
    basis = basis or transmon_eigenbasis(p)
    omega_d = p.omega_d if p.omega_d is not None else dressed_drive_frequency(p, basis)
    a = annihilation_mpo(p.R_c)
    ad = a.adjoint()
    quad = mpo_linear_combination([(1.0, a), (-1.0, ad)], OPERATOR_POLICY)
    coupling = OperatorSum.product({0: basis.n_mpo, 1: quad}, -1j * TWO_PI * p.g)
    layout = ModeLayout((p.R_t, p.R_c), ("transmon-eigenbasis", "fock"), names=("t", "c"))
    if split_diagonal:
        diagonal = {0: basis.energies.copy(), 1: TWO_PI * p.omega_r * np.arange(2**p.R_c, dtype=float)}
        h0 = coupling
    else:
        diagonal = None
        h0 = local(0, basis.h_mpo) + local(1, number_mpo(p.R_c), TWO_PI * p.omega_r) + coupling
    h1 = local(1, quad, -1j)
    eps = TWO_PI * p.eps_d
    wd = TWO_PI * omega_d

    def drive(t: float) -> float:
        return eps * np.sin(wd * t)

    jumps = (local(1, a, np.sqrt(TWO_PI * p.kappa)),) if p.kappa > 0 else ()
    model = LindbladModel(h0, jumps, layout, h1 if p.eps_d else None, drive if p.eps_d else None,
                          diagonal, name="transmon")
    return model, basis, omega_d


def transmon_initial_state(p: TransmonParams, i_t: int = 0, i_c: int = 0) -> PurifiedDensityMatrix:
    layout = ModeLayout((p.R_t, p.R_c), ("transmon-eigenbasis", "fock"), names=("t", "c"))
    return from_pure_product([fock_state_qtt(i_t, p.R_t), fock_state_qtt(i_c, p.R_c)], layout)


# ---------------------------------------------------------------- branch analysis

@dataclass
class BranchTable:
    """Dressed-state labels ``(i_t, i_c) -> eigenstate index`` with observables."""

    labels: dict[tuple[int, int], int]
    n_t: dict[tuple[int, int], float]
    n_c: dict[tuple[int, int], float]
    energy: dict[tuple[int, int], float]
    overlap: dict[tuple[int, int], float]
    ill_defined: set[tuple[int, int]]

    def branch(self, i_t: int) -> tuple[np.ndarray, np.ndarray]:
        """``(N_c, N_t)`` along the branch of transmon level ``i_t``."""
        keys = sorted(k for k in self.labels if k[0] == i_t)
        return (np.array([self.n_c[k] for k in keys]), np.array([self.n_t[k] for k in keys]))

    def crossing(self, i_t: int, rise: float = 1.0, persist: int = 3) -> int | None:
        """First ``i_c`` from which ``N_t`` stays above its ``i_c = 0`` value
        by more than ``rise`` for ``persist`` consecutive labels.

        Isolated spikes at narrow avoided crossings are ignored.
        """
        _, nt = self.branch(i_t)
        above = (nt - nt[0]) > rise
        for k in range(len(above) - persist + 1):
            if above[k:k + persist].all():
                return k
        return None


ILL_DEFINED_OVERLAP = 0.5


def branch_analysis(H0: np.ndarray, transmon_number: np.ndarray, cavity_number: np.ndarray,
                    creation: np.ndarray, n_t_levels: int, n_c_levels: int, n_c_max: int | None = None,
                    transmon_levels: Sequence[int] | None = None) -> BranchTable:
    """Label dressed eigenstates of ``H0`` by ladder climbing with ``a^+``.

    Level ``(i_t, 0)`` is the eigenstate with the largest overlap with the
    bare product state; ``(i_t, i_c + 1)`` is the unlabeled eigenstate with the
    largest overlap with ``a^+ |i_t, i_c>``.  Labels whose normalized overlap
    is below 0.5 are flagged.  Product states use transmon as the slow index.
    """
    E, V = np.linalg.eigh(0.5 * (H0 + H0.conj().T))
    dim = E.size
    if dim != n_t_levels * n_c_levels:
        raise ValueError("Hamiltonian dimension does not match the level counts")
    n_c_max = n_c_levels // 2 if n_c_max is None else n_c_max
    levels = list(range(n_t_levels)) if transmon_levels is None else list(transmon_levels)
    nt_exp = np.real(np.sum(V.conj() * (transmon_number @ V), axis=0))
    nc_exp = np.real(np.sum(V.conj() * (cavity_number @ V), axis=0))
    free = np.ones(dim, dtype=bool)
    labels: dict[tuple[int, int], int] = {}
    overlaps: dict[tuple[int, int], float] = {}
    flagged: set[tuple[int, int]] = set()

    def take(weights: np.ndarray, key: tuple[int, int]) -> None:
        w = np.where(free, weights, -1.0)
        k = int(np.argmax(w))
        if w[k] < 0:
            raise RuntimeError("no unlabeled eigenstates left")
        free[k] = False
        labels[key] = k
        overlaps[key] = float(w[k])
        if w[k] < ILL_DEFINED_OVERLAP:
            flagged.add(key)

    for it in levels:
        take(np.abs(V[it * n_c_levels, :]) ** 2, (it, 0))
    for ic in range(n_c_max):
        for it in levels:
            vec = creation @ V[:, labels[(it, ic)]]
            nrm = np.linalg.norm(vec)
            take(np.abs(V.conj().T @ (vec / nrm)) ** 2, (it, ic + 1))
    return BranchTable(
        labels,
        {k: float(nt_exp[v]) for k, v in labels.items()},
        {k: float(nc_exp[v]) for k, v in labels.items()},
        {k: float(E[v]) for k, v in labels.items()},
        overlaps,
        flagged,
    )


def transmon_branch_analysis(p: TransmonParams, basis: TransmonEigenbasis | None = None,
                             n_c_max: int | None = None, transmon_levels: Sequence[int] | None = None) -> BranchTable:
    """:func:`branch_analysis` for the undriven transmon-cavity Hamiltonian."""
    basis = basis or transmon_eigenbasis(p)
    H = coupled_hamiltonian_dense(p, basis)
    Nt, Nc = basis.energies.size, 2**p.R_c
    a = np.diag(np.sqrt(np.arange(1, Nc, dtype=float)), 1)
    nt = np.kron(np.diag(np.arange(Nt, dtype=float)), np.eye(Nc))
    nc = np.kron(np.eye(Nt), a.T @ a)
    ad = np.kron(np.eye(Nt), a.T)
    return branch_analysis(H, nt, nc, ad, Nt, Nc, n_c_max, transmon_levels)
