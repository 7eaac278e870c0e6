"""Purified density matrices on a comb tensor network.

A state of ``M`` bosonic modes is stored as ``Psi`` with ``rho = Psi Psi^+``.
The network has a backbone tensor train with one site per mode plus one
purification site carrying the auxiliary index ``mu``.  Every mode site
carries a link index ``q`` to that mode's quantics chain, whose cores are
``(left, 2, right)`` with the last right bond equal to 1.

Backbone site shapes: mode ``(e_left, q, e_right)``, purification
``(e_left, mu, e_right)``.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .operators import OperatorSum, local
from .serialize import read_cores, write_cores
from .tt import (
    MatrixProductOperator,
    TensorTrain,
    TruncationPolicy,
    _apply_exact_cores,
    _positive_qr,
    canonicalize,
    contract,
    svd_truncated,
    truncate,
)

__all__ = [
    "ModeLayout",
    "CompressionBudget",
    "PurifiedDensityMatrix",
    "from_pure_product",
    "from_pure_state",
    "vector_add",
    "matrix_add",
    "apply_operator",
    "compress",
    "truncate_purity",
    "expectation",
    "purity",
    "gram",
    "reduced_density_matrix",
    "renormalize",
    "save_snapshot",
    "load_snapshot",
]

DENSE_BIT_CAP = 12
RDM_DIM_CAP = 4096
BASIS_TAGS = ("fock", "transmon-eigenbasis")


@dataclass(frozen=True)
class ModeLayout:
    """Bit count and basis tag per mode plus the purification-site position."""

    bits: tuple[int, ...]
    basis: tuple[str, ...] | None = None
    purification_position: int | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        bits = tuple(int(r) for r in self.bits)
        if not bits or any(r < 1 for r in bits):
            raise ValueError("every mode needs at least one bit")
        object.__setattr__(self, "bits", bits)
        basis = tuple(self.basis) if self.basis is not None else ("fock",) * len(bits)
        if len(basis) != len(bits) or any(b not in BASIS_TAGS for b in basis):
            raise ValueError(f"basis tags must be one of {BASIS_TAGS}, one per mode")
        object.__setattr__(self, "basis", basis)
        pos = len(bits) if self.purification_position is None else int(self.purification_position)
        if not 0 <= pos <= len(bits):
            raise ValueError("purification position out of range")
        object.__setattr__(self, "purification_position", pos)
        names = tuple(self.names) if self.names is not None else tuple(f"m{k}" for k in range(len(bits)))
        if len(names) != len(bits) or len(set(names)) != len(names):
            raise ValueError("mode names must be unique, one per mode")
        object.__setattr__(self, "names", names)

    @property
    def n_modes(self) -> int:
        return len(self.bits)

    @property
    def total_bits(self) -> int:
        return sum(self.bits)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(2**r for r in self.bits)

    @property
    def n_sites(self) -> int:
        return len(self.bits) + 1

    def site_of(self, mode: int) -> int:
        """Backbone site holding ``mode``."""
        return mode if mode < self.purification_position else mode + 1

    def mode_at(self, site: int) -> int | None:
        """Mode held by backbone ``site`` or ``None`` for the purification site."""
        p = self.purification_position
        if site == p:
            return None
        return site if site < p else site - 1

    def mode_index(self, mode: int | str) -> int:
        if isinstance(mode, str):
            return self.names.index(mode)
        if not 0 <= mode < self.n_modes:
            raise IndexError(f"mode {mode} out of range")
        return int(mode)

    def header(self) -> dict:
        return {
            "modes": self.n_modes,
            "bits": list(self.bits),
            "basis": list(self.basis),
            "purification_position": self.purification_position,
            "names": list(self.names),
        }

    @classmethod
    def from_header(cls, meta: dict) -> "ModeLayout":
        return cls(tuple(meta["bits"]), tuple(meta["basis"]), meta["purification_position"],
                   tuple(meta.get("names") or ()) or None)


@dataclass(frozen=True)
class CompressionBudget:
    """Tolerances and caps for the backbone, quantics and purification bonds.

    ``tol_e`` and ``tol_q`` bound the relative 2-norm discarded per bond of
    ``Psi``.  ``tol_mu`` bounds the discarded fraction of the trace.
    """

    tol_e: float = 1e-8
    tol_q: float = 1e-8
    tol_mu: float = 1e-8
    chi_e_max: int | None = None
    chi_q_max: int | None = None
    chi_mu_max: int | None = None

    def __post_init__(self):
        for name in ("tol_e", "tol_q", "tol_mu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("chi_e_max", "chi_q_max", "chi_mu_max"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be a positive integer")

    @classmethod
    def uniform(cls, tol: float, cap: int | None = None) -> "CompressionBudget":
        return cls(tol, tol, tol, cap, cap, cap)

    @property
    def backbone(self) -> TruncationPolicy:
        return TruncationPolicy(self.tol_e, self.chi_e_max)

    @property
    def quantics(self) -> TruncationPolicy:
        return TruncationPolicy(self.tol_q, self.chi_q_max)

    @property
    def purification(self) -> TruncationPolicy:
        # squared singular values are eigenvalues of rho
        return TruncationPolicy(float(np.sqrt(self.tol_mu)), self.chi_mu_max)


@dataclass(frozen=True, eq=False)
class PurifiedDensityMatrix:
    backbone: TensorTrain
    chains: tuple[tuple[np.ndarray, ...], ...]
    layout: ModeLayout
    _trace: float | None = field(default=None, repr=False)

    def __post_init__(self):
        lay = self.layout
        if len(self.backbone) != lay.n_sites:
            raise ValueError("backbone length does not match the layout")
        if len(self.chains) != lay.n_modes:
            raise ValueError("one chain per mode is required")
        chains = []
        for m, chain in enumerate(self.chains):
            chain = tuple(np.asarray(c, dtype=np.complex128) for c in chain)
            if len(chain) != lay.bits[m]:
                raise ValueError(f"mode {m}: chain has {len(chain)} cores, layout says {lay.bits[m]}")
            q = self.backbone.cores[lay.site_of(m)].shape[1]
            if chain[0].shape[0] != q:
                raise ValueError(f"mode {m}: link dimension mismatch {chain[0].shape[0]} != {q}")
            for a, b in zip(chain[:-1], chain[1:]):
                if a.shape[2] != b.shape[0]:
                    raise ValueError(f"mode {m}: chain bond mismatch")
            if chain[-1].shape[2] != 1 or any(c.ndim != 3 or c.shape[1] != 2 for c in chain):
                raise ValueError(f"mode {m}: malformed chain cores")
            chains.append(chain)
        object.__setattr__(self, "chains", tuple(chains))

    # basic shape information ---------------------------------------------
    @property
    def purification_core(self) -> np.ndarray:
        return self.backbone.cores[self.layout.purification_position]

    @property
    def chi_mu(self) -> int:
        return self.purification_core.shape[1]

    @property
    def chi_e(self) -> int:
        return self.backbone.max_bond

    @property
    def chi_q(self) -> int:
        """Largest quantics bond, counting the link into the backbone."""
        out = 1
        for chain in self.chains:
            out = max(out, max(c.shape[0] for c in chain))
        return out

    @property
    def element_count(self) -> int:
        return self.backbone.size + sum(c.size for chain in self.chains for c in chain)

    @cached_property
    def trace(self) -> float:
        if self._trace is not None:
            return self._trace
        return float(np.real(np.trace(gram(self))))

    def bond_report(self) -> dict:
        return {
            "chi_q": self.chi_q,
            "chi_e": self.chi_e,
            "chi_mu": self.chi_mu,
            "elements": self.element_count,
            "backbone_bonds": list(self.backbone.bonds),
            "quantics_bonds": [[c.shape[0] for c in chain] for chain in self.chains],
        }

    # dense helpers (tests only) -------------------------------------------
    def chain_matrix(self, mode: int) -> np.ndarray:
        """Dense ``(q, 2**R)`` matrix of a mode's chain."""
        chain = self.chains[mode]
        out = chain[-1][:, :, 0]
        for c in reversed(chain[:-1]):
            out = np.tensordot(c, out, axes=(2, 0)).reshape(c.shape[0], -1)
        return out

    def to_dense_psi(self) -> np.ndarray:
        """Dense ``(D, chi_mu)`` matrix with mode 0 as the slowest index."""
        if self.layout.total_bits > DENSE_BIT_CAP:
            raise ValueError(f"dense reconstruction capped at {DENSE_BIT_CAP} bits")
        # acc: (rows, mu, e)
        acc = np.ones((1, 1, 1), dtype=complex)
        for s, core in enumerate(self.backbone.cores):
            m = self.layout.mode_at(s)
            if m is None:
                t = contract("rxe,emf->rmxf", acc, core).reshape(acc.shape[0], core.shape[1], core.shape[2])
                if acc.shape[1] != 1:
                    raise AssertionError("two purification sites")
                acc = t
            else:
                cm = self.chain_matrix(m)
                t = contract("rxe,eqf,qn->rnxf", acc, core, cm)
                acc = t.reshape(-1, acc.shape[1], core.shape[2])
        return acc[:, :, 0]

    def to_dense(self) -> np.ndarray:
        psi = self.to_dense_psi()
        return psi @ psi.conj().T

    def with_trace(self, value: float | None) -> "PurifiedDensityMatrix":
        return PurifiedDensityMatrix(self.backbone, self.chains, self.layout, value)


# ---------------------------------------------------------------- construction

def from_pure_product(states: Sequence[TensorTrain], layout: ModeLayout | None = None) -> PurifiedDensityMatrix:
    """Product of single-mode pure states; all bonds equal 1."""
    if layout is None:
        layout = ModeLayout(tuple(len(s) for s in states))
    if len(states) != layout.n_modes:
        raise ValueError("one state per mode is required")
    chains = []
    for m, s in enumerate(states):
        if tuple(s.physical_dims) != (2,) * layout.bits[m]:
            raise ValueError(f"mode {m}: state has dims {s.physical_dims}, expected {layout.bits[m]} bits")
        nrm = np.sqrt(abs(_tt_norm_sq(s.cores)))
        if abs(nrm - 1.0) > 1e-10:
            warnings.warn(f"mode {m}: input norm {nrm:.6g} renormalized to 1", RuntimeWarning, stacklevel=2)
        cores = list(s.cores)
        cores[0] = cores[0] / nrm
        chains.append(tuple(cores))
    backbone = TensorTrain(tuple(np.ones((1, 1, 1), dtype=complex) for _ in range(layout.n_sites)))
    return PurifiedDensityMatrix(backbone, tuple(chains), layout, 1.0)


def from_pure_state(psi: np.ndarray, layout: ModeLayout, budget: CompressionBudget | None = None) -> PurifiedDensityMatrix:
    """Pure state from a dense vector (small systems, mode 0 slowest)."""
    return from_dense_psi(np.asarray(psi).reshape(-1, 1), layout, budget)


def from_dense_psi(psi: np.ndarray, layout: ModeLayout, budget: CompressionBudget | None = None) -> PurifiedDensityMatrix:
    """Comb network for a dense ``(D, chi_mu)`` matrix ``Psi`` (small systems)."""
    psi = np.asarray(psi, dtype=complex)
    if layout.total_bits > DENSE_BIT_CAP:
        raise ValueError(f"dense input capped at {DENSE_BIT_CAP} bits")
    chi_mu = psi.shape[1]
    # full tensor ordered by backbone sites, each mode split into its bits
    tensor = psi.reshape(tuple(layout.dims) + (chi_mu,))
    order = [layout.mode_at(s) for s in range(layout.n_sites)]
    perm = [layout.n_modes if m is None else m for m in order]
    tensor = np.transpose(tensor, perm)
    site_dims = [chi_mu if m is None else 2**layout.bits[m] for m in order]
    backbone = TensorTrain.from_dense(tensor.reshape(-1), site_dims)
    state = _explode_backbone(backbone, layout)
    return compress(state, budget or CompressionBudget.uniform(1e-14))


def _explode_backbone(backbone: TensorTrain, layout: ModeLayout) -> PurifiedDensityMatrix:
    """Backbone whose mode legs are full ``2**R`` indices -> link plus chain."""
    cores = list(backbone.cores)
    chains: list[tuple[np.ndarray, ...]] = [()] * layout.n_modes
    for s, core in enumerate(cores):
        m = layout.mode_at(s)
        if m is None:
            continue
        el, n, er = core.shape
        vec = core.transpose(0, 2, 1).reshape(-1)
        mode_tt = TensorTrain.from_dense(vec, [el * er] + [2] * layout.bits[m], TruncationPolicy(1e-15))
        chains[m] = tuple(mode_tt.cores[1:])
        cores[s] = mode_tt.cores[0].reshape(el, er, -1).transpose(0, 2, 1)
    return PurifiedDensityMatrix(TensorTrain(tuple(cores)), tuple(chains), layout)


def _tt_norm_sq(cores: Sequence[np.ndarray]) -> float:
    env = np.eye(cores[0].shape[0], dtype=complex)
    for c in cores:
        env = contract("ab,asc,bsd->cd", env, c.conj(), c)
    return float(np.real(np.trace(env)))


# ---------------------------------------------------------------- environments

def _chain_env(chain: Sequence[np.ndarray], op: MatrixProductOperator | None = None) -> np.ndarray:
    """``E[qa, qb] = <chain_qa| op |chain_qb>`` (bra index conjugated)."""
    if op is None:
        env = np.ones((1, 1), dtype=complex)
        for c in reversed(chain):
            env = contract("asc,bsd,cd->ab", c.conj(), c, env)
        return env
    if len(op) != len(chain):
        raise ValueError("operator length does not match the mode's bit count")
    env = np.ones((1, 1, 1), dtype=complex)
    for c, w in zip(reversed(chain), reversed(op.cores)):
        env = contract("asc,wstv,btd,cvd->awb", c.conj(), w, c, env)
    return env[:, 0, :]


def _transfer(env: np.ndarray, core: np.ndarray, mid: np.ndarray | None) -> np.ndarray:
    """Left environment through one backbone site; ``mid=None`` traces the leg."""
    if mid is None:
        return contract("ab,asc,bsd->cd", env, core.conj(), core)
    return contract("ab,asc,st,btd->cd", env, core.conj(), mid, core)


def _contract_backbone(state: PurifiedDensityMatrix, mids: dict[int, np.ndarray]) -> complex:
    """Full contraction of bra/ket backbones with per-site middle matrices."""
    env = np.ones((1, 1), dtype=complex)
    for s, core in enumerate(state.backbone.cores):
        env = _transfer(env, core, mids.get(s))
    return complex(env[0, 0])


def _identity_envs(state: PurifiedDensityMatrix) -> list[np.ndarray]:
    return [_chain_env(chain) for chain in state.chains]


def gram(state: PurifiedDensityMatrix) -> np.ndarray:
    """``Psi^+ Psi`` as a ``chi_mu x chi_mu`` matrix."""
    lay = state.layout
    p = lay.purification_position
    envs = _identity_envs(state)
    left = np.ones((1, 1), dtype=complex)
    for s in range(p):
        left = _transfer(left, state.backbone.cores[s], envs[lay.mode_at(s)])
    right = np.ones((1, 1), dtype=complex)
    for s in range(lay.n_sites - 1, p, -1):
        core = state.backbone.cores[s]
        right = contract("asc,st,btd,cd->ab", core.conj(), envs[lay.mode_at(s)], core, right)
    P = state.purification_core
    g = contract("ab,amc,bnd,cd->mn", left, P.conj(), P, right)
    return 0.5 * (g + g.conj().T)


def purity(state: PurifiedDensityMatrix) -> float:
    """``Tr(rho^2) / Tr(rho)^2`` from the Gram matrix over ``mu``."""
    g = gram(state)
    tr = float(np.real(np.trace(g)))
    if tr <= 0:
        return 0.0
    return float(np.real(np.vdot(g, g)) / tr**2)


def _as_operator(op, mode: int | None = None) -> OperatorSum:
    if isinstance(op, OperatorSum):
        return op
    if isinstance(op, MatrixProductOperator):
        if mode is None:
            raise ValueError("a bare MPO needs a target mode")
        return local(mode, op)
    if isinstance(op, dict):
        return OperatorSum.product(op)
    raise TypeError(f"unsupported operator type {type(op).__name__}")


def expectation(state: PurifiedDensityMatrix, op, mode: int | None = None) -> complex:
    """``Tr(O rho)`` (not divided by the trace)."""
    op = _as_operator(op, mode)
    lay = state.layout
    ident = _identity_envs(state)
    cache: dict[tuple[int, int], np.ndarray] = {}
    total = 0.0 + 0.0j
    for term in op:
        mids = {}
        for m in range(lay.n_modes):
            f = term.factor(m)
            if f is None:
                mids[lay.site_of(m)] = ident[m]
            else:
                if f.col_dims != (2,) * lay.bits[m] or f.row_dims != f.col_dims:
                    raise ValueError(f"operator dims do not match mode {m}")
                key = (m, id(f))
                if key not in cache:
                    cache[key] = _chain_env(state.chains[m], f)
                mids[lay.site_of(m)] = cache[key]
        total += term.coef * _contract_backbone(state, mids)
    return complex(total)


def reduced_density_matrix(state: PurifiedDensityMatrix, mode: int | str) -> np.ndarray:
    """Dense reduced matrix of one mode (other modes and ``mu`` traced out)."""
    lay = state.layout
    m = lay.mode_index(mode)
    if lay.dims[m] > RDM_DIM_CAP:
        raise ValueError(f"reduced matrix of dimension {lay.dims[m]} exceeds {RDM_DIM_CAP}")
    envs = _identity_envs(state)
    target = lay.site_of(m)
    left = np.ones((1, 1), dtype=complex)
    for s in range(target):
        mm = lay.mode_at(s)
        left = _transfer(left, state.backbone.cores[s], None if mm is None else envs[mm])
    right = np.ones((1, 1), dtype=complex)
    for s in range(lay.n_sites - 1, target, -1):
        mm = lay.mode_at(s)
        core = state.backbone.cores[s]
        mid = np.eye(core.shape[1]) if mm is None else envs[mm]
        right = contract("asc,st,btd,cd->ab", core.conj(), mid, core, right)
    B = state.backbone.cores[target]
    M = contract("ab,aqc,brd,cd->qr", left, B.conj(), B, right)
    C = state.chain_matrix(m)
    rho = C.T @ M.T @ C.conj()
    return 0.5 * (rho + rho.conj().T)


# ---------------------------------------------------------------- scaling and sums

def scale(state: PurifiedDensityMatrix, factor: complex) -> PurifiedDensityMatrix:
    """``Psi -> factor * Psi`` (so ``rho -> |factor|^2 rho``)."""
    cores = list(state.backbone.cores)
    p = state.layout.purification_position
    cores[p] = cores[p] * factor
    tr = None if state._trace is None else state._trace * abs(factor) ** 2
    return PurifiedDensityMatrix(TensorTrain(tuple(cores), state.backbone.center), state.chains, state.layout, tr)


def renormalize(state: PurifiedDensityMatrix) -> PurifiedDensityMatrix:
    tr = state.trace
    if not tr > 1e-14:
        raise FloatingPointError(f"trace collapsed to {tr:.3e}")
    return scale(state, 1.0 / np.sqrt(tr)).with_trace(1.0)


def _direct_sum(x: np.ndarray, y: np.ndarray, block: Sequence[bool]) -> np.ndarray:
    shape = tuple(a + b if blk else a for a, b, blk in zip(x.shape, y.shape, block))
    for a, b, blk in zip(x.shape, y.shape, block):
        if not blk and a != b:
            raise ValueError(f"shared axis mismatch {x.shape} vs {y.shape}")
    out = np.zeros(shape, dtype=complex)
    out[tuple(slice(0, s) for s in x.shape)] = x
    out[tuple(slice(a, a + b) if blk else slice(0, b) for a, b, blk in zip(x.shape, y.shape, block))] = y
    return out


def _check_layout(a: PurifiedDensityMatrix, b: PurifiedDensityMatrix) -> None:
    if a.layout != b.layout:
        raise ValueError("layouts differ")


def _comb_sum(a: PurifiedDensityMatrix, b: PurifiedDensityMatrix, block_mu: bool) -> PurifiedDensityMatrix:
    _check_layout(a, b)
    lay = a.layout
    n = lay.n_sites
    cores = []
    for s in range(n):
        is_mu = lay.mode_at(s) is None
        cores.append(_direct_sum(a.backbone.cores[s], b.backbone.cores[s],
                                 (s > 0, block_mu if is_mu else True, s < n - 1)))
    chains = []
    for ca, cb in zip(a.chains, b.chains):
        r = len(ca)
        chains.append(tuple(_direct_sum(x, y, (True, False, k < r - 1)) for k, (x, y) in enumerate(zip(ca, cb))))
    return PurifiedDensityMatrix(TensorTrain(tuple(cores)), tuple(chains), lay)


def vector_add(a: PurifiedDensityMatrix, b: PurifiedDensityMatrix,
               budget: CompressionBudget | None = None) -> PurifiedDensityMatrix:
    """``Psi_a + Psi_b`` sharing the ``mu`` index."""
    if a.chi_mu != b.chi_mu:
        raise ValueError(f"purification dimensions differ: {a.chi_mu} vs {b.chi_mu}")
    out = _comb_sum(a, b, block_mu=False)
    return out if budget is None else compress(out, budget)


def linear_combination(terms: Sequence[tuple[complex, PurifiedDensityMatrix]],
                       budget: CompressionBudget | None = None) -> PurifiedDensityMatrix:
    """``sum_k c_k Psi_k`` (amplitude level)."""
    terms = [(c, s) for c, s in terms if c != 0]
    if not terms:
        raise ValueError("empty combination")
    out = scale(terms[0][1], terms[0][0])
    for c, s in terms[1:]:
        out = vector_add(out, scale(s, c))
    return out if budget is None else compress(out, budget)


def matrix_add(a: PurifiedDensityMatrix, b: PurifiedDensityMatrix,
               budget: CompressionBudget | None = None) -> PurifiedDensityMatrix:
    """``rho_a + rho_b``; the purification dimension grows additively."""
    out = _comb_sum(a, b, block_mu=True)
    tr = None if a._trace is None or b._trace is None else a._trace + b._trace
    out = out.with_trace(tr)
    return out if budget is None else compress(out, budget)


# ---------------------------------------------------------------- compression

def _orthogonalize_chain(chain: Sequence[np.ndarray]) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Right-orthogonalize a chain; returns the chain and the factor for the link."""
    cores = list(chain)
    r = None
    for k in range(len(cores) - 1, -1, -1):
        c = cores[k]
        if r is not None:
            c = np.tensordot(c, r, axes=(2, 0))
        chi, d, chr_ = c.shape
        q, rr = _positive_qr(c.reshape(chi, d * chr_).T)
        cores[k] = q.T.reshape(-1, d, chr_)
        r = rr.T
    return tuple(cores), r  # link: new_q = r^T-contracted, shape (old_q, new_q)


def _absorb_link(core: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Backbone core ``(el, q, er)`` times ``r`` on the link leg."""
    return contract("aqc,qr->arc", core, r)


def compress(state: PurifiedDensityMatrix, budget: CompressionBudget, mu: bool = True) -> PurifiedDensityMatrix:
    """Truncate quantics bonds, then backbone bonds, then the ``mu`` bond.

    With ``mu=False`` the purification index is left untouched, so the
    result can still be added to networks sharing its ``mu`` basis.
    """
    lay = state.layout
    cores = list(state.backbone.cores)
    chains = list(state.chains)
    for m in range(lay.n_modes):
        chains[m], r = _orthogonalize_chain(chains[m])
        s = lay.site_of(m)
        cores[s] = _absorb_link(cores[s], r)
    bb = TensorTrain(tuple(cores))
    qpol = budget.quantics
    for m in range(lay.n_modes):
        s = lay.site_of(m)
        bb = canonicalize(bb, s)
        B = bb.cores[s]
        el, q, er = B.shape
        head = B.transpose(0, 2, 1).reshape(1, el * er, q)
        mode_tt = truncate(TensorTrain((head,) + tuple(chains[m])), qpol)
        new_head = mode_tt.cores[0].reshape(el, er, -1).transpose(0, 2, 1)
        chains[m] = tuple(mode_tt.cores[1:])
        cs = list(bb.cores)
        cs[s] = new_head
        bb = TensorTrain(tuple(cs), s)
    bb = truncate(bb, budget.backbone)
    out = PurifiedDensityMatrix(bb, tuple(chains), lay)
    return truncate_purity(out, budget) if mu else out


def truncate_purity(state: PurifiedDensityMatrix, budget: CompressionBudget) -> PurifiedDensityMatrix:
    """Drop the smallest eigenvalues of ``rho`` on the ``mu`` bond.

    Assumes every chain is right-orthogonal toward its link (true after
    :func:`compress`); the backbone is canonicalized here.
    """
    lay = state.layout
    p = lay.purification_position
    bb = canonicalize(state.backbone, p)
    P = bb.cores[p]
    el, mu, er = P.shape
    mat = P.transpose(0, 2, 1).reshape(el * er, mu)
    u, s, _ = svd_truncated(mat, budget.purification)
    newP = (u * s[None, :]).reshape(el, er, -1).transpose(0, 2, 1)
    cs = list(bb.cores)
    cs[p] = newP
    return PurifiedDensityMatrix(TensorTrain(tuple(cs), p), state.chains, lay, float(np.sum(s**2)))


# ---------------------------------------------------------------- operator application

def _apply_chain(chain: Sequence[np.ndarray], op: MatrixProductOperator) -> tuple[np.ndarray, ...]:
    if len(op) != len(chain):
        raise ValueError("operator length does not match the mode's bit count")
    return tuple(_apply_exact_cores(op.cores, chain))


def apply_operator(state: PurifiedDensityMatrix, op, budget: CompressionBudget | None = None,
                   mode: int | None = None, mu: bool = True) -> PurifiedDensityMatrix:
    """``Psi -> A Psi`` for an operator sum ``A`` (``rho -> A rho A^+``).

    Terms are stacked: each mode's chain becomes the direct sum of its
    distinct images, and the backbone bonds carry the term index.  The result
    is compressed when a budget is given (``mu`` as in :func:`compress`).
    """
    op = _as_operator(op, mode)
    lay = state.layout
    terms = [t for t in op if t.coef != 0]
    if not terms:
        raise ValueError("operator has no non-zero terms")
    for t in terms:
        for m, f in t.factors:
            if not 0 <= m < lay.n_modes:
                raise ValueError(f"operator acts on mode {m}, layout has {lay.n_modes}")
            if f.col_dims != (2,) * lay.bits[m] or f.row_dims != f.col_dims:
                raise ValueError(f"operator dims {f.col_dims} do not match mode {m}")
    K = len(terms)
    # distinct factors per mode; None is the identity
    selectors: list[list[int]] = []
    new_chains = []
    link_dims = []
    for m in range(lay.n_modes):
        distinct: list[MatrixProductOperator | None] = []
        ids: dict[int | None, int] = {}
        sel = []
        for t in terms:
            f = t.factor(m)
            key = None if f is None else id(f)
            if key not in ids:
                ids[key] = len(distinct)
                distinct.append(f)
            sel.append(ids[key])
        selectors.append(sel)
        images = [state.chains[m] if f is None else _apply_chain(state.chains[m], f) for f in distinct]
        chain = images[0]
        for img in images[1:]:
            r = len(chain)
            chain = tuple(_direct_sum(x, y, (True, False, k < r - 1)) for k, (x, y) in enumerate(zip(chain, img)))
        new_chains.append(chain)
        link_dims.append([img[0].shape[0] for img in images])
    n = lay.n_sites
    coefs = np.array([t.coef for t in terms], dtype=complex)
    cores = []
    for s, core in enumerate(state.backbone.cores):
        el, d, er = core.shape
        m = lay.mode_at(s)
        if m is None:
            offsets, width = [0] * K, d
        else:
            starts = np.concatenate([[0], np.cumsum(link_dims[m])])
            offsets = [int(starts[j]) for j in selectors[m]]
            width = int(starts[-1])
        L = 1 if s == 0 else el * K
        Rr = 1 if s == n - 1 else er * K
        out = np.zeros((L, width, Rr), dtype=complex)
        for k in range(K):
            blk = core * coefs[k] if s == 0 else core
            rs = slice(0, 1) if s == 0 else slice(k * el, (k + 1) * el)
            cs = slice(0, 1) if s == n - 1 else slice(k * er, (k + 1) * er)
            out[rs, offsets[k]:offsets[k] + d, cs] += blk
        cores.append(out)
    res = PurifiedDensityMatrix(TensorTrain(tuple(cores)), tuple(new_chains), lay)
    return res if budget is None else compress(res, budget, mu)


# ---------------------------------------------------------------- snapshots

def to_bytes(state: PurifiedDensityMatrix) -> bytes:
    buf = io.BytesIO()
    meta = {"kind": "purified", "layout": state.layout.header(),
            "chain_lengths": [len(c) for c in state.chains]}
    cores = list(state.backbone.cores) + [c for chain in state.chains for c in chain]
    write_cores(buf, cores, meta)
    return buf.getvalue()


def from_bytes(data: bytes) -> PurifiedDensityMatrix:
    cores, meta = read_cores(io.BytesIO(data))
    if meta.get("kind") != "purified":
        raise ValueError("container does not hold a purified state")
    lay = ModeLayout.from_header(meta["layout"])
    bb = TensorTrain(tuple(cores[: lay.n_sites]))
    rest = cores[lay.n_sites:]
    chains = []
    for r in meta["chain_lengths"]:
        chains.append(tuple(rest[:r]))
        rest = rest[r:]
    return PurifiedDensityMatrix(bb, tuple(chains), lay)


def save_snapshot(path: str | Path, state: PurifiedDensityMatrix) -> None:
    Path(path).write_bytes(to_bytes(state))


def load_snapshot(path: str | Path) -> PurifiedDensityMatrix:
    return from_bytes(Path(path).read_bytes())


def telemetry(state: PurifiedDensityMatrix) -> dict:
    """Bond maxima, element count, purity and trace."""
    g = gram(state)
    tr = float(np.real(np.trace(g)))
    return {
        "chi_q": state.chi_q,
        "chi_e": state.chi_e,
        "chi_mu": state.chi_mu,
        "elements": state.element_count,
        "purity": float(np.real(np.vdot(g, g)) / tr**2) if tr > 0 else 0.0,
        "trace": tr,
    }
