"""Dense-core tensor-train algebra.

Tensor trains (MPS/QTT) store one 3-index core per site, shaped
``(left_bond, phys, right_bond)``.  Matrix product operators store 4-index
cores shaped ``(left_bond, row, col, right_bond)``.  All data is complex128.

Site 0 is the most significant quantics bit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

__all__ = [
    "TensorTrain",
    "MatrixProductOperator",
    "TruncationPolicy",
    "ConvergenceWarning",
    "canonicalize",
    "truncate",
    "add",
    "linear_combination",
    "inner",
    "norm",
    "apply_mpo",
    "mpo_mul",
    "mpo_add",
    "mpo_linear_combination",
    "compress_mpo",
    "als_linear_solve",
    "as_terms",
    "apply_terms",
    "pad_bonds",
    "svd_truncated",
    "contract",
]

DEGENERACY_GAP = 1e-13
FIT_MAX_SWEEPS = 4
ALS_MAX_SWEEPS = 10
RIDGE = 1e-12

_PATHS: dict[tuple, list] = {}


def contract(subscripts: str, *operands: np.ndarray) -> np.ndarray:
    """``np.einsum`` with the contraction path cached per subscripts and shapes."""
    key = (subscripts,) + tuple(o.shape for o in operands)
    path = _PATHS.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *operands, optimize="optimal")[0]
        if len(_PATHS) > 20000:
            _PATHS.clear()
        _PATHS[key] = path
    return np.einsum(subscripts, *operands, optimize=path)


class ConvergenceWarning(RuntimeWarning):
    """Raised (as a warning) when an iterative routine hits its sweep cap."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Per-bond discarded-weight truncation rule.

    At each cut the dropped singular values satisfy
    ``sum(dropped**2) <= rel_tolerance**2 * sum(all**2)``.
    """

    rel_tolerance: float = 1e-8
    max_rank: int | None = None

    def __post_init__(self):
        if not self.rel_tolerance >= 0.0:
            raise ValueError("rel_tolerance must be non-negative")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be a positive integer")

    @classmethod
    def lossless(cls) -> "TruncationPolicy":
        return cls(0.0, None)


def _as_cores(cores: Iterable[np.ndarray], ndim: int) -> tuple[np.ndarray, ...]:
    out = []
    for c in cores:
        c = np.asarray(c, dtype=np.complex128)
        if c.ndim != ndim:
            raise ValueError(f"expected {ndim}-index cores, got shape {c.shape}")
        out.append(c)
    if not out:
        raise ValueError("a tensor train needs at least one core")
    for i in range(len(out) - 1):
        if out[i].shape[-1] != out[i + 1].shape[0]:
            raise ValueError(
                f"bond mismatch between sites {i} and {i + 1}: "
                f"{out[i].shape[-1]} != {out[i + 1].shape[0]}"
            )
    if out[0].shape[0] != 1 or out[-1].shape[-1] != 1:
        raise ValueError("boundary bonds must have dimension 1")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """Tensor train with cores ``(chi_left, d, chi_right)``."""

    cores: tuple[np.ndarray, ...]
    center: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "cores", _as_cores(self.cores, 3))
        if self.center is not None and not 0 <= self.center < len(self.cores):
            raise ValueError("canonical center out of range")

    def __len__(self) -> int:
        return len(self.cores)

    @property
    def physical_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def bonds(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores[:-1])

    @property
    def max_bond(self) -> int:
        return max(self.bonds, default=1)

    @property
    def size(self) -> int:
        return sum(c.size for c in self.cores)

    @classmethod
    def product(cls, vectors: Sequence[np.ndarray]) -> "TensorTrain":
        """Rank-1 train from one local vector per site."""
        return cls(tuple(np.asarray(v, dtype=complex).reshape(1, -1, 1) for v in vectors))

    @classmethod
    def basis_state(cls, bits: Sequence[int], dims: Sequence[int] | None = None) -> "TensorTrain":
        dims = dims or [2] * len(bits)
        vecs = []
        for b, d in zip(bits, dims):
            v = np.zeros(d, dtype=complex)
            v[b] = 1.0
            vecs.append(v)
        return cls.product(vecs)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "TensorTrain":
        return cls(tuple(np.zeros((1, d, 1), dtype=complex) for d in dims))

    @classmethod
    def random(cls, dims: Sequence[int], rank: int, rng: np.random.Generator) -> "TensorTrain":
        cores = []
        chi = 1
        for i, d in enumerate(dims):
            right = 1 if i == len(dims) - 1 else rank
            shape = (chi, d, right)
            cores.append(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
            chi = right
        return cls(tuple(cores))

    def scale(self, factor: complex) -> "TensorTrain":
        cores = list(self.cores)
        k = self.center if self.center is not None else 0
        cores[k] = cores[k] * factor
        return TensorTrain(tuple(cores), self.center)

    def __mul__(self, factor: complex) -> "TensorTrain":
        return self.scale(factor)

    __rmul__ = __mul__

    def conj(self) -> "TensorTrain":
        return TensorTrain(tuple(c.conj() for c in self.cores), self.center)

    def to_dense(self) -> np.ndarray:
        """Full vector, site 0 most significant.  Testing aid only."""
        if np.prod(self.physical_dims, dtype=float) > 2**24:
            raise ValueError("dense reconstruction too large")
        v = self.cores[0].reshape(-1, self.cores[0].shape[-1])
        for c in self.cores[1:]:
            v = (v @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[-1])
        return v.reshape(-1)

    def evaluate(self, indices: np.ndarray) -> np.ndarray:
        """Amplitudes at a batch of index tuples, shape ``(n, L)``."""
        idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        acc = self.cores[0][0][idx[:, 0]]  # (n, chi)
        for k in range(1, len(self.cores)):
            acc = contract("na,anb->nb", acc, self.cores[k][:, idx[:, k], :])
        return acc[:, 0]

    @classmethod
    def from_dense(cls, vec: np.ndarray, dims: Sequence[int],
                   policy: TruncationPolicy | None = None) -> "TensorTrain":
        """TT-SVD of a dense vector."""
        policy = policy or TruncationPolicy.lossless()
        vec = np.asarray(vec, dtype=complex)
        cores = []
        rest = vec.reshape(1, -1)
        chi = 1
        for d in dims[:-1]:
            mat = rest.reshape(chi * d, -1)
            u, s, vh = svd_truncated(mat, policy)
            cores.append(u.reshape(chi, d, -1))
            chi = u.shape[1]
            rest = s[:, None] * vh
        cores.append(rest.reshape(chi, dims[-1], 1))
        return cls(tuple(cores), len(dims) - 1)


@dataclass(frozen=True, eq=False)
class MatrixProductOperator:
    """Operator with cores ``(chi_left, row, col, chi_right)``."""

    cores: tuple[np.ndarray, ...]
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cores", _as_cores(self.cores, 4))

    def __len__(self) -> int:
        return len(self.cores)

    @property
    def row_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def bonds(self) -> tuple[int, ...]:
        return tuple(c.shape[3] for c in self.cores[:-1])

    @property
    def max_bond(self) -> int:
        return max(self.bonds, default=1)

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "MatrixProductOperator":
        return cls(tuple(np.eye(d, dtype=complex).reshape(1, d, d, 1) for d in dims), "identity")

    @classmethod
    def product(cls, matrices: Sequence[np.ndarray]) -> "MatrixProductOperator":
        return cls(tuple(np.asarray(m, dtype=complex)[None, :, :, None] for m in matrices))

    def adjoint(self) -> "MatrixProductOperator":
        return MatrixProductOperator(tuple(c.transpose(0, 2, 1, 3).conj() for c in self.cores))

    def scale(self, factor: complex) -> "MatrixProductOperator":
        cores = list(self.cores)
        cores[0] = cores[0] * factor
        return MatrixProductOperator(tuple(cores))

    def __mul__(self, factor: complex) -> "MatrixProductOperator":
        return self.scale(factor)

    __rmul__ = __mul__

    def as_tt(self) -> TensorTrain:
        """View with fused (row, col) physical legs."""
        return TensorTrain(tuple(c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3])
                                 for c in self.cores))

    @classmethod
    def from_tt(cls, tt: TensorTrain, row_dims: Sequence[int],
                col_dims: Sequence[int]) -> "MatrixProductOperator":
        return cls(tuple(c.reshape(c.shape[0], r, k, c.shape[2])
                         for c, r, k in zip(tt.cores, row_dims, col_dims)))

    def to_dense(self) -> np.ndarray:
        """Full matrix.  Testing aid only."""
        rows = int(np.prod(self.row_dims))
        cols = int(np.prod(self.col_dims))
        if rows * cols > 2**26:
            raise ValueError("dense reconstruction too large")
        t = self.cores[0][0]  # (r, c, chi)
        for c in self.cores[1:]:
            t = contract("xya,aijb->xiyjb", t, c)
            t = t.reshape(t.shape[0] * t.shape[1], t.shape[2] * t.shape[3], t.shape[4])
        return t[:, :, 0]

    def frobenius_norm(self) -> float:
        return norm(self.as_tt())

    def diagonal(self) -> TensorTrain:
        """Train of the diagonal entries (square operators)."""
        return TensorTrain(tuple(contract("assb->asb", c) for c in self.cores))


# ---------------------------------------------------------------- factorizations

def _positive_qr(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with non-negative real diagonal in R."""
    q, r = np.linalg.qr(mat)
    d = np.diagonal(r)
    ph = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1.0), 1.0)
    q = q * ph[None, :]
    r = ph.conj()[:, None] * r
    return q, r


def _svd(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        return sla.svd(mat, full_matrices=False, lapack_driver="gesvd")


def _keep_count(s: np.ndarray, policy: TruncationPolicy) -> int:
    n = s.size
    if n == 0:
        return 0
    total = float(np.sum(s**2))
    if total == 0.0:
        return 1
    # tail[k] = sum of s[k:]**2
    tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]])
    budget = policy.rel_tolerance**2 * total
    keep = int(np.argmax(tail <= budget))
    keep = max(keep, 1)
    # never split a degenerate cluster at the tolerance boundary: keep it whole
    while 0 < keep < n and s[keep - 1] - s[keep] <= DEGENERACY_GAP * s[keep - 1]:
        keep += 1
    if policy.max_rank is not None and keep > policy.max_rank:
        keep = policy.max_rank
        # at a hard cap drop the whole cluster instead
        while 1 < keep < n and s[keep - 1] - s[keep] <= DEGENERACY_GAP * s[keep - 1]:
            keep -= 1
    return keep


def svd_truncated(mat: np.ndarray, policy: TruncationPolicy):
    """Truncated SVD ``mat ~ u @ diag(s) @ vh`` under ``policy``."""
    u, s, vh = _svd(mat)
    k = _keep_count(s, policy)
    return u[:, :k], s[:k], vh[:k]


# ---------------------------------------------------------------- canonical forms

def _left_orthogonalize(cores: list[np.ndarray], i: int) -> None:
    c = cores[i]
    chi, d, chr_ = c.shape
    q, r = _positive_qr(c.reshape(chi * d, chr_))
    cores[i] = q.reshape(chi, d, -1)
    cores[i + 1] = np.tensordot(r, cores[i + 1], axes=(1, 0))


def _right_orthogonalize(cores: list[np.ndarray], i: int) -> None:
    c = cores[i]
    chi, d, chr_ = c.shape
    q, r = _positive_qr(c.reshape(chi, d * chr_).T)
    cores[i] = q.T.reshape(-1, d, chr_)
    cores[i - 1] = np.tensordot(cores[i - 1], r.T, axes=(2, 0))


def canonicalize(tt: TensorTrain, center: int) -> TensorTrain:
    """Mixed-canonical form with orthogonality center ``center``."""
    n = len(tt)
    if not 0 <= center < n:
        raise IndexError(f"center {center} out of range for {n} sites")
    cores = list(tt.cores)
    if tt.center is None:
        lo, hi = 0, n - 1
    else:
        lo = hi = tt.center
    for i in range(min(lo, center), center):
        _left_orthogonalize(cores, i)
    for i in range(max(hi, center), center, -1):
        _right_orthogonalize(cores, i)
    return TensorTrain(tuple(cores), center)


def norm(tt: TensorTrain) -> float:
    """2-norm, computed from a canonical form."""
    if tt.center is None:
        tt = canonicalize(tt, len(tt) - 1)
    return float(np.linalg.norm(tt.cores[tt.center]))


def truncate(tt: TensorTrain, policy: TruncationPolicy) -> TensorTrain:
    """Right-to-left SVD sweep after left canonicalization; returns center 0."""
    n = len(tt)
    tt = canonicalize(tt, n - 1)
    cores = list(tt.cores)
    for i in range(n - 1, 0, -1):
        c = cores[i]
        chi, d, chr_ = c.shape
        u, s, vh = svd_truncated(c.reshape(chi, d * chr_), policy)
        cores[i] = vh.reshape(-1, d, chr_)
        cores[i - 1] = np.tensordot(cores[i - 1], u * s[None, :], axes=(2, 0))
    return TensorTrain(tuple(cores), 0)


def pad_bonds(tt: TensorTrain, floor: int) -> TensorTrain:
    """Zero-pad bonds up to ``min(floor, largest attainable)``; tensor unchanged."""
    dims = tt.physical_dims
    n = len(dims)
    target = []
    for b in range(n - 1):
        left = float(np.prod(dims[: b + 1], dtype=float))
        right = float(np.prod(dims[b + 1:], dtype=float))
        target.append(int(max(tt.bonds[b], min(floor, left, right))))
    chis = [1] + target + [1]
    cores = []
    for i, c in enumerate(tt.cores):
        new = np.zeros((chis[i], c.shape[1], chis[i + 1]), dtype=complex)
        new[: c.shape[0], :, : c.shape[2]] = c
        cores.append(new)
    return TensorTrain(tuple(cores))


# ---------------------------------------------------------------- sums and products

def _check_dims(a: Sequence[int], b: Sequence[int]) -> None:
    if tuple(a) != tuple(b):
        raise ValueError(f"dimension mismatch: {tuple(a)} vs {tuple(b)}")


def linear_combination(terms: Sequence[tuple[complex, TensorTrain]],
                       policy: TruncationPolicy | None = None) -> TensorTrain:
    """``sum_k c_k * tt_k`` by block-diagonal cores, optionally truncated."""
    if not terms:
        raise ValueError("empty linear combination")
    dims = terms[0][1].physical_dims
    for _, t in terms:
        _check_dims(dims, t.physical_dims)
    n = len(dims)
    if n == 1:
        core = sum(c * t.cores[0] for c, t in terms)
        out = TensorTrain((core,))
        return out if policy is None else truncate(out, policy)
    cores = []
    for i in range(n):
        blocks = [t.cores[i] for _, t in terms]
        if i == 0:
            core = np.concatenate([c * b for (c, _), b in zip(terms, blocks)], axis=2)
        elif i == n - 1:
            core = np.concatenate(blocks, axis=0)
        else:
            left = sum(b.shape[0] for b in blocks)
            right = sum(b.shape[2] for b in blocks)
            core = np.zeros((left, dims[i], right), dtype=complex)
            lo = ro = 0
            for b in blocks:
                core[lo:lo + b.shape[0], :, ro:ro + b.shape[2]] = b
                lo += b.shape[0]
                ro += b.shape[2]
        cores.append(core)
    out = TensorTrain(tuple(cores))
    return out if policy is None else truncate(out, policy)


def add(a: TensorTrain, b: TensorTrain, policy: TruncationPolicy | None = None) -> TensorTrain:
    """``a + b``; bonds are ``chi_a + chi_b`` unless a policy is given."""
    return linear_combination([(1.0, a), (1.0, b)], policy)


def inner(a: TensorTrain, b: TensorTrain) -> complex:
    """``<a|b>``, conjugate-linear in ``a``."""
    _check_dims(a.physical_dims, b.physical_dims)
    env = np.ones((1, 1), dtype=complex)
    for ca, cb in zip(a.cores, b.cores):
        env = contract("ab,asc,bsd->cd", env, ca.conj(), cb)
    return complex(env[0, 0])


def _apply_exact_cores(op_cores: Sequence[np.ndarray],
                       cores: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Exact MPO x MPS contraction on raw cores; bonds multiply."""
    out = []
    for w, a in zip(op_cores, cores):
        c = np.tensordot(w, a, axes=([2], [1])).transpose(3, 0, 1, 4, 2)
        sh = c.shape
        out.append(c.reshape(sh[0] * sh[1], sh[2], sh[3] * sh[4]))
    return out


def _zipup(op: MatrixProductOperator, tt: TensorTrain, policy: TruncationPolicy) -> TensorTrain:
    inner_policy = TruncationPolicy(
        policy.rel_tolerance / 10.0,
        None if policy.max_rank is None else 2 * policy.max_rank,
    )
    n = len(tt)
    carry = np.ones((1, 1, 1), dtype=complex)  # (new, w, a)
    cores = []
    for i in range(n):
        t = contract("nwa,wstv,atb->nsvb", carry, op.cores[i], tt.cores[i])
        nl, d, v, b = t.shape
        if i == n - 1:
            cores.append(t.reshape(nl, d, v * b))
            break
        u, s, vh = svd_truncated(t.reshape(nl * d, v * b), inner_policy)
        cores.append(u.reshape(nl, d, -1))
        carry = (s[:, None] * vh).reshape(-1, v, b)
    return truncate(TensorTrain(tuple(cores)), policy)


def _fit(op: MatrixProductOperator, tt: TensorTrain, guess: TensorTrain,
         policy: TruncationPolicy, max_sweeps: int = FIT_MAX_SWEEPS) -> TensorTrain:
    """Single-site variational fitting of ``op @ tt`` starting from ``guess``."""
    n = len(tt)
    if n == 1:
        return TensorTrain(tuple(_apply_exact_cores(op.cores, tt.cores)))
    x = canonicalize(guess, 0)
    cores = list(x.cores)
    # environments <x| op |tt>: left[i] covers sites < i, right[i] sites > i
    right: list[np.ndarray | None] = [None] * (n + 1)
    left: list[np.ndarray | None] = [None] * (n + 1)
    right[n] = np.ones((1, 1, 1), dtype=complex)
    left[0] = np.ones((1, 1, 1), dtype=complex)

    def grow_right(i):
        right[i] = contract("xsy,wstv,atb,yvb->xwa", cores[i].conj(), op.cores[i],
                             tt.cores[i], right[i + 1])

    def grow_left(i):
        left[i + 1] = contract("xwa,xsy,wstv,atb->yvb", left[i], cores[i].conj(),
                                op.cores[i], tt.cores[i])

    def local(i):
        return contract("xwa,wstv,atb,yvb->xsy", left[i], op.cores[i], tt.cores[i],
                         right[i + 1])

    for i in range(n - 1, 0, -1):
        grow_right(i)
    prev = None
    converged = False
    for _ in range(max_sweeps):
        for i in range(n - 1):
            c = local(i)
            chi, d, chr_ = c.shape
            q, r = _positive_qr(c.reshape(chi * d, chr_))
            cores[i] = q.reshape(chi, d, -1)
            grow_left(i)
        for i in range(n - 1, 0, -1):
            c = local(i)
            chi, d, chr_ = c.shape
            q, r = _positive_qr(c.reshape(chi, d * chr_).T)
            cores[i] = q.T.reshape(-1, d, chr_)
            grow_right(i)
        cores[0] = local(0)
        val = float(np.linalg.norm(cores[0]))
        if prev is not None and abs(val - prev) <= max(policy.rel_tolerance, 1e-15) * max(val, 1e-300):
            converged = True
            break
        prev = val
    if not converged and max_sweeps > 1:
        warnings.warn(f"fit did not converge in {max_sweeps} sweeps", ConvergenceWarning, stacklevel=3)
    return TensorTrain(tuple(cores), 0)


def apply_mpo(op: MatrixProductOperator, tt: TensorTrain, method: str = "zipup",
              policy: TruncationPolicy | None = None) -> TensorTrain:
    """Compressed ``op @ tt`` by zip-up or by variational fitting."""
    _check_dims(op.col_dims, tt.physical_dims)
    policy = policy or TruncationPolicy()
    if method == "exact":
        return TensorTrain(tuple(_apply_exact_cores(op.cores, tt.cores)))
    seed = _zipup(op, tt, policy)
    if method == "zipup":
        return seed
    if method == "fit":
        return _fit(op, tt, seed, policy)
    raise ValueError(f"unknown method {method!r}")


def mpo_mul(a: MatrixProductOperator, b: MatrixProductOperator,
            policy: TruncationPolicy | None = None) -> MatrixProductOperator:
    """Operator product ``a @ b``, compressed if a policy is given."""
    _check_dims(a.col_dims, b.row_dims)
    cores = []
    for wa, wb in zip(a.cores, b.cores):
        c = contract("astb,ctud->acsubd", wa, wb)
        sh = c.shape
        cores.append(c.reshape(sh[0] * sh[1], sh[2], sh[3], sh[4] * sh[5]))
    out = MatrixProductOperator(tuple(cores))
    return out if policy is None else compress_mpo(out, policy)


def compress_mpo(op: MatrixProductOperator, policy: TruncationPolicy) -> MatrixProductOperator:
    """SVD compression in the Frobenius norm."""
    return MatrixProductOperator.from_tt(truncate(op.as_tt(), policy), op.row_dims, op.col_dims)


def mpo_linear_combination(terms: Sequence[tuple[complex, MatrixProductOperator]],
                           policy: TruncationPolicy | None = None) -> MatrixProductOperator:
    """``sum_k c_k * op_k``."""
    rows, cols = terms[0][1].row_dims, terms[0][1].col_dims
    for _, m in terms:
        _check_dims(rows, m.row_dims)
        _check_dims(cols, m.col_dims)
    tt = linear_combination([(c, m.as_tt()) for c, m in terms], policy)
    return MatrixProductOperator.from_tt(tt, rows, cols)


def mpo_add(a: MatrixProductOperator, b: MatrixProductOperator,
            policy: TruncationPolicy | None = None) -> MatrixProductOperator:
    return mpo_linear_combination([(1.0, a), (1.0, b)], policy)


# ---------------------------------------------------------------- linear solver

def _solve_local(matvec, rhs: np.ndarray, guess: np.ndarray, dense_builder) -> tuple[np.ndarray, bool]:
    """Solve a local Galerkin problem; ridge-regularize if singular."""
    n = rhs.size
    if n <= 1500:
        mat = dense_builder()
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                return sla.solve(mat, rhs, check_finite=False), False
            except (np.linalg.LinAlgError, sla.LinAlgWarning):
                pass
        scale = max(np.linalg.norm(mat, 1), 1e-300)
        reg = mat + RIDGE * scale * np.eye(n)
        return np.linalg.solve(reg, rhs), True
    lin = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
    sol, info = spla.gmres(lin, rhs, x0=guess, rtol=1e-14, atol=0.0, restart=min(n, 60), maxiter=50)
    return sol, info != 0


OperatorTerms = Sequence[tuple[complex, MatrixProductOperator]]


def as_terms(op: MatrixProductOperator | OperatorTerms) -> list[tuple[complex, MatrixProductOperator]]:
    """Normalize an operator or a weighted operator list to a term list."""
    if isinstance(op, MatrixProductOperator):
        return [(1.0, op)]
    terms = [(complex(c), m) for c, m in op]
    if not terms:
        raise ValueError("empty operator sum")
    return terms


def apply_terms(op: MatrixProductOperator | OperatorTerms, tt: TensorTrain,
                policy: TruncationPolicy | None = None, method: str = "zipup") -> TensorTrain:
    """``sum_j c_j op_j @ tt``, each product compressed, then summed."""
    policy = policy or TruncationPolicy()
    inner_policy = TruncationPolicy(policy.rel_tolerance / 10.0, policy.max_rank)
    parts = [(c, apply_mpo(m, tt, method, inner_policy)) for c, m in as_terms(op)]
    return linear_combination(parts, policy)


def als_linear_solve(A: MatrixProductOperator | OperatorTerms, b: TensorTrain, x0: TensorTrain,
                     policy: TruncationPolicy | None = None,
                     max_sweeps: int = ALS_MAX_SWEEPS) -> tuple[TensorTrain, float]:
    """Two-site alternating solve of ``A x = b`` (Galerkin projection).

    ``A`` is an MPO or a weighted list of MPOs whose sum is never formed.
    Returns the solution and the achieved relative residual
    ``||A x - b|| / ||b||``.
    """
    policy = policy or TruncationPolicy()
    terms = as_terms(A)
    for _, m in terms:
        _check_dims(m.col_dims, x0.physical_dims)
        _check_dims(m.row_dims, b.physical_dims)
    n = len(b)
    bnorm = norm(b)
    if bnorm == 0.0:
        return TensorTrain.zeros(b.physical_dims), 0.0
    tol = max(policy.rel_tolerance, 1e-15)
    tight = TruncationPolicy(1e-15)

    def residual(x):
        parts = [(c, apply_mpo(m, x, "zipup", tight)) for c, m in terms]
        return norm(linear_combination(parts + [(-1.0, b)])) / bnorm

    if n == 1:
        mat = sum(c * m.cores[0][0, :, :, 0] for c, m in terms)
        x = np.linalg.solve(mat, b.cores[0][0, :, 0])
        out = TensorTrain((x.reshape(1, -1, 1),), 0)
        return out, residual(out)

    x = canonicalize(x0, 0)
    cores = list(x.cores)
    nt = len(terms)
    la = [[None] * (n + 1) for _ in range(nt)]
    ra = [[None] * (n + 1) for _ in range(nt)]
    lb: list = [None] * (n + 1)
    rb: list = [None] * (n + 1)
    for j in range(nt):
        la[j][0] = np.ones((1, 1, 1), dtype=complex)
        ra[j][n] = np.ones((1, 1, 1), dtype=complex)
    lb[0] = np.ones((1, 1), dtype=complex)
    rb[n] = np.ones((1, 1), dtype=complex)

    def grow_left(i):
        c = cores[i]
        for j, (_, m) in enumerate(terms):
            la[j][i + 1] = contract("xwa,xsy,wstv,atb->yvb", la[j][i], c.conj(), m.cores[i], c)
        lb[i + 1] = contract("xa,xsy,asb->yb", lb[i], c.conj(), b.cores[i])

    def grow_right(i):
        c = cores[i]
        for j, (_, m) in enumerate(terms):
            ra[j][i] = contract("xsy,wstv,atb,yvb->xwa", c.conj(), m.cores[i], c, ra[j][i + 1])
        rb[i] = contract("xsy,asb,yb->xa", c.conj(), b.cores[i], rb[i + 1])

    for i in range(n - 1, 0, -1):
        grow_right(i)

    flagged = False
    res = np.inf

    def solve_pair(i, going_right):
        nonlocal flagged
        rhs = contract("xa,asb,btc,yc->xsty", lb[i], b.cores[i], b.cores[i + 1], rb[i + 2])
        shape = rhs.shape
        guess = contract("asb,btc->astc", cores[i], cores[i + 1]).reshape(-1)

        def matvec(v):
            v = v.reshape(shape)
            out = np.zeros(shape, dtype=complex)
            for j, (c, m) in enumerate(terms):
                out += c * contract("xwa,wsSv,vtTu,yub,aSTb->xsty", la[j][i], m.cores[i], m.cores[i + 1],
                                     ra[j][i + 2], v)
            return out.reshape(-1)

        def dense():
            mat = np.zeros((rhs.size, rhs.size), dtype=complex)
            for j, (c, m) in enumerate(terms):
                blk = contract("xwa,wsSv,vtTu,yub->xstyaSTb", la[j][i], m.cores[i], m.cores[i + 1],
                                ra[j][i + 2])
                mat += c * blk.reshape(rhs.size, rhs.size)
            return mat

        sol, bad = _solve_local(matvec, rhs.reshape(-1), guess, dense)
        flagged |= bad
        chi, d1, d2, chr_ = shape
        u, s, vh = svd_truncated(sol.reshape(chi * d1, d2 * chr_), policy)
        if going_right:
            cores[i] = u.reshape(chi, d1, -1)
            cores[i + 1] = (s[:, None] * vh).reshape(-1, d2, chr_)
        else:
            cores[i] = (u * s[None, :]).reshape(chi, d1, -1)
            cores[i + 1] = vh.reshape(-1, d2, chr_)

    for _ in range(max_sweeps):
        for i in range(n - 1):
            solve_pair(i, True)
            grow_left(i)
        for i in range(n - 2, -1, -1):
            solve_pair(i, False)
            grow_right(i + 1)
        res = residual(TensorTrain(tuple(cores), 0))
        if res <= tol:
            break
    if flagged:
        warnings.warn("ALS local problem was singular; ridge regularization applied",
                      ConvergenceWarning, stacklevel=2)
    if res > tol:
        warnings.warn(f"ALS reached {max_sweeps} sweeps with residual {res:.3e}",
                      ConvergenceWarning, stacklevel=2)
    return TensorTrain(tuple(cores), 0), float(res)
