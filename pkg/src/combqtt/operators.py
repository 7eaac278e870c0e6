"""Formal sums of products of single-mode MPOs.

An :class:`OperatorSum` is ``sum_k c_k prod_alpha O_{k, alpha}`` where each
factor acts on one mode's quantics chain and missing modes carry the
identity.  Products are formed mode by mode with :func:`mpo_mul`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .tt import MatrixProductOperator, TruncationPolicy, compress_mpo, mpo_linear_combination, mpo_mul

__all__ = ["ProductTerm", "OperatorSum", "local"]

PRODUCT_POLICY = TruncationPolicy(1e-14)


@dataclass(frozen=True, eq=False)
class ProductTerm:
    coef: complex
    factors: tuple[tuple[int, MatrixProductOperator], ...] = ()

    def __post_init__(self):
        modes = [m for m, _ in self.factors]
        if len(set(modes)) != len(modes):
            raise ValueError("a product term has at most one factor per mode")
        object.__setattr__(self, "factors", tuple(sorted(self.factors, key=lambda x: x[0])))
        object.__setattr__(self, "coef", complex(self.coef))

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(m for m, _ in self.factors)

    def factor(self, mode: int) -> MatrixProductOperator | None:
        for m, op in self.factors:
            if m == mode:
                return op
        return None

    def key(self) -> tuple:
        return tuple((m, id(op)) for m, op in self.factors)


class OperatorSum:
    """Immutable weighted sum of product terms."""

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[ProductTerm] = ()):
        self.terms: tuple[ProductTerm, ...] = tuple(terms)

    # construction -------------------------------------------------------
    @classmethod
    def identity(cls, coef: complex = 1.0) -> "OperatorSum":
        return cls([ProductTerm(coef)])

    @classmethod
    def product(cls, factors: Mapping[int, MatrixProductOperator], coef: complex = 1.0) -> "OperatorSum":
        return cls([ProductTerm(coef, tuple(factors.items()))])

    # algebra ------------------------------------------------------------
    def __add__(self, other: "OperatorSum | complex") -> "OperatorSum":
        if not isinstance(other, OperatorSum):
            other = OperatorSum.identity(other)
        return OperatorSum(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "OperatorSum":
        return self.scale(-1.0)

    def __sub__(self, other: "OperatorSum | complex") -> "OperatorSum":
        if not isinstance(other, OperatorSum):
            other = OperatorSum.identity(other)
        return self + (-other)

    def __rsub__(self, other: complex) -> "OperatorSum":
        return OperatorSum.identity(other) - self

    def scale(self, c: complex) -> "OperatorSum":
        return OperatorSum(ProductTerm(t.coef * c, t.factors) for t in self.terms)

    def __mul__(self, other: "OperatorSum | complex") -> "OperatorSum":
        if isinstance(other, OperatorSum):
            return self.matmul(other)
        return self.scale(other)

    def __rmul__(self, other: complex) -> "OperatorSum":
        return self.scale(other)

    def __matmul__(self, other: "OperatorSum") -> "OperatorSum":
        return self.matmul(other)

    def matmul(self, other: "OperatorSum", policy: TruncationPolicy = PRODUCT_POLICY) -> "OperatorSum":
        """Operator product; factors on the same mode are multiplied."""
        cache: dict[tuple[int, int], MatrixProductOperator] = {}
        out = []
        for ta in self.terms:
            for tb in other.terms:
                factors = {}
                for m in sorted(set(ta.modes) | set(tb.modes)):
                    fa, fb = ta.factor(m), tb.factor(m)
                    if fa is None:
                        factors[m] = fb
                    elif fb is None:
                        factors[m] = fa
                    else:
                        k = (id(fa), id(fb))
                        if k not in cache:
                            cache[k] = mpo_mul(fa, fb, policy)
                        factors[m] = cache[k]
                out.append(ProductTerm(ta.coef * tb.coef, tuple(factors.items())))
        return OperatorSum(out)

    def adjoint(self) -> "OperatorSum":
        cache: dict[int, MatrixProductOperator] = {}
        out = []
        for t in self.terms:
            factors = []
            for m, op in t.factors:
                if id(op) not in cache:
                    cache[id(op)] = op.adjoint()
                factors.append((m, cache[id(op)]))
            out.append(ProductTerm(np.conj(t.coef), tuple(factors)))
        return OperatorSum(out)

    def simplify(self, policy: TruncationPolicy = PRODUCT_POLICY, merge_local: bool = True) -> "OperatorSum":
        """Combine identical products; optionally fold single-mode terms per mode."""
        merged: dict[tuple, list] = {}
        for t in self.terms:
            k = t.key()
            if k in merged:
                merged[k][0] += t.coef
            else:
                merged[k] = [t.coef, t.factors]
        terms = [ProductTerm(c, f) for c, f in merged.values() if c != 0]
        if not merge_local:
            return OperatorSum(terms)
        ident = sum((t.coef for t in terms if not t.factors), 0.0)
        by_mode: dict[int, list[tuple[complex, MatrixProductOperator]]] = {}
        rest = []
        for t in terms:
            if len(t.factors) == 1:
                by_mode.setdefault(t.factors[0][0], []).append((t.coef, t.factors[0][1]))
            elif t.factors:
                rest.append(t)
        out = []
        for m in sorted(by_mode):
            items = by_mode[m]
            if ident != 0:
                ops = items[0][1]
                items = items + [(ident, MatrixProductOperator.identity(ops.col_dims))]
                ident = 0.0
            if len(items) == 1:
                out.append(ProductTerm(items[0][0], ((m, items[0][1]),)))
            else:
                op = compress_mpo(mpo_linear_combination(items), policy)
                out.append(ProductTerm(1.0, ((m, op),)))
        if ident != 0:
            out.insert(0, ProductTerm(ident))
        return OperatorSum(out + rest)

    # inspection ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def modes(self) -> set[int]:
        return {m for t in self.terms for m in t.modes}

    def to_dense(self, dims: list[int]) -> np.ndarray:
        """Dense matrix on modes with ``2**R`` levels each (mode 0 leftmost)."""
        total = int(np.prod(dims))
        out = np.zeros((total, total), dtype=complex)
        for t in self.terms:
            mat = np.ones((1, 1), dtype=complex)
            for m, d in enumerate(dims):
                f = t.factor(m)
                mat = np.kron(mat, np.eye(d) if f is None else f.to_dense())
            out += t.coef * mat
        return out


def local(mode: int, op: MatrixProductOperator, coef: complex = 1.0) -> OperatorSum:
    """Single-mode operator as a sum with one term."""
    return OperatorSum([ProductTerm(coef, ((mode, op),))])
