"""Quantics tensor trains and purified comb networks for bosonic open-system dynamics."""
from __future__ import annotations

import os as _os

# COMBQTT_THREADS caps the BLAS thread pools; it must be set before numpy loads.
if _os.environ.get("COMBQTT_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["COMBQTT_THREADS"])

from .lindblad import KrausBranch, KrausMap, LindbladModel, Polynomial, evolve_lindblad  # noqa: E402
from .observables import WignerGrid, wigner  # noqa: E402
from .operators import OperatorSum, ProductTerm, local  # noqa: E402
from .purified import (  # noqa: E402
    CompressionBudget,
    ModeLayout,
    PurifiedDensityMatrix,
    apply_operator,
    compress,
    expectation,
    from_pure_product,
    matrix_add,
    purity,
    reduced_density_matrix,
    vector_add,
)
from .schrodinger import TimeDependentHamiltonian, evolve  # noqa: E402
from .tt import MatrixProductOperator, TensorTrain, TruncationPolicy, apply_mpo  # noqa: E402

__all__ = [
    "TensorTrain",
    "MatrixProductOperator",
    "TruncationPolicy",
    "apply_mpo",
    "TimeDependentHamiltonian",
    "evolve",
    "OperatorSum",
    "ProductTerm",
    "local",
    "ModeLayout",
    "CompressionBudget",
    "PurifiedDensityMatrix",
    "from_pure_product",
    "apply_operator",
    "compress",
    "vector_add",
    "matrix_add",
    "expectation",
    "purity",
    "reduced_density_matrix",
    "LindbladModel",
    "KrausMap",
    "KrausBranch",
    "Polynomial",
    "evolve_lindblad",
    "WignerGrid",
    "wigner",
]
