"""Phase-space and bookkeeping observables.

The Wigner function uses the displaced-parity expansion

    W(alpha) = (2/pi) sum_{m,n} rho_{mn} <n| D(alpha) P D(alpha)^+ |m>,

whose matrix elements are associated Laguerre polynomials.  They are
evaluated with a three-term recurrence on the normalized functions
``(-1)^m sqrt(m!/(m+k)!) x^{k/2} e^{-x/2} L_m^{(k)}(x)`` (``x = 4|alpha|^2``),
which stay bounded by one, so no factorials or large powers appear.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .purified import PurifiedDensityMatrix, reduced_density_matrix, telemetry

__all__ = [
    "WignerGrid",
    "wigner",
    "coherent_wigner",
    "telemetry",
    "format_columns",
    "write_columns",
    "write_json",
]

MAX_WIGNER_DIM = 4096


@dataclass
class WignerGrid:
    """Signed Wigner values on a rectangular grid; ``values[i, j]`` is at ``(re[j], im[i])``."""

    re: np.ndarray
    im: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def cell_area(self) -> float:
        dre = self.re[1] - self.re[0] if len(self.re) > 1 else 1.0
        dim = self.im[1] - self.im[0] if len(self.im) > 1 else 1.0
        return float(dre * dim)

    def integral(self) -> float:
        """Riemann sum of ``W dA``; equals the trace for states inside the grid."""
        return float(np.sum(self.values) * self.cell_area)

    def metadata(self) -> dict:
        return {
            "re_range": [float(self.re[0]), float(self.re[-1])],
            "im_range": [float(self.im[0]), float(self.im[-1])],
            "shape": [len(self.im), len(self.re)],
            "integral": self.integral(),
            "min": float(np.min(self.values)),
            "max": float(np.max(self.values)),
            "columns": ["re", "im", "W"],
        }

    def write(self, path: str | Path) -> Path:
        """Columnar ``re im W`` text plus a ``.json`` metadata sidecar."""
        path = Path(path)
        rr, ii = np.meshgrid(self.re, self.im)
        write_columns(path, [("re", rr.ravel()), ("im", ii.ravel()), ("W", self.values.ravel())])
        write_json(path.with_suffix(path.suffix + ".json"), self.metadata())
        return path


def _grid_axes(re_range, im_range, resolution) -> tuple[np.ndarray, np.ndarray]:
    if np.isscalar(resolution):
        resolution = (int(resolution), int(resolution))
    return (np.linspace(re_range[0], re_range[1], int(resolution[0])),
            np.linspace(im_range[0], im_range[1], int(resolution[1])))


def _laguerre_table(x: np.ndarray, n: int, k: int) -> np.ndarray:
    """Rows ``m = 0..n-1`` of ``(-1)^m sqrt(m!/(m+k)!) x^{k/2} e^{-x/2} L_m^{(k)}(x)``."""
    out = np.empty((n,) + x.shape)
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    seed = np.exp(0.5 * (k * logx - x - gammaln(k + 1))) if k else np.exp(-0.5 * x)
    seed = np.where(x > 0, seed, 1.0 if k == 0 else 0.0)
    out[0] = seed
    if n > 1:
        out[1] = -seed * (1 + k - x) / np.sqrt(k + 1)
    for m in range(2, n):
        a = (2 * m - 1 + k - x) / np.sqrt(m * (m + k))
        b = np.sqrt((m - 1) * (m - 1 + k) / (m * (m + k)))
        out[m] = -a * out[m - 1] - b * out[m - 2]
    return out


def wigner(rho: np.ndarray | PurifiedDensityMatrix, re_range: Sequence[float] = (-13.0, 2.0),
           im_range: Sequence[float] = (0.0, 15.0), resolution: int | Sequence[int] = 151,
           mode: int | str = 0) -> WignerGrid:
    """Wigner function of a single-mode density matrix in the Fock basis.

    A purified state is first reduced to ``mode``.  Normalization follows
    ``integral W d^2 alpha = Tr rho``.
    """
    if isinstance(rho, PurifiedDensityMatrix):
        rho = reduced_density_matrix(rho, mode)
    rho = np.asarray(rho, dtype=complex)
    n = rho.shape[0]
    if rho.shape != (n, n):
        raise ValueError("rho must be square")
    if n > MAX_WIGNER_DIM:
        raise ValueError(f"dimension {n} exceeds {MAX_WIGNER_DIM}")
    re, im = _grid_axes(re_range, im_range, resolution)
    alpha = re[None, :] + 1j * im[:, None]
    x = 4.0 * np.abs(alpha) ** 2
    phase = np.exp(1j * np.angle(alpha))
    diag = np.real(np.diagonal(rho))
    w = np.tensordot(diag, _laguerre_table(x, n, 0), axes=1)
    for k in range(1, n):
        off = np.diagonal(rho, offset=k)  # rho_{m, m+k}
        if not np.any(off):
            continue
        w = w + 2.0 * np.real(phase**k * np.tensordot(off, _laguerre_table(x, n - k, k), axes=1))
    w = (2.0 / np.pi) * w
    bad = ~np.isfinite(w)
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} Wigner values overflowed and were set to zero", RuntimeWarning,
                      stacklevel=2)
        w = np.where(bad, 0.0, w)
    return WignerGrid(re, im, w)


def coherent_wigner(beta: complex, re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """Closed form ``(2/pi) exp(-2|alpha - beta|^2)`` for a coherent state."""
    alpha = np.asarray(re)[None, :] + 1j * np.asarray(im)[:, None]
    return (2.0 / np.pi) * np.exp(-2.0 * np.abs(alpha - beta) ** 2)


# ---------------------------------------------------------------- writers

def format_columns(columns: Sequence[tuple[str, np.ndarray]] | Mapping[str, np.ndarray]) -> str:
    """Whitespace-separated columns with a ``#`` header, 17 significant digits."""
    items = list(columns.items()) if isinstance(columns, Mapping) else list(columns)
    names = [name for name, _ in items]
    data = [np.asarray(c, dtype=float).ravel() for _, c in items]
    rows = len(data[0]) if data else 0
    if any(len(c) != rows for c in data):
        raise ValueError("columns have different lengths")
    lines = ["# " + " ".join(names)]
    for k in range(rows):
        lines.append(" ".join(f"{c[k]:.17g}" for c in data))
    return "\n".join(lines) + "\n"


def write_columns(path: str | Path, columns) -> Path:
    path = Path(path)
    path.write_text(format_columns(columns))
    return path


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")
