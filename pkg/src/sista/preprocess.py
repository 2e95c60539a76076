"""Input construction: basis centering, basis builders, plan/characteristics loading."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DissimilarityBasis, ObservedPlan
from .errors import BundleFormatError, DimensionMismatchError

INDEPENDENCE_RTOL = 1e-10


@dataclass(frozen=True)
class CharacteristicsTable:
    """Origin-side and destination-side characteristic vectors (N x P each)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2 or x.shape != y.shape:
            raise DimensionMismatchError(
                f"characteristics must be matching N x P matrices, got {x.shape} and {y.shape}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DimensionMismatchError("characteristics contain non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def diag_basis(self) -> np.ndarray:
        return build_basis_diag(self.x, self.y)

    def cross_basis(self) -> np.ndarray:
        return build_basis_cross(self.x, self.y)


def independence_condition(centered: np.ndarray) -> float:
    """Smallest/largest eigenvalue ratio of the Gram matrix of flattened bases.

    A ratio below INDEPENDENCE_RTOL means the centered matrices are
    numerically dependent and the weight vector is not unique.
    """
    k = centered.shape[0]
    flat = centered.reshape(k, -1)
    gram = flat @ flat.T
    eig = np.linalg.eigvalsh(gram)
    top = eig[-1]
    if top <= 0:
        return 0.0
    return float(max(eig[0], 0.0) / top)


def center_basis(raw, check_independence: bool = True) -> DissimilarityBasis:
    """Center each basis matrix to zero row and column sums.

    Offsets per matrix k:
        a_i = mean_j raw_ij
        b_j = mean_i raw_ij - mean_pq raw_pq
    so raw_ij = centered_ij + a_i + b_j.  Centering is idempotent.  With
    `check_independence` a near-singular Gram matrix of the centered bases
    triggers a warning (estimates remain computable but non-unique).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[1] != raw.shape[2]:
        raise DimensionMismatchError(
            f"raw basis must be a K x N x N array, got shape {raw.shape}"
        )
    if raw.shape[0] < 1:
        raise DimensionMismatchError("need at least one basis matrix")
    if not np.all(np.isfinite(raw)):
        raise DimensionMismatchError("basis contains non-finite entries")
    a = raw.mean(axis=2)                                # (K, N)
    b = raw.mean(axis=1) - raw.mean(axis=(1, 2))[:, None]  # (K, N)
    centered = raw - a[:, :, None] - b[:, None, :]
    basis = DissimilarityBasis(raw=raw, centered=centered, row_offsets=a, col_offsets=b)
    if check_independence:
        ratio = independence_condition(centered)
        if ratio < INDEPENDENCE_RTOL:
            warnings.warn(
                "centered basis matrices are numerically linearly dependent "
                f"(Gram eigenvalue ratio {ratio:.3g}); the fitted weights are not unique",
                stacklevel=2,
            )
    return basis


def _check_table(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape != y.shape:
        raise DimensionMismatchError(
            f"characteristics must be matching N x P matrices, got {x.shape} and {y.shape}"
        )
    return x, y


def build_basis_diag(x, y) -> np.ndarray:
    """One matrix per characteristic: entry (i, j) is (x[i, k] - y[j, k])^2."""
    x, y = _check_table(x, y)
    diffs = x.T[:, :, None] - y.T[:, None, :]  # (P, N, N)
    return diffs**2


def build_basis_cross(x, y) -> np.ndarray:
    """One matrix per ordered characteristic pair (r, s): (x[i, r] - y[j, s])^2.

    Pairs are flattened row-major, k = r * P + s, so the diagonal blocks
    k = r * P + r reproduce build_basis_diag.
    """
    x, y = _check_table(x, y)
    p = x.shape[1]
    diffs = x.T[:, None, :, None] - y.T[None, :, None, :]  # (P, P, N, N)
    return (diffs**2).reshape(p * p, x.shape[0], x.shape[0])


def load_plan(path, full_support: bool = False) -> ObservedPlan:
    """Read a comma-separated matrix file as an observed plan."""
    entries = load_matrix(path)
    return ObservedPlan.from_entries(entries, full_support=full_support)


def load_matrix(path, shape=None) -> np.ndarray:
    """Parse a plain-text matrix: one row per line, comma-separated floats."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError:
                raise BundleFormatError(
                    f"{path}:{lineno}: invalid numeric literal"
                ) from None
    if not rows:
        raise BundleFormatError(f"{path}: empty matrix file")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise BundleFormatError(
                f"{path}:{lineno}: expected {width} columns, found {len(row)}"
            )
    out = np.asarray(rows, dtype=np.float64)
    if shape is not None and out.shape != tuple(shape):
        raise BundleFormatError(
            f"{path}: expected a {shape[0]}x{shape[1]} matrix, found {out.shape[0]}x{out.shape[1]}"
        )
    return out


def load_characteristics(path):
    """Read a characteristics file: per line an identifier then P float components.

    Returns `(ids, values)` with `values` of shape (N, P).
    """
    path = Path(path)
    ids: list[str] = []
    rows: list[list[float]] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) < 2:
                raise BundleFormatError(
                    f"{path}:{lineno}: expected an identifier and at least one component"
                )
            ids.append(toks[0].strip())
            try:
                rows.append([float(tok) for tok in toks[1:]])
            except ValueError:
                raise BundleFormatError(
                    f"{path}:{lineno}: invalid numeric literal"
                ) from None
    if not rows:
        raise BundleFormatError(f"{path}: empty characteristics file")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise BundleFormatError(
                f"{path}:{lineno}: expected {width} components, found {len(row)}"
            )
    return ids, np.asarray(rows, dtype=np.float64)
