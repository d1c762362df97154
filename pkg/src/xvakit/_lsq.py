"""Least-squares slice regressions shared by the clean-price and BSDE solvers."""

from __future__ import annotations

import numpy as np

from .errors import NumericalDegeneracyError


def column_norms(columns: list[np.ndarray]) -> list[tuple[float, float]]:
    """Per-column (center, scale) used to keep slice designs well conditioned."""
    out = []
    for c in columns:
        c = np.asarray(c, dtype=float)
        s = float(np.std(c))
        out.append((float(np.mean(c)), s if s > 0.0 else 1.0))
    return out


def design_matrix(
    columns: list[np.ndarray],
    degree: int,
    norms: list[tuple[float, float]] | None = None,
):
    """Monomial design matrix (constant first) with reusable normalization.

    ``columns`` are raw regressor columns; each contributes powers 1..degree.
    Returns (X, norms) so coefficients fitted on one ensemble can be evaluated
    on another by passing the stored ``norms`` back in.
    """
    columns = [np.asarray(c, dtype=float) for c in columns]
    if norms is None:
        norms = column_norms(columns)
    n = columns[0].shape[0]
    cols = [np.ones(n)]
    for c, (mu, sc) in zip(columns, norms):
        xn = (c - mu) / sc
        for p in range(1, degree + 1):
            cols.append(xn**p)
    return np.column_stack(cols), norms


def fit_slice(X: np.ndarray, y: np.ndarray, slice_index: int | None = None, min_rank: int = 1):
    """Least-squares fit; returns (coefficients, fitted values, condition number).

    Rank deficiency from a constant state (e.g. the initial slice) degrades
    gracefully to the sample mean when ``min_rank == 1``; slices that must
    carry state information pass ``min_rank >= 2`` and get a hard error.
    """
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericalDegeneracyError(
            f"non-finite regression system at time slice {slice_index}", slice_index
        )
    coef, _, _, sv = np.linalg.lstsq(X, y, rcond=None)
    rank = int(np.sum(sv > sv[0] * 1e-12)) if sv.size else 0
    if rank < min_rank:
        raise NumericalDegeneracyError(
            f"regression design degenerate (rank {rank}) at time slice {slice_index}", slice_index
        )
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0.0 else np.inf
    return coef, X @ coef, cond
