"""Pure-numpy fallback for the masked-Pearson kernel.

Mirrors the compiled extension: a cell enters a pair's correlation when at
least one of the two series is nonzero there; NaN when fewer than 3 cells
survive or a masked series has zero variance.
"""
from __future__ import annotations

import numpy as np


def masked_pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson over cells where x or y is nonzero; NaN if undefined."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("series length mismatch")
    return float(masked_pearson_batch(x, y[None, :])[0])


def masked_pearson_batch(x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise masked Pearson of x against each row of ys."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if ys.shape[1] != x.shape[0]:
        raise ValueError("series length mismatch")
    mask = (x[None, :] != 0.0) | (ys != 0.0)
    n = mask.sum(axis=1)
    safe_n = np.maximum(n, 1)
    xs = np.where(mask, x[None, :], 0.0)
    yv = np.where(mask, ys, 0.0)
    mx = xs.sum(axis=1) / safe_n
    my = yv.sum(axis=1) / safe_n
    dx = np.where(mask, x[None, :] - mx[:, None], 0.0)
    dy = np.where(mask, ys - my[:, None], 0.0)
    vx = (dx * dx).sum(axis=1)
    vy = (dy * dy).sum(axis=1)
    cov = (dx * dy).sum(axis=1)
    denom = np.sqrt(vx * vy)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = cov / denom
    rho[(n < 3) | (vx <= 0.0) | (vy <= 0.0)] = np.nan
    return rho
