"""Syntactic association matrix and the two attention kernels.

The association matrix turns tree distances into a row-stochastic weighting:
each distance goes through the decreasing map ``g1 / (g2 + d)`` and every row is
softmax-normalized. Dependency attention multiplies raw query-key scores by
this matrix elementwise (no 1/sqrt(d) scaling) before its own row softmax.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import DimensionError, Tensor, matmul, softmax

PAPER_NOISE_VARIANCES = (0.01, 0.1)


@dataclass(frozen=True)
class TransformParams:
    gamma1: float = 2.0
    gamma2: float = 0.5

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError(f"gamma1 and gamma2 must be positive, got {self.gamma1}, {self.gamma2}")


def transform_f(d, p: TransformParams = TransformParams()):
    """Strictly decreasing map from tree distance to association logit."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("tree distances must be nonnegative")
    out = p.gamma1 / (p.gamma2 + d)
    return float(out) if out.ndim == 0 else out


def _row_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def assoc_matrix(d: np.ndarray, p: TransformParams = TransformParams()) -> np.ndarray:
    """Row-softmax of ``transform_f`` applied to a distance matrix."""
    return _row_softmax(transform_f(np.asarray(d), p))


def parse_matrix_kind(text: str) -> tuple[str, float | None]:
    """``"paper"``, ``"random"`` or ``"noisy:<variance>"`` -> (kind, variance)."""
    if text in ("paper", "random"):
        return text, None
    if text.startswith("noisy:"):
        return "noisy", float(text.split(":", 1)[1])
    raise ValueError(f"unknown matrix kind {text!r}")


def matrix_variant(kind: str, d: np.ndarray, p: TransformParams = TransformParams(),
                   seed: int | None = None, rng: np.random.Generator | None = None,
                   variance: float | None = None) -> np.ndarray:
    """Association matrix, or one of its perturbations.

    ``kind`` is ``"paper"``, ``"random"`` (row softmax of standard normals) or
    ``"noisy"`` (Gaussian noise of the given *variance* added to the transformed
    distances before the row softmax). A ``"noisy:<variance>"`` string is also
    accepted. Pass either ``seed`` or a live ``rng``.
    """
    if kind.startswith("noisy:"):
        kind, variance = parse_matrix_kind(kind)
    d = np.asarray(d)
    if kind == "paper":
        return assoc_matrix(d, p)
    if rng is None:
        rng = np.random.default_rng(seed)
    if kind == "random":
        return _row_softmax(rng.standard_normal(d.shape))
    if kind == "noisy":
        if variance is None or variance < 0:
            raise ValueError("noisy matrix needs a nonnegative variance")
        if variance not in PAPER_NOISE_VARIANCES:
            warnings.warn(f"noise variance {variance} is not one of {PAPER_NOISE_VARIANCES}",
                          stacklevel=2)
        noise = rng.normal(0.0, math.sqrt(variance), size=d.shape)
        return _row_softmax(transform_f(d, p) + noise)
    raise ValueError(f"unknown matrix kind {kind!r}")


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")


def dep_attention(q: Tensor, k: Tensor, v: Tensor, m, key_mask: np.ndarray | None = None,
                  return_weights: bool = False):
    """softmax_rows(QK^T * M) V, with M a constant (no gradient flows into it).

    Shapes: q (..., n, dh), k (..., n, dh), v (..., n, dv), m broadcastable to
    (..., n, n). ``key_mask`` (True = real token) broadcasts against the scores.
    """
    _check_qkv(q, k, v)
    m = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    n_q, n_k = q.shape[-2], k.shape[-2]
    if m.shape[-2:] != (n_q, n_k):
        raise DimensionError(f"association matrix {m.shape} does not fit {n_q}x{n_k} scores")
    weights = softmax(matmul(q, k.T) * m, mask=key_mask)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def self_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False,
                   key_mask: np.ndarray | None = None, return_weights: bool = False):
    """Scaled dot-product attention, optionally causal."""
    _check_qkv(q, k, v)
    scores = matmul(q, k.T) * (1.0 / math.sqrt(q.shape[-1]))
    mask = key_mask
    if causal:
        cm = causal_mask(q.shape[-2])
        mask = cm if mask is None else np.logical_and(mask, cm)
    weights = softmax(scores, mask=mask)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def export_attention(matrix, path) -> Path:
    """Write a matrix as CSV, one row per line, 9 significant digits."""
    matrix = np.asarray(matrix.data if isinstance(matrix, Tensor) else matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {matrix.shape}")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([f"{x:.9g}" for x in row])
    return path


def read_attention(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh)], dtype=np.float64)
