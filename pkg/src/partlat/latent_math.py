"""Minimal numeric kernel for token-sequence synchronization.

A token sequence is a plain float64 array of shape (n_tokens, d). The
three primitives here -- single-head scaled dot-product attention,
residual fusion updates, and mean pooling -- are everything the
synchronization equations in :mod:`partlat.denoise` are built from.

Attention is deliberately bare: one head, no output projection, no
normalization layers, softmax stabilized by row-max subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .seeding import substream


def as_tokens(x, name: str = "tokens") -> np.ndarray:
    """Validate and return ``x`` as an (n, d) float64 token sequence."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a (n_tokens, d) matrix with n,d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class AttentionParams:
    """Square projection matrices for one attention site."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    init: str = "custom"

    def __post_init__(self):
        d = self.width
        for nm, w in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv)):
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (d, d):
                raise DimensionError(f"{nm} must be square of width {d}, got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise NumericError(f"{nm} contains non-finite entries")
            object.__setattr__(self, nm, w)

    @property
    def width(self) -> int:
        return np.asarray(self.wq).shape[0]

    @classmethod
    def identity(cls, d: int) -> "AttentionParams":
        eye = np.eye(d)
        return cls(eye, eye, eye, init="identity")

    @classmethod
    def zero_valued(cls, d: int) -> "AttentionParams":
        """Identity query/key, zero value projection: the site contributes nothing."""
        eye = np.eye(d)
        return cls(eye, eye, np.zeros((d, d)), init="zero-valued")

    @classmethod
    def seeded(cls, d: int, seed: int, *names) -> "AttentionParams":
        """Scaled-uniform entries in (-1/sqrt(d), 1/sqrt(d)) from a named stream."""
        rng = substream(seed, "attn", *names)
        scale = 1.0 / np.sqrt(d)
        mats = [rng.uniform(-scale, scale, size=(d, d)) for _ in range(3)]
        return cls(*mats, init=f"seeded:{seed}")


def softmax_rows(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax with max subtraction; masked columns get zero weight.

    Rows whose columns are all masked come back as all-zero (callers treat
    the attention output for such rows as zero).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (logits.shape[1],):
            raise DimensionError(f"mask length {mask.shape} does not match context size {logits.shape[1]}")
        if not mask.any():
            return np.zeros_like(logits)
        logits = np.where(mask[None, :], logits, -np.inf)
    m = np.max(logits, axis=1, keepdims=True)
    w = np.exp(logits - m)
    if mask is not None:
        w = np.where(mask[None, :], w, 0.0)
    return w / np.sum(w, axis=1, keepdims=True)


def attention(
    queries: np.ndarray,
    context: np.ndarray,
    params: AttentionParams,
    context_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Single-head scaled dot-product attention.

    softmax((Q Wq)(K Wk)^T / sqrt(d)) (K Wv), computed per query row.
    Output has the shape of ``queries``; each row is a convex combination
    of value-projected context rows.
    """
    q = as_tokens(queries, "queries")
    k = as_tokens(context, "context")
    d = q.shape[1]
    if k.shape[1] != d:
        raise DimensionError(f"width mismatch: queries d={d}, context d={k.shape[1]}")
    if params.width != d:
        raise DimensionError(f"params width {params.width} does not match token width {d}")
    logits = (q @ params.wq) @ (k @ params.wk).T / np.sqrt(d)
    weights = softmax_rows(logits, context_mask)
    return weights @ (k @ params.wv)


def attention_weights(
    queries: np.ndarray,
    context: np.ndarray,
    params: AttentionParams,
    context_mask: np.ndarray | None = None,
) -> np.ndarray:
    """The softmax weight matrix of :func:`attention` (rows sum to 1)."""
    q = as_tokens(queries, "queries")
    k = as_tokens(context, "context")
    if k.shape[1] != q.shape[1] or params.width != q.shape[1]:
        raise DimensionError("width mismatch in attention_weights")
    logits = (q @ params.wq) @ (k @ params.wk).T / np.sqrt(q.shape[1])
    return softmax_rows(logits, context_mask)


def residual_update(
    target: np.ndarray,
    source: np.ndarray,
    coeff: float,
    params: AttentionParams,
    context_mask: np.ndarray | None = None,
) -> np.ndarray:
    """target + coeff * attention(target, source); coeff == 0 returns target unchanged."""
    t = as_tokens(target, "target")
    if coeff == 0.0:
        return t.copy()
    return t + coeff * attention(t, source, params, context_mask)


def pool_part(geo: np.ndarray, app: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """Project the mean of all geometry and appearance rows to one summary token."""
    g = as_tokens(geo, "geo")
    a = as_tokens(app, "app")
    d = g.shape[1]
    if a.shape[1] != d:
        raise DimensionError(f"width mismatch: geo d={d}, app d={a.shape[1]}")
    proj = np.asarray(proj, dtype=np.float64)
    if proj.shape != (d, d):
        raise DimensionError(f"proj must be {d}x{d}, got {proj.shape}")
    mean = np.concatenate([g, a], axis=0).mean(axis=0)
    out = proj @ mean
    if not np.all(np.isfinite(out)):
        raise NumericError("pooled token is non-finite")
    return out
