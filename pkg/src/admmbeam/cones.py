"""Cone factors, dual cones and Euclidean projections onto cone products.

A :class:`ConeProduct` is an ordered Cartesian product of free, zero,
nonnegative and second-order cone factors.  Second-order factors are stored
head first, ``(t, x)`` with ``||x||_2 <= t``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np


class DimensionError(ValueError):
    """Vector length does not match the cone dimension."""


class ConeKind(str, enum.Enum):
    FREE = "free"
    ZERO = "zero"
    NONNEG = "nonneg"
    SOC = "soc"


_DUAL_KIND = {
    ConeKind.FREE: ConeKind.ZERO,
    ConeKind.ZERO: ConeKind.FREE,
    ConeKind.NONNEG: ConeKind.NONNEG,
    ConeKind.SOC: ConeKind.SOC,
}


@dataclass(frozen=True)
class ConeFactor:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ConeKind(self.kind))
        if int(self.dim) < 1:
            raise ValueError(f"cone dimension must be >= 1, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def effective_kind(self) -> ConeKind:
        # Q^1 is the nonnegative half-line.
        if self.kind is ConeKind.SOC and self.dim == 1:
            return ConeKind.NONNEG
        return self.kind

    def dual(self) -> "ConeFactor":
        return ConeFactor(_DUAL_KIND[self.kind], self.dim)

    def __str__(self):
        return f"{self.kind.value} {self.dim}"


def free(dim: int) -> ConeFactor:
    return ConeFactor(ConeKind.FREE, dim)


def zero(dim: int) -> ConeFactor:
    return ConeFactor(ConeKind.ZERO, dim)


def nonneg(dim: int) -> ConeFactor:
    return ConeFactor(ConeKind.NONNEG, dim)


def soc(dim: int) -> ConeFactor:
    return ConeFactor(ConeKind.SOC, dim)


@dataclass(frozen=True)
class ConeProduct:
    """Ordered Cartesian product of cone factors."""

    factors: tuple[ConeFactor, ...]

    def __init__(self, factors: Iterable[ConeFactor]):
        object.__setattr__(self, "factors", tuple(factors))

    @property
    def total_dim(self) -> int:
        return sum(f.dim for f in self.factors)

    def __len__(self):
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def __add__(self, other: "ConeProduct") -> "ConeProduct":
        return ConeProduct(self.factors + tuple(other.factors))

    def offsets(self) -> np.ndarray:
        """Start offset of every factor, plus the total length at the end."""
        return np.concatenate([[0], np.cumsum([f.dim for f in self.factors])]).astype(int)

    @cached_property
    def projector(self) -> "ProductProjector":
        return ProductProjector(self)


def dual_cone(cone: ConeProduct) -> ConeProduct:
    """Factor-wise dual, keeping factor order."""
    return ConeProduct(f.dual() for f in cone.factors)


def _check_len(w: np.ndarray, dim: int):
    if w.ndim != 1 or w.shape[0] != dim:
        raise DimensionError(f"expected a vector of length {dim}, got shape {w.shape}")


def project_soc(w: np.ndarray) -> np.ndarray:
    """Project ``w = (t, x)`` onto ``{(t, x) : ||x||_2 <= t}``."""
    t = w[0]
    x = w[1:]
    nx = np.linalg.norm(x)
    if nx <= -t:
        return np.zeros_like(w)
    if nx <= t:
        return w.copy()
    scale = 0.5 * (1.0 + t / nx)
    out = np.empty_like(w)
    out[0] = scale * nx
    out[1:] = scale * x
    return out


def project_factor(factor: ConeFactor, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    _check_len(w, factor.dim)
    kind = factor.effective_kind
    if kind is ConeKind.FREE:
        return w.copy()
    if kind is ConeKind.ZERO:
        return np.zeros_like(w)
    if kind is ConeKind.NONNEG:
        return np.maximum(w, 0.0)
    return project_soc(w)


def project_product(cone: ConeProduct, w) -> np.ndarray:
    """Concatenated per-factor projections of ``w`` onto ``cone``."""
    w = np.asarray(w, dtype=float)
    _check_len(w, cone.total_dim)
    return cone.projector(w)


def in_factor(factor: ConeFactor, w, tol: float = 1e-12) -> bool:
    w = np.asarray(w, dtype=float)
    _check_len(w, factor.dim)
    kind = factor.effective_kind
    if kind is ConeKind.FREE:
        return bool(np.all(np.isfinite(w)))
    if kind is ConeKind.ZERO:
        return bool(np.all(np.abs(w) <= tol))
    if kind is ConeKind.NONNEG:
        return bool(np.all(w >= -tol))
    return bool(np.linalg.norm(w[1:]) <= w[0] + tol)


def in_product(cone: ConeProduct, w, tol: float = 1e-12) -> bool:
    w = np.asarray(w, dtype=float)
    _check_len(w, cone.total_dim)
    offs = cone.offsets()
    return all(in_factor(f, w[offs[i]:offs[i + 1]], tol) for i, f in enumerate(cone.factors))


class ProductProjector:
    """Vectorized projection onto a fixed cone product.

    Factors are grouped by kind (and SOC factors by dimension) at construction,
    so a projection is a handful of numpy operations regardless of how many
    factors the product has.  Groups touch disjoint index sets, so the result
    does not depend on evaluation order.
    """

    def __init__(self, cone: ConeProduct):
        self.dim = cone.total_dim
        offs = cone.offsets()
        zero_idx: list[np.ndarray] = []
        nonneg_idx: list[np.ndarray] = []
        soc_groups: dict[int, list[int]] = {}
        for i, f in enumerate(cone.factors):
            idx = np.arange(offs[i], offs[i + 1])
            kind = f.effective_kind
            if kind is ConeKind.FREE:
                continue
            if kind is ConeKind.ZERO:
                zero_idx.append(idx)
            elif kind is ConeKind.NONNEG:
                nonneg_idx.append(idx)
            else:
                soc_groups.setdefault(f.dim, []).append(offs[i])
        cat = lambda parts: np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)
        self.zero_idx = cat(zero_idx)
        self.nonneg_idx = cat(nonneg_idx)
        # (count, dim) index blocks, one row per SOC factor
        self.soc_blocks = [
            np.asarray(starts)[:, None] + np.arange(d)[None, :]
            for d, starts in sorted(soc_groups.items())
        ]
        self.soc_start = cat([blk[:, 0] for blk in self.soc_blocks])
        self.soc_dim = cat([np.full(blk.shape[0], blk.shape[1]) for blk in self.soc_blocks])

    def __call__(self, w: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = w.copy()
        elif out is not w:
            out[:] = w
        if self.zero_idx.size:
            out[self.zero_idx] = 0.0
        if self.nonneg_idx.size:
            out[self.nonneg_idx] = np.maximum(w[self.nonneg_idx], 0.0)
        for block in self.soc_blocks:
            out[block] = _project_soc_rows(w[block])
        return out


def _project_soc_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise SOC projection of a (count, dim) array."""
    t = z[:, 0]
    nx = np.sqrt(np.einsum("ij,ij->i", z[:, 1:], z[:, 1:]))
    out = z.copy()
    below = nx <= -t
    outside = (nx > np.abs(t))
    out[below] = 0.0
    if np.any(outside):
        s = 0.5 * (1.0 + t[outside] / nx[outside])
        out[outside, 0] = s * nx[outside]
        out[outside, 1:] = s[:, None] * z[outside, 1:]
    return out
