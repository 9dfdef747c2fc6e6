"""Generalized boxes, projections and normal cones.

Every set handled by the solvers is a product of intervals ``[lower, upper]``
where either end may be infinite. A component with both ends infinite is a
free variable (normal cone ``{0}``), a component with ``lower == upper`` is
fixed (normal cone is the whole real line).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

DEFAULT_TOL = 1e-10


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Box:
    """Product of closed intervals, possibly unbounded.

    Attributes
    ----------
    lower, upper : numpy.ndarray, shape (n,)
        Interval ends; ``-inf`` / ``+inf`` are allowed.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, up = _vec(self.lower).copy(), _vec(self.upper).copy()
        if lo.shape != up.shape or lo.ndim != 1:
            raise DimensionMismatch(f"bounds of shapes {lo.shape} and {up.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > up):
            raise ValueError("box requires lower <= upper componentwise")
        lo.setflags(write=False)
        up.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @classmethod
    def free(cls, n: int) -> "Box":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @classmethod
    def nonneg(cls, n: int) -> "Box":
        return cls(np.zeros(n), np.full(n, np.inf))

    @classmethod
    def uniform(cls, n: int, lower: float, upper: float) -> "Box":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    def product(self, *others: "Box") -> "Box":
        boxes = (self,) + others
        return Box(
            np.concatenate([b.lower for b in boxes]),
            np.concatenate([b.upper for b in boxes]),
        )

    def slice(self, start: int, stop: int) -> "Box":
        return Box(self.lower[start:stop], self.upper[start:stop])

    @property
    def is_free(self) -> np.ndarray:
        return np.isneginf(self.lower) & np.isposinf(self.upper)

    @property
    def is_fixed(self) -> np.ndarray:
        return self.lower == self.upper

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        x = self._check(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def _check(self, x) -> np.ndarray:
        x = _vec(x)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"vector of shape {x.shape} for box of dim {self.dim}")
        return x

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class NormalConeCertificate:
    """Outcome of a normal-cone membership test ``direction in N_C(point)``.

    ``margin`` is the largest componentwise violation of the sign conditions
    (``+inf`` when ``point`` lies outside the box, where the cone is empty).
    """

    point: np.ndarray
    direction: np.ndarray
    margin: float
    feasible: bool
    tol: float = field(default=DEFAULT_TOL)

    @property
    def member(self) -> bool:
        return self.feasible and self.margin <= self.tol

    def __bool__(self) -> bool:
        return self.member


def project_box(x, C: Box) -> np.ndarray:
    """Euclidean projection onto ``C`` (componentwise clamp)."""
    x = C._check(x)
    return np.minimum(np.maximum(x, C.lower), C.upper)


def normal_cone_contains(C: Box, x, w, tol: float = DEFAULT_TOL) -> NormalConeCertificate:
    """Decide whether ``w`` lies in the normal cone of ``C`` at ``x``.

    Per component: at the lower bound only ``w <= tol``; at the upper bound
    only ``w >= -tol``; fixed components accept anything; interior and free
    components need ``|w| <= tol``.
    """
    x = C._check(x)
    w = C._check(w)
    if not C.contains(x, tol):
        return NormalConeCertificate(x, w, np.inf, False, tol)
    at_lo = np.abs(x - C.lower) <= tol
    at_up = np.abs(x - C.upper) <= tol
    viol = np.abs(w)
    viol = np.where(at_lo & ~at_up, w, viol)
    viol = np.where(at_up & ~at_lo, -w, viol)
    viol = np.where(at_lo & at_up, -np.inf, viol)
    margin = float(np.max(viol)) if viol.size else -np.inf
    return NormalConeCertificate(x, w, margin, True, tol)


def natural_residual(z, fz, C: Box) -> np.ndarray:
    """``z - proj_C(z - fz)``; vanishes exactly when ``-fz`` is normal to ``C`` at ``z``."""
    z = C._check(z)
    fz = C._check(fz)
    return z - project_box(z - fz, C)


def product_norm(*parts) -> float:
    """Sum of Euclidean norms, the norm used on product spaces ``X x Y``."""
    return float(sum(np.linalg.norm(_vec(p)) for p in parts))
