"""Mixed affine variational inequalities ``a + M z + N_C(z) ∋ 0``.

This is the linearized generalized equation solved at every Newton step.
Two solvers are provided: a semismooth Newton method on the natural
residual (the production path) and an exhaustive active-set enumeration
used as an oracle and as a uniqueness certificate for small problems.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DimensionTooLarge,
    MaxIterExceeded,
    SingularPattern,
)
from .geometry import Box, natural_residual, project_box

_log = logging.getLogger(__name__)

MAX_ENUM_DIM = 8
_COND_LIMIT = 1e13
_EPS = np.finfo(float).eps

# Component states used by the enumeration.
LOWER, UPPER, INACTIVE = "l", "u", "i"


@dataclass(frozen=True)
class MixedAvi:
    """The inclusion ``a + M z + N_C(z) ∋ 0``."""

    a: np.ndarray
    M: np.ndarray
    C: Box

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        n = self.C.dim
        if a.shape != (n,) or M.shape != (n, n):
            raise DimensionMismatch(
                f"a {a.shape}, M {M.shape} incompatible with box of dim {n}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "M", M)

    @property
    def dim(self) -> int:
        return self.C.dim

    def value(self, z) -> np.ndarray:
        return self.a + self.M @ z

    def residual(self, z) -> np.ndarray:
        return natural_residual(z, self.value(z), self.C)

    def shifted(self, delta) -> "MixedAvi":
        """The perturbed inclusion ``a + M z + N_C(z) ∋ delta``."""
        return MixedAvi(self.a - np.asarray(delta, dtype=float), self.M, self.C)


@dataclass
class RegularityEstimate:
    """Sampled estimate of the Lipschitz constant of the solution map.

    ``kappa`` is a sampled lower bound, never a certificate. ``certificate``
    lists the active-set patterns met during sampling together with the norm
    of the inverse of the reduced matrix on each; ``pattern_bound`` is the
    largest of those norms.
    """

    kappa: float
    sampled_radii: float
    certificate: list = field(default_factory=list)
    pattern_bound: float = 0.0
    samples: int = 0

    @property
    def bound(self) -> float:
        return max(self.kappa, self.pattern_bound)


class AviSolutions(list):
    """List of enumerated solutions; ``singular_patterns`` counts skipped patterns."""

    def __init__(self, solutions=(), singular_patterns: int = 0):
        super().__init__(solutions)
        self.singular_patterns = singular_patterns

    @property
    def unique(self) -> bool:
        return len(self) == 1


def _effective_tol(p: MixedAvi, z: np.ndarray, tol: float) -> float:
    zmax = float(np.max(np.abs(z), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(p.a), initial=0.0)),
                float(np.max(np.abs(p.M), initial=0.0)) * zmax * p.dim, zmax)
    return max(tol, 64 * _EPS * scale)


def _newton_matrix(p: MixedAvi, z: np.ndarray) -> np.ndarray:
    w = z - p.value(z)
    inactive = (w > p.C.lower) & (w < p.C.upper)
    J = np.eye(p.dim)
    J[inactive] = p.M[inactive]
    return J


def solve_avi_semismooth(p: MixedAvi, z0=None, tol: float = 1e-12,
                         max_iter: int = 100, max_halvings: int = 40) -> np.ndarray:
    """Semismooth Newton method on the natural residual.

    The generalized derivative takes row ``M[i]`` where ``z - (a + M z)`` lies
    strictly inside the box and the unit row elsewhere. Steps are halved
    while the residual norm does not decrease.

    Raises
    ------
    SingularPattern
        The linear system of the current active pattern is singular.
    MaxIterExceeded
        The residual stalls or ``max_iter`` is reached.
    """
    z = np.zeros(p.dim) if z0 is None else np.array(z0, dtype=float).reshape(p.dim)
    if not np.all(np.isfinite(z)):
        raise ValueError("starting point must be finite")
    r = p.residual(z)
    rn = np.linalg.norm(r)
    for it in range(max_iter):
        if rn <= _effective_tol(p, z, tol):
            return z
        J = _newton_matrix(p, z)
        if np.linalg.cond(J) > _COND_LIMIT:
            raise SingularPattern(f"singular active-set system at iteration {it}")
        d = np.linalg.solve(J, -r)
        t = 1.0
        for _ in range(max_halvings):
            z_try = z + t * d
            r_try = p.residual(z_try)
            rn_try = np.linalg.norm(r_try)
            if rn_try < rn:
                break
            t *= 0.5
        else:
            if rn <= _effective_tol(p, z, max(tol, 1e3 * tol)):
                return z
            raise MaxIterExceeded(f"residual stalled at {rn:.3e} after {it} iterations")
        z, r, rn = z_try, r_try, rn_try
    if rn <= _effective_tol(p, z, tol):
        return z
    raise MaxIterExceeded(f"no convergence in {max_iter} iterations (residual {rn:.3e})")


def _component_states(C: Box):
    states = []
    for lo, up in zip(C.lower, C.upper):
        if lo == up:
            states.append((LOWER,))
            continue
        opts = []
        if np.isfinite(lo):
            opts.append(LOWER)
        if np.isfinite(up):
            opts.append(UPPER)
        opts.append(INACTIVE)
        states.append(tuple(opts))
    return states


def _solve_pattern(p: MixedAvi, pattern):
    """Solution of one active pattern or ``None`` if its system is singular."""
    z = np.zeros(p.dim)
    state = np.array(pattern)
    lo_idx = state == LOWER
    up_idx = state == UPPER
    z[lo_idx] = p.C.lower[lo_idx]
    z[up_idx] = p.C.upper[up_idx]
    I = np.flatnonzero(state == INACTIVE)
    if I.size:
        A = ~(state == INACTIVE)
        M_II = p.M[np.ix_(I, I)]
        if np.linalg.cond(M_II) > _COND_LIMIT:
            return None
        rhs = -(p.a[I] + p.M[np.ix_(I, np.flatnonzero(A))] @ z[A])
        z[I] = np.linalg.solve(M_II, rhs)
    return z


def solve_avi_enumerate(p: MixedAvi, tol: float = 1e-10, dedup: float = 1e-9) -> AviSolutions:
    """All solutions found by enumerating the ``3^n`` active patterns.

    Each component is at its lower bound, at its upper bound, or inactive.
    Patterns whose reduced system is singular are skipped and counted.
    """
    if p.dim > MAX_ENUM_DIM:
        raise DimensionTooLarge(f"enumeration limited to dim <= {MAX_ENUM_DIM}, got {p.dim}")
    found: list[np.ndarray] = []
    singular = 0
    for pattern in itertools.product(*_component_states(p.C)):
        z = _solve_pattern(p, pattern)
        if z is None:
            singular += 1
            continue
        scale = max(1.0, float(np.max(np.abs(z), initial=0.0)))
        if not p.C.contains(z, tol * scale):
            continue
        q = p.value(z)
        qscale = tol * max(1.0, float(np.max(np.abs(p.a), initial=0.0)),
                           float(np.max(np.abs(p.M), initial=0.0)) * scale)
        state = np.array(pattern)
        if np.any(q[state == LOWER] < -qscale) or np.any(q[state == UPPER] > qscale):
            continue
        z = project_box(z, p.C)
        if not any(np.linalg.norm(z - s) < dedup for s in found):
            found.append(z)
    return AviSolutions(found, singular)


def _inactive_pattern(p: MixedAvi, z: np.ndarray, tol: float = 1e-9) -> tuple:
    interior = (z > p.C.lower + tol) & (z < p.C.upper - tol)
    return tuple(np.flatnonzero(interior | p.C.is_free))


def pattern_inverse_norm(p: MixedAvi, inactive) -> float:
    """Spectral norm of the inverse of ``M`` restricted to ``inactive``."""
    I = np.asarray(inactive, dtype=int)
    if I.size == 0:
        return 0.0
    s = np.linalg.svd(p.M[np.ix_(I, I)], compute_uv=False)
    return float(np.inf) if s[-1] <= s[0] / _COND_LIMIT else float(1.0 / s[-1])


def estimate_kappa(p: MixedAvi, zbar, radius: float = 1e-3, samples: int = 100,
                   seed: int = 0, tol: float = 1e-12) -> RegularityEstimate:
    """Estimate the Lipschitz modulus of ``delta -> (a + M + N_C)^{-1}(delta)`` at ``zbar``.

    Right-hand sides ``delta`` are drawn uniformly in direction with norm up
    to ``radius``; the estimate is the largest ratio
    ``|z(delta) - zbar| / |delta|`` observed.
    """
    zbar = np.asarray(zbar, dtype=float).reshape(p.dim)
    rng = np.random.default_rng(seed)
    kappa = 0.0
    patterns: dict[tuple, float] = {}
    base = _inactive_pattern(p, zbar)
    patterns[base] = pattern_inverse_norm(p, base)
    for _ in range(samples):
        d = rng.standard_normal(p.dim)
        d *= radius * rng.uniform(0.1, 1.0) / np.linalg.norm(d)
        z = solve_avi_semismooth(p.shifted(d), zbar, tol=tol)
        kappa = max(kappa, float(np.linalg.norm(z - zbar) / np.linalg.norm(d)))
        pat = _inactive_pattern(p, z)
        if pat not in patterns:
            patterns[pat] = pattern_inverse_norm(p, pat)
    cert = [(pat, nrm) for pat, nrm in patterns.items()]
    return RegularityEstimate(
        kappa=kappa,
        sampled_radii=float(radius),
        certificate=cert,
        pattern_bound=max(patterns.values()),
        samples=samples,
    )
