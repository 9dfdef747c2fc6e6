"""Generalized equations ``f(z, v) + N_C(z) ∋ 0`` and Josephy-Newton iterations.

A step linearizes ``f`` around the current iterate with a matrix ``H`` and
keeps the normal cone intact, which yields the mixed AVI

    f(z_k, v_k) + H (z - z_k) + N_C(z) ∋ 0

solved by :mod:`issnewton.subproblem`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .disturbances import DisturbanceSequence
from .errors import DimensionMismatch, MaxIterExceeded, NonuniqueSolution, SingularPattern, SolverError
from .geometry import Box, natural_residual
from .subproblem import MAX_ENUM_DIM, MixedAvi, solve_avi_enumerate, solve_avi_semismooth

_log = logging.getLogger(__name__)

EXACT = "exact-gradient"
NOISY = "gradient-plus-noise"
SQP = "sqp-hessian"
ZERO = "zero-hessian"
SCALED = "scaled-identity"
CUSTOM = "custom"
LINEARIZATIONS = (EXACT, NOISY, SQP, ZERO, SCALED, CUSTOM)

DIVERGENCE_BOUND = 1e6


def fd_jacobian(fun: Callable, z: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step ``rel_step * (1 + |z|)``."""
    z = np.asarray(z, dtype=float)
    h = rel_step * (1.0 + np.linalg.norm(z))
    f0 = np.atleast_1d(fun(z))
    J = np.empty((f0.size, z.size))
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        J[:, j] = (np.atleast_1d(fun(z + e)) - np.atleast_1d(fun(z - e))) / (2 * h)
    return J


@dataclass(frozen=True)
class GeneralizedEquation:
    """The inclusion ``f(z, v) + N_C(z) ∋ 0``.

    Parameters
    ----------
    f : callable
        ``f(z, v) -> vector``.
    C : Box
        Set whose normal cone is the set-valued part.
    jacobian : callable, optional
        ``jacobian(z, v) -> matrix``; central differences when omitted.
    zbar : array-like, optional
        Known solution for ``v = 0``.
    dim_v : int, optional
        Disturbance dimension (defaults to ``C.dim``).
    n_primal : int, optional
        Size of the primal block for KKT systems ``z = (x, y)``; required by
        the SQP and sequential-convexification linearizations.
    """

    f: Callable
    C: Box
    jacobian: Callable | None = None
    zbar: np.ndarray | None = None
    dim_v: int | None = None
    n_primal: int | None = None
    name: str = ""
    zbar_tol: float = 1e-8

    def __post_init__(self):
        if self.dim_v is None:
            object.__setattr__(self, "dim_v", self.C.dim)
        if self.zbar is not None:
            zbar = np.asarray(self.zbar, dtype=float).reshape(self.C.dim)
            object.__setattr__(self, "zbar", zbar)
            res = self.residual(zbar)
            if res > self.zbar_tol:
                raise ValueError(f"zbar is not a solution (natural residual {res:.3e})")

    @classmethod
    def additive(cls, f0: Callable, C: Box, jacobian: Callable | None = None, **kw):
        """Equation with disturbance added to ``f``: ``f(z, v) = f0(z) + v``."""
        jac = None if jacobian is None else (lambda z, v: jacobian(z))
        return cls(lambda z, v: np.atleast_1d(f0(z)) + v, C, jac, **kw)

    @property
    def dim(self) -> int:
        return self.C.dim

    def _v(self, v) -> np.ndarray:
        if v is None:
            return np.zeros(self.dim_v)
        return np.asarray(v, dtype=float).reshape(self.dim_v)

    def evaluate(self, z, v=None) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.f(np.asarray(z, dtype=float), self._v(v)), dtype=float))
        if out.shape != (self.dim,):
            raise DimensionMismatch(f"f returned shape {out.shape}, expected ({self.dim},)")
        return out

    def jac(self, z, v=None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        v = self._v(v)
        if self.jacobian is not None:
            return np.atleast_2d(np.asarray(self.jacobian(z, v), dtype=float))
        return fd_jacobian(lambda zz: self.evaluate(zz, v), z)

    def residual(self, z, v=None) -> float:
        """Norm of the natural residual at ``z``."""
        return float(np.linalg.norm(natural_residual(z, self.evaluate(z, v), self.C)))


@dataclass(frozen=True)
class Linearization:
    """Choice of the matrix ``H(z, v)`` used in a Josephy-Newton step.

    ``alpha`` is the step size of the scaled identity ``H = I / alpha``;
    ``B`` replaces the primal-primal block for ``sqp-hessian``; ``fn`` is
    the builder for ``custom``.
    """

    kind: str = EXACT
    alpha: float | None = None
    B: np.ndarray | None = None
    fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in LINEARIZATIONS:
            raise ValueError(f"unknown linearization {self.kind!r}; expected one of {LINEARIZATIONS}")
        if self.kind == SCALED and not (self.alpha and self.alpha > 0):
            raise ValueError("scaled-identity linearization needs alpha > 0")
        if self.kind == CUSTOM and self.fn is None:
            raise ValueError("custom linearization needs fn(z, v)")

    @property
    def disturbs_matrix(self) -> bool:
        """True when ``v`` perturbs ``H`` rather than ``f``."""
        return self.kind == NOISY

    def build(self, ge: GeneralizedEquation, z, v=None) -> np.ndarray:
        n = ge.dim
        if self.kind == SCALED:
            return np.eye(n) / self.alpha
        if self.kind == CUSTOM:
            return np.asarray(self.fn(z, v), dtype=float).reshape(n, n)
        if self.kind == NOISY:
            H = ge.jac(z, None)
            return H if v is None else H + np.asarray(v, dtype=float).reshape(n, n)
        H = ge.jac(z, v)
        if self.kind in (SQP, ZERO):
            npr = ge.n_primal
            if npr is None:
                raise ValueError(f"{self.kind} linearization needs a KKT system (n_primal)")
            if self.kind == ZERO:
                H[:npr, :npr] = 0.0
            elif self.B is not None:
                H[:npr, :npr] = self.B
        return H


@dataclass
class Trace:
    """Record of one iterative run.

    ``iterates`` holds one more entry than ``disturbances``. ``step_status``
    has one entry per attempted step; a failed step ends the run.
    """

    iterates: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    step_status: list = field(default_factory=list)
    errors_to_zbar: list | None = None
    status: str = "running"
    zbar: np.ndarray | None = None
    sup_norm: float = 0.0
    extras: dict = field(default_factory=dict)
    label: str = ""
    split: int | None = None

    def distance(self, z, zbar) -> float:
        """Euclidean norm, or ``|x| + |y|`` on product spaces when ``split`` is set."""
        d = np.asarray(z, dtype=float) - np.asarray(zbar, dtype=float)
        if self.split is None:
            return float(np.linalg.norm(d))
        return float(np.linalg.norm(d[: self.split]) + np.linalg.norm(d[self.split:]))

    def record(self, z, residual, v=None, status=None):
        z = np.array(z, dtype=float)
        if v is not None:
            self.disturbances.append(np.array(v, dtype=float))
            self.step_status.append(status or "ok")
        self.iterates.append(z)
        self.residuals.append(float(residual))
        if self.zbar is not None:
            if self.errors_to_zbar is None:
                self.errors_to_zbar = []
            self.errors_to_zbar.append(self.distance(z, self.zbar))

    @property
    def n_steps(self) -> int:
        return len(self.disturbances)

    @property
    def disturbance_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(v) for v in self.disturbances])

    def errors(self, zbar=None) -> np.ndarray:
        if zbar is None:
            if self.errors_to_zbar is None:
                raise ValueError("trace has no reference solution")
            return np.asarray(self.errors_to_zbar)
        return np.array([self.distance(z, zbar) for z in self.iterates])

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def limsup_error(self, fraction: float = 0.25) -> float:
        """Largest error over the final ``fraction`` of the iterates."""
        e = self.errors()
        m = max(1, int(np.ceil(fraction * len(e))))
        return float(np.max(e[-m:]))


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-12
    max_iter: int = 50
    enable_oracle: bool = False
    avi_tol: float = 1e-13
    divergence_bound: float = DIVERGENCE_BOUND


def solve_step_avi(avi: MixedAvi, z_start, tol: float = 1e-13, oracle: bool = False) -> np.ndarray:
    """Solve one linearized subproblem, falling back to enumeration if semismooth Newton fails.

    With ``oracle`` the enumeration also certifies uniqueness; multiple
    solutions raise :class:`NonuniqueSolution` instead of picking one.
    """
    small = avi.dim <= MAX_ENUM_DIM
    try:
        z = solve_avi_semismooth(avi, z_start, tol=tol)
    except (SingularPattern, MaxIterExceeded):
        # The natural residual is not a merit function for saddle-type systems.
        if not small:
            raise
        sols = solve_avi_enumerate(avi)
        if len(sols) == 1:
            return sols[0]
        if not sols:
            raise SingularPattern("singular subproblem without isolated solution")
        raise NonuniqueSolution(f"{len(sols)} subproblem solutions", sols)
    if oracle and small:
        sols = solve_avi_enumerate(avi)
        if len(sols) > 1:
            raise NonuniqueSolution(f"{len(sols)} subproblem solutions", sols)
        if sols.singular_patterns and not sols:
            _log.warning("oracle found no isolated solution; keeping semismooth result")
    return z


def linearize(ge: GeneralizedEquation, lin: Linearization, z_k, v_k=None) -> MixedAvi:
    """The subproblem ``f(z_k, v_k) - H z_k + H z + N_C(z) ∋ 0`` of one step."""
    z_k = np.asarray(z_k, dtype=float).reshape(ge.dim)
    H = lin.build(ge, z_k, v_k)
    fz = ge.evaluate(z_k, None if lin.disturbs_matrix else v_k)
    return MixedAvi(fz - H @ z_k, H, ge.C)


def josephy_newton_step(ge: GeneralizedEquation, lin: Linearization, z_k, v_k=None, *,
                        tol: float = 1e-13, oracle: bool = False) -> np.ndarray:
    """One (perturbed) Josephy-Newton step; returns ``z_{k+1}``."""
    avi = linearize(ge, lin, z_k, v_k)
    return solve_step_avi(avi, z_k, tol=tol, oracle=oracle)


def gradient_perturbed_step(ge: GeneralizedEquation, z_k, v_k, *, tol: float = 1e-13,
                            oracle: bool = False) -> np.ndarray:
    """Newton step with the gradient perturbed by the matrix ``v_k``.

    ``f`` itself is evaluated undisturbed and ``H = jac(z_k, 0) + v_k``.
    """
    return josephy_newton_step(ge, Linearization(NOISY), z_k, v_k, tol=tol, oracle=oracle)


def solve_generalized_equation(ge: GeneralizedEquation, z0, v=None, *, tol: float = 1e-12,
                               max_iter: int = 100, lin: Linearization | None = None,
                               avi_tol: float = 1e-13) -> np.ndarray:
    """Newton iterations with a fixed disturbance until the residual is below ``tol``."""
    lin = lin or Linearization(EXACT)
    z = np.asarray(z0, dtype=float).reshape(ge.dim)
    for _ in range(max_iter):
        if ge.residual(z, v) <= tol:
            return z
        z = josephy_newton_step(ge, lin, z, v, tol=avi_tol)
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > DIVERGENCE_BOUND:
            raise MaxIterExceeded("Newton iterates diverged")
    if ge.residual(z, v) <= tol:
        return z
    raise MaxIterExceeded(f"no convergence in {max_iter} Newton steps "
                          f"(residual {ge.residual(z, v):.3e})")


def run_newton(ge: GeneralizedEquation, lin: Linearization, z0,
               dist: DisturbanceSequence | None = None,
               cfg: NewtonConfig = NewtonConfig()) -> Trace:
    """Iterate Josephy-Newton steps with ``v_k = dist.sample(k)``.

    Stops when the undisturbed natural residual drops to ``cfg.tol``, after
    ``cfg.max_iter`` steps, on divergence (``|z| > cfg.divergence_bound``)
    or when a step fails; the reason is stored in ``Trace.status``.
    """
    v_shape = (ge.dim, ge.dim) if lin.disturbs_matrix else (ge.dim_v,)
    if dist is None:
        dist = DisturbanceSequence.zero(v_shape)
    trace = Trace(zbar=ge.zbar, sup_norm=dist.sup_norm, label=ge.name)
    z = np.asarray(z0, dtype=float).reshape(ge.dim)
    if not np.all(np.isfinite(z)):
        raise ValueError("z0 must be finite")
    trace.record(z, ge.residual(z))
    for k in range(cfg.max_iter):
        if trace.residuals[-1] <= cfg.tol:
            trace.status = "converged"
            break
        v = np.asarray(dist.sample(k), dtype=float).reshape(v_shape)
        try:
            z = josephy_newton_step(ge, lin, z, v, tol=cfg.avi_tol, oracle=cfg.enable_oracle)
        except SolverError as exc:
            _log.info("step %d failed: %s", k, exc)
            trace.step_status.append(exc.status)
            trace.status = exc.status
            return trace
        trace.record(z, ge.residual(z), v)
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > cfg.divergence_bound:
            trace.status = "diverged"
            return trace
    else:
        trace.status = "converged" if trace.residuals[-1] <= cfg.tol else "maxiter"
    return trace
