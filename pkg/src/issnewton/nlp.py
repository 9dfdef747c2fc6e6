"""Equality-constrained programs over boxes and the Newton-type algorithms built on their KKT system.

The program is ``min_{x in C} h(x, v)  s.t.  g(x, v) = 0``. Its KKT system

    (grad h + jac_g^T y, g) + N_{C x R^m}(x, y) ∋ 0

is a generalized equation in ``z = (x, y)``; SQP (exact or Broyden class),
sequential convexification and projected gradient descent are Josephy-Newton
methods for it, and the augmented Lagrangian method is a multistep instance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .disturbances import DisturbanceSequence
from .errors import ConfigError, DimensionMismatch, SolverError
from .geneq import (
    DIVERGENCE_BOUND,
    EXACT,
    SCALED,
    SQP,
    ZERO,
    GeneralizedEquation,
    Linearization,
    NewtonConfig,
    Trace,
    fd_jacobian,
    run_newton,
    solve_step_avi,
)
from .geometry import Box, natural_residual, project_box
from .multistep import (
    Inexactness,
    MultistepConfig,
    MultistepProblem,
    inner_solve,
    run_multistep,
)
from .subproblem import MixedAvi

_log = logging.getLogger(__name__)

DISTURBANCE_SHAPES = ("g", "grad_h", "kkt", "none")
LICQ_TOL = 1e-8


@dataclass(frozen=True)
class NlpProblem:
    """``min_{x in C} h(x)  s.t.  g(x) = 0`` with disturbance hooks.

    The callables take ``x`` only; the disturbance ``v`` is applied according
    to ``disturbance``: ``"g"`` adds ``v`` (length m) to the constraints,
    ``"grad_h"`` adds ``v`` (length n) to the cost gradient, ``"kkt"`` adds
    ``v`` (length n + m) to both, ``"none"`` ignores it.
    """

    h: Callable
    grad_h: Callable
    g: Callable
    jac_g: Callable
    C: Box
    hess_L: Callable | None = None
    xbar: np.ndarray | None = None
    ybar: np.ndarray | None = None
    disturbance: str = "g"
    name: str = ""
    kkt_tol: float = 1e-8

    def __post_init__(self):
        if self.disturbance not in DISTURBANCE_SHAPES:
            raise ConfigError(f"disturbance shape must be one of {DISTURBANCE_SHAPES}")
        for attr in ("xbar", "ybar"):
            val = getattr(self, attr)
            if val is not None:
                object.__setattr__(self, attr, np.atleast_1d(np.asarray(val, dtype=float)))
        if self.xbar is not None and self.ybar is not None:
            res = kkt_residual(self, self.xbar, self.ybar)
            if res > self.kkt_tol:
                raise ValueError(f"(xbar, ybar) violates KKT (residual {res:.3e})")
            lc = licq_check(self, self.xbar)
            if not lc.holds:
                raise ValueError(f"LICQ fails at xbar (sigma_min={lc.sigma_min:.3e})")

    @property
    def n(self) -> int:
        return self.C.dim

    @property
    def m(self) -> int:
        return np.atleast_1d(self.g(np.zeros(self.n) if self.xbar is None else self.xbar)).size

    @property
    def dim_v(self) -> int:
        return {"g": self.m, "grad_h": self.n, "kkt": self.n + self.m, "none": 1}[self.disturbance]

    @property
    def zbar(self):
        if self.xbar is None or self.ybar is None:
            return None
        return np.concatenate([self.xbar, self.ybar])

    def with_disturbance(self, shape: str) -> "NlpProblem":
        return replace(self, disturbance=shape)

    def _split_v(self, v):
        n, m = self.n, self.m
        if v is None or self.disturbance == "none":
            return np.zeros(n), np.zeros(m)
        v = np.asarray(v, dtype=float).reshape(self.dim_v)
        if self.disturbance == "g":
            return np.zeros(n), v
        if self.disturbance == "grad_h":
            return v, np.zeros(m)
        return v[:n], v[n:]

    def objective(self, x, v=None) -> float:
        vh, _ = self._split_v(v)
        return float(self.h(x)) + float(vh @ x)

    def gradient(self, x, v=None) -> np.ndarray:
        vh, _ = self._split_v(v)
        return np.atleast_1d(np.asarray(self.grad_h(x), dtype=float)) + vh

    def constraints(self, x, v=None) -> np.ndarray:
        _, vg = self._split_v(v)
        return np.atleast_1d(np.asarray(self.g(x), dtype=float)) + vg

    def constraint_jacobian(self, x, v=None) -> np.ndarray:
        J = np.asarray(self.jac_g(x), dtype=float)
        return J.reshape(self.m, self.n)

    def lagrangian_gradient(self, x, y, v=None) -> np.ndarray:
        return self.gradient(x, v) + self.constraint_jacobian(x, v).T @ y

    def lagrangian_hessian(self, x, y, v=None) -> np.ndarray:
        """Hessian of ``h + <y, g>`` in ``x`` (central differences without ``hess_L``)."""
        if self.hess_L is not None:
            return np.asarray(self.hess_L(x, y), dtype=float).reshape(self.n, self.n)
        H = fd_jacobian(lambda xx: self.lagrangian_gradient(xx, y, v), np.asarray(x, dtype=float))
        return 0.5 * (H + H.T)


class KktEvaluation(NamedTuple):
    residual: np.ndarray
    cone: Box


class LicqResult(NamedTuple):
    holds: bool
    sigma_min: float


def assemble_kkt(nlp: NlpProblem, x, y, v=None) -> KktEvaluation:
    """``(grad h + jac_g^T y, g)`` and the cone set ``C x R^m``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (nlp.n,) or y.shape != (nlp.m,):
        raise DimensionMismatch(f"x {x.shape}, y {y.shape} for n={nlp.n}, m={nlp.m}")
    r = np.concatenate([nlp.lagrangian_gradient(x, y, v), nlp.constraints(x, v)])
    return KktEvaluation(r, nlp.C.product(Box.free(nlp.m)))


def kkt_residual(nlp: NlpProblem, x, y, v=None) -> float:
    """Norm of the natural residual of the KKT system."""
    r, cone = assemble_kkt(nlp, x, y, v)
    z = np.concatenate([np.atleast_1d(x), np.atleast_1d(y)]).astype(float)
    return float(np.linalg.norm(natural_residual(z, r, cone)))


def licq_check(nlp: NlpProblem, x) -> LicqResult:
    J = nlp.constraint_jacobian(np.atleast_1d(np.asarray(x, dtype=float)))
    if J.shape[0] == 0:
        return LicqResult(True, np.inf)
    s = np.linalg.svd(J, compute_uv=False)
    sigma = float(s[-1]) if J.shape[0] <= J.shape[1] else 0.0
    return LicqResult(sigma > LICQ_TOL, sigma)


def kkt_equation(nlp: NlpProblem) -> GeneralizedEquation:
    """The KKT system as a generalized equation in ``z = (x, y)``."""
    n, m = nlp.n, nlp.m

    def f(z, v):
        return assemble_kkt(nlp, z[:n], z[n:], v).residual

    def jac(z, v):
        x, y = z[:n], z[n:]
        J = nlp.constraint_jacobian(x, v)
        K = np.zeros((n + m, n + m))
        K[:n, :n] = nlp.lagrangian_hessian(x, y, v)
        K[:n, n:] = J.T
        K[n:, :n] = J
        return K

    return GeneralizedEquation(f, nlp.C.product(Box.free(m)), jac, zbar=nlp.zbar,
                               dim_v=nlp.dim_v, n_primal=n, name=nlp.name)


def method_linearization(kind: str, alpha: float | None = None, B=None) -> Linearization:
    """Linearization for ``sqp`` (optionally with ``B``), ``seq-convex`` or ``pgd``."""
    if kind == "sqp":
        return Linearization(SQP, B=None if B is None else np.asarray(B, dtype=float))
    if kind == "seq-convex":
        return Linearization(ZERO)
    if kind == "pgd":
        return Linearization(SCALED, alpha=alpha)
    raise ValueError(f"unknown linearized method {kind!r}")


def projected_gradient_update(nlp: NlpProblem, x, y, alpha: float, v=None):
    """Explicit projected-gradient update: ``x+ = P_C(x - alpha grad_x L)``, ``y+ = y - alpha g``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_next = project_box(x - alpha * nlp.lagrangian_gradient(x, y, v), nlp.C)
    return x_next, y - alpha * nlp.constraints(x, v)


# --------------------------------------------------------------------------- SQP


@dataclass(frozen=True)
class HessianApprox:
    """Symmetric Hessian approximation updated by a Broyden-class formula."""

    B: np.ndarray
    family: str = "bfgs"
    curvature_skip_tol: float = 1e-8
    skipped: int = 0

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != B.shape[1] or not np.allclose(B, B.T, atol=1e-12 * max(1.0, np.abs(B).max())):
            raise ValueError("Hessian approximation must be a symmetric square matrix")
        if self.family not in ("bfgs", "dfp"):
            raise ValueError("family must be 'bfgs' or 'dfp'")
        object.__setattr__(self, "B", 0.5 * (B + B.T))


def broyden_update(H: HessianApprox, s, yvec) -> HessianApprox:
    """BFGS or DFP update of ``B`` from the secant pair ``(s, yvec)``.

    The update is skipped when ``yvec^T s <= curvature_skip_tol |s| |yvec|``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    yv = np.atleast_1d(np.asarray(yvec, dtype=float))
    B = H.B
    curv = float(yv @ s)
    if curv <= H.curvature_skip_tol * np.linalg.norm(s) * np.linalg.norm(yv) or curv <= 0:
        return replace(H, skipped=H.skipped + 1)
    if H.family == "bfgs":
        Bs = B @ s
        B_new = B - np.outer(Bs, Bs) / float(s @ Bs) + np.outer(yv, yv) / curv
    else:
        rho = 1.0 / curv
        P = np.eye(s.size) - rho * np.outer(yv, s)
        B_new = P @ B @ P.T + rho * np.outer(yv, yv)
    return replace(H, B=0.5 * (B_new + B_new.T))


def sqp_step(nlp: NlpProblem, x_k, y_k, B, v_k=None, *, tol: float = 1e-13,
             oracle: bool = False):
    """Primal-dual solution of the SQP subproblem.

    ``min_{x in C} 1/2 <B (x - x_k), x - x_k> + grad h(x_k)^T (x - x_k)``
    subject to the linearized constraints, solved through its KKT system.
    Returns ``(x_next, y_next)``.
    """
    n, m = nlp.n, nlp.m
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    J = nlp.constraint_jacobian(x_k, v_k)
    M = np.block([[B, J.T], [J, np.zeros((m, m))]])
    a = np.concatenate([nlp.gradient(x_k, v_k) - B @ x_k, nlp.constraints(x_k, v_k) - J @ x_k])
    avi = MixedAvi(a, M, nlp.C.product(Box.free(m)))
    z = solve_step_avi(avi, np.concatenate([x_k, y_k]), tol=tol, oracle=oracle)
    return z[:n], z[n:]


def initial_hessian(nlp: NlpProblem, x0, y0, v=None) -> np.ndarray:
    """Scaled identity ``|yvec| / |s| I`` from a small probe step along the Lagrangian gradient."""
    x0 = np.asarray(x0, dtype=float)
    gL = nlp.lagrangian_gradient(x0, y0, v)
    nrm = np.linalg.norm(gL)
    direction = -gL / nrm if nrm > 0 else np.eye(nlp.n)[0]
    s = 1e-4 * (1.0 + np.linalg.norm(x0)) * direction
    yv = nlp.lagrangian_gradient(x0 + s, y0, v) - gL
    scale = np.linalg.norm(yv) / np.linalg.norm(s)
    return max(scale, 1e-8) * np.eye(nlp.n)


@dataclass(frozen=True)
class SqpConfig:
    family: str = "bfgs"  # "bfgs", "dfp" or "exact"
    tol: float = 1e-10
    max_iter: int = 100
    curvature_skip_tol: float = 1e-8
    enable_oracle: bool = False
    avi_tol: float = 1e-13
    divergence_bound: float = DIVERGENCE_BOUND


def run_sqp(nlp: NlpProblem, x0, y0, B0=None, dist: DisturbanceSequence | None = None,
            cfg: SqpConfig = SqpConfig()) -> Trace:
    """SQP iterations with exact or Broyden-class Hessians.

    ``extras['B_errors'][k]`` is ``|B_k - hess L(xbar, ybar)|`` (spectral
    norm) for the matrix used at iterate ``k`` and ``extras['combined']``
    adds the primal-dual error, when the solution is known.
    """
    if cfg.family not in ("bfgs", "dfp", "exact"):
        raise ConfigError(f"unknown SQP family {cfg.family!r}")
    if dist is None:
        dist = DisturbanceSequence.zero((nlp.dim_v,))
    n = nlp.n
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    trace = Trace(zbar=nlp.zbar, sup_norm=dist.sup_norm, label=nlp.name)
    H_ref = None
    if nlp.xbar is not None and nlp.ybar is not None:
        H_ref = nlp.lagrangian_hessian(nlp.xbar, nlp.ybar)
    ex = trace.extras
    ex.update(B_errors=[], combined=[], skipped=0)
    if cfg.family == "exact":
        approx = None
    else:
        B0 = initial_hessian(nlp, x, y) if B0 is None else B0
        approx = HessianApprox(B0, cfg.family, cfg.curvature_skip_tol)

    def current_B(x, y, v=None):
        return nlp.lagrangian_hessian(x, y, v) if approx is None else approx.B

    def record_B(B):
        if H_ref is not None:
            be = float(np.linalg.norm(B - H_ref, 2))
            ex["B_errors"].append(be)
            ex["combined"].append(trace.errors_to_zbar[-1] + be)

    trace.record(np.concatenate([x, y]), kkt_residual(nlp, x, y))
    record_B(current_B(x, y))
    for k in range(cfg.max_iter):
        if trace.residuals[-1] <= cfg.tol:
            trace.status = "converged"
            break
        v = np.asarray(dist.sample(k), dtype=float).reshape(nlp.dim_v)
        B = current_B(x, y, v)
        try:
            x_new, y_new = sqp_step(nlp, x, y, B, v, tol=cfg.avi_tol, oracle=cfg.enable_oracle)
        except SolverError as exc:
            trace.step_status.append(exc.status)
            trace.status = exc.status
            return trace
        if approx is not None:
            s = x_new - x
            yv = nlp.lagrangian_gradient(x_new, y_new, v) - nlp.lagrangian_gradient(x, y_new, v)
            approx = broyden_update(approx, s, yv)
        x, y = x_new, y_new
        trace.record(np.concatenate([x, y]), kkt_residual(nlp, x, y), v)
        record_B(current_B(x, y))
        if not np.all(np.isfinite(trace.final)) or np.linalg.norm(trace.final) > cfg.divergence_bound:
            trace.status = "diverged"
            return trace
    else:
        trace.status = "converged" if trace.residuals[-1] <= cfg.tol else "maxiter"
    ex["skipped"] = 0 if approx is None else approx.skipped
    return trace


def run_linearized(nlp: NlpProblem, kind: str, x0, y0, dist: DisturbanceSequence | None = None,
               cfg: NewtonConfig = NewtonConfig(), alpha: float | None = None, B=None) -> Trace:
    """Josephy-Newton iterations on the KKT system with a method-specific linearization."""
    ge = kkt_equation(nlp)
    z0 = np.concatenate([np.atleast_1d(x0), np.atleast_1d(y0)]).astype(float)
    lin = Linearization(EXACT) if kind == "newton" else method_linearization(kind, alpha, B)
    return run_newton(ge, lin, z0, dist, cfg)


# --------------------------------------------------------------------------- ALM


@dataclass(frozen=True)
class AlmConfig:
    rho: float = 10.0
    inner: Inexactness = field(default_factory=Inexactness)
    max_outer: int = 50
    tol: float = 1e-10
    inner_tol: float = 1e-10
    avi_tol: float = 1e-13

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError("ALM penalty rho must be positive")

    def multistep(self) -> MultistepConfig:
        return MultistepConfig(tol=self.tol, max_iter=self.max_outer, inner=self.inner,
                               inner_tol=self.inner_tol, avi_tol=self.avi_tol)


def alm_problem(nlp: NlpProblem, rho: float) -> MultistepProblem:
    """The augmented Lagrangian method as a multistep problem.

    Inner equation: ``grad h + jac_g^T y_k + rho jac_g^T g + N_C(x) ∋ 0``.
    Outer partial operator: ``H_y = [jac_g^T; -I / rho]``.
    """
    n, m = nlp.n, nlp.m

    def f(x, y, v):
        return assemble_kkt(nlp, x, y, v).residual

    def f_tilde(x, y, v):
        J = nlp.constraint_jacobian(x, v)
        return nlp.gradient(x, v) + J.T @ (y + rho * nlp.constraints(x, v))

    def jac_tilde(x, y, v):
        J = nlp.constraint_jacobian(x, v)
        y_shift = y + rho * nlp.constraints(x, v)
        return nlp.lagrangian_hessian(x, y_shift, v) + rho * J.T @ J

    def H_y(xi, eta, v):
        return np.vstack([nlp.constraint_jacobian(xi, v).T, -np.eye(m) / rho])

    return MultistepProblem(f, nlp.C.product(Box.free(m)), f_tilde, nlp.C, H_y, n, m,
                            jac_tilde=jac_tilde, xbar=nlp.xbar, ybar=nlp.ybar,
                            dim_v=nlp.dim_v, name=f"{nlp.name}:alm")


def alm_dual_update(nlp: NlpProblem, rho: float, x_next, y_k, v_k=None) -> np.ndarray:
    """Closed-form multiplier update ``y_k + rho g(x_next, v_k)``."""
    return np.asarray(y_k, dtype=float) + rho * nlp.constraints(x_next, v_k)


def alm_inner_solve(nlp: NlpProblem, y_k, v_k=None, cfg: AlmConfig = AlmConfig(),
                    x_start=None, k: int = 0) -> np.ndarray:
    """Minimizer of the augmented Lagrangian over ``C`` for fixed ``y_k``."""
    mp = alm_problem(nlp, cfg.rho)
    v = np.zeros(nlp.dim_v) if v_k is None else np.asarray(v_k, dtype=float)
    x0 = nlp.xbar if x_start is None and nlp.xbar is not None else x_start
    return inner_solve(mp, np.atleast_1d(y_k), v, cfg.inner, x0, k=k, tol=cfg.inner_tol).x


def run_alm(nlp: NlpProblem, x0, y0, dist: DisturbanceSequence | None = None,
            cfg: AlmConfig = AlmConfig()) -> Trace:
    """Augmented Lagrangian iterations realized through :func:`run_multistep`.

    ``extras['outer_gap']`` holds, per step, the distance between the
    closed-form multiplier update and the partial Newton step.
    """
    mp = alm_problem(nlp, cfg.rho)
    trace = run_multistep(
        mp, x0, y0, dist, cfg.multistep(),
        closed_form=lambda x, y, v: alm_dual_update(nlp, cfg.rho, x, y, v),
    )
    trace.extras["rho"] = cfg.rho
    return trace
