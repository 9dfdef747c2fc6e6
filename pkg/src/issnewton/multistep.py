"""Multistep Newton-type method for ``f(x, y, v) + N_C(x, y) ∋ 0``.

Each iteration first solves an inner generalized equation for ``x`` with
``y`` frozen, then takes a partial Newton step in ``y`` only:

    f~(x_{k+1}, y_k, v_k) + N_C~(x_{k+1}) ∋ 0
    f(x_{k+1}, y_k, v_k) + H_y(x_{k+1}, y_k, v_k) (y_{k+1} - y_k) + N_C(x_{k+1}, y_{k+1}) ∋ 0

Only the partial operator ``H_y`` is ever formed. The ``y`` update is
computed from the rows paired with ``y`` by the cone; the remaining rows are
reported as a consistency residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .disturbances import DisturbanceSequence
from .errors import ConfigError, SolverError
from .geneq import (
    DIVERGENCE_BOUND,
    EXACT,
    GeneralizedEquation,
    Linearization,
    Trace,
    josephy_newton_step,
    solve_generalized_equation,
    solve_step_avi,
)
from .geometry import Box, natural_residual, project_box
from .subproblem import MixedAvi

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Inexactness:
    """How the inner equation is solved: ``exact``, ``newton`` (``steps`` steps) or ``noise``."""

    mode: str = "exact"
    steps: int = 1
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "newton", "noise"):
            raise ConfigError(f"unknown inner mode {self.mode!r}")
        if self.mode == "newton" and self.steps < 1:
            raise ConfigError("newton inner mode needs steps >= 1")

    @classmethod
    def parse(cls, text: str) -> "Inexactness":
        """``exact``, ``newton:2`` or ``noise:1e-6[:seed=3]``."""
        parts = [p for p in str(text).split(":") if p]
        if not parts:
            raise ConfigError("empty inner spec")
        mode = parts[0]
        try:
            if mode == "exact":
                return cls()
            if mode in ("newton", "newton_steps"):
                return cls("newton", steps=int(parts[1]) if len(parts) > 1 else 1)
            if mode == "noise":
                seed = 0
                for p in parts[2:]:
                    if p.startswith("seed="):
                        seed = int(p[5:])
                return cls("noise", sigma=float(parts[1]), seed=seed)
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad inner spec {text!r}") from exc
        raise ConfigError(f"unknown inner mode {mode!r}")

    def describe(self) -> str:
        if self.mode == "newton":
            return f"newton:{self.steps}"
        if self.mode == "noise":
            return f"noise:{self.sigma:g}"
        return "exact"


@dataclass(frozen=True)
class MultistepProblem:
    """Problem data of the multistep method.

    Parameters
    ----------
    f : callable
        ``f(x, y, v)``, the full residual (length ``nx + ny``).
    C : Box
        Set on ``(x, y)``; its normal cone is the set-valued part.
    f_tilde : callable
        ``f_tilde(x, y, v)``, inner residual in ``x`` (length ``nx``).
    C_tilde : Box
        Set on ``x`` for the inner equation.
    H_y : callable
        ``H_y(xi, eta, v)``, matrix of shape ``(nx + ny, ny)``.
    jac_tilde : callable, optional
        ``jac_tilde(x, y, v)``, Jacobian of ``f_tilde`` in ``x``.
    """

    f: Callable
    C: Box
    f_tilde: Callable
    C_tilde: Box
    H_y: Callable
    nx: int
    ny: int
    jac_tilde: Callable | None = None
    xbar: np.ndarray | None = None
    ybar: np.ndarray | None = None
    dim_v: int = 1
    name: str = ""

    def __post_init__(self):
        if self.C.dim != self.nx + self.ny or self.C_tilde.dim != self.nx:
            raise ValueError("box dimensions do not match nx, ny")

    @property
    def zbar(self):
        if self.xbar is None or self.ybar is None:
            return None
        return np.concatenate([np.atleast_1d(self.xbar), np.atleast_1d(self.ybar)])

    def residual(self, x, y, v=None) -> float:
        v = np.zeros(self.dim_v) if v is None else v
        z = np.concatenate([x, y])
        return float(np.linalg.norm(natural_residual(z, self.f(x, y, v), self.C)))

    def inner_equation(self, y, v) -> GeneralizedEquation:
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        jac = None
        if self.jac_tilde is not None:
            jac = lambda x, _v: self.jac_tilde(x, y, v)  # noqa: E731
        return GeneralizedEquation(lambda x, _v: self.f_tilde(x, y, v), self.C_tilde, jac,
                                   dim_v=1, name=f"{self.name}:inner")


class InnerStep(NamedTuple):
    x: np.ndarray
    error: float


@dataclass(frozen=True)
class MultistepConfig:
    tol: float = 1e-12
    max_iter: int = 50
    inner: Inexactness = Inexactness()
    inner_tol: float = 1e-12
    inner_max_iter: int = 100
    avi_tol: float = 1e-13
    divergence_bound: float = DIVERGENCE_BOUND


def inner_solve(mp: MultistepProblem, y_k, v_k, inexactness: Inexactness = Inexactness(),
                x_prev=None, *, k: int = 0, tol: float = 1e-12,
                max_iter: int = 100) -> InnerStep:
    """Solve the inner equation for ``x_{k+1}`` to the requested inexactness.

    Newton iterations start from ``x_prev`` so that, when several inner
    solutions exist, the one closest to the previous iterate is selected.
    The returned ``error`` is the distance to the exact inner solution.
    """
    ge = mp.inner_equation(y_k, v_k)
    x0 = np.zeros(mp.nx) if x_prev is None else np.asarray(x_prev, dtype=float)
    x_exact = solve_generalized_equation(ge, x0, tol=tol, max_iter=max_iter)
    if inexactness.mode == "exact":
        return InnerStep(x_exact, 0.0)
    if inexactness.mode == "newton":
        x = x0
        lin = Linearization(EXACT)
        for _ in range(inexactness.steps):
            x = josephy_newton_step(ge, lin, x)
    else:
        rng = np.random.default_rng([inexactness.seed, k])
        d = rng.standard_normal(mp.nx)
        x = project_box(x_exact + inexactness.sigma * d / np.linalg.norm(d), mp.C_tilde)
    return InnerStep(x, float(np.linalg.norm(x - x_exact)))


def _outer_avi(mp: MultistepProblem, x_next, y_k, v_k):
    fz = np.asarray(mp.f(x_next, y_k, v_k), dtype=float)
    Hy = np.asarray(mp.H_y(x_next, y_k, v_k), dtype=float).reshape(mp.nx + mp.ny, mp.ny)
    rows = slice(mp.nx, mp.nx + mp.ny)
    avi = MixedAvi(fz[rows] - Hy[rows] @ y_k, Hy[rows], mp.C.slice(mp.nx, mp.nx + mp.ny))
    return avi, fz, Hy


def outer_step(mp: MultistepProblem, x_next, y_k, v_k, *, tol: float = 1e-13) -> np.ndarray:
    """Partial Newton step in ``y`` with ``x = x_next`` held fixed."""
    y_k = np.asarray(y_k, dtype=float)
    avi, _, _ = _outer_avi(mp, x_next, y_k, v_k)
    return solve_step_avi(avi, y_k, tol=tol)


def outer_consistency(mp: MultistepProblem, x_next, y_next, y_k, v_k) -> float:
    """Natural residual of the ``x`` rows of the outer inclusion at ``(x_next, y_next)``."""
    y_k = np.asarray(y_k, dtype=float)
    _, fz, Hy = _outer_avi(mp, x_next, y_k, v_k)
    lhs = fz[: mp.nx] + Hy[: mp.nx] @ (np.asarray(y_next) - y_k)
    return float(np.linalg.norm(natural_residual(x_next, lhs, mp.C.slice(0, mp.nx))))


def run_multistep(mp: MultistepProblem, x0, y0, dist: DisturbanceSequence | None = None,
                  cfg: MultistepConfig = MultistepConfig(),
                  closed_form: Callable | None = None) -> Trace:
    """Iterate inner solve and outer step, recording ``z_k = (x_k, y_k)``.

    Errors use the product norm ``|x - xbar| + |y - ybar|``. With an inexact
    inner mode the inner error is appended to the recorded disturbance, so
    that fitted gains cover it. ``closed_form(x_next, y_k, v_k)``, when
    given, is compared with the outer step and the gap stored in
    ``extras['outer_gap']``.
    """
    if dist is None:
        dist = DisturbanceSequence.zero((mp.dim_v,))
    x = np.asarray(x0, dtype=float).reshape(mp.nx)
    y = np.asarray(y0, dtype=float).reshape(mp.ny)
    trace = Trace(zbar=mp.zbar, sup_norm=dist.sup_norm, label=mp.name, split=mp.nx)
    ex = trace.extras
    ex.update(inner_errors=[], outer_gap=[], consistency=[], x_errors=[], y_errors=[])

    def record_errors(x, y):
        if mp.xbar is not None and mp.ybar is not None:
            ex["x_errors"].append(float(np.linalg.norm(x - mp.xbar)))
            ex["y_errors"].append(float(np.linalg.norm(y - mp.ybar)))

    trace.record(np.concatenate([x, y]), mp.residual(x, y))
    record_errors(x, y)
    for k in range(cfg.max_iter):
        if trace.residuals[-1] <= cfg.tol:
            trace.status = "converged"
            break
        v = np.asarray(dist.sample(k), dtype=float).reshape(mp.dim_v)
        try:
            inner = inner_solve(mp, y, v, cfg.inner, x, k=k, tol=cfg.inner_tol,
                                max_iter=cfg.inner_max_iter)
            y_next = outer_step(mp, inner.x, y, v, tol=cfg.avi_tol)
        except SolverError as exc:
            _log.info("multistep iteration %d failed: %s", k, exc)
            trace.step_status.append(exc.status)
            trace.status = exc.status
            return trace
        if closed_form is not None:
            ex["outer_gap"].append(float(np.linalg.norm(closed_form(inner.x, y, v) - y_next)))
        ex["consistency"].append(outer_consistency(mp, inner.x, y_next, y, v))
        ex["inner_errors"].append(inner.error)
        recorded_v = v if cfg.inner.mode == "exact" else np.append(v, inner.error)
        x, y = inner.x, y_next
        trace.record(np.concatenate([x, y]), mp.residual(x, y), recorded_v)
        record_errors(x, y)
        if not np.all(np.isfinite(trace.final)) or np.linalg.norm(trace.final) > cfg.divergence_bound:
            trace.status = "diverged"
            return trace
    else:
        trace.status = "converged" if trace.residuals[-1] <= cfg.tol else "maxiter"
    return trace
