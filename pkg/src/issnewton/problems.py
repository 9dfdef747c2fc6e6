"""Built-in test problems and construction of inline problems from config data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .geneq import GeneralizedEquation, solve_generalized_equation
from .geometry import Box
from .nlp import NlpProblem, kkt_equation


def scalar_eq(disturbance: str = "kkt") -> NlpProblem:
    """``min x^2  s.t.  x - 1 = 0``; solution ``(1, -2)``."""
    return NlpProblem(
        h=lambda x: float(x[0] ** 2),
        grad_h=lambda x: np.array([2.0 * x[0]]),
        g=lambda x: np.array([x[0] - 1.0]),
        jac_g=lambda x: np.array([[1.0]]),
        C=Box.free(1),
        hess_L=lambda x, y: np.array([[2.0]]),
        xbar=[1.0], ybar=[-2.0], disturbance=disturbance, name="scalar-eq",
    )


def rosenbrock_circle(disturbance: str = "kkt") -> NlpProblem:
    """Rosenbrock cost on the circle ``x1^2 + x2^2 = 2``; solution ``x = (1, 1)``, ``y = 0``."""

    def h(x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def grad_h(x):
        return np.array([
            -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
            200 * (x[1] - x[0] ** 2),
        ])

    def hess_L(x, y):
        return np.array([
            [2 - 400 * x[1] + 1200 * x[0] ** 2 + 2 * y[0], -400 * x[0]],
            [-400 * x[0], 200 + 2 * y[0]],
        ])

    return NlpProblem(
        h=h, grad_h=grad_h,
        g=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 2.0]),
        jac_g=lambda x: np.array([[2 * x[0], 2 * x[1]]]),
        C=Box.free(2), hess_L=hess_L,
        xbar=[1.0, 1.0], ybar=[0.0], disturbance=disturbance, name="rosenbrock-circle",
    )


# Strictly complementary solution: x1 at its lower bound, x2 interior, x3 at its upper bound.
_BOX_QP_Q = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]])
_BOX_QP_C = np.array([0.0, -3.0, -4.0])
_BOX_QP_A = np.array([[1.0, 1.0, 1.0]])
_BOX_QP_B = np.array([1.5])


def box_qp(disturbance: str = "kkt") -> NlpProblem:
    """Convex QP on ``[0, 1]^3`` with one linear equality; solution ``(0, 0.5, 1)``, ``y = 0.5``."""
    return quadratic_program(_BOX_QP_Q, _BOX_QP_C, _BOX_QP_A, _BOX_QP_B, Box.uniform(3, 0.0, 1.0),
                             xbar=[0.0, 0.5, 1.0], ybar=[0.5], disturbance=disturbance,
                             name="box-qp")


def two_constraint(disturbance: str = "kkt") -> NlpProblem:
    """Nonconvex cost, sphere and plane constraints; solution ``(1, 1, 1)``, ``y = (0.5, 0)``.

    The Lagrangian Hessian is indefinite (negative curvature normal to the
    constraints), so the augmented Lagrangian method needs a large enough
    penalty.
    """
    d = np.array([1.0, 1.0, -2.0])
    one = np.ones(3)

    def h(x):
        return float(-x.sum() + 0.5 * (d @ x) ** 2 - (x.sum() - 3.0) ** 2)

    def grad_h(x):
        return -one + (d @ x) * d - 2.0 * (x.sum() - 3.0) * one

    def hess_L(x, y):
        return np.outer(d, d) - 2.0 * np.outer(one, one) + 2.0 * y[0] * np.eye(3)

    return NlpProblem(
        h=h, grad_h=grad_h,
        g=lambda x: np.array([x @ x - 3.0, x[0] - x[1]]),
        jac_g=lambda x: np.array([2.0 * x, [1.0, -1.0, 0.0]]),
        C=Box.free(3), hess_L=hess_L,
        xbar=[1.0, 1.0, 1.0], ybar=[0.5, 0.0], disturbance=disturbance, name="two-constraint",
    )


def scalar_root() -> GeneralizedEquation:
    """``z^2 - 1 + v = 0`` on the real line; solution ``1``."""
    return GeneralizedEquation.additive(
        lambda z: z**2 - 1.0, Box.free(1), jacobian=lambda z: np.diag(2.0 * z),
        zbar=[1.0], name="scalar-root",
    )


def quadratic_program(Q, c, A, b, C: Box, xbar=None, ybar=None, disturbance="kkt",
                      name="qp") -> NlpProblem:
    """``min 1/2 x^T Q x + c^T x  s.t.  A x = b,  x in C``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Q = 0.5 * (Q + Q.T)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return NlpProblem(
        h=lambda x: float(0.5 * x @ Q @ x + c @ x),
        grad_h=lambda x: Q @ x + c,
        g=lambda x: A @ x - b,
        jac_g=lambda x: A,
        C=C, hess_L=lambda x, y: Q,
        xbar=xbar, ybar=ybar, disturbance=disturbance, name=name,
    )


def rosenbrock_program(A=None, b=None, radius2=None, scale: float = 100.0,
                       C: Box | None = None, xbar=None, ybar=None, disturbance="kkt",
                       name="rosenbrock") -> NlpProblem:
    """2-D Rosenbrock cost with a circle constraint (``radius2``) or linear constraints."""
    if (radius2 is None) == (A is None):
        raise ConfigError("rosenbrock problem needs exactly one of radius2 or A/b")

    def h(x):
        return float((1 - x[0]) ** 2 + scale * (x[1] - x[0] ** 2) ** 2)

    def grad_h(x):
        return np.array([-2 * (1 - x[0]) - 4 * scale * x[0] * (x[1] - x[0] ** 2),
                         2 * scale * (x[1] - x[0] ** 2)])

    def hess_h(x):
        return np.array([[2 - 4 * scale * x[1] + 12 * scale * x[0] ** 2, -4 * scale * x[0]],
                         [-4 * scale * x[0], 2 * scale]])

    if radius2 is not None:
        g = lambda x: np.array([x @ x - radius2])  # noqa: E731
        jac_g = lambda x: np.array([2 * x])  # noqa: E731
        hess_L = lambda x, y: hess_h(x) + 2 * y[0] * np.eye(2)  # noqa: E731
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        g = lambda x: A @ x - b  # noqa: E731
        jac_g = lambda x: A  # noqa: E731
        hess_L = lambda x, y: hess_h(x)  # noqa: E731
    return NlpProblem(h, grad_h, g, jac_g, C or Box.free(2), hess_L, xbar, ybar,
                      disturbance, name)


# --------------------------------------------------------------------------- parametric families


@dataclass(frozen=True)
class ParametricEquation:
    """``f(z, p1, p2) + N_C(z) ∋ 0`` with two parameter blocks."""

    f: Callable
    C: Box
    p1_dim: int
    p2_dim: int
    jacobian: Callable | None = None
    z_guess: np.ndarray | None = None
    name: str = ""

    def at(self, p1, p2) -> GeneralizedEquation:
        p1 = np.atleast_1d(np.asarray(p1, dtype=float))
        p2 = np.atleast_1d(np.asarray(p2, dtype=float))
        jac = None
        if self.jacobian is not None:
            jac = lambda z, v: self.jacobian(z, p1, p2)  # noqa: E731
        return GeneralizedEquation(lambda z, v: self.f(z, p1, p2), self.C, jac, dim_v=1)

    def solve(self, p1, p2, z0=None, tol: float = 1e-12) -> np.ndarray:
        z0 = self.z_guess if z0 is None else z0
        z0 = np.zeros(self.C.dim) if z0 is None else z0
        return solve_generalized_equation(self.at(p1, p2), z0, tol=tol)


def affine_probe() -> ParametricEquation:
    """``z - p1 - 2 p2 = 0`` on the real line; solution map ``s(p) = p1 + 2 p2``."""
    return ParametricEquation(
        f=lambda z, p1, p2: z - p1 - 2.0 * p2,
        C=Box.free(1), p1_dim=1, p2_dim=1,
        jacobian=lambda z, p1, p2: np.eye(1), name="affine",
    )


def scalar_eq_parametric() -> ParametricEquation:
    """KKT of ``min x^2 + p2 x  s.t.  x = p1`` in ``z = (x, y)``; ``s(p) = (p1, -2 p1 - p2)``."""
    return ParametricEquation(
        f=lambda z, p1, p2: np.array([2 * z[0] + z[1] + p2[0], z[0] - p1[0]]),
        C=Box.free(2), p1_dim=1, p2_dim=1,
        jacobian=lambda z, p1, p2: np.array([[2.0, 1.0], [1.0, 0.0]]),
        z_guess=np.array([1.0, -2.0]), name="scalar-eq",
    )


NLP_REGISTRY: dict[str, Callable[..., NlpProblem]] = {
    "scalar-eq": scalar_eq,
    "rosenbrock-circle": rosenbrock_circle,
    "box-qp": box_qp,
    "two-constraint": two_constraint,
}
GE_REGISTRY: dict[str, Callable[[], GeneralizedEquation]] = {"scalar-root": scalar_root}
PROBE_REGISTRY: dict[str, Callable[[], ParametricEquation]] = {
    "affine": affine_probe,
    "scalar-eq": scalar_eq_parametric,
}

DEFAULT_STARTS = {
    "scalar-eq": ([0.0], [0.0]),
    "rosenbrock-circle": ([1.05, 0.95], [0.1]),
    "box-qp": ([0.5, 0.5, 0.5], [0.0]),
    "two-constraint": ([1.1, 0.95, 0.9], [0.4, 0.1]),
    "scalar-root": ([2.0], []),
}


def list_problems() -> list[tuple[str, str]]:
    out = []
    for name, fn in {**NLP_REGISTRY, **GE_REGISTRY}.items():
        out.append((name, (fn.__doc__ or "").strip().splitlines()[0]))
    return sorted(out)


def get_problem(name: str, disturbance: str = "kkt"):
    """Registered problem by name: an :class:`NlpProblem` or a :class:`GeneralizedEquation`."""
    if name in NLP_REGISTRY:
        return NLP_REGISTRY[name](disturbance)
    if name in GE_REGISTRY:
        return GE_REGISTRY[name]()
    raise ConfigError(f"unknown problem {name!r}; known: {sorted({**NLP_REGISTRY, **GE_REGISTRY})}")


def _floats(val, name):
    if isinstance(val, (list, tuple, np.ndarray)):
        return np.asarray(val, dtype=float)
    try:
        rows = [r for r in str(val).split(";") if r.strip()]
        parsed = [[float(t) for t in r.replace(",", " ").split()] for r in rows]
    except ValueError as exc:
        raise ConfigError(f"cannot parse numbers in {name}={val!r}") from exc
    arr = np.array(parsed, dtype=float)
    return arr[0] if arr.shape[0] == 1 and ";" not in str(val) else arr


def problem_from_config(spec: dict, disturbance: str = "kkt") -> NlpProblem:
    """Inline problem from key-value data.

    ``kind = qp`` takes ``Q``, ``c``, ``A``, ``b``; ``kind = rosenbrock`` takes
    either ``radius2`` or ``A``, ``b`` and an optional ``scale``. Both accept
    ``lower``, ``upper``, ``xbar``, ``ybar`` and ``x0``, ``y0``. Matrices are
    written row by row separated by ``;``. Without ``xbar``/``ybar`` the
    reference solution is computed by Newton's method from ``x0``, ``y0``.
    """
    kind = str(spec.get("kind", "")).strip()
    get = lambda k: _floats(spec[k], k) if k in spec else None  # noqa: E731
    n = None
    for key in ("c", "x0", "lower", "upper", "xbar"):
        if key in spec:
            n = get(key).size
            break
    if kind == "rosenbrock":
        n = 2
    if n is None:
        raise ConfigError("inline problem needs c, x0, lower/upper or xbar to fix its dimension")
    lower = get("lower") if "lower" in spec else np.full(n, -np.inf)
    upper = get("upper") if "upper" in spec else np.full(n, np.inf)
    C = Box(np.broadcast_to(lower, (n,)), np.broadcast_to(upper, (n,)))
    name = str(spec.get("name", f"inline-{kind}"))
    if kind == "qp":
        for key in ("Q", "c", "A", "b"):
            if key not in spec:
                raise ConfigError(f"qp problem needs {key}")
        base = quadratic_program(np.atleast_2d(get("Q")), get("c"), np.atleast_2d(get("A")),
                                 get("b"), C, disturbance=disturbance, name=name)
    elif kind == "rosenbrock":
        A = np.atleast_2d(get("A")) if "A" in spec else None
        radius2 = float(spec["radius2"]) if "radius2" in spec else None
        base = rosenbrock_program(A, get("b"), radius2, float(spec.get("scale", 100.0)), C,
                                  disturbance=disturbance, name=name)
    else:
        raise ConfigError(f"inline problem kind must be 'qp' or 'rosenbrock', got {kind!r}")
    xbar, ybar = get("xbar"), get("ybar")
    if xbar is None or ybar is None:
        x0 = get("x0") if "x0" in spec else np.zeros(n)
        y0 = get("y0") if "y0" in spec else np.zeros(base.m)
        z = solve_generalized_equation(kkt_equation(base), np.concatenate([x0, y0]), tol=1e-10)
        xbar, ybar = z[:n], z[n:]
    return NlpProblem(base.h, base.grad_h, base.g, base.jac_g, base.C, base.hess_L,
                      xbar, ybar, disturbance, name)
