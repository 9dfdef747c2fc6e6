"""Empirical input-to-state stability analysis of iterate traces.

All estimators use the Lyapunov function ``V(z) = |z - zbar|`` and fit
linear gains: a per-step bound ``e_{k+1} <= alpha e_k + gamma |v_k|``,
whose geometric closure gives ``e_k <= alpha^k e_0 + gamma |v|_inf / (1 - alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .disturbances import DisturbanceSequence  # noqa: F401  (re-export)
from .errors import InsufficientData, SolverError
from .geneq import Trace, fd_jacobian
from .problems import ParametricEquation
from .subproblem import MixedAvi, estimate_kappa

ALPHA_GRID = np.round(np.arange(1, 100) * 0.01, 2)


@dataclass
class IssEstimate:
    """Fitted linear ISS pair; ``violation_witness`` is ``(k, lhs, rhs)`` when infeasible."""

    alpha: float
    gamma: float
    feasible: bool
    violation_witness: tuple | None = None

    @property
    def asymptotic_gain(self) -> float:
        return self.gamma / (1.0 - self.alpha) if self.feasible else np.inf

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma, "feasible": self.feasible,
                "violation_witness": list(self.violation_witness) if self.violation_witness else None}


def _errors_and_inputs(trace, zbar=None):
    if isinstance(trace, Trace):
        e = trace.errors(zbar) if zbar is not None or trace.errors_to_zbar is None else trace.errors()
        return np.asarray(e, dtype=float), trace.disturbance_norms
    e, vn = trace
    return np.asarray(e, dtype=float), np.asarray(vn, dtype=float)


def estimate_iss_gains(trace, zbar=None, *, start: int = 0, stop: int | None = None,
                       alpha_grid=ALPHA_GRID, atol: float = 1e-13,
                       rtol: float = 1e-9) -> IssEstimate:
    """Fit ``(alpha, gamma)`` by a grid search over ``alpha``.

    For each ``alpha`` the smallest admissible ``gamma`` is
    ``max_k (e_{k+1} - alpha e_k) / |v_k|`` over steps with ``v_k != 0``;
    the ``alpha`` is infeasible if an undisturbed step has
    ``e_{k+1} > alpha e_k``. The feasible pair with the smallest ``gamma`` is
    returned, ties (within ``rtol``) going to the smaller ``alpha``. Errors
    below ``atol`` are treated as round-off.

    ``trace`` is a :class:`Trace` or a pair ``(errors, disturbance_norms)``.
    """
    e, vn = _errors_and_inputs(trace, zbar)
    stop = len(vn) if stop is None else min(stop, len(vn))
    idx = np.arange(start, stop)
    if len(e) < 3 or idx.size < 2:
        raise InsufficientData("need at least 3 iterates (2 steps) to fit ISS gains")
    e_now, e_next, v = e[idx], e[idx + 1], vn[idx]
    disturbed = v > 0
    best = None
    witness = None
    for a in alpha_grid:
        slack = e_next - a * e_now - atol
        bad = (~disturbed) & (slack > 0)
        if np.any(bad):
            k = int(idx[np.argmax(bad)])
            witness = (k, float(e[k + 1]), float(a * e[k]))
            continue
        gamma = float(np.max(np.maximum(slack[disturbed], 0.0) / v[disturbed])) if disturbed.any() else 0.0
        if best is None or gamma < best[1] * (1 - rtol) - 1e-300:
            best = (float(a), gamma)
    if best is None:
        return IssEstimate(float(alpha_grid[-1]), np.inf, False, witness)
    return IssEstimate(best[0], best[1], True, None)


def check_iss_certificate(trace, est: IssEstimate, zbar=None, atol: float = 1e-12) -> bool:
    """``e_k <= alpha^k e_0 + gamma |v|_inf / (1 - alpha)`` for every ``k``."""
    e, vn = _errors_and_inputs(trace, zbar)
    if not est.feasible:
        return False
    sup = float(np.max(vn, initial=0.0))
    k = np.arange(len(e))
    bound = est.alpha**k * e[0] + est.gamma * sup / (1 - est.alpha)
    return bool(np.all(e <= bound * (1 + 1e-9) + atol * (k + 1)))


@dataclass
class QuadraticFit:
    """Fitted constant ``c`` of ``e_{k+1} <= c e_k^2 + kappa e_k |v_k|``."""

    c: float
    steps: list
    step_gains: list
    alpha_fit: float
    e_min: float

    @property
    def quadratic(self) -> bool:
        """False when the contraction does not speed up as the error shrinks."""
        return self.c * self.e_min < 0.5 * self.alpha_fit

    def __float__(self) -> float:
        return float(self.c)


def fit_quadratic_rate(trace, zbar=None, window=(1e-8, 1e-2), *, kappa: float = 0.0,
                       min_steps: int = 2) -> QuadraticFit:
    """Largest ``(e_{k+1} - kappa e_k |v_k|) / e_k^2`` over steps with ``e_k`` in ``window``.

    ``step_gains`` lists ``kappa * e_k``, the disturbance gain that vanishes
    as the iterates approach the solution.
    """
    e, vn = _errors_and_inputs(trace, zbar)
    lo, hi = window
    steps = [k for k in range(len(vn)) if lo <= e[k] <= hi]
    if len(steps) < min_steps:
        raise InsufficientData(f"{len(steps)} steps inside window {window}, need {min_steps}")
    ks = np.array(steps)
    vals = (e[ks + 1] - kappa * e[ks] * vn[ks]) / e[ks] ** 2
    c = max(float(np.max(vals)), 0.0)
    alpha_fit = float(np.max(e[ks + 1] / e[ks]))
    return QuadraticFit(c, steps, [float(kappa * e[k]) for k in steps], alpha_fit,
                        float(np.min(e[ks])))


def observed_rate(errors, floor: float = 1e-12, start: int = 0) -> float:
    """Median one-step contraction ``e_{k+1} / e_k`` over steps whose errors stay above ``floor``."""
    e = np.asarray(errors, dtype=float)[start:]
    ratios = [e[k + 1] / e[k] for k in range(len(e) - 1) if e[k] > floor and e[k + 1] > floor]
    if not ratios:
        raise InsufficientData("no step above the error floor")
    return float(np.median(ratios))


@dataclass
class BallReport:
    rows: list = field(default_factory=list)
    level_errors: dict = field(default_factory=dict)
    gain_ratios: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def ratios_within(self, lo: float, hi: float) -> bool:
        return all(lo <= r <= hi for r in self.gain_ratios)


def ball_containment(traces, zbar=None, gamma_hat: float = 0.0, *, slack: float = 0.1,
                     fraction: float = 0.25, atol: float = 1e-10) -> BallReport:
    """Check that each trace ends in the ball of radius ``gamma_hat |v|_inf``.

    The asymptotic error is the largest error over the final ``fraction`` of
    the iterates. ``gain_ratios`` compares the mean asymptotic errors of
    adjacent disturbance levels (larger over smaller).
    """
    report = BallReport()
    for tr in traces:
        e = tr.errors(zbar) if zbar is not None else tr.errors()
        m = max(1, int(np.ceil(fraction * len(e))))
        lim = float(np.max(e[-m:]))
        bound = gamma_hat * tr.sup_norm * (1 + slack) + atol
        report.rows.append({"label": tr.label, "sup_norm": tr.sup_norm, "limsup": lim,
                            "bound": bound, "passed": lim <= bound})
        report.level_errors.setdefault(tr.sup_norm, []).append(lim)
    levels = sorted(k for k in report.level_errors if k > 0)
    means = [float(np.mean(report.level_errors[k])) for k in levels]
    report.gain_ratios = [means[i + 1] / means[i] if means[i] > 0 else np.inf
                          for i in range(len(levels) - 1)]
    return report


# --------------------------------------------------------------------------- solution-map probing


@dataclass
class SolutionMapProbe:
    """Sampled Lipschitz behaviour of the solution map ``p -> s(p)`` at ``pbar``."""

    pbar: tuple
    lip_f: tuple
    kappa: float
    mu: float
    omega: float
    ratios: tuple
    joint_ratio: float
    slack: float
    failures: int = 0
    samples: int = 0

    @property
    def bounds(self) -> tuple:
        return tuple(self.omega * lf for lf in self.lip_f)

    @property
    def passed(self) -> bool:
        per_axis = all(max(r, default=0.0) <= b * (1 + self.slack) + 1e-12
                       for r, b in zip(self.ratios, self.bounds))
        return per_axis and self.joint_ratio <= 1 + self.slack and self.kappa * self.mu < 1

    def to_dict(self) -> dict:
        return {
            "pbar": [np.asarray(p).tolist() for p in self.pbar],
            "lip_f": list(self.lip_f), "kappa": self.kappa, "mu": self.mu,
            "omega": self.omega, "max_ratios": [max(r, default=0.0) for r in self.ratios],
            "bounds": list(self.bounds), "joint_ratio": self.joint_ratio,
            "slack": self.slack, "failures": self.failures, "samples": self.samples,
            "passed": self.passed,
        }


def _box_sample(rng, center, radius):
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = rng.uniform(-1.0, 1.0, center.shape)
    while not np.any(d):
        d = rng.uniform(-1.0, 1.0, center.shape)
    return center + radius * d


def probe_solution_map(fam: ParametricEquation, pbar, radii=(1e-2, 1e-2), samples: int = 100,
                       *, seed: int = 0, slack: float = 0.1, kappa_samples: int = 200) -> SolutionMapProbe:
    """Sample ``s(p)`` around ``pbar`` and compare with ``omega * lip_{p_i}(f)``.

    ``omega = kappa / (1 - kappa mu)`` where ``kappa`` bounds the localization
    of the equation linearized at the base solution and ``mu`` is the sampled
    Lipschitz constant of ``f(., p) - h`` near the solution. Parameter
    Lipschitz constants of ``f`` are estimated by finite differences.
    """
    rng = np.random.default_rng(seed)
    p1bar, p2bar = (np.atleast_1d(np.asarray(p, dtype=float)) for p in pbar)
    xbar = fam.solve(p1bar, p2bar)
    ge = fam.at(p1bar, p2bar)
    J = ge.jac(xbar)
    h = lambda x: J @ (x - xbar) + ge.evaluate(xbar)  # noqa: E731
    avi = MixedAvi(ge.evaluate(xbar) - J @ xbar, J, fam.C)
    reg = estimate_kappa(avi, xbar, radius=1e-3, samples=kappa_samples, seed=seed)
    kappa = reg.bound

    r_x = max(radii) * 10
    mu = 0.0
    lip1 = lip2 = 0.0
    for _ in range(samples):
        p1 = _box_sample(rng, p1bar, radii[0])
        p2 = _box_sample(rng, p2bar, radii[1])
        x1 = _box_sample(rng, xbar, r_x)
        x2 = _box_sample(rng, xbar, r_x)
        d1 = (fam.f(x1, p1, p2) - h(x1)) - (fam.f(x2, p1, p2) - h(x2))
        mu = max(mu, float(np.linalg.norm(d1) / np.linalg.norm(x1 - x2)))
        q1 = _box_sample(rng, p1bar, radii[0])
        lip1 = max(lip1, float(np.linalg.norm(fam.f(x1, p1, p2) - fam.f(x1, q1, p2))
                               / np.linalg.norm(p1 - q1)))
        q2 = _box_sample(rng, p2bar, radii[1])
        lip2 = max(lip2, float(np.linalg.norm(fam.f(x1, p1, p2) - fam.f(x1, p1, q2))
                               / np.linalg.norm(p2 - q2)))
    omega = kappa / (1 - kappa * mu) if kappa * mu < 1 else np.inf

    failures = 0
    ratios = ([], [])
    joint = 0.0
    for _ in range(samples):
        for axis in (0, 1):
            p1 = _box_sample(rng, p1bar, radii[0]) if axis == 0 else p1bar
            p2 = _box_sample(rng, p2bar, radii[1]) if axis == 1 else p2bar
            try:
                x = fam.solve(p1, p2, xbar)
            except SolverError:
                failures += 1
                continue
            dp = np.linalg.norm(p1 - p1bar) if axis == 0 else np.linalg.norm(p2 - p2bar)
            ratios[axis].append(float(np.linalg.norm(x - xbar) / dp))
        p1 = _box_sample(rng, p1bar, radii[0])
        p2 = _box_sample(rng, p2bar, radii[1])
        try:
            x = fam.solve(p1, p2, xbar)
        except SolverError:
            failures += 1
            continue
        rhs = omega * (lip1 * np.linalg.norm(p1 - p1bar) + lip2 * np.linalg.norm(p2 - p2bar))
        joint = max(joint, float(np.linalg.norm(x - xbar) / rhs) if rhs > 0 else 0.0)
    return SolutionMapProbe((p1bar, p2bar), (lip1, lip2), kappa, mu, omega,
                            tuple(ratios), joint, slack, failures, samples)
