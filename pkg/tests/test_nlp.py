import numpy as np
import pytest
from scipy.optimize import linprog

from issnewton.disturbances import DisturbanceSequence
from issnewton.errors import ConfigError
from issnewton.geneq import EXACT, Linearization, josephy_newton_step, solve_generalized_equation
from issnewton.geometry import Box, normal_cone_contains
from issnewton.iss import estimate_iss_gains, observed_rate
from issnewton.nlp import (
    AlmConfig,
    HessianApprox,
    NlpProblem,
    SqpConfig,
    alm_inner_solve,
    assemble_kkt,
    broyden_update,
    kkt_equation,
    kkt_residual,
    licq_check,
    run_alm,
    run_sqp,
    run_linearized,
    sqp_step,
    method_linearization,
)
from issnewton.problems import (
    DEFAULT_STARTS,
    box_qp,
    problem_from_config,
    quadratic_program,
    rosenbrock_circle,
    scalar_eq,
    two_constraint,
)


def scalar_nlp(C=None, **kw):
    return NlpProblem(lambda x: x[0] ** 2, lambda x: 2 * x, lambda x: x - 1.0,
                      lambda x: np.eye(1), C or Box.free(1), lambda x, y: np.array([[2.0]]), **kw)


def random_instance(rng, n=3, m=1):
    A = rng.normal(size=(n, n))
    Q = A @ A.T + np.eye(n)
    J = rng.normal(size=(m, n))
    x_feas = rng.uniform(-0.5, 0.5, n)
    return quadratic_program(Q, rng.normal(size=n), J, J @ x_feas, Box.uniform(n, -1.0, 1.0))


class TestProblemValidation:
    def test_kkt_violation_rejected(self):
        with pytest.raises(ValueError):
            scalar_nlp(xbar=[1.0], ybar=[0.0])

    def test_licq_violation_rejected(self):
        with pytest.raises(ValueError):
            NlpProblem(lambda x: x @ x, lambda x: 2 * x, lambda x: np.array([x[0], x[0]]),
                       lambda x: np.array([[1.0, 0.0], [1.0, 0.0]]), Box.free(2),
                       xbar=[0.0, 0.0], ybar=[0.0, 0.0])

    def test_bad_disturbance_shape(self):
        with pytest.raises(ConfigError):
            scalar_nlp(disturbance="hessian")

    @pytest.mark.parametrize("factory", [scalar_eq, rosenbrock_circle, box_qp, two_constraint])
    def test_registry_solutions(self, factory):
        nlp = factory()
        assert kkt_residual(nlp, nlp.xbar, nlp.ybar) <= 1e-10
        assert licq_check(nlp, nlp.xbar).holds


class TestKkt:
    def test_at_solution(self):
        r, cone = assemble_kkt(scalar_nlp(), [1.0], [-2.0])
        np.testing.assert_allclose(r, [0.0, 0.0])
        assert cone.is_free.all()

    def test_at_origin(self):
        r, _ = assemble_kkt(scalar_nlp(), [0.0], [0.0])
        np.testing.assert_allclose(r, [0.0, -1.0])

    def test_stationary_interior_point(self):
        nlp = box_qp()
        x = nlp.xbar
        r, cone = assemble_kkt(nlp, x, nlp.ybar)
        z = np.concatenate([x, nlp.ybar])
        assert normal_cone_contains(cone, z, -r, tol=1e-12).member

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            assemble_kkt(scalar_nlp(), [0.0, 1.0], [0.0])

    def test_disturbance_channels(self):
        base = scalar_nlp(disturbance="kkt")
        r, _ = assemble_kkt(base, [1.0], [-2.0], [0.1, 0.2])
        np.testing.assert_allclose(r, [0.1, 0.2])
        r, _ = assemble_kkt(base.with_disturbance("g"), [1.0], [-2.0], [0.3])
        np.testing.assert_allclose(r, [0.0, 0.3])


class TestLicq:
    def test_scalar(self):
        res = licq_check(scalar_nlp(), [0.0])
        assert res.holds and res.sigma_min == pytest.approx(1.0)

    def test_duplicated_row(self):
        nlp = NlpProblem(lambda x: 0.0, lambda x: np.zeros(2), lambda x: np.array([x[0], x[0]]),
                         lambda x: np.array([[1.0, 0.0], [1.0, 0.0]]), Box.free(2))
        assert not licq_check(nlp, [0.0, 0.0]).holds

    def test_sum_and_difference(self):
        nlp = NlpProblem(lambda x: 0.0, lambda x: np.zeros(2),
                         lambda x: np.array([x[0] + x[1], x[0] - x[1]]),
                         lambda x: np.array([[1.0, 1.0], [1.0, -1.0]]), Box.free(2))
        assert licq_check(nlp, [0.0, 0.0]).sigma_min == pytest.approx(np.sqrt(2))


class TestSqpStep:
    def test_quadratic_in_one_step(self):
        x, y = sqp_step(scalar_nlp(), [0.0], [0.0], [[2.0]])
        assert (x[0], y[0]) == pytest.approx((1.0, -2.0))

    def test_hand_kkt(self):
        nlp = NlpProblem(lambda x: 0.5 * x @ x, lambda x: x, lambda x: np.array([x[0] + x[1] - 1]),
                         lambda x: np.array([[1.0, 1.0]]), Box.free(2))
        x, y = sqp_step(nlp, [0.0, 0.0], [0.0], np.eye(2))
        np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-14)
        assert y[0] == pytest.approx(-0.5)

    @pytest.mark.parametrize("factory", [rosenbrock_circle, two_constraint, box_qp])
    def test_exact_hessian_equals_kkt_newton(self, factory):
        nlp = factory()
        ge = kkt_equation(nlp)
        rng = np.random.default_rng(4)
        for _ in range(10):
            z = ge.zbar + rng.uniform(-0.05, 0.05, ge.dim)
            z[: nlp.n] = np.clip(z[: nlp.n], nlp.C.lower, nlp.C.upper)
            x, y = z[: nlp.n], z[nlp.n:]
            xs, ys = sqp_step(nlp, x, y, nlp.lagrangian_hessian(x, y))
            zn = josephy_newton_step(ge, Linearization(EXACT), z)
            np.testing.assert_allclose(np.concatenate([xs, ys]), zn, atol=1e-12)


class TestMethodLinearizations:
    @pytest.mark.parametrize("seed", range(3))
    def test_sqp_row_is_qp_solution(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(10):
            nlp = random_instance(rng)
            ge = kkt_equation(nlp)
            z = np.concatenate([rng.uniform(-1, 1, 3), rng.normal(size=1)])
            A = rng.normal(size=(3, 3))
            B = A @ A.T + np.eye(3)
            step = josephy_newton_step(ge, method_linearization("sqp", B=B), z)
            xs, ys = sqp_step(nlp, z[:3], z[3:], B)
            np.testing.assert_allclose(step, np.concatenate([xs, ys]), atol=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_zero_hessian_row_is_lp_solution(self, seed):
        rng = np.random.default_rng(10 + seed)
        checked = 0
        for _ in range(10):
            nlp = random_instance(rng)
            ge = kkt_equation(nlp)
            x = rng.uniform(-1, 1, 3)
            z = np.concatenate([x, rng.normal(size=1)])
            J = nlp.constraint_jacobian(x)
            lp = linprog(nlp.gradient(x), A_eq=J, b_eq=J @ x - nlp.constraints(x),
                         bounds=list(zip(nlp.C.lower, nlp.C.upper)), method="highs")
            if lp.status != 0:
                continue
            step = josephy_newton_step(ge, method_linearization("seq-convex"), z)
            np.testing.assert_allclose(step[:3], lp.x, atol=1e-10)
            # HiGHS reports d(objective)/d(b_eq); the KKT multiplier has the opposite sign.
            np.testing.assert_allclose(step[3:], -lp.eqlin.marginals, atol=1e-10)
            checked += 1
        assert checked >= 5

    def test_pgd_needs_alpha(self):
        with pytest.raises(ValueError):
            method_linearization("pgd")

    def test_sqp_trace_equals_newton_trace(self):
        nlp = two_constraint()
        x0, y0 = DEFAULT_STARTS["two-constraint"]
        t_sqp = run_sqp(nlp, x0, y0, cfg=SqpConfig(family="exact", tol=1e-12))
        t_new = run_linearized(nlp, "newton", x0, y0)
        assert t_sqp.n_steps == t_new.n_steps
        for a, b in zip(t_sqp.iterates, t_new.iterates):
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestBroyden:
    def test_bfgs_fixed_point(self):
        H = broyden_update(HessianApprox(np.eye(3)), np.eye(3)[0], np.eye(3)[0])
        np.testing.assert_allclose(H.B, np.eye(3), atol=1e-15)

    @pytest.mark.parametrize("family", ["bfgs", "dfp"])
    def test_scaling_first_axis(self, family):
        H = broyden_update(HessianApprox(np.eye(3), family), np.eye(3)[0], 2 * np.eye(3)[0])
        np.testing.assert_allclose(H.B, np.diag([2.0, 1.0, 1.0]), atol=1e-15)

    @pytest.mark.parametrize("family", ["bfgs", "dfp"])
    def test_negative_curvature_skipped(self, family):
        H0 = HessianApprox(np.eye(2), family)
        H = broyden_update(H0, [1.0, 0.0], [-1.0, 0.5])
        np.testing.assert_array_equal(H.B, H0.B)
        assert H.skipped == 1

    @pytest.mark.parametrize("family", ["bfgs", "dfp"])
    def test_secant_and_definiteness(self, family):
        rng = np.random.default_rng(5)
        H = HessianApprox(np.eye(4), family)
        for _ in range(30):
            s = rng.normal(size=4)
            yv = rng.normal(size=4)
            H = broyden_update(H, s, yv)
            if H.skipped == 0 and yv @ s > 0:
                # Round-off grows with the conditioning of B.
                scale = np.linalg.norm(H.B, 2) * np.linalg.norm(s)
                np.testing.assert_allclose(H.B @ s, yv, rtol=0, atol=1e-10 * scale)
            H = replace_skip(H)
            np.testing.assert_allclose(H.B, H.B.T)
            assert np.linalg.eigvalsh(H.B)[0] > 0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            HessianApprox(np.array([[1.0, 2.0], [0.0, 1.0]]))


def replace_skip(H):
    return HessianApprox(H.B, H.family, H.curvature_skip_tol, 0)


class TestRunSqp:
    def test_exact_start_one_step(self):
        nlp = scalar_nlp(xbar=[1.0], ybar=[-2.0])
        tr = run_sqp(nlp, [0.0], [0.0], np.array([[2.0]]))
        assert tr.converged and tr.n_steps == 1

    @pytest.mark.parametrize("seed", range(3))
    def test_qp_any_pd_start_converges(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(3, 3))
        tr = run_sqp(box_qp(), [0.5, 0.5, 0.5], [0.0], A @ A.T + np.eye(3))
        assert tr.converged

    @pytest.mark.parametrize("family", ["bfgs", "dfp"])
    def test_rosenbrock_superlinear(self, family):
        nlp = rosenbrock_circle()
        x0, y0 = DEFAULT_STARTS["rosenbrock-circle"]
        tr = run_sqp(nlp, x0, y0, nlp.lagrangian_hessian(nlp.xbar, nlp.ybar),
                     cfg=SqpConfig(family=family))
        assert tr.converged and kkt_residual(nlp, tr.final[:2], tr.final[2:]) < 1e-8
        e = tr.errors()
        ratios = e[1:] / e[:-1]
        assert ratios[-1] < 1e-3
        if family == "bfgs":
            # Terminal ratios shrink monotonically towards zero.
            assert np.all(np.diff(ratios[-3:]) < 0)
        else:
            assert np.all(ratios[-3:] < 1e-2)

    def test_records_hessian_error(self):
        nlp = rosenbrock_circle()
        tr = run_sqp(nlp, *DEFAULT_STARTS["rosenbrock-circle"])
        assert len(tr.extras["B_errors"]) == len(tr.iterates)
        np.testing.assert_allclose(tr.extras["combined"],
                                   np.add(tr.errors(), tr.extras["B_errors"]))

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            run_sqp(scalar_eq(), [0.0], [0.0], cfg=SqpConfig(family="sr1"))


class TestAlm:
    def test_inner_minimizer(self):
        x = alm_inner_solve(scalar_nlp(), [0.0], cfg=AlmConfig(rho=10.0), x_start=[0.0])
        assert x[0] == pytest.approx(10.0 / 12.0, abs=1e-12)

    @pytest.mark.parametrize("rho", [0.5, 3.0, 40.0])
    def test_exact_multiplier(self, rho):
        x = alm_inner_solve(scalar_nlp(), [-2.0], cfg=AlmConfig(rho=rho), x_start=[0.0])
        assert x[0] == pytest.approx(1.0, abs=1e-12)

    def test_box_clamped_inner(self):
        nlp = scalar_nlp(C=Box([0.0], [0.5]))
        rho = 10.0
        x = alm_inner_solve(nlp, [0.0], cfg=AlmConfig(rho=rho), x_start=[0.2])
        assert x[0] == pytest.approx(0.5)
        grad = 2 * x + rho * (x - 1.0)
        assert normal_cone_contains(nlp.C, x, -grad).member

    def test_rho_must_be_positive(self):
        with pytest.raises(ConfigError):
            AlmConfig(rho=0.0)

    def test_rate_one_sixth(self):
        tr = run_alm(scalar_eq(), [0.0], [0.0], cfg=AlmConfig(rho=10.0))
        assert tr.converged
        assert observed_rate(tr.extras["y_errors"], floor=1e-10) == pytest.approx(1 / 6, rel=0.01)
        assert max(tr.extras["outer_gap"]) <= 1e-10

    def test_rate_decreases_with_rho(self):
        rates = [observed_rate(run_alm(scalar_eq(), [0.0], [0.0], cfg=AlmConfig(rho=r))
                               .extras["y_errors"], floor=1e-10) for r in (10.0, 100.0)]
        assert rates[1] < rates[0]
        assert rates == pytest.approx([2 / 12, 2 / 102], rel=0.01)

    def test_disturbed_ball(self):
        nlp = scalar_eq().with_disturbance("g")
        dist = DisturbanceSequence.random_bounded(1e-3, 7, (1,))
        tr = run_alm(nlp, [0.0], [0.0], dist, AlmConfig(rho=10.0))
        est = estimate_iss_gains(tr)
        assert est.feasible
        assert tr.limsup_error() <= est.asymptotic_gain * 1e-3

    @pytest.mark.parametrize("factory", [scalar_eq, box_qp, two_constraint, rosenbrock_circle])
    def test_closed_form_matches_inclusion(self, factory):
        nlp = factory()
        for rho in (2.0, 10.0):
            tr = run_alm(nlp, *DEFAULT_STARTS[nlp.name], cfg=AlmConfig(rho=rho))
            assert tr.extras["outer_gap"] and max(tr.extras["outer_gap"]) <= 1e-10

    @pytest.mark.parametrize("factory", [scalar_eq, box_qp, two_constraint])
    def test_penalty_threshold(self, factory):
        nlp = factory()
        grid = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
        alphas = []
        for rho in grid:
            tr = run_alm(nlp, *DEFAULT_STARTS[nlp.name], cfg=AlmConfig(rho=rho, max_outer=60))
            est = estimate_iss_gains(tr, atol=1e-11)
            alphas.append(est.alpha if est.feasible else np.inf)
        contracting = [a < 1 for a in alphas]
        first = contracting.index(True)
        assert all(contracting[first:])
        assert all(np.diff(alphas[first:]) <= 0)


class TestInlineProblems:
    def test_qp_from_config(self):
        spec = {"kind": "qp", "Q": "2 0; 0 2", "c": "0 0", "A": "1 1", "b": "1", "name": "toy"}
        nlp = problem_from_config(spec)
        np.testing.assert_allclose(nlp.xbar, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(nlp.ybar, [-1.0], atol=1e-12)

    def test_rosenbrock_from_config(self):
        nlp = problem_from_config({"kind": "rosenbrock", "radius2": "2", "x0": "1.1 0.9",
                                   "y0": "0"})
        np.testing.assert_allclose(nlp.xbar, [1.0, 1.0], atol=1e-8)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            problem_from_config({"kind": "cubic", "c": "1"})

    def test_reference_solution_solves(self):
        nlp = problem_from_config({"kind": "qp", "Q": "3 1; 1 2", "c": "1 -1", "A": "1 2",
                                   "b": "0.5", "lower": "0 0", "upper": "1 1"})
        z = solve_generalized_equation(kkt_equation(nlp), np.zeros(3))
        np.testing.assert_allclose(z, nlp.zbar, atol=1e-10)
