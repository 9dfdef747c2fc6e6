import numpy as np
import pytest

from issnewton.errors import DimensionMismatch
from issnewton.geometry import (
    Box,
    natural_residual,
    normal_cone_contains,
    product_norm,
    project_box,
)

INF = np.inf


def random_box(rng, n):
    lo = rng.uniform(-2, 0, n)
    up = lo + rng.uniform(0, 3, n)
    kind = rng.integers(0, 5, n)
    lo[kind == 1] = -INF
    up[kind == 2] = INF
    lo[kind == 3], up[kind == 3] = -INF, INF
    up[kind == 4] = lo[kind == 4]
    return Box(lo, up)


class TestBox:
    def test_invalid_bounds_rejected(self):
        with pytest.raises(ValueError):
            Box([1.0], [0.0])

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            Box([np.nan], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Box([0.0, 0.0], [1.0])

    def test_free_and_fixed_flags(self):
        C = Box([-INF, 1.0, 0.0], [INF, 1.0, 2.0])
        np.testing.assert_array_equal(C.is_free, [True, False, False])
        np.testing.assert_array_equal(C.is_fixed, [False, True, False])

    def test_product_and_slice(self):
        C = Box.uniform(2, 0.0, 1.0).product(Box.free(1))
        assert C.dim == 3
        assert C.slice(2, 3).is_free.all()
        np.testing.assert_array_equal(C.slice(0, 2).upper, [1.0, 1.0])

    def test_immutable(self):
        C = Box.nonneg(2)
        with pytest.raises(ValueError):
            C.lower[0] = 5.0


class TestProjectBox:
    def test_clamps(self):
        out = project_box([3.0, -1.0], Box.uniform(2, 0, 2))
        np.testing.assert_array_equal(out, [2.0, 0.0])

    def test_interior_identity(self):
        np.testing.assert_array_equal(project_box([0.5], Box([0.0], [2.0])), [0.5])

    def test_free_component_unchanged(self):
        out = project_box([5.0, -5.0], Box([-INF, 1.0], [INF, INF]))
        np.testing.assert_array_equal(out, [5.0, 1.0])

    def test_fixed_component(self):
        np.testing.assert_array_equal(project_box([3.0], Box([1.0], [1.0])), [1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            project_box([1.0, 2.0], Box.nonneg(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(50):
            C = random_box(rng, 6)
            x = rng.normal(0, 3, 6)
            p = project_box(x, C)
            np.testing.assert_array_equal(project_box(p, C), p)

    @pytest.mark.parametrize("seed", range(5))
    def test_nonexpansive(self, seed):
        rng = np.random.default_rng(100 + seed)
        for _ in range(50):
            C = random_box(rng, 5)
            x, y = rng.normal(0, 3, (2, 5))
            lhs = np.linalg.norm(project_box(x, C) - project_box(y, C))
            assert lhs <= np.linalg.norm(x - y) + 1e-15


class TestNormalCone:
    def test_lower_bound_ray(self):
        cert = normal_cone_contains(Box([0.0], [2.0]), [0.0], [-3.0])
        assert cert.member and cert.margin <= 0

    def test_interior_requires_zero(self):
        cert = normal_cone_contains(Box([0.0], [2.0]), [1.0], [0.5])
        assert not cert.member
        assert cert.margin == pytest.approx(0.5)

    def test_outside_is_empty(self):
        cert = normal_cone_contains(Box([0.0], [2.0]), [2.5], [0.0])
        assert not cert.feasible and not cert.member
        assert cert.margin == INF

    def test_upper_bound_ray(self):
        C = Box([0.0], [2.0])
        assert normal_cone_contains(C, [2.0], [4.0]).member
        assert not normal_cone_contains(C, [2.0], [-1.0]).member

    def test_fixed_component_any_direction(self):
        C = Box([1.0], [1.0])
        assert normal_cone_contains(C, [1.0], [-7.0]).member
        assert normal_cone_contains(C, [1.0], [7.0]).member

    def test_free_component(self):
        C = Box.free(1)
        assert normal_cone_contains(C, [3.0], [0.0]).member
        assert not normal_cone_contains(C, [3.0], [1e-6]).member

    def test_tolerance_configurable(self):
        C = Box([0.0], [2.0])
        assert not normal_cone_contains(C, [1.0], [1e-8]).member
        assert normal_cone_contains(C, [1.0], [1e-8], tol=1e-6).member

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            normal_cone_contains(Box.nonneg(2), [0.0, 0.0], [1.0])


class TestNaturalResidual:
    @pytest.mark.parametrize("z, fz, expected", [
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (1.0, 1.0, 1.0),
    ])
    def test_examples(self, z, fz, expected):
        r = natural_residual([z], [fz], Box([0.0], [2.0]))
        assert r[0] == pytest.approx(expected)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            natural_residual([0.0], [1.0, 2.0], Box.nonneg(1))

    @pytest.mark.parametrize("seed", range(4))
    def test_zero_iff_normal_cone(self, seed):
        rng = np.random.default_rng(200 + seed)
        hits = 0
        for _ in range(200):
            C = random_box(rng, 4)
            z = project_box(rng.normal(0, 2, 4), C)
            fz = rng.normal(0, 1, 4)
            # Snap some components so that membership actually occurs.
            snap = rng.random(4) < 0.6
            at_lo = np.isclose(z, C.lower)
            at_up = np.isclose(z, C.upper)
            fz[snap & ~at_lo & ~at_up] = 0.0
            fz[snap & at_lo & ~at_up] = np.abs(fz[snap & at_lo & ~at_up])
            fz[snap & at_up & ~at_lo] = -np.abs(fz[snap & at_up & ~at_lo])
            zero = np.linalg.norm(natural_residual(z, fz, C)) <= 1e-12
            member = normal_cone_contains(C, z, -fz).member
            assert zero == member
            hits += member
        assert hits > 10


def test_product_norm():
    assert product_norm([3.0, 4.0], [1.0]) == pytest.approx(6.0)
    assert product_norm([3.0, 4.0]) == pytest.approx(5.0)
