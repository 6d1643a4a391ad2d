"""Loss-function tests.

The spherical distance is checked against an independently written
haversine formula, the batch correlation loss against both the d=1
Pearson correlation and the closed-form solver, and every gradient
against central finite differences.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsnet.cca import LinearCca
from newsnet.errors import ConfigError, DataError
from newsnet.losses import (
    EARTH_RADIUS_KM,
    cca_loss,
    euclidean_loss,
    gcd_km,
    gcd_loss,
    l1_loss,
    softmax_xent,
)
from newsnet.nn import grad_check


def haversine_km(z, y, radius=EARTH_RADIUS_KM):
    # textbook haversine, shares no code with the law-of-cosines path
    lat1, lon1 = float(z[0]), float(z[1])
    lat2, lon2 = float(y[0]), float(y[1])
    h = (
        math.sin((lat2 - lat1) / 2.0) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * radius * math.asin(min(1.0, math.sqrt(h)))


class TestSoftmaxXent:
    def test_hand_computed_two_class_case(self):
        # exp(logits) = [1, 3], so p = [1/4, 3/4]
        out = softmax_xent(np.array([0.0, math.log(3.0)]), 1)
        assert out.loss == pytest.approx(math.log(4.0 / 3.0), rel=1e-12)
        np.testing.assert_allclose(out.grad, [0.25, -0.25], atol=1e-12)

    def test_gradient_entries_sum_to_zero(self):
        out = softmax_xent(np.array([1.0, -2.0, 0.5, 3.0]), 2)
        assert abs(out.grad.sum()) < 1e-12

    def test_shift_invariance(self):
        z = np.array([0.2, -1.1, 2.4])
        a = softmax_xent(z, 1)
        b = softmax_xent(z + 1000.0, 1)
        assert a.loss == pytest.approx(b.loss, rel=1e-12)
        np.testing.assert_allclose(a.grad, b.grad, atol=1e-12)

    def test_extreme_logits_do_not_overflow(self):
        out = softmax_xent(np.array([1000.0, 0.0]), 0)
        assert out.loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(out.grad))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=5)
        label = int(rng.integers(5))
        out = softmax_xent(z, label)
        assert grad_check(lambda: softmax_xent(z, label).loss, [(z, out.grad)]) < 1e-6

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigError):
            softmax_xent(np.zeros((2, 2)), 0)
        with pytest.raises(ConfigError):
            softmax_xent(np.array([1.0]), 0)
        with pytest.raises(DataError):
            softmax_xent(np.zeros(3), 3)
        with pytest.raises(DataError):
            softmax_xent(np.zeros(3), -1)


class TestL1Loss:
    def test_values_and_signs(self):
        assert l1_loss(5.0, 2.0).loss == 3.0
        np.testing.assert_array_equal(l1_loss(5.0, 2.0).grad, [1.0])
        np.testing.assert_array_equal(l1_loss(-1.0, 2.0).grad, [-1.0])

    def test_zero_gradient_at_kink(self):
        out = l1_loss(2.0, 2.0)
        assert out.loss == 0.0
        np.testing.assert_array_equal(out.grad, [0.0])

    def test_gradient_matches_finite_differences_away_from_kink(self):
        z = np.array([3.7])
        out = l1_loss(z[0], 1.2)
        assert grad_check(lambda: l1_loss(z[0], 1.2).loss, [(z, out.grad)]) < 1e-9


class TestEuclideanLoss:
    def test_pythagorean_triple(self):
        out = euclidean_loss([3.0, 4.0], [0.0, 0.0])
        assert out.loss == pytest.approx(5.0)
        np.testing.assert_allclose(out.grad, [0.6, 0.8])

    def test_guard_zeroes_gradient_at_coincidence(self):
        out = euclidean_loss([1.0, 2.0], [1.0, 2.0])
        assert out.loss == 0.0
        np.testing.assert_array_equal(out.grad, [0.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        z = rng.normal(size=2)
        y = z + rng.normal(size=2)
        out = euclidean_loss(z, y)
        assert grad_check(lambda: euclidean_loss(z, y).loss, [(z, out.grad)]) < 1e-7


class TestGcdKm:
    def test_quarter_equator(self):
        got = gcd_km((0.0, 0.0), (0.0, math.pi / 2.0))
        assert got == pytest.approx(math.pi / 2.0 * EARTH_RADIUS_KM, rel=1e-12)

    def test_pole_to_equator(self):
        got = gcd_km((math.pi / 2.0, 1.3), (0.0, -2.0))
        assert got == pytest.approx(math.pi / 2.0 * EARTH_RADIUS_KM, rel=1e-9)

    def test_antipodal_half_circumference(self):
        got = gcd_km((0.0, 0.0), (0.0, math.pi))
        assert got == pytest.approx(math.pi * EARTH_RADIUS_KM, rel=1e-12)

    def test_coincident_is_zero(self):
        assert gcd_km((0.7, -2.1), (0.7, -2.1)) == pytest.approx(0.0, abs=1e-6)

    def test_seam_crossing_is_short(self):
        # 0.02 rad of longitude across the +-pi seam at latitude 0.3
        got = gcd_km((0.3, math.pi - 0.01), (0.3, -math.pi + 0.01))
        assert got == pytest.approx(0.02 * math.cos(0.3) * EARTH_RADIUS_KM, rel=1e-4)

    def test_radius_scales_linearly(self):
        a = gcd_km((0.1, 0.2), (0.5, -1.0), radius=1.0)
        b = gcd_km((0.1, 0.2), (0.5, -1.0), radius=10.0)
        assert b == pytest.approx(10.0 * a, rel=1e-12)

    def test_symmetry(self):
        p, q = (0.4, 2.9), (-1.1, -0.3)
        assert gcd_km(p, q) == pytest.approx(gcd_km(q, p), rel=1e-12)

    def test_matches_haversine_on_random_pairs(self):
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(2000):
            z = (rng.uniform(-1.5, 1.5), rng.uniform(-math.pi, math.pi))
            y = (rng.uniform(-1.5, 1.5), rng.uniform(-math.pi, math.pi))
            ref = haversine_km(z, y)
            # skip near-coincident and near-antipodal pairs where the
            # law-of-cosines form loses precision by construction
            cos_angle = math.cos(ref / EARTH_RADIUS_KM)
            if cos_angle * cos_angle > 1.0 - 1e-9:
                continue
            assert gcd_km(z, y) == pytest.approx(ref, rel=1e-6)
            checked += 1
        assert checked > 1800


class TestGcdLoss:
    def test_loss_is_distance_in_radians(self):
        z, y = (0.25, -1.4), (-0.8, 2.2)
        assert gcd_loss(z, y).loss == pytest.approx(
            gcd_km(z, y) / EARTH_RADIUS_KM, rel=1e-12
        )

    def test_guard_zeroes_gradient_at_coincidence_and_antipodes(self):
        same = gcd_loss((0.5, 0.5), (0.5, 0.5))
        assert same.loss == pytest.approx(0.0, abs=1e-7)
        np.testing.assert_array_equal(same.grad, [0.0, 0.0])
        anti = gcd_loss((0.0, 0.0), (0.0, math.pi))
        assert anti.loss == pytest.approx(math.pi)
        np.testing.assert_array_equal(anti.grad, [0.0, 0.0])

    def test_seam_equivalence(self):
        # same physical displacement expressed with and without the seam
        near = gcd_loss((0.0, math.pi - 0.01), (0.0, -math.pi + 0.01))
        plain = gcd_loss((0.0, 0.01), (0.0, -0.01))
        assert near.loss == pytest.approx(plain.loss, rel=1e-9)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        z = np.array([rng.uniform(-1.2, 1.2), rng.uniform(-2.5, 2.5)])
        y = np.array([rng.uniform(-1.2, 1.2), rng.uniform(-2.5, 2.5)])
        if 1.0 - _phi_sq(z, y) < 1e-4:  # stay off the guard region
            y = z + np.array([0.3, 0.4])
        out = gcd_loss(z, y)
        assert grad_check(lambda: gcd_loss(z, y).loss, [(z, out.grad)]) < 1e-5


def _phi_sq(z, y):
    c = math.sin(y[0]) * math.sin(z[0]) + math.cos(y[0]) * math.cos(z[0]) * math.cos(
        z[1] - y[1]
    )
    return c * c


class TestCcaLoss:
    def test_d1_matches_absolute_pearson(self):
        rng = np.random.default_rng(13)
        z = rng.normal(size=(1, 40))
        y = 0.6 * z + 0.4 * rng.normal(size=(1, 40))
        r = np.corrcoef(z[0], y[0])[0, 1]
        out = cca_loss(z, y, reg_eps=1e-12)
        assert -out.loss == pytest.approx(abs(r), rel=1e-9)

    def test_d1_sign_invariance(self):
        rng = np.random.default_rng(14)
        z = rng.normal(size=(1, 30))
        y = rng.normal(size=(1, 30))
        assert cca_loss(z, y).loss == pytest.approx(cca_loss(z, -y).loss, rel=1e-12)

    def test_perfect_rowwise_affine_relation(self):
        rng = np.random.default_rng(15)
        z = rng.normal(size=(1, 25))
        y = 2.0 * z + 1.0
        out = cca_loss(z, y, reg_eps=1e-12)
        assert -out.loss == pytest.approx(1.0, abs=1e-9)

    def test_row_translation_invariance(self):
        rng = np.random.default_rng(16)
        z = rng.normal(size=(3, 20))
        y = rng.normal(size=(3, 20))
        base = cca_loss(z, y)
        shifted = cca_loss(z + np.array([[5.0], [-2.0], [9.0]]), y)
        assert base.loss == pytest.approx(shifted.loss, rel=1e-10)
        np.testing.assert_allclose(base.grad, shifted.grad, atol=1e-10)

    @pytest.mark.parametrize("d,m", [(2, 16), (3, 16), (4, 32)])
    def test_negated_loss_matches_closed_form_solver(self, d, m):
        rng = np.random.default_rng(100 + d + m)
        mix = rng.normal(size=(d, d))
        z = rng.normal(size=(d, m))
        y = mix @ z + 0.5 * rng.normal(size=(d, m))
        reg = 1e-4
        out = cca_loss(z, y, reg_eps=reg)
        solver = LinearCca(reg_eps=reg).fit(z.T, y.T)
        assert -out.loss == pytest.approx(solver.total_correlation(), abs=1e-10)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(2, 8))
        y = rng.normal(size=(2, 8))
        out = cca_loss(z, y, reg_eps=1e-3)
        worst = grad_check(lambda: cca_loss(z, y, reg_eps=1e-3).loss, [(z, out.grad)])
        assert worst < 1e-5

    def test_loss_bounded_by_dimension(self):
        rng = np.random.default_rng(17)
        z = rng.normal(size=(3, 50))
        out = cca_loss(z, z.copy(), reg_eps=1e-10)
        assert 0.0 < -out.loss <= 3.0 + 1e-9

    def test_rejects_bad_inputs(self):
        good = np.zeros((2, 5))
        with pytest.raises(ConfigError):
            cca_loss(good, np.zeros((3, 5)))
        with pytest.raises(ConfigError):
            cca_loss(np.zeros(5), np.zeros(5))
        with pytest.raises(DataError):
            cca_loss(np.zeros((2, 1)), np.zeros((2, 1)))
        with pytest.raises(ConfigError):
            cca_loss(good, good, reg_eps=0.0)
