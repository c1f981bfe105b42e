"""Power-curve model: frozen values, derivative checks, inversion properties."""

import numpy as np
import pytest

from wamdf.power import NormalLocationModel, TabulatedPowerModel, _bisect_decreasing

MODEL = NormalLocationModel()

GAMMAS = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]


class TestFrozenValues:
    # expected values computed with a 40-digit mpmath oracle

    def test_power_endpoints(self):
        assert MODEL.power(2.0, 0.0) == 0.0
        assert MODEL.power(2.0, 1.0) == 1.0

    def test_power_value(self):
        assert MODEL.power(2.0, 0.05) == pytest.approx(0.63876003131233506, rel=1e-13)

    def test_slope_value(self):
        assert MODEL.power_slope(2.0, 0.05) == pytest.approx(3.6317232273173988, rel=1e-13)

    def test_slope_unit_point(self):
        # at t = 1 - Phi(gamma/2) the quantile is gamma/2, so the density
        # ratio collapses to exp(0)
        from scipy.special import ndtr
        for gamma in (0.7, 2.0, 3.5):
            t = ndtr(-gamma / 2.0)
            assert MODEL.power_slope(gamma, t) == pytest.approx(1.0, abs=1e-12)

    def test_slope_at_published_m2_solution(self):
        # the two-test example equalizes slopes at k/p = 1.7/0.5 = 3.4;
        # the gamma = 2.5 threshold rounds to 0.041
        assert MODEL.power_slope(2.5, 0.0410) == pytest.approx(3.3973447247858295, rel=1e-12)
        assert MODEL.threshold_for_slope(2.5, 3.4) == pytest.approx(0.041, abs=5e-5)

    def test_threshold_value(self):
        assert MODEL.threshold_for_slope(2.0, 5.04) == pytest.approx(
            0.035248575147992487, rel=1e-13
        )

    def test_threshold_unit_slope(self):
        from scipy.special import ndtr
        for gamma in (0.5, 1.0, 2.0, 4.0):
            assert MODEL.threshold_for_slope(gamma, 1.0) == pytest.approx(
                ndtr(-gamma / 2.0), rel=1e-14
            )


class TestDomainErrors:
    def test_power_t_out_of_range(self):
        with pytest.raises(ValueError):
            MODEL.power(2.0, -0.01)
        with pytest.raises(ValueError):
            MODEL.power(2.0, 1.01)

    def test_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            MODEL.power(0.0, 0.5)
        with pytest.raises(ValueError):
            MODEL.power_slope(-1.0, 0.5)

    def test_slope_at_endpoints(self):
        with pytest.raises(ValueError):
            MODEL.power_slope(2.0, 0.0)
        with pytest.raises(ValueError):
            MODEL.power_slope(2.0, 1.0)

    def test_nonpositive_slope(self):
        with pytest.raises(ValueError):
            MODEL.threshold_for_slope(2.0, 0.0)


class TestAgainstHighPrecisionOracle:
    def test_power_matches_mpmath(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 40

        def oracle(gamma, t):
            z = mp.sqrt(2) * mp.erfinv(2 * (1 - mp.mpf(t)) - 1)
            return float(1 - mp.ncdf(z - gamma))

        for gamma in (0.5, 2.0, 5.0):
            for t in (1e-6, 1e-3, 0.05, 0.3, 0.9, 0.999):
                assert MODEL.power(gamma, t) == pytest.approx(
                    oracle(gamma, t), rel=1e-13
                )


class TestProperties:
    def test_slope_matches_finite_differences(self):
        # central difference of power at h = 1e-6, within 1e-6 relative
        h = 1e-6
        ts = np.linspace(0.001, 0.999, 25)
        for gamma in GAMMAS:
            slopes = MODEL.power_slope(gamma, ts)
            fd = (MODEL.power(gamma, ts + h) - MODEL.power(gamma, ts - h)) / (2 * h)
            assert np.allclose(slopes, fd, rtol=1e-6)

    def test_closed_form_matches_generic_bisection(self):
        slopes = np.logspace(-1, 2, 16)
        for gamma in GAMMAS:
            for s in slopes:
                closed = MODEL.threshold_for_slope(gamma, s)
                generic = _bisect_decreasing(lambda t: MODEL.power_slope(gamma, t), s)
                assert abs(closed - generic) <= 1e-10

    def test_inverse_slope_roundtrip(self):
        ts = np.linspace(0.005, 0.995, 40)
        for gamma in GAMMAS:
            back = MODEL.threshold_for_slope(gamma, MODEL.power_slope(gamma, ts))
            assert np.max(np.abs(back - ts)) <= 1e-10

    def test_threshold_strictly_decreasing_in_slope(self):
        slopes = np.logspace(-1, 2, 50)
        for gamma in GAMMAS:
            ts = MODEL.threshold_for_slope(gamma, slopes)
            assert np.all(np.diff(ts) < 0)

    def test_power_curve_shape(self):
        ts = np.linspace(0.0, 1.0, 101)
        for gamma in GAMMAS:
            pi = MODEL.power(gamma, ts)
            assert pi[0] == 0.0 and pi[-1] == 1.0
            assert np.all(np.diff(pi) >= 0)
            assert np.all(pi >= ts - 1e-15)
            inner = np.linspace(0.001, 0.999, 101)
            assert np.all(np.diff(MODEL.power_slope(gamma, inner)) < 0)


def _concave_table(n=21):
    # knots on sqrt: strictly increasing, strictly concave, spans the square
    t = np.linspace(0.0, 1.0, n)
    return t, np.sqrt(t)


class TestTabulatedModel:
    def test_power_interpolates(self):
        t, p = _concave_table()
        model = TabulatedPowerModel(t, p)
        assert model.power(1.0, 0.0) == 0.0
        assert model.power(1.0, 1.0) == 1.0
        for knot_t, knot_p in zip(t, p):
            assert model.power(1.0, knot_t) == pytest.approx(knot_p, abs=1e-15)

    def test_slope_is_segment_secant(self):
        t, p = _concave_table(6)
        model = TabulatedPowerModel(t, p)
        mid = 0.5 * (t[2] + t[3])
        expected = (p[3] - p[2]) / (t[3] - t[2])
        assert model.power_slope(1.0, mid) == pytest.approx(expected, rel=1e-14)

    def test_threshold_for_slope_consistent(self):
        t, p = _concave_table(11)
        model = TabulatedPowerModel(t, p)
        target = model.power_slope(1.0, 0.45)
        found = model.threshold_for_slope(1.0, target)
        assert model.power_slope(1.0, max(found, 1e-12)) >= target - 1e-9

    def test_rejects_convex_table(self):
        t = np.linspace(0.0, 1.0, 11)
        with pytest.raises(ValueError, match="concave"):
            TabulatedPowerModel(t, t**2)

    def test_rejects_nonmonotone_or_bad_span(self):
        with pytest.raises(ValueError):
            TabulatedPowerModel([0.0, 0.5, 1.0], [0.0, 0.9, 0.8])
        with pytest.raises(ValueError):
            TabulatedPowerModel([0.1, 0.5, 1.0], [0.1, 0.7, 1.0])

    def test_csv_roundtrip(self, tmp_path):
        t, p = _concave_table(9)
        path = tmp_path / "curve.csv"
        path.write_text("t,power\n" + "\n".join(f"{a},{b}" for a, b in zip(t, p)) + "\n")
        model = TabulatedPowerModel.from_csv(path)
        assert model.power(1.0, 0.25) == pytest.approx(np.interp(0.25, t, p))

    def test_csv_requires_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n0,0\n1,1\n")
        with pytest.raises(ValueError, match="header"):
            TabulatedPowerModel.from_csv(path)
