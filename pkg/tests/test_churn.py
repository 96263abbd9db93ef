"""Churn model tests: calibration, samplers, time-to-stay estimator."""

import math

import numpy as np
import pytest

from relaysim.churn import (
    DEFAULT_PARETO_SCALE_MIN,
    DEFAULT_PARETO_SHAPE,
    CalibrationError,
    SessionModel,
    TimeToStayModel,
    calibrate_pareto,
    estimate_time_to_stay,
    sample_interarrival,
    sample_session_duration,
)

# Closed-form solution of the default two-quantile fit, computed by hand:
#   a   = ln(0.4 / 0.1) / ln(10)  = log10(4)
#   x_m = 0.4 ** (1 / a)
EXPECTED_SHAPE = 0.6020599913279624
EXPECTED_SCALE = 0.2182910614043151


class TestCalibration:
    def test_default_quantiles_closed_form(self):
        x_m, a = calibrate_pareto()
        assert a == pytest.approx(EXPECTED_SHAPE, abs=1e-12)
        assert x_m == pytest.approx(EXPECTED_SCALE, abs=1e-12)

    def test_solution_hits_both_quantiles_exactly(self):
        x_m, a = calibrate_pareto()
        cdf = lambda t: 1.0 - (x_m / t) ** a
        assert cdf(1.0) == pytest.approx(0.60, abs=1e-12)
        assert cdf(10.0) == pytest.approx(0.90, abs=1e-12)

    def test_unit_shape_example(self):
        # (x_m/1)^1 = 0.5 and (x_m/2)^1 = 0.25 pin a=1, x_m=0.5
        x_m, a = calibrate_pareto(q1=(1.0, 0.5), q2=(2.0, 0.75))
        assert a == pytest.approx(1.0, abs=1e-12)
        assert x_m == pytest.approx(0.5, abs=1e-12)

    def test_module_defaults_match(self):
        assert DEFAULT_PARETO_SHAPE == pytest.approx(EXPECTED_SHAPE, abs=1e-12)
        assert DEFAULT_PARETO_SCALE_MIN == pytest.approx(EXPECTED_SCALE, abs=1e-12)

    def test_degenerate_levels_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_pareto(q1=(1.0, 0.6), q2=(10.0, 0.6))

    def test_decreasing_levels_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_pareto(q1=(1.0, 0.9), q2=(10.0, 0.6))

    def test_bad_times_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_pareto(q1=(10.0, 0.6), q2=(1.0, 0.9))


class TestSessionModel:
    def test_defaults(self):
        m = SessionModel()
        assert m.lambda_per_min == 30.0
        assert m.pareto_shape == DEFAULT_PARETO_SHAPE
        assert m.pareto_scale_min == DEFAULT_PARETO_SCALE_MIN

    @pytest.mark.parametrize("kw", [
        {"lambda_per_min": 0.0},
        {"pareto_shape": -1.0},
        {"pareto_scale_min": 0.0},
    ])
    def test_invalid_parameters(self, kw):
        with pytest.raises(ValueError):
            SessionModel(**kw)


class TestSamplers:
    def test_interarrival_mean(self):
        rng = np.random.default_rng(7)
        draws = sample_interarrival(SessionModel(), rng, size=100_000)
        assert abs(draws.mean() - 2.0) < 0.05

    def test_interarrival_rate_reciprocity(self):
        rng = np.random.default_rng(7)
        draws = sample_interarrival(SessionModel(lambda_per_min=1e6), rng,
                                    size=10_000)
        assert draws.mean() < 0.001

    def test_interarrival_deterministic(self):
        a = sample_interarrival(SessionModel(), np.random.default_rng(3), size=3)
        b = sample_interarrival(SessionModel(), np.random.default_rng(3), size=3)
        assert np.array_equal(a, b)

    def test_session_duration_quantiles(self):
        rng = np.random.default_rng(11)
        secs = sample_session_duration(SessionModel(), rng, size=100_000)
        mins = secs / 60.0
        assert abs(np.mean(mins < 1.0) - 0.60) < 0.03
        assert abs(np.mean(mins < 10.0) - 0.90) < 0.02

    def test_session_duration_support(self):
        rng = np.random.default_rng(5)
        secs = sample_session_duration(SessionModel(), rng, size=50_000)
        assert np.all(secs >= 60.0 * DEFAULT_PARETO_SCALE_MIN)

    def test_session_duration_deterministic(self):
        a = sample_session_duration(SessionModel(), np.random.default_rng(9), size=5)
        b = sample_session_duration(SessionModel(), np.random.default_rng(9), size=5)
        assert np.array_equal(a, b)


class TestTimeToStay:
    def test_polynomial_values(self):
        m = TimeToStayModel()
        assert estimate_time_to_stay(m, 0.0) == pytest.approx(3.5, abs=1e-9)
        assert estimate_time_to_stay(m, 30.0) == pytest.approx(25.76, abs=1e-9)
        assert estimate_time_to_stay(m, 60.0) == pytest.approx(34.34, abs=1e-9)

    def test_clamp_beyond_valid_range(self):
        m = TimeToStayModel()
        at_max = estimate_time_to_stay(m, 60.0)
        assert estimate_time_to_stay(m, 90.0) == at_max
        assert estimate_time_to_stay(m, 1e6) == at_max

    def test_negative_elapse_rejected(self):
        with pytest.raises(ValueError):
            estimate_time_to_stay(TimeToStayModel(), -0.1)

    def test_monotone_on_grid(self):
        m = TimeToStayModel()
        grid = np.arange(0.0, 60.0 + 1e-9, 0.1)
        vals = [estimate_time_to_stay(m, x) for x in grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert all(math.isfinite(v) and v >= 0 for v in vals)

    def test_ranking_invariance(self):
        # longer elapse never ranks lower inside the trusted window
        m = TimeToStayModel()
        rng = np.random.default_rng(2)
        pairs = rng.uniform(0.0, 60.0, size=(200, 2))
        for e1, e2 in pairs:
            lo, hi = sorted((e1, e2))
            assert estimate_time_to_stay(m, hi) >= estimate_time_to_stay(m, lo)

    def test_vertex_outside_window(self):
        # parabola apex sits past 60 min, so the window is monotone
        m = TimeToStayModel()
        vertex = -m.c1 / (2.0 * m.c2)
        assert vertex > 60.0
        assert vertex == pytest.approx(63.815789, abs=1e-6)
