from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellwatch import cusum as cs
from cellwatch.errors import DegenerateCalibrationError, NumericError, UsageError


def _cal(mu=0.0, sigma=1.0):
    return cs.CusumCalibration(mu, sigma)


def _steps(ys, cal, two_sided=False):
    state = cs.CusumState()
    out = []
    for y in ys:
        state = cs.cusum_step(state, cal, y, two_sided)
        out.append(state)
    return out


class TestFilter:
    def test_alpha_at_default_cutoffs(self):
        assert cs.alpha_from_cutoff(cs.CUTOFF_PCA_HZ) == pytest.approx(0.0299, abs=5e-5)
        assert cs.alpha_from_cutoff(cs.CUTOFF_DIRECT_HZ) == pytest.approx(0.0501, abs=5e-5)

    def test_alpha_formula(self):
        tau = 1.0 / (2 * math.pi * 0.01)
        assert cs.alpha_from_cutoff(0.01, 2.0) == pytest.approx(2.0 / (tau + 2.0), rel=1e-15)

    @pytest.mark.parametrize("fc,dt", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_alpha_rejects_nonpositive(self, fc, dt):
        with pytest.raises(UsageError):
            cs.alpha_from_cutoff(fc, dt)

    def test_constant_is_fixed_point(self):
        f = cs.LowPassFilter(0.3)
        assert [cs.filter_step(f, 2.5) for _ in range(5)] == [2.5] * 5

    def test_step_seeded_with_first_input(self):
        f = cs.LowPassFilter(0.5)
        assert [cs.filter_step(f, 1.0) for _ in range(3)] == [1.0, 1.0, 1.0]

    def test_step_from_zero_seed(self):
        f = cs.LowPassFilter(0.5, state=0.0)
        assert [cs.filter_step(f, 1.0) for _ in range(3)] == [0.5, 0.75, 0.875]

    def test_alpha_one_passes_through(self):
        x = np.random.default_rng(0).standard_normal(20)
        np.testing.assert_array_equal(cs.filter_series(x, 1.0), x)

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            cs.filter_step(cs.LowPassFilter(0.5), math.inf)
        with pytest.raises(NumericError):
            cs.filter_series([1.0, math.nan], 0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.5, -0.1])
    def test_bad_alpha(self, alpha):
        with pytest.raises(UsageError):
            cs.LowPassFilter(alpha)

    def test_series_matches_steps(self):
        x = np.random.default_rng(1).standard_normal(200)
        f = cs.LowPassFilter(0.07)
        np.testing.assert_allclose(cs.filter_series(x, 0.07), [cs.filter_step(f, v) for v in x], rtol=1e-14)

    def test_series_continues_from_state(self):
        x = np.random.default_rng(2).standard_normal((100, 3))
        whole = cs.filter_series(x, 0.1)
        head = cs.filter_series(x[:40], 0.1)
        tail = cs.filter_series(x[40:], 0.1, head[-1])
        np.testing.assert_allclose(np.vstack([head, tail]), whole, rtol=1e-14)


class TestCalibrate:
    @pytest.mark.parametrize("mu,sigma,h", [(0.0423, 0.0366, 0.1830), (0.0353, 0.0082, 0.0410)])
    def test_table_thresholds(self, mu, sigma, h):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(5000)
        y = mu + sigma * (y - y.mean()) / y.std(ddof=1)
        cal = cs.calibrate(y)
        assert cal.sigma_c == pytest.approx(sigma, rel=1e-12)
        assert cal.h == pytest.approx(h, rel=1e-12)
        assert cal.k == pytest.approx(4 * sigma, rel=1e-12)

    def test_constant_is_degenerate(self):
        with pytest.raises(DegenerateCalibrationError):
            cs.calibrate(np.full(10, 0.3))

    def test_too_short(self):
        with pytest.raises(DegenerateCalibrationError):
            cs.calibrate([1.0])

    def test_invalid_multipliers(self):
        with pytest.raises(UsageError):
            cs.CusumCalibration(0.0, 1.0, k_multiplier=5.0, h_multiplier=4.0)

    def test_dict_roundtrip(self):
        cal = cs.CusumCalibration(0.1, 0.02, 3.0, 6.0)
        assert cs.CusumCalibration.from_dict(cal.to_dict()) == cal

    @settings(max_examples=200)
    @given(st.floats(-1e3, 1e3), st.floats(1e-9, 1e3))
    def test_threshold_identity(self, mu, sigma):
        cal = cs.CusumCalibration(mu, sigma)
        assert cal.h == 5.0 * sigma
        assert cal.k == 4.0 * sigma


class TestCusumStep:
    def test_on_target_never_moves(self):
        cal = _cal(0.7, 0.1)
        for s in _steps([0.7] * 1000, cal, two_sided=True):
            assert s.c_plus == 0.0 and s.c_minus == 0.0 and not s.flagged

    def test_six_sigma_flags_at_step_three(self):
        cal = _cal(1.0, 0.25)
        states = _steps([1.0 + 6 * 0.25] * 5, cal)
        flags = [s.flagged for s in states]
        assert flags.index(True) == 2
        np.testing.assert_allclose([s.c_plus for s in states[:3]], [0.5, 1.0, 1.5])

    def test_negative_mirror(self):
        cal = _cal(0.0, 1.0)
        states = _steps([-6.0] * 4, cal, two_sided=True)
        assert [s.flagged for s in states] == [False, False, True, True]
        assert all(s.c_plus == 0.0 for s in states)

    def test_one_sided_ignores_c_minus(self):
        states = _steps([-6.0] * 10, _cal(), two_sided=False)
        assert states[-1].c_minus > states[-1].c_plus == 0.0
        assert not any(s.flagged for s in states)

    def test_flag_is_strict(self):
        # c_plus reaches exactly h after 5 steps of 1 sigma above K
        states = _steps([5.0] * 6, _cal(0.0, 1.0))
        assert states[4].c_plus == 5.0 and not states[4].flagged
        assert states[5].flagged

    def test_drains_in_ceil_c_over_k(self):
        cal = _cal(0.0, 1.0)
        state = cs.CusumState()
        for _ in range(7):
            state = cs.cusum_step(state, cal, 6.5, False)
        c0 = state.c_plus
        steps = 0
        while state.c_plus > 0:
            state = cs.cusum_step(state, cal, 0.0, False)
            steps += 1
        assert steps == math.ceil(c0 / cal.k)

    @settings(max_examples=100)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=100))
    def test_nonnegative(self, ys):
        for s in _steps(ys, _cal(0.0, 0.5), two_sided=True):
            assert s.c_plus >= 0.0 and s.c_minus >= 0.0

    @settings(max_examples=100)
    @given(st.lists(st.floats(-3.99, 3.99), min_size=1, max_size=100))
    def test_dead_zone(self, ys):
        for s in _steps(ys, _cal(0.0, 1.0), two_sided=True):
            assert s.c_plus == 0.0 and s.c_minus == 0.0

    @settings(max_examples=100)
    @given(
        st.lists(st.floats(-10, 10), min_size=1, max_size=60),
        st.lists(st.floats(0, 5), min_size=60, max_size=60),
    )
    def test_monotone_response(self, ys, bumps):
        cal = _cal(0.0, 0.5)
        lo = _steps(ys, cal)
        hi = _steps([y + b for y, b in zip(ys, bumps)], cal)
        for a, b in zip(lo, hi):
            assert b.c_plus >= a.c_plus


class TestCusumSeries:
    def test_matches_steps(self):
        rng = np.random.default_rng(3)
        y = rng.normal(0.0, 2.0, (300, 3))
        cals = [_cal(0.1, 0.4), _cal(-0.2, 0.6), _cal(0.0, 0.3)]
        arr = cs.cusum_series(y, cals, two_sided=True)
        for j, cal in enumerate(cals):
            states = _steps(y[:, j], cal, True)
            np.testing.assert_array_equal(arr.c_plus[:, j], [s.c_plus for s in states])
            np.testing.assert_array_equal(arr.c_minus[:, j], [s.c_minus for s in states])
            np.testing.assert_array_equal(arr.flagged[:, j], [s.flagged for s in states])

    def test_resumes_from_states(self):
        y = np.random.default_rng(4).normal(0.0, 3.0, 200)
        cal = _cal()
        whole = cs.cusum_series(y, cal)
        head = cs.cusum_series(y[:77], cal)
        tail = cs.cusum_series(y[77:], cal, states=head.final)
        np.testing.assert_array_equal(np.r_[head.c_plus, tail.c_plus], whole.c_plus)

    def test_calibration_count_mismatch(self):
        with pytest.raises(UsageError):
            cs.cusum_series(np.zeros((5, 2)), [_cal()])
