import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tecfusion.errors import (
    DegenerateChannelError,
    EmptyInputError,
    InsufficientHistoryError,
    InvalidArgumentError,
)
from tecfusion.timeseries import (
    DEFAULT_LOG_EPSILON,
    LOG_STANDARDIZE,
    STANDARDIZE,
    ChannelStats,
    NormalizationStats,
    TimeSeriesFrame,
    align_window,
    apply_normalizer,
    encode_cyclical,
    fit_channel,
    fit_normalizer,
    impute,
    invert_normalizer,
    resample,
)


def frame(ts, values, res, **more):
    channels = {"a": values, **more}
    return TimeSeriesFrame("src", np.asarray(ts), channels, res)


# brute-force oracles ---------------------------------------------------------------

def brute_mean(ts, values, target):
    """Per-bin mean by scanning every input for every output bin."""
    first = (ts[0] // target) * target
    out_t, out_v = [], []
    t = first
    while t <= ts[-1]:
        members = [v for s, v in zip(ts, values) if t <= s < t + target and not math.isnan(v)]
        out_t.append(t)
        out_v.append(sum(members) / len(members) if members else math.nan)
        t += target
    return out_t, out_v


def brute_fill(ts, values, native, target):
    """Latest input whose coverage [t_i, t_i + native) contains the output time."""
    first = -(-ts[0] // target) * target
    out_t, out_v = [], []
    t = first
    while t < ts[-1] + native:
        latest = [v for s, v in zip(ts, values) if s <= t < s + native]
        out_t.append(t)
        out_v.append(latest[-1] if latest else math.nan)
        t += target
    return out_t, out_v


@st.composite
def irregular_series(draw, native=60):
    n = draw(st.integers(1, 40))
    start = draw(st.integers(0, 500)) * native
    steps = draw(st.lists(st.integers(1, 4), min_size=n - 1, max_size=n - 1))
    ts = np.cumsum([start] + [s * native for s in steps]).astype(np.int64)
    vals = draw(
        st.lists(
            st.one_of(st.floats(-1e3, 1e3, allow_nan=False), st.just(math.nan)), min_size=n, max_size=n
        )
    )
    return ts, np.array(vals)


@settings(max_examples=60, deadline=None)
@given(irregular_series(), st.sampled_from([60, 120, 300, 3600]))
def test_downsample_matches_brute_force_bin_mean(series, target):
    ts, values = series
    out = resample(frame(ts, values, 60), target)
    exp_t, exp_v = brute_mean(ts.tolist(), values.tolist(), target)
    assert out.timestamps.tolist() == exp_t
    np.testing.assert_allclose(out.channels["a"], exp_v, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(irregular_series(native=3600), st.sampled_from([60, 600, 1800]))
def test_upsample_matches_brute_force_fill(series, target):
    ts, values = series
    out = resample(frame(ts, values, 3600), target)
    exp_t, exp_v = brute_fill(ts.tolist(), values.tolist(), 3600, target)
    assert out.timestamps.tolist() == exp_t
    np.testing.assert_array_equal(out.channels["a"], exp_v)


def test_minute_values_average_to_half_hour_mean():
    out = resample(frame(np.arange(60) * 60, np.arange(1, 61, dtype=float), 60), 3600)
    assert out.timestamps.tolist() == [0]
    assert out.channels["a"][0] == 30.5


def test_daily_upsampled_repeats_each_day_24_times():
    days = np.arange(3) * 86400
    out = resample(frame(days, [5.0, 7.0, 9.0], 86400), 3600)
    np.testing.assert_array_equal(out.channels["a"], np.repeat([5.0, 7.0, 9.0], 24))
    assert out.native_resolution == 3600


def test_resample_to_native_is_identity():
    f = frame(np.arange(10) * 300, np.random.default_rng(1).normal(size=10), 300)
    assert resample(f, 300).equals(f)


@settings(max_examples=30, deadline=None)
@given(irregular_series(), st.sampled_from([60, 300, 3600]))
def test_resample_is_idempotent(series, target):
    ts, values = series
    once = resample(frame(ts, values, 60), target)
    assert resample(once, target).equals(once)


def test_empty_bins_are_missing_and_output_on_grid():
    out = resample(frame([30, 7230], [1.0, 2.0], 30), 3600)
    assert out.timestamps.tolist() == [0, 3600, 7200]
    assert np.isnan(out.channels["a"][1])


def test_resample_errors():
    f = frame([0, 60], [1.0, 2.0], 60)
    with pytest.raises(InvalidArgumentError):
        resample(f, 0)
    with pytest.raises(InvalidArgumentError):
        resample(f, 1.5)
    empty = TimeSeriesFrame("src", np.array([], dtype=np.int64), {"a": np.array([])}, 60)
    with pytest.raises(EmptyInputError):
        resample(empty, 3600)


def test_frame_invariants():
    with pytest.raises(InvalidArgumentError):
        frame([0, 0], [1.0, 2.0], 60)
    with pytest.raises(InvalidArgumentError):
        frame([0, 90], [1.0, 2.0], 60)
    with pytest.raises(InvalidArgumentError):
        frame([0, 60], [1.0], 60)
    with pytest.raises(InvalidArgumentError):
        frame([0, 60], [1.0, 2.0], 0)


# align_window -----------------------------------------------------------------------

def hourly(n, start=0):
    ts = start + np.arange(n) * 3600
    return frame(ts, np.arange(n, dtype=float), 3600, b=-np.arange(n, dtype=float))


def test_window_rows_for_table_lags():
    f = hourly(200)
    origin = 150 * 3600
    w = align_window(f, origin, 1620 * 60, 3600)
    assert w.shape == (27, 2)
    assert w[-1, 0] == 150 and w[0, 0] == 124
    assert align_window(f, origin, 8640 * 60, 3600).shape == (144, 2)


def test_window_of_one_step_is_value_at_origin():
    f = hourly(10)
    np.testing.assert_array_equal(align_window(f, 4 * 3600, 3600, 3600), [[4.0, -4.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 60))
def test_window_rows_and_last_row(steps, extra):
    f = hourly(100)
    origin = (steps - 1 + extra) * 3600
    if origin > 99 * 3600:
        return
    w = align_window(f, origin, steps * 3600, 3600)
    assert w.shape[0] == steps
    assert w[-1, 0] == origin // 3600


def test_window_before_start_reports_earliest_origin():
    f = hourly(50, start=7200)
    with pytest.raises(InsufficientHistoryError) as info:
        align_window(f, 7200 + 3 * 3600, 27 * 3600, 3600)
    assert info.value.earliest_origin == 7200 + 26 * 3600


def test_window_argument_errors():
    f = hourly(50)
    with pytest.raises(InvalidArgumentError):
        align_window(f, 3600 * 30, 5400, 3600)
    with pytest.raises(InvalidArgumentError):
        align_window(f, 3600 * 30, 7200, 1800)


# cyclical encoding ----------------------------------------------------------------

def test_cyclical_examples():
    assert encode_cyclical(0, 365.25) == (0.0, 1.0)
    s, c = encode_cyclical(180, 360)
    assert abs(s) < 1e-12 and abs(c + 1) < 1e-12
    s, c = encode_cyclical(21600, 86400)
    assert abs(s - 1) < 1e-12 and abs(c) < 1e-12
    with pytest.raises(InvalidArgumentError):
        encode_cyclical(1, 0)


@given(st.floats(-1e7, 1e7, allow_nan=False), st.floats(1e-3, 1e6))
def test_cyclical_on_unit_circle(value, period):
    s, c = encode_cyclical(value, period)
    assert abs(s * s + c * c - 1) < 1e-12


# normalization ---------------------------------------------------------------------

def test_two_point_standardize():
    # n - 1 denominator: ((2 - 3)^2 + (4 - 3)^2) / 1 = 2
    stats = fit_channel([2.0, 4.0], STANDARDIZE)
    assert stats.mean == 3.0 and stats.std == math.sqrt(2.0)


def test_log_standardize_mean_of_logs():
    eps = DEFAULT_LOG_EPSILON
    stats = fit_channel([math.e - eps, math.e**2 - eps], LOG_STANDARDIZE)
    assert abs(stats.mean - 1.5) < 1e-12
    assert stats.epsilon == eps


def test_degenerate_channel_named():
    with pytest.raises(DegenerateChannelError) as info:
        fit_channel([3.0, 3.0, 3.0], STANDARDIZE, name="flat")
    assert "flat" in str(info.value)


def test_round_trip_examples_and_zero_inverse():
    stats = fit_channel([0.5, 10.0, 100.0, 30.0], LOG_STANDARDIZE)
    x = np.array([0.5, 10.0, 100.0])
    assert np.max(np.abs(invert_normalizer(apply_normalizer(x, stats), stats) - x)) < 1e-9
    assert invert_normalizer(0.0, stats) == pytest.approx(math.exp(stats.mean) - stats.epsilon, abs=1e-12)
    lin = fit_channel([1.0, 2.0, 6.0], STANDARDIZE)
    assert apply_normalizer(lin.mean, lin) == 0.0


@given(
    st.lists(st.floats(0.01, 500.0), min_size=1, max_size=50),
    st.floats(-3, 5),
    st.floats(0.05, 3),
)
def test_log_round_trip_property(values, mean, std):
    stats = ChannelStats(LOG_STANDARDIZE, mean, std, DEFAULT_LOG_EPSILON)
    x = np.array(values)
    assert np.max(np.abs(invert_normalizer(apply_normalizer(x, stats), stats) - x)) < 1e-9


def test_fit_normalizer_per_channel_kinds_and_serialization():
    f = frame(np.arange(4) * 60, [1.0, 2.0, 3.0, 4.0], 60, b=[1.0, 10.0, 100.0, 1000.0])
    stats = fit_normalizer(f, {"b": LOG_STANDARDIZE})
    assert stats["a"].kind == STANDARDIZE and stats["b"].kind == LOG_STANDARDIZE
    again = NormalizationStats.from_dict(stats.to_dict())
    assert again == stats


def test_stats_invariants():
    with pytest.raises(InvalidArgumentError):
        ChannelStats(STANDARDIZE, 0.0, 0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        ChannelStats(STANDARDIZE, 0.0, 1.0, 0.1)


# imputation ------------------------------------------------------------------------

def runs_oracle(values, max_gap):
    """Fill a missing value only if its whole run has length <= max_gap and something precedes it."""
    out = list(values)
    i = 0
    while i < len(out):
        if math.isnan(out[i]):
            j = i
            while j < len(out) and math.isnan(out[j]):
                j += 1
            if i > 0 and j - i <= max_gap:
                for k in range(i, j):
                    out[k] = out[i - 1]
            i = j
        else:
            i += 1
    return out


def test_impute_examples():
    nan = math.nan
    f = frame(np.arange(3) * 60, [1.0, nan, 3.0], 60)
    np.testing.assert_array_equal(impute(f, 1).channels["a"], [1.0, 1.0, 3.0])
    lead = impute(frame([0, 60], [nan, 2.0], 60), 3).channels["a"]
    assert np.isnan(lead[0]) and lead[1] == 2.0
    gap = impute(frame(np.arange(7) * 60, [1.0] + [nan] * 5 + [2.0], 60), 3).channels["a"]
    assert np.isnan(gap[1:6]).all()


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.one_of(st.floats(-10, 10, allow_nan=False), st.just(math.nan)), min_size=1, max_size=40),
    st.integers(0, 6),
)
def test_impute_matches_run_length_oracle(values, max_gap):
    f = frame(np.arange(len(values)) * 60, values, 60)
    np.testing.assert_array_equal(impute(f, max_gap).channels["a"], runs_oracle(values, max_gap))
