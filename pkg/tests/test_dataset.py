import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_config
from tecfusion.config import SplitConfig
from tecfusion.dataset import (
    AP_BINS,
    F107_BINS,
    LATITUDE_BANDS,
    TEST,
    TRAIN,
    VAL,
    BinClampWarning,
    ap_bin,
    build_inference_sample,
    build_samples,
    f107_bin,
    fit_statistics,
    latitude_band,
    make_splits,
    prepare_bundle,
    role_of_month,
    rotation_months,
    window_end,
)
from tecfusion.errors import EmptySplitError, InsufficientSpanError, InvalidArgumentError
from tecfusion.ingest import parse_timestamp
from tecfusion.timeseries import apply_normalizer, month_index


def test_rotation_examples():
    assert rotation_months(2010, 2010) == (1, 7)
    assert rotation_months(2011, 2010) == (2, 8)
    assert rotation_months(2021, 2010) == (12, 6)
    assert rotation_months(2022, 2010) == (1, 7)


@given(st.integers(1990, 2060), st.integers(1990, 2060))
def test_each_year_has_one_val_and_one_test_month(year, anchor):
    split = SplitConfig(anchor_year=anchor)
    roles = [role_of_month(year, m, split) for m in range(1, 13)]
    assert roles.count(VAL) == 1 and roles.count(TEST) == 1 and roles.count(TRAIN) == 10
    val, test = rotation_months(year, anchor)
    assert (test - val) % 12 == 6


def test_splits_partition_covered_months():
    start = parse_timestamp("2014-03-15T00:00:00Z")
    end = parse_timestamp("2016-02-01T00:00:00Z")
    roles = make_splits((start, end), SplitConfig(anchor_year=2014))
    assert len(roles) == 23
    assert (2014, 2) not in roles and roles[(2014, 3)] == TRAIN
    assert roles[(2015, 2)] == VAL and roles[(2015, 8)] == TEST
    assert roles[(2014, 7)] == TEST
    with pytest.raises(InsufficientSpanError):
        make_splits((start, start + 200 * 86400))


def test_bins():
    assert [latitude_band(x) for x in (0, -29.9, 30, 60, -60.1, 90)] == [
        LATITUDE_BANDS[0], LATITUDE_BANDS[0], LATITUDE_BANDS[1], LATITUDE_BANDS[1], LATITUDE_BANDS[2], LATITUDE_BANDS[2]
    ]
    assert [ap_bin(x) for x in (0, 39, 39.5, 67, 111, 112, 300)] == [
        AP_BINS[0], AP_BINS[0], AP_BINS[1], AP_BINS[1], AP_BINS[2], AP_BINS[3], AP_BINS[3]
    ]
    assert [f107_bin(x) for x in (0, 70, 70.1, 150, 150.1, 199)] == [
        F107_BINS[0], F107_BINS[0], F107_BINS[1], F107_BINS[1], F107_BINS[2], F107_BINS[2]
    ]
    with pytest.raises(InvalidArgumentError):
        latitude_band(91)
    with pytest.raises(InvalidArgumentError):
        ap_bin(-1)


def test_out_of_range_indices_clamp_with_warning():
    with pytest.warns(BinClampWarning):
        assert ap_bin(350) == AP_BINS[3]
    with pytest.warns(BinClampWarning):
        assert f107_bin(240) == F107_BINS[2]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f107_bin(180)


def test_window_end_uses_last_completed_daily_bin():
    origin = parse_timestamp("2014-05-10T13:00:00Z")
    day = parse_timestamp("2014-05-10T00:00:00Z")
    assert window_end(origin, 3600, 3600) == origin
    assert window_end(origin, 86400, 3600) == day - 86400
    end_of_day = parse_timestamp("2014-05-10T23:00:00Z")
    assert window_end(end_of_day, 86400, 3600) == day


@pytest.fixture(scope="module")
def prepared(tiny_bundle):
    return prepare_bundle(tiny_bundle, tiny_config())


@pytest.fixture(scope="module")
def train_set(prepared):
    return build_samples(prepared, tiny_config(), TRAIN)


def test_sample_shapes_and_names(train_set):
    cfg = tiny_config()
    n = len(train_set)
    assert n > 0
    assert train_set.static.shape == (n, 5)
    assert train_set.encoder.shape == (n, cfg.encoder_steps, len(train_set.encoder_names))
    assert train_set.decoder.shape == (n, cfg.horizon_steps, 4)
    assert train_set.targets.shape == (n, cfg.horizon_steps, 2)
    assert train_set.encoder_names[-2:] == ("seconds_in_day_sin", "seconds_in_day_cos")
    assert "target_vtec.vtec_mean" in train_set.encoder_names
    assert "omni_indices.noise_index" in train_set.encoder_names


def test_every_origin_has_its_role(train_set):
    split = tiny_config().split
    m = month_index(train_set.origins)
    for mi in np.unique(m):
        assert role_of_month(int(mi // 12), int(mi % 12 + 1), split) == TRAIN


def test_ap_only_encoder_width(tiny_bundle):
    cfg = tiny_config(sources={"ap_index": {"lag": "6 d", "resolution": "1 d"}})
    s = build_samples(tiny_bundle, cfg, TRAIN)
    assert s.encoder.shape[2] == 1 + 2
    assert s.encoder_names == ("ap_index.ap", "seconds_in_day_sin", "seconds_in_day_cos")


def test_targets_are_the_next_horizon_hours(prepared, train_set):
    cfg = tiny_config()
    i = len(train_set) // 2
    sample = train_set[i]
    t = prepared.target
    k = sample.location
    idx = (sample.origin - t.timestamps[0]) // 3600
    expected = t.channels[f"vtec_mean_{k:02d}"][idx + 1 : idx + 1 + cfg.horizon_steps]
    np.testing.assert_allclose(train_set.targets_raw[i, :, 0], expected)
    np.testing.assert_allclose(sample.targets[:, 0], apply_normalizer(expected, train_set.stats["vtec_mean"]))
    # last history row is the target at the origin itself
    hist = sample.encoder_inputs[-1, train_set.encoder_index("target_vtec.vtec_mean")]
    raw = t.channels[f"vtec_mean_{k:02d}"][idx]
    assert hist == pytest.approx(apply_normalizer(raw, train_set.stats["vtec_mean"]))


def test_daily_window_ends_before_the_origin_day(prepared, train_set):
    i = 0
    sample = train_set[i]
    frame = prepared.frames["timed_see_l3"]
    col = train_set.encoder_index("timed_see_l3.euv_0_50nm")
    day = sample.origin // 86400 * 86400 - 86400
    j = (day - frame.timestamps[0]) // 86400
    raw = frame.channels["euv_0_50nm"][j]
    assert sample.encoder_inputs[-1, col] == pytest.approx(
        apply_normalizer(raw, train_set.stats["timed_see_l3.euv_0_50nm"])
    )


def test_early_origins_are_skipped_for_history(prepared):
    cfg = tiny_config(steps=40)
    s = build_samples(prepared, cfg, TRAIN)
    assert s.skipped["insufficient_history"] > 0
    assert s.candidates == len(s) + sum(s.skipped.values())
    first = s.origins.min()
    assert first >= prepared.coverage[0] + 40 * 86400


def test_stats_use_training_months_only(prepared):
    cfg = tiny_config()
    stats = fit_statistics(prepared, cfg)
    frame = prepared.frames["omni_indices"]
    m = month_index(frame.timestamps)
    roles = np.array([role_of_month(int(x // 12), int(x % 12 + 1), cfg.split) for x in m])
    values = frame.channels["ae_index"][roles == TRAIN]
    assert stats["omni_indices.ae_index"].mean == pytest.approx(np.nanmean(values))
    assert stats["omni_indices.ae_index"].std == pytest.approx(np.nanstd(values, ddof=1))


def test_val_and_test_share_training_stats(prepared, train_set):
    val = build_samples(prepared, tiny_config(), VAL, train_set.stats)
    assert val.stats is train_set.stats
    assert len(val) > 0


def test_empty_split_reports_reasons(prepared):
    cfg = tiny_config(steps=40 * 24, sources={"target_vtec": {"lag": "960 h", "resolution": "1 h"}})
    with pytest.raises(EmptySplitError) as info:
        build_samples(prepared, cfg, VAL)
    assert "insufficient_history" in info.value.skip_reasons


def test_inference_sample_matches_training_sample(prepared, train_set):
    i = 3
    s = train_set[i]
    inf = build_inference_sample(prepared, tiny_config(), train_set.stats, s.origin, s.location)
    np.testing.assert_allclose(inf.encoder_inputs, s.encoder_inputs)
    np.testing.assert_allclose(inf.decoder_known, s.decoder_known)
    np.testing.assert_allclose(inf.static_features, s.static_features)
    assert np.isnan(inf.targets).all()
    with pytest.raises(InvalidArgumentError):
        build_inference_sample(prepared, tiny_config(), train_set.stats, s.origin + 1, s.location)
