import numpy as np
import pytest
from hypothesis import given, strategies as st

from selfcontact import synth
from selfcontact.detection import (BioimpedanceTrace, ContactTimeline, DetectorConfig, UniformTrace,
                                   adaptive_threshold, align_to_frames, detect_contacts,
                                   differentiate, median_filter, resample, window_samples)
from selfcontact.errors import ConfigError, InsufficientData, ThresholdUndefined


def uniform(values, rate=1000.0, start=0.0):
    return UniformTrace(start, rate, np.asarray(values, dtype=float))


# -- resample --------------------------------------------------------------------------

def test_resample_midpoint():
    out = resample(BioimpedanceTrace([0.0, 1.0], [100.0, 200.0]), 2.0)
    assert out.values.tolist() == [100.0, 150.0, 200.0]


def test_resample_irregular_hand_interpolation():
    # between (0.3, 100) and (1.0, 170): 100 + 70 * (0.35 / 0.7) = 135 at t = 0.65,
    # which sits halfway between the 0.6 and 0.7 grid samples (130 and 140)
    out = resample(BioimpedanceTrace([0.0, 0.3, 1.0], [100.0, 100.0, 170.0]), 10.0)
    assert out.values.size == 11
    assert out.values[6] == pytest.approx(130.0, abs=1e-12)
    assert np.interp(0.65, out.times, out.values) == pytest.approx(135.0, abs=1e-12)


def test_resample_identity_on_uniform_input():
    t = np.arange(50) / 100.0
    v = 300 + np.sin(t)
    out = resample(BioimpedanceTrace(t, v), 100.0)
    np.testing.assert_allclose(out.values, v, rtol=0, atol=1e-12)


def test_resample_needs_two_samples():
    with pytest.raises(InsufficientData):
        resample(BioimpedanceTrace([0.0], [1.0]), 10.0)


def test_trace_validation():
    with pytest.raises(InsufficientData):
        BioimpedanceTrace([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(InsufficientData):
        BioimpedanceTrace([0.0, 1.0], [1.0, -2.0])


# -- median filter -----------------------------------------------------------------------

def brute_median(values, width):
    half = width // 2
    out = []
    for i in range(len(values)):
        w = sorted(values[max(0, i - half):i + half + 1])
        out.append(w[(len(w) - 1) // 2])
    return out


def test_median_truncated_edges():
    # 3-sample window at 1 kHz is 3 ms
    out = median_filter(uniform([1, 9, 2, 8, 3]), 3.0)
    assert out.values.tolist() == [1, 2, 8, 3, 3]
    assert out.values.tolist() == brute_median([1, 9, 2, 8, 3], 3)


def test_median_constant_and_spike():
    assert median_filter(uniform([5.0] * 9), 5.0).values.tolist() == [5.0] * 9
    x = [2.0] * 9
    x[4] = 50.0
    assert median_filter(uniform(x), 3.0).values.tolist() == [2.0] * 9


def test_window_rounds_up_to_odd():
    assert window_samples(100.0, 1000.0) == 101
    assert window_samples(3.0, 1000.0) == 3
    assert window_samples(4.0, 1000.0) == 5
    assert window_samples(0.1, 1000.0) == 1


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.integers(0, 6))
def test_median_matches_brute_force(values, half):
    width = 2 * half + 1
    out = median_filter(uniform(values), float(width))
    assert out.values.tolist() == brute_median(values, width)


# -- derivative and threshold ----------------------------------------------------------------

def test_differentiate_arithmetic():
    d = differentiate(uniform([100.0, 90.0, 95.0], rate=10.0))
    np.testing.assert_allclose(d.values, [-100.0, 50.0])
    assert d.start_time == pytest.approx(0.05)


def test_differentiate_ramp_and_constant():
    t = np.arange(20) / 100.0
    np.testing.assert_allclose(differentiate(uniform(300 - 50 * t, 100.0)).values, -50.0)
    assert not np.any(differentiate(uniform([7.0] * 5)).values)


def test_threshold_from_three_lowest_minima():
    vals = [0, -9, 0, -6, 0, -3, 0, -1, 0]
    assert adaptive_threshold(uniform(vals), 1 / 3) == pytest.approx(-2.0)


def test_threshold_sign_with_positive_minima():
    vals = [5, 1, 5, 2, 5, 3, 5]
    assert adaptive_threshold(uniform(vals), 1 / 3) == pytest.approx(2 / 3)


def test_threshold_undefined_on_flat():
    with pytest.raises(ThresholdUndefined):
        adaptive_threshold(uniform([1.0] * 10), 1 / 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        DetectorConfig(threshold_fraction=1.5)
    with pytest.raises(ConfigError):
        DetectorConfig(min_gap=0)


# -- frame alignment ----------------------------------------------------------------------

def test_align_basic_and_boundaries():
    assert align_to_frames([(1.0, 2.0)], [0.5, 1.5, 2.5]) == [False, True, False]
    assert align_to_frames([(1.0, 2.0)], [1.0, 2.0]) == [True, False]
    assert align_to_frames([], [0.0, 1.0]) == [False, False]


# -- end to end ---------------------------------------------------------------------------------

def scripted(events, seed=5, noise=0.3, duration=9.0, baseline=300.0):
    script = synth.SignalScript(duration, baseline, 1.5, 8.0, noise,
                                tuple(synth.SignalEvent(*e) for e in events), seed)
    return synth.gen_signal(script)


def test_detects_known_intervals():
    trace, truth = scripted([(2.0, 3.5, 0.25), (6.0, 6.8, 0.2)])
    tl = detect_contacts(trace)
    assert len(tl.intervals) == 2
    for (a, b), (ta, tb) in zip(tl.intervals, truth.intervals):
        assert abs(a - ta) <= 0.050
        assert abs(b - tb) <= 0.100


def test_constant_trace_is_empty():
    t = np.arange(3000) / 1000.0
    tl = detect_contacts(BioimpedanceTrace(t, np.full(t.size, 300.0)))
    assert tl.intervals == [] and not any(tl.frame_flags)


def test_one_percent_dip_is_ignored():
    trace, _ = scripted([(3.0, 3.6, 0.01, 50, 50, False)])
    assert detect_contacts(trace).intervals == []


def test_timeline_invariants_on_corpus():
    for script, trace, truth in synth.detector_corpus(12, 2, seed=3):
        tl = detect_contacts(trace)
        for a, b in tl.intervals:
            assert a < b
        for (a0, b0), (a1, b1) in zip(tl.intervals, tl.intervals[1:]):
            assert b0 < a1
        ft = np.arange(len(tl.frame_flags)) / tl.frame_rate
        assert tl.frame_flags == align_to_frames(tl.intervals, ft)


def test_recovery_level_reached_at_offset():
    cfg = DetectorConfig()
    for script, trace, _ in synth.detector_corpus(10, 0, seed=4):
        tl = detect_contacts(trace, cfg)
        smooth = median_filter(resample(trace, cfg.resample_rate), cfg.median_window)
        for (a, b), base in zip(tl.intervals, tl.baselines):
            k = int(round((b - smooth.start_time) * smooth.rate))
            if k < smooth.values.size - 1:
                assert smooth.values[k] >= cfg.recovery_fraction * base - 1e-9


def test_clean_events_all_recovered():
    rng = np.random.default_rng(11)
    for _ in range(15):
        onset = rng.uniform(1.0, 2.0)
        dur = rng.uniform(0.3, 1.5)
        drop = rng.uniform(0.1, 0.4)
        trace, truth = scripted([(onset, onset + dur, drop)], seed=int(rng.integers(1000)),
                                duration=onset + dur + 2.0)
        tl = detect_contacts(trace)
        assert len(tl.intervals) == 1
        assert abs(tl.intervals[0][0] - onset) <= 0.050
        assert abs(tl.intervals[0][1] - (onset + dur)) <= 0.100


@given(st.integers(0, 10_000))
def test_raising_threshold_fraction_never_adds_intervals(seed):
    # the threshold is fraction x (negative) mean of the lowest minima, so a larger
    # fraction is more negative and can only remove crossings
    rng = np.random.default_rng(seed)
    script = synth.random_signal_script(rng, adversarial=bool(seed % 3 == 0), duration=8.0, seed=seed)
    trace, _ = synth.gen_signal(script)
    counts = [len(detect_contacts(trace, DetectorConfig(threshold_fraction=f)).intervals)
              for f in (0.15, 1 / 3, 0.6)]
    assert counts[0] >= counts[1] >= counts[2]


@given(st.integers(0, 10_000), st.floats(0.5, 50.0))
def test_time_shift_equivariance(seed, shift):
    script = synth.random_signal_script(np.random.default_rng(seed), duration=8.0, seed=seed)
    trace, _ = synth.gen_signal(script)
    base = detect_contacts(trace).intervals
    moved = detect_contacts(BioimpedanceTrace(trace.times + shift, trace.magnitudes)).intervals
    assert len(base) == len(moved)
    for (a, b), (c, d) in zip(base, moved):
        assert c - a == pytest.approx(shift, abs=1e-6)
        assert d - b == pytest.approx(shift, abs=1e-6)


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_scale_invariance(seed, c):
    script = synth.random_signal_script(np.random.default_rng(seed), duration=8.0, seed=seed)
    trace, _ = synth.gen_signal(script)
    base = detect_contacts(trace).intervals
    scaled = detect_contacts(BioimpedanceTrace(trace.times, trace.magnitudes * c)).intervals
    np.testing.assert_allclose(np.array(base).reshape(-1, 2), np.array(scaled).reshape(-1, 2),
                               atol=1e-9)


def test_timeline_json_roundtrip():
    tl = ContactTimeline([(1.0, 2.0)], [False, True], 30.0)
    back = ContactTimeline.from_dict(tl.to_dict())
    assert back.intervals == tl.intervals and back.frame_flags == tl.frame_flags
