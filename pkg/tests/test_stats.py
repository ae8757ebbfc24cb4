import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ioncavity.detectors import ClickStream, DetectorParams, EmissionTable, Origin, apply_dead_time, detect
from ioncavity.stats import (
    CorrelationHistogram,
    accidental_counts,
    apply_analysis_dead_time,
    background_subtract,
    correlate_stream,
    creation_efficiency_from_data,
    cross_correlate,
    normalize_g2,
    pulse_shape,
    suppression_metric,
    tail_dark_rates,
)

US = 1_000_000
PERIOD = 414.5


def stream(times_us, dets):
    t = np.round(np.asarray(times_us) * US).astype(np.int64)
    d = np.asarray(dets)
    order = np.lexsort((d, t))
    return ClickStream(t[order], d[order])


def poisson_stream(rate, span_s, seed):
    rng = np.random.default_rng(seed)
    parts = []
    for d in (0, 1):
        n = rng.poisson(rate * span_s)
        parts.append((np.sort(rng.integers(0, int(span_s * 1e12), n)), np.full(n, d)))
    t = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    order = np.lexsort((d, t))
    return ClickStream(t[order], d[order])


def test_analysis_dead_time_examples():
    assert len(apply_analysis_dead_time(stream([0, 1], [0, 0]))) == 1
    assert len(apply_analysis_dead_time(stream([0, 1], [0, 1]))) == 2
    assert len(apply_analysis_dead_time(stream([0, 3], [0, 0]))) == 2


def test_analysis_dead_time_removes_afterpulses():
    det = DetectorParams(path_efficiency=1.0, dark_rate=0.0, reflection_prob=0.0, afterpulse_prob=0.011)
    table = EmissionTable(np.arange(20_000), np.full(20_000, 30.0), 20_000)
    clicks = detect(table, PERIOD, det, seed=1)
    assert np.any(clicks.origin == Origin.AFTERPULSE)
    cleaned = apply_analysis_dead_time(clicks)
    assert not np.any(cleaned.origin == Origin.AFTERPULSE)
    assert np.sum(cleaned.origin == Origin.SIGNAL) == np.sum(clicks.origin == Origin.SIGNAL)


def test_identical_single_clicks_correlate_at_zero():
    h = cross_correlate(np.array([0]), np.array([0]), 1.0, 10.0)
    assert h.counts.sum() == 1 and h.counts[h.centers == 0] == 1


def test_bin_width_must_be_positive():
    with pytest.raises(ValueError):
        cross_correlate(np.array([0]), np.array([0]), 0.0, 10.0)
    with pytest.raises(ValueError):
        cross_correlate(np.array([0]), np.array([0]), -1.0, 10.0)


def test_reflection_pairs_are_excluded():
    a = np.array([0], dtype=np.int64)
    for dt_ns, admitted in ((125, 0), (116, 0), (134, 0), (114, 1), (136, 1)):
        for sign in (1, -1):
            h = cross_correlate(a, np.array([sign * dt_ns * 1000]), 0.001, 1.0)
            assert h.counts.sum() == admitted
    h = cross_correlate(a, np.array([125_000]), 0.001, 1.0, exclude_reflections=False)
    assert h.counts.sum() == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5 * US), max_size=40), st.lists(st.integers(0, 5 * US), max_size=40),
       st.sampled_from([0.1, 0.5, 1.0, 0.003]))
def test_cross_correlation_antisymmetric(ta, tb, bin_us):
    a, b = np.sort(np.array(ta, np.int64)), np.sort(np.array(tb, np.int64))
    ab = cross_correlate(a, b, bin_us, 3.0)
    ba = cross_correlate(b, a, bin_us, 3.0)
    assert np.array_equal(ab.counts, ba.counts[::-1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20 * US), st.integers(0, 1)), max_size=60))
def test_dead_time_and_reflection_removal_commute(clicks):
    s = stream([t / US for t, _ in clicks], [d for _, d in clicks]) if clicks else ClickStream([], [])
    keep = np.zeros(len(s), dtype=bool)
    for ch in (0, 1):
        idx = np.flatnonzero(s.detector == ch)
        keep[idx] = apply_dead_time(s.time_ps[idx], int(2.5 * US))
    a, b = s.channel(0), s.channel(1)
    keep_a, keep_b = keep[s.detector == 0], keep[s.detector == 1]
    # reflection exclusion on raw pairs first, then drop pairs touching a click lost to dead time
    reach = 10 * US - 500  # outermost full 1 ns bin
    taus = sorted(int(tb - ta) for ta, ka in zip(a, keep_a) for tb, kb in zip(b, keep_b)
                  if abs(tb - ta) < reach and abs(abs(tb - ta) - 125_000) > 10_000 and ka and kb)
    alive = apply_analysis_dead_time(s)
    # dead time first, then correlation with reflection exclusion
    h = cross_correlate(alive.channel(0), alive.channel(1), 0.001, 10.0)
    assert h.counts.sum() == len(taus)
    tau = h.centers
    expected = np.zeros_like(h.counts)
    for t in taus:
        expected[np.argmin(np.abs(tau * US - t))] += 1
    assert np.array_equal(h.counts, expected)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50 * int(PERIOD * US) - 1), max_size=80), st.sampled_from([0.5, 1.0, 2.0]))
def test_pulse_area_counts_clicks(raw, bin_us):
    t = np.sort(np.array(raw, np.int64))
    s = ClickStream(t, np.zeros(len(t)))
    shape = pulse_shape(s, PERIOD, 50, bin=bin_us)
    assert round(shape.area * 50) == len(t)
    assert np.all((shape.probability >= 0) & (shape.probability <= len(t) / 50 + 1e-12))


def test_empty_stream_pulse_shape():
    shape = pulse_shape(ClickStream([], []), PERIOD, 100)
    assert shape.area == 0 and np.all(shape.probability == 0)


def test_pulse_shape_window_and_background():
    s = stream([10.0, 10.2, PERIOD + 10.3, 200.0], [0, 1, 0, 0])
    shape = pulse_shape(s, PERIOD, 2, window=(0.0, 150.0), dark_rates=(100.0, 100.0))
    assert shape.area == pytest.approx(1.5)
    assert len(shape.probability) == 300
    assert shape.background == pytest.approx(200.0 * 0.5e-6)
    assert shape.net_area == pytest.approx(1.5 - 300 * 1e-4)


def test_poisson_streams_give_flat_unit_g2():
    span = 200.0
    rate = 400.0
    s = poisson_stream(rate, span, 3)
    h = correlate_stream(s, 1000.0, 20_000.0, span)
    expected = accidental_counts(h.rate_a, h.rate_b, 0, 0, span, 1000.0)
    assert expected == 0
    mean = h.rate_a * h.rate_b * span * 1000.0e-6
    z = (h.counts - mean) / np.sqrt(mean)
    assert abs(z.mean()) * np.sqrt(len(z)) < 3
    g2 = normalize_g2(h, h.rate_a, h.rate_b, span)
    assert abs(g2.counts.mean() - 1.0) < 3 / np.sqrt(mean * len(z))


def test_zero_histogram_normalises_to_zero():
    h = cross_correlate(np.array([], np.int64), np.array([], np.int64), 1.0, 5.0)
    assert np.all(normalize_g2(h, 10.0, 10.0, 1.0).counts == 0)
    assert suppression_metric(h, 5.0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        normalize_g2(h, 0.0, 10.0, 1.0)


def test_g2_invariant_under_time_rescaling():
    s = poisson_stream(300.0, 50.0, 7)
    h1 = correlate_stream(s, 500.0, 5000.0, 50.0, exclude_reflections=False)
    scaled = ClickStream(s.time_ps * 2, s.detector)
    h2 = correlate_stream(scaled, 1000.0, 10000.0, 100.0, exclude_reflections=False)
    g1 = normalize_g2(h1, h1.rate_a, h1.rate_b, h1.span)
    g2 = normalize_g2(h2, h2.rate_a, h2.rate_b, h2.span)
    assert np.allclose(g1.counts, g2.counts, rtol=1e-12)


def test_pulsed_source_side_peaks():
    # one photon per period, 10 us duty window, detected on a random detector
    rng = np.random.default_rng(0)
    n = 4000
    t = np.arange(n) * PERIOD + rng.uniform(0, 10, n)
    d = rng.integers(0, 2, n)
    keep = rng.random(n) < 0.5
    s = stream(t[keep], d[keep])
    span = n * PERIOD * 1e-6
    h = correlate_stream(s, 1.0, 1500.0, span)
    g2 = normalize_g2(h, h.rate_a, h.rate_b, span)
    for k in (1, 2, 3):
        for sign in (1, -1):
            sel = np.abs(g2.centers - sign * k * PERIOD) <= 10
            assert g2.counts[sel].mean() > 2
    assert h.counts[np.abs(h.centers) <= 20].sum() == 0


def test_background_subtraction_trivial_and_dark_only():
    h = CorrelationHistogram(1.0, 2.0, np.array([1.0, 2.0, 3.0, 4.0, 5.0]), np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    same = background_subtract(h, 0.0, 0.0, 50.0, 50.0, 10.0)
    assert np.array_equal(same.counts, h.counts) and same.background_subtracted

    span = 300.0
    s = poisson_stream(300.0, span, 11)
    raw = correlate_stream(s, 1000.0, 20_000.0, span)
    sub = background_subtract(raw, raw.rate_a, raw.rate_b, raw.rate_a, raw.rate_b, span)
    resid = sub.counts.mean()
    assert abs(resid) < 3 * np.sqrt(raw.counts.mean() / len(raw.counts))


def test_background_subtract_refuses_normalised_input():
    h = CorrelationHistogram(1.0, 1.0, np.ones(3), np.ones(3), normalized=True)
    with pytest.raises(ValueError):
        background_subtract(h, 1.0, 1.0, 2.0, 2.0, 1.0)


def test_suppression_window_limits():
    h = cross_correlate(np.array([0]), np.array([US]), 1.0, 100.0)
    assert suppression_metric(h, 50.0) == (1.0, 1.0)
    with pytest.raises(ValueError):
        suppression_metric(h, 207.25)


def test_tail_dark_rates():
    # two clicks in the last 100 us of each of 10 periods on A, none on B
    times = [k * PERIOD + PERIOD - 50 for k in range(10)] + [k * PERIOD + 5 for k in range(10)]
    s = stream(times, [0] * 20)
    rates, errs = tail_dark_rates(s, PERIOD, 10)
    assert rates[0] == pytest.approx(10 / (10 * 100e-6))
    assert rates[1] == 0 and errs[0] == pytest.approx(np.sqrt(10) / 1e-3)
    with pytest.raises(ValueError):
        tail_dark_rates(s, PERIOD, 10, tail=500.0)


def test_creation_efficiency_examples():
    m = creation_efficiency_from_data(0.045, 0.051, 0.010)
    assert m.value == pytest.approx(0.88, abs=0.005)
    assert m.sigma == pytest.approx(0.17, abs=0.005)
    assert creation_efficiency_from_data(0.0, 0.051, 0.01).value == 0.0
    assert creation_efficiency_from_data(0.03, 0.03).value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        creation_efficiency_from_data(0.045, 0.0)
