"""Photon-statistics analysis of HBT click streams.

Cross-correlation histograms (g2), accidental-coincidence subtraction, the
analysis dead time, pulse-shape histograms and the creation-efficiency
inference.  Timestamps are integer picoseconds; bin widths and windows are
given in microseconds, rates in counts per second and spans in seconds.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .detectors import PS_PER_US, ClickStream, apply_dead_time

REFLECTION_DELAY_US = 0.125
REFLECTION_HALF_WIDTH_US = 0.010


def _ps(us: float) -> int:
    return int(round(us * PS_PER_US))


def apply_analysis_dead_time(stream: ClickStream, dead: float = 2.5) -> ClickStream:
    """Per detector, drop clicks within ``dead`` us after an accepted click."""
    keep = np.ones(len(stream), dtype=bool)
    for ch in (0, 1):
        idx = np.flatnonzero(stream.detector == ch)
        keep[idx] = apply_dead_time(stream.time_ps[idx], _ps(dead))
    return stream.take(keep)


@dataclass
class CorrelationHistogram:
    bin_width: float  # us
    range: float  # us, half-width
    counts: np.ndarray
    variance: np.ndarray
    rate_a: float = float("nan")  # 1/s
    rate_b: float = float("nan")
    span: float = float("nan")  # s
    background_subtracted: bool = False
    normalized: bool = False

    @property
    def centers(self) -> np.ndarray:
        k = (len(self.counts) - 1) // 2
        return np.arange(-k, k + 1) * self.bin_width

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in ("bin_width", "range", "rate_a", "rate_b", "span", "background_subtracted", "normalized"):
            buf.write(f"# {key} = {getattr(self, key)}\n")
        buf.write("tau_us,value,sigma\n")
        for c, v, s in zip(self.centers, self.counts, np.sqrt(self.variance)):
            buf.write(f"{c:.6f},{v:.10g},{s:.10g}\n")
        return buf.getvalue()


def cross_correlate(
    a: np.ndarray,
    b: np.ndarray,
    bin: float,
    range: float,
    *,
    exclude_reflections: bool = True,
    reflection_delay: float = REFLECTION_DELAY_US,
    reflection_half_width: float = REFLECTION_HALF_WIDTH_US,
) -> CorrelationHistogram:
    """Histogram of t_b - t_a over |tau| <= range, bins centred on multiples of ``bin``.

    Only bins lying wholly inside the range are kept, so every bin has full width.
    Pairs with ||tau| - reflection_delay| <= reflection_half_width are left out.
    Bin assignment rounds half away from zero so swapping the streams mirrors the
    histogram exactly.
    """
    if bin <= 0:
        raise ValueError(f"bin width must be positive, got {bin}")
    if range <= 0:
        raise ValueError(f"range must be positive, got {range}")
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    bin_ps, range_ps = _ps(bin), _ps(range)
    k_max = max(0, int(np.floor(range / bin - 0.5 + 1e-9)))
    counts = np.zeros(2 * k_max + 1)
    if len(a) and len(b):
        lo = np.searchsorted(b, a - range_ps, side="left")
        hi = np.searchsorted(b, a + range_ps, side="right")
        n = hi - lo
        ia = np.repeat(np.arange(len(a)), n)
        ib = np.repeat(lo, n) + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
        tau = b[ib] - a[ia]
        mag = np.abs(tau)
        ok = mag <= range_ps
        if exclude_reflections:
            ok &= np.abs(mag - _ps(reflection_delay)) > _ps(reflection_half_width)
        tau, mag = tau[ok], mag[ok]
        idx = np.sign(tau) * ((2 * mag + bin_ps) // (2 * bin_ps))
        idx = idx[np.abs(idx) <= k_max]
        counts = np.bincount(idx + k_max, minlength=2 * k_max + 1).astype(float)
    return CorrelationHistogram(bin, range, counts, counts.copy())


def correlate_stream(stream: ClickStream, bin: float, range: float, span_s: float, **kwargs) -> CorrelationHistogram:
    """cross_correlate of detector B against A with singles rates attached."""
    a, b = stream.channel(0), stream.channel(1)
    hist = cross_correlate(a, b, bin, range, **kwargs)
    hist.rate_a, hist.rate_b, hist.span = len(a) / span_s, len(b) / span_s, span_s
    return hist


def normalize_g2(hist: CorrelationHistogram, r_a: float, r_b: float, span: float) -> CorrelationHistogram:
    """g2(tau_k) = counts_k / (r_a r_b T dtau); rates in 1/s, T in s."""
    if r_a <= 0 or r_b <= 0:
        raise ValueError("singles rates must be positive to normalise")
    if span <= 0:
        raise ValueError("acquisition time must be positive")
    scale = r_a * r_b * span * hist.bin_width * 1e-6
    return replace(hist, counts=hist.counts / scale, variance=hist.variance / scale**2,
                   rate_a=r_a, rate_b=r_b, span=span, normalized=True)


def accidental_counts(r_a, r_b, dark_a, dark_b, span, bin_width) -> float:
    """Expected accidental coincidences per bin involving at least one dark count."""
    return (r_a * dark_b + dark_a * r_b - dark_a * dark_b) * span * bin_width * 1e-6


def background_subtract(
    hist: CorrelationHistogram,
    dark_a: float,
    dark_b: float,
    r_a: float,
    r_b: float,
    span: float,
    *,
    sigma_dark_a: float = 0.0,
    sigma_dark_b: float = 0.0,
) -> CorrelationHistogram:
    """Subtract the accidental level acc = (r_a d_b + d_a r_b - d_a d_b) T dtau from every bin."""
    if hist.normalized:
        raise ValueError("subtract the background before normalising")
    acc = accidental_counts(r_a, r_b, dark_a, dark_b, span, hist.bin_width)
    k = span * hist.bin_width * 1e-6
    var_acc = ((r_a - dark_a) * k * sigma_dark_b) ** 2 + ((r_b - dark_b) * k * sigma_dark_a) ** 2
    variance = hist.variance + var_acc
    if np.any(variance < 0):
        raise ValueError("negative variance after background subtraction")
    return replace(hist, counts=hist.counts - acc, variance=variance, rate_a=r_a, rate_b=r_b,
                   span=span, background_subtracted=True)


def suppression_metric(hist: CorrelationHistogram, window: float = 207.25) -> tuple[float, float]:
    """Sum and uncertainty of the bins with |tau| <= window."""
    if window > hist.range:
        raise ValueError(f"window {window} us exceeds the histogram range {hist.range} us")
    sel = np.abs(hist.centers) <= window
    return float(hist.counts[sel].sum()), float(np.sqrt(hist.variance[sel].sum()))


def tail_dark_rates(stream: ClickStream, period: float, n_trials: int, tail: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-detector dark rates (1/s) and their Poisson errors from the last ``tail`` us of every period."""
    if not 0 < tail <= period:
        raise ValueError("tail must lie within the period")
    phase = stream.time_ps % _ps(period)
    in_tail = (phase >= _ps(period - tail)) & (stream.time_ps < n_trials * _ps(period))
    live = n_trials * tail * 1e-6
    counts = np.array([np.sum(in_tail & (stream.detector == ch)) for ch in (0, 1)], dtype=float)
    return counts / live, np.sqrt(counts) / live


@dataclass
class PulseShape:
    bin_width: float  # us
    edges: np.ndarray  # us
    probability: np.ndarray  # detections per trial per bin
    n_trials: int
    background: float = 0.0  # expected dark detections per trial per bin

    @property
    def area(self) -> float:
        return float(self.probability.sum())

    @property
    def net(self) -> np.ndarray:
        return self.probability - self.background

    @property
    def net_area(self) -> float:
        return float(self.net.sum())

    @property
    def net_area_sigma(self) -> float:
        """Poisson error of the raw counts; the background estimate is taken as exact."""
        return float(np.sqrt(self.probability.sum() / max(self.n_trials, 1)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# bin_width_us = {self.bin_width}\n# n_trials = {self.n_trials}\n")
        buf.write(f"# background_per_bin = {self.background:.10g}\n# area = {self.area:.10g}\n")
        buf.write(f"# net_area = {self.net_area:.10g}\n")
        buf.write("t_start_us,probability,net_probability\n")
        for t, p, q in zip(self.edges[:-1], self.probability, self.net):
            buf.write(f"{t:.4f},{p:.10g},{q:.10g}\n")
        return buf.getvalue()


def pulse_shape(
    stream: ClickStream,
    period: float,
    n_trials: int,
    bin: float = 0.5,
    window: tuple[float, float] | None = None,
    dark_rates: tuple[float, float] = (0.0, 0.0),
) -> PulseShape:
    """Histogram of click time after the start of its trial, normalised by the trial count.

    Trial ``n`` starts at ``n * period``.  ``dark_rates`` (1/s per detector) set
    the flat background reported alongside the raw shape.
    """
    if bin <= 0:
        raise ValueError("bin width must be positive")
    lo, hi = window if window is not None else (0.0, period)
    n_bins = int(np.ceil((hi - lo) / bin - 1e-9))
    edges = lo + bin * np.arange(n_bins + 1)
    if n_trials <= 0:
        return PulseShape(bin, edges, np.zeros(n_bins), 0)
    t = stream.time_ps[stream.time_ps < n_trials * _ps(period)]
    phase_us = (t % _ps(period)) / PS_PER_US
    counts, _ = np.histogram(phase_us, bins=edges)
    background = float(sum(dark_rates)) * bin * 1e-6
    return PulseShape(bin, edges, counts / n_trials, n_trials, background)


@dataclass(frozen=True)
class Measured:
    value: float
    sigma: float


def creation_efficiency_from_data(area: float | PulseShape, eta_det: float, sigma_det: float = 0.0,
                                  sigma_area: float = 0.0) -> Measured:
    """eta_c = area / eta_det with relative uncertainties added in quadrature."""
    if eta_det <= 0:
        raise ValueError("detection efficiency must be positive")
    if isinstance(area, PulseShape):
        area = area.net_area
    value = area / eta_det
    if area == 0:
        return Measured(0.0, 0.0)
    rel = np.hypot(sigma_area / area, sigma_det / eta_det)
    return Measured(value, abs(value) * rel)
