"""Hanbury Brown-Twiss detector chain: cavity emission times to APD click streams.

Times are handled as integer picoseconds.  The chain per cavity photon is
output-path loss, a 50/50 beamsplitter and the quantum efficiency of the
chosen APD.  Dark counts, afterpulses and the inter-detector reflection are
added next, then physical dead time prunes and timestamps are floored to the
time-tagger grid.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from enum import IntEnum
from pathlib import Path

import numpy as np

from .trajectories import CAVITY_CHANNELS, EmissionRecord

PS_PER_US = 1_000_000
# probability that a photon in the cavity is registered by either APD
DETECTION_PROBABILITY = 0.061
DEFAULT_QE = (0.41, 0.42)
# trials per random substream; keeps paper-scale runs vectorised and reproducible
BLOCK_TRIALS = 100_000


class Origin(IntEnum):
    SIGNAL = 0
    DARK = 1
    AFTERPULSE = 2
    REFLECTION = 3


DETECTOR_NAMES = ("A", "B")


@dataclass(frozen=True)
class DetectorParams:
    path_efficiency: float = DETECTION_PROBABILITY / (sum(DEFAULT_QE) / 2)
    qe: tuple[float, float] = DEFAULT_QE
    dark_rate: float = 60.0  # counts/s per APD
    physical_dead_time: float = 50.0  # ns
    afterpulse_prob: float = 0.011
    afterpulse_window: float = 2.5  # us
    reflection_prob: float = 0.01
    reflection_delay: float = 125.0  # ns
    reflection_jitter_window: float = 20.0  # ns
    quantization: int = 4  # ps

    def __post_init__(self):
        probs = {"path_efficiency": self.path_efficiency, "afterpulse_prob": self.afterpulse_prob,
                 "reflection_prob": self.reflection_prob, "qe_A": self.qe[0], "qe_B": self.qe[1]}
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if len(self.qe) != 2:
            raise ValueError("qe needs one value per APD")
        for name in ("afterpulse_window", "reflection_jitter_window", "quantization"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dark_rate < 0 or self.physical_dead_time < 0 or self.reflection_delay < 0:
            raise ValueError("rates, delays and dead times must be non-negative")
        if int(self.quantization) != self.quantization:
            raise ValueError("quantization must be a whole number of picoseconds")

    @property
    def detection_probability(self) -> float:
        """Per cavity photon, summed over both APDs."""
        return self.path_efficiency * (self.qe[0] + self.qe[1]) / 2

    def replace(self, **changes) -> "DetectorParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return DetectorParams(**kw)


@dataclass
class ClickStream:
    """Time-sorted clicks: integer ps timestamps, detector 0 (A) or 1 (B), origin tag."""

    time_ps: np.ndarray
    detector: np.ndarray
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        self.time_ps = np.asarray(self.time_ps, dtype=np.int64)
        self.detector = np.asarray(self.detector, dtype=np.int8)
        if self.origin is None:
            self.origin = np.full(len(self.time_ps), Origin.SIGNAL, dtype=np.int8)
        self.origin = np.asarray(self.origin, dtype=np.int8)
        if not (len(self.time_ps) == len(self.detector) == len(self.origin)):
            raise ValueError("click arrays differ in length")

    def __len__(self):
        return len(self.time_ps)

    def take(self, mask) -> "ClickStream":
        return ClickStream(self.time_ps[mask], self.detector[mask], self.origin[mask])

    def channel(self, det: int | str) -> np.ndarray:
        det = DETECTOR_NAMES.index(det) if isinstance(det, str) else det
        return self.time_ps[self.detector == det]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.time_ps) >= 0))

    def to_text(self, debug_origins: bool = False) -> str:
        """Canonical time-tag CSV; origins are simulation metadata and only written on request."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = np.array(DETECTOR_NAMES)[self.detector].tolist()
        if debug_origins:
            w.writerow(["time_ps", "detector", "origin"])
            tags = np.array([o.name for o in Origin])[self.origin].tolist()
            w.writerows(zip(self.time_ps.tolist(), names, tags))
        else:
            w.writerow(["time_ps", "detector"])
            w.writerows(zip(self.time_ps.tolist(), names))
        return buf.getvalue()

    def to_csv(self, path, debug_origins: bool = False) -> None:
        Path(path).write_text(self.to_text(debug_origins))

    @classmethod
    def from_csv(cls, path) -> "ClickStream":
        """Reads the canonical time-tag format; an ``origin`` column is optional."""
        path = Path(path)
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if not rows or rows[0][:2] != ["time_ps", "detector"]:
            raise ValueError(f"{path}: expected a 'time_ps,detector' header")
        body = rows[1:]
        t = np.array([int(r[0]) for r in body], dtype=np.int64)
        if np.any(t < 0):
            raise ValueError(f"{path}: negative timestamp")
        try:
            d = np.array([DETECTOR_NAMES.index(r[1].strip()) for r in body], dtype=np.int8)
        except ValueError as exc:
            raise ValueError(f"{path}: detector must be A or B") from exc
        origin = None
        if len(rows[0]) > 2 and rows[0][2] == "origin":
            origin = np.array([Origin[r[2].strip()] for r in body], dtype=np.int8)
        order = np.lexsort((d, t))
        return cls(t[order], d[order], None if origin is None else origin[order])


@dataclass
class EmissionTable:
    """Cavity photon emissions as flat arrays: trial index and time within the period."""

    trial: np.ndarray
    time_us: np.ndarray
    n_trials: int

    @classmethod
    def from_records(cls, records: list[EmissionRecord], n_trials: int | None = None) -> "EmissionTable":
        trial, time = [], []
        last = -1
        for rec in records:
            if rec.trial < last:
                raise ValueError("records must be sorted by trial")
            last = rec.trial
            for e in rec.events:
                if e.channel in CAVITY_CHANNELS:
                    trial.append(rec.trial)
                    time.append(e.time)
        if n_trials is None:
            n_trials = records[-1].trial + 1 if records else 0
        return cls(np.array(trial, dtype=np.int64), np.array(time, dtype=float), n_trials)

    def resample(self, n_trials: int, seed: int) -> "EmissionTable":
        """Bootstrap to ``n_trials`` trials by drawing whole source trials with replacement."""
        if self.n_trials == 0:
            raise ValueError("cannot resample an empty table")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5E5A])))
        order = np.argsort(self.trial, kind="stable")
        src_trial, src_time = self.trial[order], self.time_us[order]
        counts = np.bincount(src_trial, minlength=self.n_trials)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pick = rng.integers(0, self.n_trials, n_trials)
        k = counts[pick]
        new_trial = np.repeat(np.arange(n_trials, dtype=np.int64), k)
        offsets = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
        new_time = src_time[np.repeat(starts[pick], k) + offsets]
        return EmissionTable(new_trial, new_time, n_trials)


def apply_dead_time(time_ps: np.ndarray, dead_ps: int) -> np.ndarray:
    """Boolean keep-mask for one sorted detector channel: drop clicks within ``dead_ps`` of the last kept one."""
    n = len(time_ps)
    keep = np.ones(n, dtype=bool)
    if n < 2 or dead_ps <= 0:
        return keep
    close = np.flatnonzero(np.diff(time_ps) < dead_ps) + 1
    if close.size == 0:
        return keep
    # only clusters of close clicks need the sequential rule
    last_kept = None
    prev = -2
    for i in close:
        if i != prev + 1:
            last_kept = time_ps[i - 1]
        if time_ps[i] - last_kept < dead_ps:
            keep[i] = False
        else:
            last_kept = time_ps[i]
        prev = i
    return keep


def _block_clicks(table_trial, table_time, first, last, period_ps, det: DetectorParams, rng):
    span0, span1 = first * period_ps, last * period_ps
    times, dets, origins = [], [], []

    # signal: path loss, beamsplitter, quantum efficiency
    n = len(table_trial)
    keep = rng.random(n) < det.path_efficiency
    route = (rng.random(n) < 0.5).astype(np.int8)
    qe = np.asarray(det.qe)[route]
    keep &= rng.random(n) < qe
    t_sig = table_trial[keep] * period_ps + np.round(table_time[keep] * PS_PER_US).astype(np.int64)
    times.append(t_sig)
    dets.append(route[keep])
    origins.append(np.full(keep.sum(), Origin.SIGNAL, dtype=np.int8))

    # dark counts, homogeneous over the block
    span_s = (span1 - span0) * 1e-12
    for d in (0, 1):
        m = rng.poisson(det.dark_rate * span_s)
        times.append(np.sort(rng.integers(span0, span1, m)))
        dets.append(np.full(m, d, dtype=np.int8))
        origins.append(np.full(m, Origin.DARK, dtype=np.int8))

    t = np.concatenate(times)
    d = np.concatenate(dets)
    o = np.concatenate(origins)

    # afterpulses of real clicks on the same detector
    ap = rng.random(len(t)) < det.afterpulse_prob
    window = det.afterpulse_window * PS_PER_US
    ap_dt = np.ceil((1.0 - rng.random(ap.sum())) * window).astype(np.int64)
    t = np.concatenate([t, t[ap] + ap_dt])
    d = np.concatenate([d, d[ap]])
    o = np.concatenate([o, np.full(ap.sum(), Origin.AFTERPULSE, dtype=np.int8)])

    # reflection of the avalanche glow onto the other detector
    rf = rng.random(len(t)) < det.reflection_prob
    half = det.reflection_jitter_window / 2
    delay_ns = det.reflection_delay + rng.uniform(-half, half, rf.sum())
    t = np.concatenate([t, t[rf] + np.round(delay_ns * 1000).astype(np.int64)])
    d = np.concatenate([d, 1 - d[rf]])
    o = np.concatenate([o, np.full(rf.sum(), Origin.REFLECTION, dtype=np.int8)])
    return t, d, o


def detect(
    records: list[EmissionRecord] | EmissionTable,
    period: float,
    det: DetectorParams | None = None,
    seed: int = 0,
    n_trials: int | None = None,
) -> ClickStream:
    """Click stream of an HBT setup watching the cavity output.

    Trial ``n`` starts at ``n * period`` (us).  Only cavity emissions reach the
    detectors.  Dark counts cover ``[0, n_trials * period)``.
    """
    det = det or DetectorParams()
    table = records if isinstance(records, EmissionTable) else EmissionTable.from_records(records, n_trials)
    total = table.n_trials if n_trials is None else n_trials
    if total == 0:
        return ClickStream(np.empty(0), np.empty(0))
    period_ps = int(round(period * PS_PER_US))

    order = np.argsort(table.trial, kind="stable")
    trial, time = table.trial[order], table.time_us[order]
    parts = []
    for b, first in enumerate(range(0, total, BLOCK_TRIALS)):
        last = min(first + BLOCK_TRIALS, total)
        lo, hi = np.searchsorted(trial, [first, last])
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xDE7, b])))
        parts.append(_block_clicks(trial[lo:hi], time[lo:hi], first, last, period_ps, det, rng))
    t = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    o = np.concatenate([p[2] for p in parts])

    order = np.lexsort((o, d, t))
    t, d, o = t[order], d[order], o[order]
    keep = np.ones(len(t), dtype=bool)
    dead_ps = int(round(det.physical_dead_time * 1000))
    for ch in (0, 1):
        idx = np.flatnonzero(d == ch)
        keep[idx] = apply_dead_time(t[idx], dead_ps)
    t, d, o = t[keep], d[keep], o[keep]
    q = int(det.quantization)
    t = (t // q) * q
    return ClickStream(t, d, o)
