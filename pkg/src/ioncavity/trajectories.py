"""Quantum-jump (Monte Carlo wave-function) unravelling of the ion-cavity model.

Each trial is one period of the pulse sequence started from the prepared
ground state.  Between jumps the unnormalised state evolves under
``H_eff = H - (i/2) sum_k C_k^dag C_k``; a jump happens when the squared norm
falls below a uniform threshold, its time is located by bisection and its
channel is drawn with probability proportional to ``<C_k^dag C_k>``.

The drive-dephasing operator is a multiple of a unitary (``C^dag C`` is a
constant), so its jumps form a state-independent Poisson process.  They are
drawn up front per trial and applied at their exact times; their constant
contribution to ``H_eff`` only rescales the norm and is left out.

Every trial owns a Philox (counter-based) stream keyed by
``(master_seed, trial)``, so results do not depend on batch size or order.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .master import PulseSequence, integrate
from .model import S_MINUS, S_PLUS, SystemParams, build_collapse_operators, build_hamiltonian

PRNG_ALGORITHM = "numpy.random.Philox (4x64, 10 rounds) keyed by SeedSequence([master_seed, trial])"
CHANNELS = ("CAVITY_MODE1", "CAVITY_MODE2", "FREE_SPACE_S", "FREE_SPACE_D", "DARK_JUMP")
CAVITY_CHANNELS = ("CAVITY_MODE1", "CAVITY_MODE2")
JUMP_TIME_RESOLUTION = 1e-3  # us


class TrajectoryError(RuntimeError):
    pass


class Event(NamedTuple):
    time: float  # us within the period
    channel: str
    level: str = ""  # atomic level after the jump, for free-space and dark jumps


@dataclass
class EmissionRecord:
    trial: int
    events: list[Event] = field(default_factory=list)

    def times(self, channels=CAVITY_CHANNELS) -> list[float]:
        return [e.time for e in self.events if e.channel in channels]

    def count(self, channels=CAVITY_CHANNELS) -> int:
        return sum(e.channel in channels for e in self.events)


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(trial)])))


class _Segment:
    """Eigen-decomposed H_eff of one drive setting on the reduced basis."""

    def __init__(self, h_eff: np.ndarray):
        lam, V = scipy.linalg.eig(h_eff)
        self.phase = -1j * lam
        self.V = V
        self.Vinv = scipy.linalg.inv(V)
        probe = V @ np.diag(np.exp(self.phase * 0.1)) @ self.Vinv
        if np.max(np.abs(probe - scipy.linalg.expm(-1j * h_eff * 0.1))) > 1e-9:
            raise TrajectoryError("effective Hamiltonian is too close to defective for eigen-propagation")

    def evolve(self, y: np.ndarray, tau) -> np.ndarray:
        """Advance eigen-coordinates ``y`` (batch x n) by per-row times ``tau``."""
        tau = np.asarray(tau, dtype=float)
        return y * np.exp(np.multiply.outer(tau, self.phase) if tau.ndim else self.phase * tau)

    def to_state(self, y):
        return y @ self.V.T

    def to_eig(self, psi):
        return psi @ self.Vinv.T


class TrajectoryModel:
    """Operators of ``params`` restricted to the pure states reachable from S(+-1/2)."""

    def __init__(self, params: SystemParams):
        self.params = params
        ops = params.ops
        c_ops = build_collapse_operators(params)
        self.dephasing_rate = 0.0
        jump_ops = []
        for c in c_ops:
            if c.channel == "DEPHASING":
                # C = c Z with Z^2 = 1: Poisson process of rate c^2
                self.dephasing_rate = float(np.real(c.op[0, 0]) ** 2)
            else:
                jump_ops.append(c)
        hams = {on: build_hamiltonian(params, drive_on=on) for on in (True, False)}

        pattern = sum((np.abs(h) > 0) for h in hams.values())
        for c in jump_ops:
            pattern = pattern + (np.abs(c.op) > 0)
        graph = sp.csr_matrix(pattern.T.astype(np.int8))
        reach = set()
        for lev in (S_PLUS, S_MINUS):
            reach.update(breadth_first_order(graph, ops.basis_index(lev), directed=True,
                                             return_predecessors=False).tolist())
        self.index = np.array(sorted(reach))
        ix = np.ix_(self.index, self.index)
        self.n = len(self.index)

        self.jumps = [(c.channel, c.op[ix], _target_label(c)) for c in jump_ops]
        decay = sum((c.op.conj().T @ c.op for c in jump_ops), np.zeros_like(hams[True]))
        self.segments = {on: _Segment(hams[on][ix] - 0.5j * decay[ix]) for on in (True, False)}

        s_proj = np.zeros(ops.dim)
        for lev in (S_PLUS, S_MINUS):
            s_proj[ops.level_weights()[lev.index] > 0] = 1.0
        self.phase_flip = np.where(s_proj[self.index] > 0, 1.0, -1.0)
        self.level_map = ops.level_weights()[:, self.index].T  # (n, n_levels)
        self.start = {lev: int(np.searchsorted(self.index, ops.basis_index(lev))) for lev in (S_PLUS, S_MINUS)}


def _target_label(c) -> str:
    return c.target.label if c.target is not None else ""


@dataclass
class TrajectoryResult:
    records: list[EmissionRecord]
    times: np.ndarray
    pop_sum: np.ndarray  # (n_times, n_levels)
    pop_sumsq: np.ndarray
    n_trials: int
    levels: tuple
    period: float

    def emission_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "time_us", "channel"])
        for rec in self.records:
            for e in rec.events:
                w.writerow([rec.trial, f"{e.time:.6f}", e.channel])
        return buf.getvalue()


def _grid(sequence: PulseSequence, output_dt: float, coarse_dt: float, until: str | None):
    """(segment, step lengths) pairs; fine steps while driven, coarse ones otherwise."""
    plan = []
    for seg in sequence.segments:
        if seg.reset:
            plan.append((seg, []))
        else:
            dt = output_dt if seg.drive_on else max(coarse_dt, output_dt)
            n = int(np.floor(seg.duration / dt + 1e-9))
            steps = [dt] * n
            if seg.duration - n * dt > 1e-9:
                steps.append(seg.duration - n * dt)
            plan.append((seg, steps))
        if until == seg.label:
            break
    return plan


def run_trajectories(
    params: SystemParams,
    sequence: PulseSequence | None = None,
    n_trials: int = 1000,
    seed: int = 0,
    *,
    first_trial: int = 0,
    output_dt: float = 0.1,
    coarse_dt: float = 2.0,
    pump_infidelity: float = 0.0,
    until: str | None = None,
    batch_size: int = 2000,
    model: TrajectoryModel | None = None,
) -> TrajectoryResult:
    """Sample ``n_trials`` independent periods; trial ids start at ``first_trial``."""
    sequence = sequence or PulseSequence.default()
    model = model or TrajectoryModel(params)
    plan = _grid(sequence, output_dt, coarse_dt, until)
    times = [0.0]
    t = 0.0
    for seg, steps in plan:
        for h in steps:
            t += h
            times.append(t)
    times = np.array(times)
    n_lev = params.n_levels
    pop_sum = np.zeros((len(times), n_lev))
    pop_sumsq = np.zeros((len(times), n_lev))
    records = []
    for b0 in range(first_trial, first_trial + n_trials, batch_size):
        ids = np.arange(b0, min(b0 + batch_size, first_trial + n_trials))
        recs, pops = _run_batch(model, plan, ids, seed, pump_infidelity, len(times))
        records.extend(recs)
        pop_sum += pops.sum(axis=0)
        pop_sumsq += (pops**2).sum(axis=0)
    return TrajectoryResult(records, times, pop_sum, pop_sumsq, n_trials, params.levels, sequence.period)


def run_trajectory(params: SystemParams, sequence: PulseSequence | None = None, seed: int = 0,
                   trial: int = 0, **kwargs) -> EmissionRecord:
    """Single trial ``trial`` of the stream keyed by ``seed``."""
    return run_trajectories(params, sequence, 1, seed, first_trial=trial, **kwargs).records[0]


def _run_batch(model: TrajectoryModel, plan, ids, seed, pump_infidelity, n_times):
    B, n = len(ids), model.n
    rngs = [trial_rng(seed, i) for i in ids]
    records = [EmissionRecord(int(i)) for i in ids]
    psi = np.zeros((B, n), dtype=complex)
    for k, rng in enumerate(rngs):
        start = S_MINUS if pump_infidelity > 0 and rng.random() < pump_infidelity else S_PLUS
        psi[k, model.start[start]] = 1.0
    thresholds = np.array([1.0 - rng.random() for rng in rngs])

    # pre-drawn dephasing flips over the non-reset part of the period
    active_span = sum(sum(steps) for seg, steps in plan if not seg.reset)
    flips = []
    for rng in rngs:
        if model.dephasing_rate > 0:
            m = rng.poisson(model.dephasing_rate * active_span)
            flips.append(np.sort(rng.uniform(0.0, active_span, m)))
        else:
            flips.append(np.empty(0))
    flip_ptr = np.zeros(B, dtype=int)

    pops = np.zeros((B, n_times, model.level_map.shape[1]))
    pops[:, 0] = _populations(model, psi)
    t = 0.0
    ti = 0
    for seg, steps in plan:
        if seg.reset:
            continue
        prop = model.segments[seg.drive_on]
        y = prop.to_eig(psi)
        for h in steps:
            y = _advance(model, prop, y, t, h, thresholds, flips, flip_ptr, rngs, records)
            t += h
            ti += 1
            psi = prop.to_state(y)
            pops[:, ti] = _populations(model, psi)
        psi = prop.to_state(y)
    return records, pops


def _populations(model, psi):
    w = np.abs(psi) ** 2
    norm = w.sum(axis=1, keepdims=True)
    return (w / norm) @ model.level_map


def _next_flip(flips, flip_ptr, k, t_now, t_end):
    f = flips[k]
    p = flip_ptr[k]
    if p < len(f) and f[p] <= t_end:
        return max(f[p], t_now)
    return None


def _advance(model, prop, y, t0, h, thresholds, flips, flip_ptr, rngs, records):
    """Advance all trials by ``h``; handles jumps and dephasing flips exactly."""
    t_end = t0 + h
    y_new = prop.evolve(y, h)
    norm2 = np.sum(np.abs(prop.to_state(y_new)) ** 2, axis=1)
    busy = norm2 < thresholds
    for k in range(len(y)):
        if flip_ptr[k] < len(flips[k]) and flips[k][flip_ptr[k]] <= t_end:
            busy[k] = True
    for k in np.flatnonzero(busy):
        y_new[k] = _advance_one(model, prop, y[k], t0, t_end, k, thresholds, flips, flip_ptr, rngs[k], records[k])
    return y_new


def _advance_one(model, prop, yk, t, t_end, k, thresholds, flips, flip_ptr, rng, record):
    while True:
        flip_t = _next_flip(flips, flip_ptr, k, t, t_end)
        stop = flip_t if flip_t is not None else t_end
        y_stop = prop.evolve(yk, stop - t)
        if _norm2(prop, y_stop) >= thresholds[k]:
            if flip_t is None:
                return y_stop
            psi = prop.to_state(y_stop) * model.phase_flip
            yk = prop.to_eig(psi)
            flip_ptr[k] += 1
            t = flip_t
            continue
        # bisection for the norm crossing within (t, stop]
        lo, hi = 0.0, stop - t
        while hi - lo > JUMP_TIME_RESOLUTION:
            mid = 0.5 * (lo + hi)
            if _norm2(prop, prop.evolve(yk, mid)) < thresholds[k]:
                hi = mid
            else:
                lo = mid
        tau = 0.5 * (lo + hi)
        psi = prop.to_state(prop.evolve(yk, tau))
        psi = _jump(model, psi, t + tau, rng, record)
        thresholds[k] = 1.0 - rng.random()
        yk = prop.to_eig(psi)
        t = t + tau


def _norm2(prop, y):
    return float(np.sum(np.abs(prop.to_state(y)) ** 2))


def _jump(model, psi, t, rng, record):
    candidates = [c @ psi for _, c, _ in model.jumps]
    weights = np.array([np.vdot(v, v).real for v in candidates])
    total = weights.sum()
    if not total > 0:
        raise TrajectoryError(
            f"norm fell below the jump threshold at t = {t:.4f} us in trial {record.trial} "
            "but no jump channel is open"
        )
    j = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
    j = min(j, len(weights) - 1)
    channel, _, target = model.jumps[j]
    record.events.append(Event(float(t), channel, "" if channel in CAVITY_CHANNELS else target))
    out = candidates[j]
    return out / np.sqrt(weights[j])


@dataclass
class EnsemblePopulations:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_trials: int


def ensemble_populations(result: TrajectoryResult) -> EnsemblePopulations:
    """Trial-averaged level populations with per-point standard errors."""
    n = result.n_trials
    if n < 100:
        raise ValueError(f"need at least 100 trials for meaningful standard errors, got {n}")
    mean = result.pop_sum / n
    var = np.clip(result.pop_sumsq / n - mean**2, 0.0, None) * n / (n - 1)
    return EnsemblePopulations(result.times, mean, np.sqrt(var / n), n)


def cavity_photon_fraction(result: TrajectoryResult) -> float:
    """Fraction of trials with at least one cavity photon."""
    return float(np.mean([rec.count() > 0 for rec in result.records]))


def raman_scatter_free_fraction(
    params: SystemParams,
    sequence: PulseSequence | None = None,
    n_trials: int = 0,
    *,
    estimator: str = "master",
    seed: int = 0,
    **kwargs,
) -> float:
    """Share of cavity photons generated without a prior Raman scattering event.

    The dark level swallows population scattered into S(-1/2), so photons that
    survive with it enabled are the scatter-free ones.  ``estimator="master"``
    takes the ratio of master-equation photon yields with and without the dark
    level; ``estimator="trajectory"`` runs without the dark level and counts
    cavity events not preceded in their trial by free-space scattering into
    S(-1/2), which is the fast-dark-rate limit of the same quantity.
    """
    if not params.dark_enabled:
        raise ValueError("the dark-level extension must be enabled (dark_decay_rate > 0)")
    if estimator == "master":
        with_dark = integrate(params, sequence, **kwargs).efficiency
        without = integrate(params.replace(dark_decay_rate=0.0), sequence, **kwargs).efficiency
        if without <= 0:
            raise ValueError("no cavity photons are generated; the fraction is undefined")
        return with_dark / without
    if estimator != "trajectory":
        raise ValueError(f"unknown estimator {estimator!r}")
    if n_trials < 1:
        raise ValueError("the trajectory estimator needs n_trials >= 1")
    result = run_trajectories(params.replace(dark_decay_rate=0.0), sequence, n_trials, seed, **kwargs)
    clean = total = 0
    for rec in result.records:
        scattered = False
        for e in rec.events:
            if e.channel.startswith("FREE_SPACE") and e.level == S_MINUS.label:
                scattered = True
            elif e.channel in CAVITY_CHANNELS:
                total += 1
                clean += not scattered
    if total == 0:
        raise ValueError("no cavity photons were generated; the fraction is undefined")
    return clean / total
