"""Orchestration of the simulation and analysis stages behind the command line."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .config import ExperimentConfig, Mode
from .detectors import ClickStream, EmissionTable, detect
from .master import creation_efficiency, decay_contribution_to_target, integrate
from .model import D_M1, P_MINUS, P_PLUS, cavity_kappa_from_geometry, effective_decay, effective_rabi
from .trajectories import (
    PRNG_ALGORITHM,
    TrajectoryResult,
    raman_scatter_free_fraction,
    run_trajectories,
)

log = logging.getLogger(__name__)
TWO_PI = 2 * np.pi


@dataclass
class Bundle:
    """Files of one run, keyed by name, plus the headline numbers."""

    files: dict[str, str] = field(default_factory=dict)
    summary: dict[str, object] = field(default_factory=dict)

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        self.files["summary.txt"] = format_summary(self.summary)
        for name, text in self.files.items():
            (out / name).write_text(text)


def format_summary(summary: dict[str, object]) -> str:
    lines = []
    for key, value in summary.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _trials(cfg: ExperimentConfig, paper_scale: bool) -> int:
    return cfg["run"]["paper_trials"] if paper_scale else cfg["run"]["n_trials"]


def master_stage(cfg: ExperimentConfig, bundle: Bundle) -> None:
    params, seq = cfg.system, cfg.sequence
    rec = integrate(params, seq, output_dt=cfg["run"]["output_dt_us"], tol=cfg["run"]["tolerance"],
                    pump_infidelity=cfg["run"]["pump_infidelity"])
    drive_end = rec.at(seq.drive.duration)
    p_total = rec.population(P_MINUS) + rec.population(P_PLUS)
    bundle.files["evolution.csv"] = rec.to_csv()
    bundle.files["pulse_sim.csv"] = _simulated_pulse_csv(rec, cfg)
    bundle.summary.update({
        "creation_efficiency": creation_efficiency(rec),
        "target_population_end_of_drive": float(rec.populations[drive_end, D_M1.index]),
        "max_excited_population": float(p_total.max()),
        "decay_contribution_to_target": decay_contribution_to_target(params, seq),
        "omega_eff_over_2pi_khz": effective_rabi(params) / TWO_PI * 1e3,
        "gamma_eff_over_2pi_khz": effective_decay(params) / TWO_PI * 1e3,
        "two_kappa_geometry_over_2pi_mhz": 2 * cavity_kappa_from_geometry(params.cavity_length, params.finesse) / TWO_PI,
    })


def _simulated_pulse_csv(rec, cfg: ExperimentConfig) -> str:
    """Master-equation flux rebinned to the pulse-shape bins and scaled by the detection probability."""
    edges, probability = simulated_pulse(rec, cfg)
    lines = [f"# detection_probability = {cfg.detector.detection_probability:.10g}", "t_start_us,probability"]
    lines += [f"{t:.4f},{p:.10g}" for t, p in zip(edges[:-1], probability)]
    return "\n".join(lines) + "\n"


def simulated_pulse(rec, cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    a = cfg["analysis"]
    lo, hi = a["pulse_window_us"]
    n_bins = int(np.ceil((hi - lo) / a["pulse_bin_us"] - 1e-9))
    edges = lo + a["pulse_bin_us"] * np.arange(n_bins + 1)
    emitted = rec.counts("CAVITY_MODE1") + rec.counts("CAVITY_MODE2")
    cum = np.interp(edges, rec.times, emitted)
    return edges, np.diff(cum) * cfg.detector.detection_probability


def _run_batch(args):
    params, seq, n, seed, first, dt, pump = args
    return run_trajectories(params, seq, n, seed, first_trial=first, output_dt=dt, pump_infidelity=pump)


def trajectory_stage(cfg: ExperimentConfig, bundle: Bundle) -> TrajectoryResult:
    params, seq, run = cfg.system, cfg.sequence, cfg["run"]
    n, workers = run["n_trials"], run["workers"]
    chunk = -(-n // workers)
    jobs = [(params, seq, min(chunk, n - s), run["master_seed"], s, run["output_dt_us"], run["pump_infidelity"])
            for s in range(0, n, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_batch, jobs))
    else:
        parts = [_run_batch(j) for j in jobs]
    result = parts[0]
    for extra in parts[1:]:
        result.records.extend(extra.records)
        result.pop_sum += extra.pop_sum
        result.pop_sumsq += extra.pop_sumsq
        result.n_trials += extra.n_trials
    bundle.files["emissions.csv"] = result.emission_csv()
    with_photon = np.mean([r.count() > 0 for r in result.records])
    bundle.summary.update({
        "prng": PRNG_ALGORITHM,
        "trajectory_trials": result.n_trials,
        "trajectory_photon_fraction": float(with_photon),
        "trajectory_photon_fraction_sigma": float(np.sqrt(with_photon * (1 - with_photon) / result.n_trials)),
    })
    return result


def detection_stage(cfg: ExperimentConfig, result: TrajectoryResult, paper_scale: bool) -> ClickStream:
    table = EmissionTable.from_records(result.records, result.n_trials)
    n = _trials(cfg, paper_scale)
    if n != table.n_trials:
        log.info("resampling %d simulated trials to %d", table.n_trials, n)
        table = table.resample(n, cfg["run"]["master_seed"])
    return detect(table, cfg.sequence.period, cfg.detector, seed=cfg["run"]["master_seed"])


@dataclass
class Analysis:
    files: dict[str, str]
    summary: dict[str, object]
    g2: stats.CorrelationHistogram
    subtracted: stats.CorrelationHistogram
    shape: stats.PulseShape


def analyze(stream: ClickStream, cfg: ExperimentConfig, n_trials: int) -> Analysis:
    """Full photon-statistics chain on a click stream whose trials start at multiples of the period."""
    a = cfg["analysis"]
    period = cfg.sequence.period
    span = n_trials * period * 1e-6
    clean = stats.apply_analysis_dead_time(stream, a["dead_time_us"])
    dark, dark_sigma = stats.tail_dark_rates(clean, period, n_trials, a["dark_tail_us"])
    hist = stats.correlate_stream(clean, a["g2_bin_us"], a["g2_range_us"], span,
                                  reflection_half_width=a["reflection_half_width_ns"] * 1e-3)
    r_a, r_b = hist.rate_a, hist.rate_b
    if r_a <= 0 or r_b <= 0:
        raise ValueError("a detector registered no clicks; g2 cannot be normalised")
    sub = stats.background_subtract(hist, dark[0], dark[1], r_a, r_b, span,
                                    sigma_dark_a=dark_sigma[0], sigma_dark_b=dark_sigma[1])
    g2 = stats.normalize_g2(sub, r_a, r_b, span)
    raw_sum, raw_sigma = stats.suppression_metric(hist, a["suppression_window_us"])
    sub_sum, sub_sigma = stats.suppression_metric(sub, a["suppression_window_us"])
    n_window = int(np.sum(np.abs(hist.centers) <= a["suppression_window_us"]))
    expected_acc = stats.accidental_counts(r_a, r_b, dark[0], dark[1], span, a["g2_bin_us"]) * n_window

    shape = stats.pulse_shape(clean, period, n_trials, a["pulse_bin_us"], tuple(a["pulse_window_us"]), tuple(dark))
    eta_c = stats.creation_efficiency_from_data(shape, a["eta_det"], a["eta_det_sigma"], shape.net_area_sigma)
    eta_c_sim = stats.creation_efficiency_from_data(shape, cfg.detector.detection_probability, 0.0, shape.net_area_sigma)
    singles = len(clean) - float(dark.sum()) * span

    summary = {
        "analysis_trials": n_trials,
        "acquisition_time_s": span,
        "clicks_raw": len(stream),
        "clicks_after_dead_time": len(clean),
        "singles_rate_a_hz": r_a,
        "singles_rate_b_hz": r_b,
        "dark_rate_a_hz": float(dark[0]),
        "dark_rate_b_hz": float(dark[1]),
        "detected_photons": singles,
        "central_window_raw": raw_sum,
        "central_window_raw_sigma": raw_sigma,
        "central_window_expected_accidentals": expected_acc,
        "central_window_subtracted": sub_sum,
        "central_window_subtracted_sigma": sub_sigma,
        "eta_exp": shape.net_area,
        "eta_exp_sigma": shape.net_area_sigma,
        "eta_exp_raw": shape.area,
        "eta_c": eta_c.value,
        "eta_c_sigma": eta_c.sigma,
        "eta_c_with_simulated_detection": eta_c_sim.value,
    }
    files = {
        "g2_raw.csv": hist.to_csv(),
        "g2.csv": g2.to_csv(),
        "pulse_shape.csv": shape.to_csv(),
        "analysis_summary.txt": format_summary(summary),
    }
    return Analysis(files, summary, g2, sub, shape)


def dark_level_stage(cfg: ExperimentConfig, bundle: Bundle) -> None:
    params = cfg.system
    rate = cfg["study"]["dark_decay_rate_mhz"]
    dark = params.with_dark_level(None if rate is None else TWO_PI * rate)
    rows = ["drive_us,efficiency,scatter_free_fraction"]
    for length in cfg["study"]["drive_lengths_us"]:
        seq = cfg.sequence.with_drive_length(length)
        eff = integrate(params, seq).efficiency
        frac = raman_scatter_free_fraction(dark, seq, estimator="master")
        rows.append(f"{length:g},{eff:.6f},{frac:.6f}")
        bundle.summary[f"dark_study_{length:g}us_efficiency"] = eff
        bundle.summary[f"dark_study_{length:g}us_scatter_free_fraction"] = frac
    bundle.files["dark_level_study.csv"] = "\n".join(rows) + "\n"


def run(cfg: ExperimentConfig, *, paper_scale: bool = False, debug_origins: bool = False,
        input_path: Path | None = None) -> Bundle:
    bundle = Bundle()
    bundle.summary["mode"] = cfg.mode.value
    bundle.summary["master_seed"] = cfg["run"]["master_seed"]
    if cfg.mode is Mode.MASTER_EQUATION:
        master_stage(cfg, bundle)
    elif cfg.mode is Mode.DARK_LEVEL_STUDY:
        dark_level_stage(cfg, bundle)
    elif cfg.mode is Mode.TRAJECTORY:
        master_stage(cfg, bundle)
        result = trajectory_stage(cfg, bundle)
        stream = detection_stage(cfg, result, paper_scale)
        bundle.files["clicks.csv"] = stream.to_text(debug_origins)
        if debug_origins:
            bundle.files["clicks_plain.csv"] = stream.to_text(False)
        analysis = analyze(stream, cfg, _trials(cfg, paper_scale))
        bundle.files.update(analysis.files)
        bundle.files["g2_sim.csv"] = _simulated_g2_csv(cfg, analysis)
        bundle.summary.update(analysis.summary)
    elif cfg.mode is Mode.ANALYZE_ONLY:
        path = input_path or (Path(cfg["analysis"]["input"]) if cfg["analysis"]["input"] else None)
        if path is None:
            raise ValueError("ANALYZE_ONLY needs an input time-tag file (analysis.input or --input)")
        if not Path(path).exists():
            raise FileNotFoundError(f"time-tag file not found: {path}")
        analysis = analyze(ClickStream.from_csv(path), cfg, _trials(cfg, paper_scale))
        bundle.files.update(analysis.files)
        bundle.summary.update(analysis.summary)
    return bundle


def _simulated_g2_csv(cfg: ExperimentConfig, analysis: Analysis) -> str:
    """Background-free g2 expected from the measured pulse shape, in the data's normalisation."""
    shape = analysis.shape
    per_detector = np.clip(shape.net, 0.0, None) / 2
    corr = np.correlate(per_detector, per_detector, mode="full")  # pairs per trial vs lag in bins
    lags = (np.arange(len(corr)) - (len(per_detector) - 1)) * shape.bin_width
    g2 = analysis.g2
    r_a, r_b, span = g2.rate_a, g2.rate_b, g2.span
    n_trials = shape.n_trials
    period = cfg.sequence.period
    model = np.zeros_like(g2.centers)
    for k in range(-10, 11):
        if k == 0:
            continue
        model += np.interp(g2.centers - k * period, lags, corr, left=0.0, right=0.0)
    # pairs per trial per shape bin -> pairs per g2 bin over the run
    model *= n_trials * g2.bin_width / shape.bin_width
    model /= r_a * r_b * span * g2.bin_width * 1e-6
    lines = ["# background-free model from the measured pulse shape", "tau_us,g2"]
    lines += [f"{c:.6f},{v:.10g}" for c, v in zip(g2.centers, model)]
    return "\n".join(lines) + "\n"
