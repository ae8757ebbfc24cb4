"""Experiment configuration: a TOML file whose keys carry their units.

Frequencies are ordinary frequencies with a ``_mhz`` suffix (the model works in
angular units, rad/us, so values are multiplied by 2*pi on load).  Times carry
``_us``/``_ns``/``_ps``, rates ``_hz`` and the magnetic field ``_mt``.  Unknown
keys and wrong types are collected and reported together.

Format version 1::

    format_version = 1
    mode = "TRAJECTORY"          # MASTER_EQUATION | TRAJECTORY | ANALYZE_ONLY | DARK_LEVEL_STUDY

    [system]
    omega_drive_mhz = 30.0
    ...
    [sequence]
    drive_us = 120.0
    ...
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import tomli_w

from .detectors import DetectorParams
from .master import PulseSequence, Segment
from .model import TWO_PI, Polarization, SystemParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FORMAT_VERSION = 1
PAPER_TRIALS = 3500 * (4102 - 174 - 219)  # sequences per run x kept runs


class Mode(str, Enum):
    MASTER_EQUATION = "MASTER_EQUATION"
    TRAJECTORY = "TRAJECTORY"
    ANALYZE_ONLY = "ANALYZE_ONLY"
    DARK_LEVEL_STUDY = "DARK_LEVEL_STUDY"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


# key -> (type, default); the unit lives in the key name
SCHEMA: dict[str, dict[str, tuple[type | tuple, Any]]] = {
    "system": {
        "g0_mhz": (float, 1.6),
        "kappa_mhz": (float, 0.054),
        "gamma_total_mhz": (float, 22.4),
        "branching_sd": (float, 0.064),
        "omega_drive_mhz": (float, 30.0),
        "delta_drive_mhz": (float, 335.0),
        "delta_cavity_mhz": (float, None),  # absent: placed on the target Raman resonance
        "raman_offset_mhz": (float, 0.060),
        "drive_linewidth_mhz": (float, 0.030),
        "b_field_mt": (float, 0.2),
        "g_factor_s": (float, 2.0023),
        "g_factor_p": (float, 2.0 / 3.0),
        "g_factor_d": (float, 0.8),
        "fock_cutoff": (int, 3),
        "cavity_length_m": (float, 0.02),
        "finesse": (float, 70000.0),
        "dark_decay_rate_mhz": (float, 0.0),
        "drive_polarization": (str, "PI"),
        "stark_compensation": (bool, True),
    },
    "sequence": {
        "drive_us": (float, 120.0),
        "wait_us": (float, 250.0),
        "reset_us": (float, 44.5),
    },
    "detector": {
        "path_efficiency": (float, DetectorParams().path_efficiency),
        "qe_a": (float, 0.41),
        "qe_b": (float, 0.42),
        "dark_rate_hz": (float, 60.0),
        "physical_dead_time_ns": (float, 50.0),
        "afterpulse_prob": (float, 0.011),
        "afterpulse_window_us": (float, 2.5),
        "reflection_prob": (float, 0.01),
        "reflection_delay_ns": (float, 125.0),
        "reflection_jitter_window_ns": (float, 20.0),
        "quantization_ps": (int, 4),
    },
    "run": {
        "n_trials": (int, 20000),
        "paper_trials": (int, PAPER_TRIALS),
        "master_seed": (int, 1),
        "output_dt_us": (float, 0.1),
        "tolerance": (float, 1e-8),
        "pump_infidelity": (float, 0.0),
        "workers": (int, 1),
        "prng": (str, "philox4x64-10"),
    },
    "analysis": {
        "g2_bin_us": (float, 1.0),
        "g2_range_us": (float, 1500.0),
        "pulse_bin_us": (float, 0.5),
        "pulse_window_us": (list, [0.0, 150.0]),
        "dead_time_us": (float, 2.5),
        "suppression_window_us": (float, 207.25),
        "dark_tail_us": (float, 100.0),
        "reflection_half_width_ns": (float, 10.0),
        "eta_det": (float, 0.051),
        "eta_det_sigma": (float, 0.010),
        "input": (str, ""),
    },
    "study": {
        "drive_lengths_us": (list, [120.0, 12.0]),
        "dark_decay_rate_mhz": (float, None),  # absent: 100 x effective scattering rate
    },
}
TOP_LEVEL = {"format_version": (int, FORMAT_VERSION), "mode": (str, Mode.MASTER_EQUATION.value)}
SUPPORTED_PRNG = ("philox4x64-10",)


@dataclass
class ExperimentConfig:
    mode: Mode
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def system(self) -> SystemParams:
        s = self.values["system"]
        mhz = lambda key: None if s[key] is None else TWO_PI * s[key]
        return SystemParams(
            g0=mhz("g0_mhz"),
            kappa=mhz("kappa_mhz"),
            gamma_total=mhz("gamma_total_mhz"),
            branching_SD=s["branching_sd"],
            omega_drive=mhz("omega_drive_mhz"),
            delta_drive=mhz("delta_drive_mhz"),
            delta_cavity=mhz("delta_cavity_mhz"),
            raman_offset=mhz("raman_offset_mhz"),
            drive_linewidth=mhz("drive_linewidth_mhz"),
            B_field=s["b_field_mt"] * 1e-3,
            g_factors={"S12": s["g_factor_s"], "P12": s["g_factor_p"], "D32": s["g_factor_d"]},
            fock_cutoff=s["fock_cutoff"],
            cavity_length=s["cavity_length_m"],
            finesse=s["finesse"],
            dark_decay_rate=mhz("dark_decay_rate_mhz"),
            drive_polarization=Polarization[s["drive_polarization"]],
            stark_compensation=s["stark_compensation"],
        )

    @property
    def sequence(self) -> PulseSequence:
        q = self.values["sequence"]
        return PulseSequence((
            Segment("drive", q["drive_us"], drive_on=True),
            Segment("wait", q["wait_us"]),
            Segment("reset", q["reset_us"], reset=True),
        ))

    @property
    def detector(self) -> DetectorParams:
        d = self.values["detector"]
        return DetectorParams(
            path_efficiency=d["path_efficiency"],
            qe=(d["qe_a"], d["qe_b"]),
            dark_rate=d["dark_rate_hz"],
            physical_dead_time=d["physical_dead_time_ns"],
            afterpulse_prob=d["afterpulse_prob"],
            afterpulse_window=d["afterpulse_window_us"],
            reflection_prob=d["reflection_prob"],
            reflection_delay=d["reflection_delay_ns"],
            reflection_jitter_window=d["reflection_jitter_window_ns"],
            quantization=d["quantization_ps"],
        )

    def with_overrides(self, *, seed: int | None = None, mode: str | None = None) -> "ExperimentConfig":
        values = {k: dict(v) for k, v in self.values.items()}
        if seed is not None:
            values["run"]["master_seed"] = int(seed)
        new_mode = self.mode if mode is None else _parse_mode(mode, [])
        if new_mode is None:
            raise ConfigError([f"mode: unknown value {mode!r}"])
        return ExperimentConfig(new_mode, values)

    def to_dict(self) -> dict[str, Any]:
        """Canonical tree: every key present except unset optional values."""
        out: dict[str, Any] = {"format_version": FORMAT_VERSION, "mode": self.mode.value}
        for section, keys in self.values.items():
            out[section] = {k: v for k, v in keys.items() if v is not None}
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _parse_mode(value, problems) -> Mode | None:
    try:
        return Mode(str(value).upper())
    except ValueError:
        problems.append(f"mode: unknown value {value!r}; expected one of {[m.value for m in Mode]}")
        return None


def _coerce(path: str, value, kind, problems):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number, got {value!r}")
            return None
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer, got {value!r}")
            return None
        return value
    if kind is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            problems.append(f"{path}: expected a list of numbers, got {value!r}")
            return None
        return [float(v) for v in value]
    if not isinstance(value, kind):
        problems.append(f"{path}: expected {kind.__name__}, got {value!r}")
        return None
    return value


def from_dict(tree: dict[str, Any]) -> ExperimentConfig:
    problems: list[str] = []
    for key in tree:
        if key not in TOP_LEVEL and key not in SCHEMA:
            problems.append(f"{key}: unknown key")
    version = tree.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        problems.append(f"format_version: unsupported version {version!r}")
    mode = _parse_mode(tree.get("mode", TOP_LEVEL["mode"][1]), problems)

    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        given = tree.get(section, {})
        if not isinstance(given, dict):
            problems.append(f"{section}: expected a table")
            given = {}
        for key in given:
            if key not in keys:
                problems.append(f"{section}.{key}: unknown key")
        values[section] = {}
        for key, (kind, default) in keys.items():
            if key in given:
                values[section][key] = _coerce(f"{section}.{key}", given[key], kind, problems)
            else:
                values[section][key] = default

    if not problems:
        _check_semantics(values, problems)
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(mode, values)
    try:
        cfg.system, cfg.sequence, cfg.detector
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    return cfg


def _check_semantics(values, problems):
    s, r, a = values["system"], values["run"], values["analysis"]
    if s["drive_polarization"] not in Polarization.__members__:
        problems.append(f"system.drive_polarization: expected one of {list(Polarization.__members__)}")
    if r["prng"] not in SUPPORTED_PRNG:
        problems.append(f"run.prng: only {SUPPORTED_PRNG} is implemented")
    for key in ("n_trials", "paper_trials", "workers"):
        if r[key] < 1:
            problems.append(f"run.{key}: must be at least 1")
    if not 0 <= r["master_seed"] < 2**64:
        problems.append("run.master_seed: must be an unsigned 64-bit integer")
    if len(a["pulse_window_us"]) != 2 or a["pulse_window_us"][0] >= a["pulse_window_us"][1]:
        problems.append("analysis.pulse_window_us: expected [start, stop] with start < stop")
    for key in ("g2_bin_us", "g2_range_us", "pulse_bin_us", "dark_tail_us", "eta_det"):
        if a[key] <= 0:
            problems.append(f"analysis.{key}: must be positive")
    if any(t <= 0 for t in values["study"]["drive_lengths_us"]):
        problems.append("study.drive_lengths_us: lengths must be positive")


def loads(text: str) -> ExperimentConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    return from_dict(tree)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def default_config() -> ExperimentConfig:
    return from_dict({})
