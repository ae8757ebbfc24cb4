"""Plot scripts for the correlation, pulse-shape and population figures.

Each script is plain Python that reads the bundle's CSV files and draws with
matplotlib when run; generating them needs neither matplotlib nor the data.
"""
from __future__ import annotations

from pathlib import Path

FIGURES = {
    "fig2_g2.py": {
        "needs": ("g2.csv",),
        "bin_us": 1.0,
        "body": '''
tau, g2 = rebin("g2.csv", "tau_us", "value", BIN_US, centred=True, average=True)
plt.plot(tau, g2, ":", label="data, background subtracted")
if os.path.exists(os.path.join(HERE, "g2_sim.csv")):
    tau_s, g2_s = rebin("g2_sim.csv", "tau_us", "g2", BIN_US, centred=True, average=True)
    plt.plot(tau_s, g2_s, "-", label="simulation")
plt.xlabel("time delay tau (us)")
plt.ylabel("g2(tau)")
plt.title("Normalized second-order correlation, 1 us bins")
''',
    },
    "fig3_pulse_shape.py": {
        "needs": ("pulse_shape.csv", "pulse_sim.csv"),
        "bin_us": 0.5,
        "body": '''
t, p = rebin("pulse_shape.csv", "t_start_us", "net_probability", BIN_US)
t_s, p_s = rebin("pulse_sim.csv", "t_start_us", "probability", BIN_US)
plt.plot(t, p, ":", label="data")
plt.plot(t_s, p_s, "-", label="simulation")
plt.xlabel("time after drive start (us)")
plt.ylabel("detection probability per 500 ns bin")
''',
    },
    "fig4_populations.py": {
        "needs": ("evolution.csv",),
        "bin_us": None,
        "body": '''
data = read("evolution.csv")
drive = data["time_us"] <= DRIVE_US
fig, (ax_s, ax_d) = plt.subplots(2, 1, sharex=True)
for name in data.dtype.names:
    if name.startswith("pop_S12"):
        ax_s.plot(data["time_us"][drive], data[name][drive], label=name[4:])
    elif name.startswith("pop_D32"):
        ax_d.plot(data["time_us"][drive], data[name][drive], label=name[4:])
ax_s.set_ylabel("S1/2 populations")
ax_d.set_ylabel("D3/2 populations")
ax_d.set_xlabel("time (us)")
ax_s.legend()
''',
    },
}

PREAMBLE = '''"""Generated plot script; reads CSV files next to it."""
import os

import matplotlib.pyplot as plt
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
BIN_US = {bin_us}
DRIVE_US = {drive_us}


def read(name):
    with open(os.path.join(HERE, name)) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return np.genfromtxt(lines, delimiter=",", names=True)


def rebin(name, xcol, ycol, width, centred=False, average=False):
    data = read(name)
    x, y = data[xcol], data[ycol]
    key = np.round(x / width) if centred else np.floor(x / width + 1e-9)
    edges, idx = np.unique(key, return_inverse=True)
    total = np.bincount(idx, weights=y)
    if average:
        total = total / np.bincount(idx)
    return edges * width, total

'''

EPILOGUE = '''
plt.legend()
plt.savefig(os.path.splitext(os.path.abspath(__file__))[0] + ".png", dpi=150)
'''


class MissingDataError(FileNotFoundError):
    def __init__(self, missing: dict[str, list[str]]):
        self.missing = missing
        lines = [f"  - {fig}: missing {', '.join(files)}" for fig, files in missing.items()]
        super().__init__("cannot write figure scripts:\n" + "\n".join(lines))


def emit_figures(bundle: Path, drive_us: float = 120.0) -> list[Path]:
    """Write one plot script per figure into ``bundle``; all inputs must be present."""
    bundle = Path(bundle)
    missing = {}
    for name, spec in FIGURES.items():
        absent = [f for f in spec["needs"] if not (bundle / f).exists()]
        if absent:
            missing[name] = absent
    if missing:
        raise MissingDataError(missing)
    written = []
    for name, spec in FIGURES.items():
        path = bundle / name
        path.write_text(PREAMBLE.format(bin_us=spec["bin_us"], drive_us=drive_us) + spec["body"] + EPILOGUE)
        written.append(path)
    return written
