"""Simulation and analysis of a single-ion cavity single-photon source.

Time is in microseconds and frequencies are angular (rad/us) throughout the
model; see :mod:`ioncavity.config` for the unit-suffixed configuration keys.
"""
from .master import PulseSequence, integrate
from .model import SystemParams

__all__ = ["PulseSequence", "SystemParams", "integrate"]
__version__ = "0.1.0"
