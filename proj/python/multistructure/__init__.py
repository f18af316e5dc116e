"""Thin-structure energies, envelopes and limit solvers."""

import json

from ._multistructure import (
    ConfigError,
    EnergyDensity,
    annulus_p_capacity,
    cell_qcw,
    config_hash,
    convex_envelope,
    radial_envelope_oracle,
    run_invariants,
)
from . import _multistructure

__version__ = "0.1.0"


def gamma_study(config_path, regime=None):
    """Run the epsilon sequence and the limit problem of a config file; returns the report as a dict."""
    return json.loads(_multistructure.gamma_study_json(str(config_path), regime))


__all__ = [
    "ConfigError",
    "EnergyDensity",
    "annulus_p_capacity",
    "cell_qcw",
    "config_hash",
    "convex_envelope",
    "gamma_study",
    "radial_envelope_oracle",
    "run_invariants",
]
