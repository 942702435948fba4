"""Score-based data assimilation: Python surface over the C++ core.

The pipeline functions (:func:`simulate`, :func:`train_codec`,
:func:`train_score`, :func:`assimilate`, :func:`ablate`, :func:`report`)
mirror the ``scoreda`` CLI subcommands and accept the same JSON configuration
document (as a string or a dict).
"""

import json as _json

from scoreda._scoreda import (  # noqa: F401
    DiffusionSchedule,
    ScoredaError,
    sample_unconditional,
    simulate_lorenz96,
    wasserstein_1d,
)
from scoreda._scoreda import ablate as _ablate
from scoreda._scoreda import assimilate as _assimilate
from scoreda._scoreda import report as _report
from scoreda._scoreda import simulate as _simulate
from scoreda._scoreda import train_codec as _train_codec
from scoreda._scoreda import train_score as _train_score

__all__ = [
    "DiffusionSchedule",
    "ScoredaError",
    "ablate",
    "assimilate",
    "report",
    "sample_unconditional",
    "simulate",
    "simulate_lorenz96",
    "train_codec",
    "train_score",
    "wasserstein_1d",
]


def _as_json(config):
    return config if isinstance(config, str) else _json.dumps(config)


def simulate(config):
    """Generate truth, training, and background trajectories."""
    _simulate(_as_json(config))


def train_codec(config):
    """Fit the multimodal latent codec."""
    _train_codec(_as_json(config))


def train_score(config, space):
    """Train the windowed score model for ``space`` ("pixel" or "latent")."""
    _train_score(_as_json(config), space)


def assimilate(config, mode, coarsening, noise, gap):
    """Run one (mode, grid point) cell; returns the report row as a dict."""
    return _json.loads(_assimilate(_as_json(config), mode, coarsening, noise, gap))


def ablate(config):
    """Run the full ablation grid; returns the report as a dict."""
    return _json.loads(_ablate(_as_json(config)))


def report(outdir):
    """Rebuild report tables from a finished run directory."""
    return _json.loads(_report(outdir))
