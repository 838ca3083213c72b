"""Tree-based hierarchical variance priors."""

import json as _json
import os as _os

from ._priorforest import (
    Prior,
    PriorForestError,
    dirichlet_concentration,
    example_names,
    find_pc_prior_param,
    pc_stdev_density,
)
from . import _priorforest

__all__ = [
    "Prior",
    "PriorForestError",
    "dirichlet_concentration",
    "example_bundle",
    "example_names",
    "find_pc_prior_param",
    "load",
    "make_prior",
    "pc_stdev_density",
]


def example_bundle(name, seed=1):
    """Bundle dict for a simulated example, data inline."""
    return _json.loads(_priorforest.example_bundle(name, seed))


def make_prior(bundle, base_dir="."):
    """Prior from a bundle dict (same schema as the bundle JSON files)."""
    return Prior(_json.dumps(bundle), base_dir)


def load(path):
    return Prior.load(_os.fspath(path))


def infer(prior, **settings):
    out = prior.infer(_json.dumps(settings))
    out["summary"] = _json.loads(out["summary"])
    return out
