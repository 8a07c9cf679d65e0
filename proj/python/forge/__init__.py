"""Budget-aware ensemble selection, device allocation and ASHA scheduling."""

import json

from ._forge import (
    ForgeError,
    ModelLibrary,
    average,
    cross_entropy,
    error_rate,
    load_library,
    macro_f1,
    majority_vote,
    penalty,
    prune_library,
    run_pipeline,
    weighted_average,
)
from . import _forge

__all__ = [
    "ForgeError",
    "ModelLibrary",
    "allocate",
    "average",
    "brute_force_best",
    "cross_entropy",
    "error_rate",
    "load_library",
    "macro_f1",
    "majority_vote",
    "penalty",
    "prune_library",
    "run_hpo",
    "run_pipeline",
    "select",
    "weighted_average",
]


def select(library, budget, weights=(0.1, 0.01, 0.001), threads=1):
    """Multi-weight greedy selection under ``budget``; returns the solution document."""
    return json.loads(_forge._select(library, float(budget), list(weights), threads))


def brute_force_best(library, budget):
    return json.loads(_forge._brute_force(library, float(budget)))


def allocate(library, ids, devices=None, permitted_batches=(), max_combi=500):
    devices_json = json.dumps(devices) if devices is not None else ""
    return json.loads(_forge._allocate(library, list(ids), devices_json, list(permitted_batches), max_combi))


def run_hpo(space, algo="asha", eta=3, min_r=1, max_r=81, trials=64, workers=4, seed=20210901, noise=0.01):
    """Runs the scheduler on the synthetic objective. ``space`` is the list of dimensions."""
    doc = _forge._run_hpo(json.dumps(space), algo, eta, min_r, max_r, trials, workers, seed, noise)
    return json.loads(doc)
