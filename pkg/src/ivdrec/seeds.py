"""Deterministic seed fan-out.

A single master seed is expanded into independent per-component streams via
numpy's SeedSequence spawn keys. The spawn key is a tuple of small integers
(one per path element), so any component can be replayed in isolation by
reconstructing its path: e.g. child_rng(master, STAGE_TRIAL, target_item, cell_index).
"""

from __future__ import annotations

import numpy as np

# stage identifiers for spawn-key paths
STAGE_TRAIN = 0
STAGE_CLUSTER = 1
STAGE_TARGETS = 2
STAGE_FORGE = 3
STAGE_GENUINE = 4
STAGE_TRIAL = 5
STAGE_SYNTH = 6


def child_seq(master_seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))


def child_rng(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(child_seq(master_seed, *path))
