"""
Counter-based random substreams.

Every random quantity in a run is drawn from a generator keyed by the run seed
and a tuple of integer counters (stream tag, subset, draw index, ...), so the
result of draw ``i`` never depends on how many draws ran before it or on which
worker ran it.
"""

from typing import Optional, Union

import numpy as np

# Stream tags keep independent consumers apart even when their counters coincide.
STREAM_FIT = 1
STREAM_DRAW = 2
STREAM_MC = 3
STREAM_BOOTSTRAP = 4
STREAM_REPLICATION = 5
STREAM_DATA = 6
STREAM_ORACLE = 7
STREAM_SUBSET = 8


def new_seed() -> int:
    """Fresh 63-bit seed from OS entropy (echoed into every artifact by callers)."""
    return int(np.random.SeedSequence().entropy % (2**63))


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the substream addressed by ``keys`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)))


def child_seed(seed: int, *keys: int) -> int:
    """Derived integer seed, for handing a substream to a function that takes a seed."""
    state = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def as_generator(rng: Optional[Union[np.random.Generator, int]]) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
