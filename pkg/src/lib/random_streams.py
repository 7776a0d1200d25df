"""
Named random substreams derived from a single experiment seed.
"""
import numpy as np

STREAM_IDS = {
    'ruff': 1,
    'puff': 2,
    'puff-weights': 3,
    'gaussian': 4,
    'cff': 5,
    'oracle': 6,
    'pm-queries': 7,
    'movies': 8,
    'instance': 9,
}


def substream(seed, name: str, *key: int) -> np.random.SeedSequence:
    """
    :param seed: Integer seed, SeedSequence, or None for fresh entropy
    :param name: Stream name (see STREAM_IDS)
    :param key: Extra nonnegative integers, e.g. a retry attempt or a block index
    :return: A SeedSequence that depends only on the seed, the name and the key.
    """
    base = as_seed_sequence(seed)
    spawn_key = tuple(base.spawn_key) + (STREAM_IDS[name],) + tuple(int(k) for k in key)
    return np.random.SeedSequence(base.entropy, spawn_key=spawn_key)


def stream_rng(seed, name: str, *key: int) -> np.random.Generator:
    return np.random.default_rng(substream(seed, name, *key))


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """
    Fix the entropy of a seed once so that all substreams of a run agree
    """
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
