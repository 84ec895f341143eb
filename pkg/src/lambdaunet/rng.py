import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, *stream)``.

    Different ``stream`` keys give statistically independent generators from
    one user-facing seed, so adding a consumer never shifts another's draws.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=stream))
