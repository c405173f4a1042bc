"""Seeded random streams.

All stochastic code draws from Philox-4x64 (10 rounds), a counter-based
generator. A stream is keyed by ``(seed, task_index)`` through
:class:`numpy.random.SeedSequence`, so the numbers a task sees do not depend
on how many workers run the tasks or in which order.
"""

import numpy as np

GENERATOR_NAME = "Philox4x64-10"
# task index reserved for drawing random spin systems, apart from sampler tasks
SYSTEM_STREAM = 0xFFFFFFFF


def stream(seed: int, task: int = 0) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is required for stochastic computations")
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(task)])
    return np.random.Generator(np.random.Philox(seq))
