"""Reference run for the pinned level-sequence hitting probability.

20 000 paths with the Cholesky sampler (independent of the circulant
sampler used by the pinned 2000-path run). Takes several minutes; the
result is frozen in tests/test_montecarlo.py.

    python tests/oracles/level_sequence_reference.py
"""

import time

from fcir.drift import builtin
from fcir.fbm import TimeGrid
from fcir.montecarlo import EnsembleConfig, hitting_probability

if __name__ == "__main__":
    grid = TimeGrid.from_horizon(10.0, 1e-3)
    spec = builtin("level_sequence", {"k": 1.0, "a": 1.0})
    config = EnsembleConfig(20_000, 2024, grid, spec, 0.4, 1.0, 0.3, fbm_method="cholesky")
    start = time.time()
    result = hitting_probability(config)
    print(result, f"{time.time() - start:.0f}s")
