import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ttc.harness import ToyWGANConfig, train_toy_wgan  # noqa: E402


class _ToyRuns:
    """Toy WGAN-GP runs, trained once per seed and shared across test modules."""

    def __init__(self):
        self.runs = {}

    def __call__(self, seed):
        if seed not in self.runs:
            cfg = ToyWGANConfig(seed=seed)
            self.runs[seed] = (cfg, train_toy_wgan(cfg))
        return self.runs[seed]


@pytest.fixture(scope="session")
def toy_runs():
    return _ToyRuns()
