import numpy as np
import pytest
from hypothesis import settings

from leakguard.features import FeatureBatch, build_codebook

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


def synthetic_batch(rng, size, dt_mean=6.3, b_mean=1.0):
    return FeatureBatch(
        dt=rng.gamma(8.0, dt_mean / 8.0, size=size),
        b=rng.gamma(10.0, b_mean / 10.0, size=size),
        q=rng.integers(0, 4, size=size),
        zeta=rng.normal(0.5, 0.3, size=size),
    )


@pytest.fixture(scope="session")
def small_codebook():
    rng = np.random.default_rng(11)
    return build_codebook({(4, k): synthetic_batch(rng, 4000) for k in range(3)})


@pytest.fixture(scope="session")
def tiny():
    """A short-episode config with artifacts calibrated for n=4 only."""
    from dataclasses import replace

    from leakguard import experiments as ex
    from leakguard.config import ExperimentConfig

    base = ExperimentConfig()
    cfg = replace(base, grid=replace(base.grid, steps=320, seeds=3, tier1_ns=(4,), tier2_ns=(4,)))
    art = ex.calibrate_artifacts(cfg, 0, [4], episodes=12)
    return cfg, art
