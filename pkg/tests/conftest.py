import numpy as np
import pytest

from fcp.dataset import GenerationConfig, build_query_batches, build_training_shape
from fcp.network import ArchConfig
from fcp.primitives import make_box
from fcp.training import TrainConfig, train_prior


@pytest.fixture(scope="session")
def trained_box():
    """A small single-shape prior shared by consolidation tests.

    Desk-scale: 2048-query batches, 96-wide decoders, 400 iterations; enough
    to decode the shape at CD_L1 well under 0.03.
    """
    gen = GenerationConfig(cloud_points=30_000, extra_observations=0,
                           queries_per_obs=2048, seed=21)
    shape = build_training_shape(make_box((1.1, 0.8, 0.95)), gen, "box", shape_seed=4)
    batches = build_query_batches(shape, 2048, seed=5)
    arch = ArchConfig(hidden=128, layers=8, dtype="float32")
    train = TrainConfig(epochs=160, queries_per_iter=2048, seed=6,
                        lr_decay_every=100)
    result = train_prior([(shape, batches)], train, arch)
    assert not result.diverged
    return {"shape": shape, "batches": batches, "result": result,
            "gen": gen, "train": train, "arch": arch}
