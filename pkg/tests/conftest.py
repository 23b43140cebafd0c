import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

from enforced_transfer.cell import CellConfig, train_cell
from enforced_transfer.data import make_blob_pair
from enforced_transfer.features import ActivationSet
from enforced_transfer.nn import TrainConfig


def tiny_cell_config(**kw):
    base = dict(
        encoder_hidden=(8,), embedding_dim=4, disc_hidden=4, head_hidden=8,
        disc_warmup_steps=5,
        source=TrainConfig(learning_rate=1e-2, epochs=30, batch_size=32),
        adversarial=TrainConfig(learning_rate=1e-3, epochs=2, batch_size=32, beta1=0.5),
        target=TrainConfig(learning_rate=1e-2, epochs=3, batch_size=32),
    )
    base.update(kw)
    return CellConfig(**base)


@pytest.fixture(scope="session")
def tiny_pair():
    return make_blob_pair(class_count=3, per_class=60, dim=4, translation=8.0, seed=0)


@pytest.fixture(scope="session")
def tiny_acts(tiny_pair):
    # raw samples stand in for layer-1 activations
    xs = ActivationSet(tiny_pair.source.samples, tiny_pair.source.labels, "source", 1)
    xt = ActivationSet(tiny_pair.target.samples, None, "target", 1)
    return xs, xt


@pytest.fixture(scope="session")
def tiny_models(tiny_acts):
    xs, xt = tiny_acts
    return train_cell(xs, xt, tiny_cell_config(), 3)
