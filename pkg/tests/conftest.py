import numpy as np
import pytest

from speccal.core import ENV1_VALID, LabeledDataset, LogitRecord, softmax


def make_logit_dataset(z, y, split_tag=ENV1_VALID, seed_id=0, prefix="s"):
    records = tuple(
        LogitRecord(f"{prefix}{i}", int(y[i]), z[i], seed_id) for i in range(len(y))
    )
    return LabeledDataset(records, split_tag)


def calibrated_logits(rng, n, k, scale=1.0, spread=2.0):
    """Logits with labels drawn from softmax(z); multiplying z by `scale`
    afterwards injects a known temperature miscalibration of T=scale."""
    z = rng.normal(0.0, spread, (n, k))
    p = softmax(z)
    y = np.array([rng.choice(k, p=row) for row in p])
    return z * scale, y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_valid_ds(rng):
    z, y = calibrated_logits(rng, 300, 5, scale=2.0)
    return make_logit_dataset(z, y)
