import numpy as np
import pytest

from tecfusion.config import ExperimentConfig
from tecfusion.ingest import SyntheticSpec, generate_synthetic

np.seterr(over="ignore", under="ignore")

TINY_SPEC = SyntheticSpec(days=372, max_lag_days=4, locations=((10.0, 20.0), (45.0, 150.0), (-65.0, -100.0)))


def tiny_config(name="tiny", steps=6, stride=24, hidden=8, epochs=2, batches=3, sources=None, **more):
    """A small hourly-driver config that trains in a couple of seconds."""
    if sources is None:
        sources = {
            "omni_indices": {"lag": f"{steps} h", "resolution": "1 h"},
            "ap_index": {"lag": f"{steps} d", "resolution": "1 d"},
            "timed_see_l3": {"lag": f"{steps} d", "resolution": "1 d"},
            "target_vtec": {"lag": f"{steps} h", "resolution": "1 h"},
        }
    data = dict(
        name=name,
        encoder_steps=steps,
        horizon_steps=4,
        sources=sources,
        split={"anchor_year": 2014},
        origin_stride=stride,
        model={"hidden_size": hidden, "attention_heads": 2, "lstm_layers": 1, "dropout_rate": 0.1},
        training={"max_epochs": epochs, "max_batches_per_epoch": batches, "batch_size": 16, "patience": 2},
    )
    data.update(more)
    return ExperimentConfig.from_dict(data)


@pytest.fixture(scope="session")
def tiny_bundle():
    return generate_synthetic(TINY_SPEC)
