import numpy as np
import pytest

from echopose.attention import train_classifier
from echopose.chirp import ChirpSpec
from echopose.datasets import build_attention_dataset
from echopose.geometry import HeadGeometry


@pytest.fixture(scope="session")
def spec():
    return ChirpSpec()


@pytest.fixture(scope="session")
def geometry():
    return HeadGeometry()


@pytest.fixture(scope="session")
def attention_dataset(spec):
    """Rendered look/not-look dataset, shared by attention and acceptance tests."""
    return build_attention_dataset(spec, n_trajectories=8, seed=100)


@pytest.fixture(scope="session")
def attention_model(attention_dataset):
    ds = attention_dataset
    return train_classifier(ds.features, ds.labels.astype(float) * 2 - 1)


@pytest.fixture(scope="session")
def attention_loto_accuracies(attention_dataset):
    ds = attention_dataset
    accs = []
    for tid in np.unique(ds.trajectory_ids):
        xtr, ytr, xte, yte = ds.fold(tid)
        model = train_classifier(xtr, ytr.astype(float) * 2 - 1)
        pred = model.decision_function(xte) > 0
        accs.append(float(np.mean(pred == yte)))
    return accs
