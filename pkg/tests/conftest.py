import numpy as np
import pytest

from boundarylab import attacks, data, geometry, model


@pytest.fixture(scope="session")
def blobs_train():
    return data.make_blobs(80, k=4, d=8, separation=6.0, seed=1)


@pytest.fixture(scope="session")
def blobs_test():
    return data.make_blobs(40, k=4, d=8, separation=6.0, seed=2)


@pytest.fixture(scope="session")
def blobs_mlp(blobs_train):
    clf = model.mlp((8,), k=4, n=2, hidden=(16,), seed=0)
    return model.train(clf, blobs_train, epochs=25, seed=0)


@pytest.fixture(scope="session")
def blobs_boundaries(blobs_mlp):
    return geometry.boundary_set_for(blobs_mlp)


@pytest.fixture(scope="session")
def quick_attack_config():
    return attacks.AttackConfig(epsilon=0.08, alpha=0.02, restarts=2,
                                n_init=3, n_attack=10, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
