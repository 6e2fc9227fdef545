import numpy as np
import pytest

from ecbm import data as ed
from ecbm import model as em
from ecbm import training as tr


def make_spec(n_concepts=4, n_classes=3, feature_dim=8, n_examples=300,
              flip_prob=0.05, couplings=((0, 1),), feature_seed=11,
              feature_noise=0.1):
    rng = np.random.default_rng(99)
    protos = set()
    while len(protos) < n_classes:
        protos.add(tuple(int(b) for b in rng.integers(0, 2, n_concepts)))
    return ed.GeneratorSpec(
        n_concepts=n_concepts, n_classes=n_classes, feature_dim=feature_dim,
        n_examples=n_examples, prototypes=tuple(sorted(protos)),
        flip_prob=flip_prob, couplings=couplings,
        feature_seed=feature_seed, feature_noise=feature_noise)


@pytest.fixture(scope="session")
def small_trained():
    """A lightly trained K=4 / M=3 model with its train and test splits."""
    spec = make_spec()
    train_set = ed.generate(spec, seed=1)
    test_set = ed.generate(spec, seed=2)
    cfg = em.ModelConfig(n_concepts=4, n_classes=3, feature_dim=8, embed_dim=8)
    theta = em.init_theta(cfg, seed=0)
    theta, history = tr.train(theta, train_set, tr.TrainConfig(
        epochs=12, batch_size=32, learning_rate=0.05, seed=0))
    return theta, train_set, test_set, history
