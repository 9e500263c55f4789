import numpy as np
import pytest

from caqubo.datasets import SyntheticSpec, generate_synthetic, split_holdout


@pytest.fixture(scope="session")
def small_synth():
    """80 users x 120 items x 12 features, 4 planted."""
    spec = SyntheticSpec(n_users=80, n_items=120, n_features=12, n_informative=4, interaction_density=0.05, seed=3)
    urm, icm, planted = generate_synthetic(spec)
    return urm, icm, planted, split_holdout(urm, 0.8, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
