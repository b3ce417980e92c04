import pytest

from nfsails.targets import GaussianMixtureTarget
from nfsails.train import TrainConfig, train


@pytest.fixture(scope="session")
def quick_k2_model():
    """Reduced-protocol training on the two-mode mixture.

    Enough steps to split the latent space into two mode cells; used by the
    sampler and metric tests that need a genuinely trained model without the
    full protocol's runtime.
    """
    spec = GaussianMixtureTarget(k=2)
    config = TrainConfig(epochs=400, n_train=4000, batch_size=500, seed=11)
    model, _ = train(spec, config)
    return model
