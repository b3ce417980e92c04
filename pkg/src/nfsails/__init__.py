"""Coupling-layer normalizing flows on 2D synthetic targets, with naive
push-forward sampling and latent-space MCMC (NF-SAILS)."""

from .autograd import Parameter, Tape, backward
from .flow import (
    CouplingLayer,
    FlowModel,
    build_flow,
    load_checkpoint,
    save_checkpoint,
)
from .metrics import (
    EvalReport,
    jacobian_explosion_profile,
    kl_knn,
    ks_2d,
    mean_log_likelihood,
    ood_fraction,
)
from .samplers import (
    ChainState,
    RunDiagnostics,
    SamplerConfig,
    imh_step,
    make_state,
    naive_sample,
    nf_sails,
    rmmala_step,
)
from .targets import (
    DensityUnavailableError,
    GaussianMixtureTarget,
    TwoMoonsTarget,
    parse_target,
)
from .train import TrainConfig, TrainTrace, nll_loss, train

__version__ = "0.1.0"
