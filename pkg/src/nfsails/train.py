"""Maximum-likelihood flow training with Adam.

The loss is the empirical negative log-likelihood of the data under the
push-forward model, computed through the inverse map and the change of
variables. Gradients come from the autograd tape; updates are plain Adam with
bias correction plus a global-norm gradient clip to survive rare
early-training spikes. Training is bit-reproducible given (seed, config).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import flow as fl
from .autograd import Parameter
from .rng import stream
from .targets import Target

__all__ = [
    "AdamState",
    "NonFiniteLossError",
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergedError",
    "adam_init",
    "adam_step",
    "clip_global_norm",
    "nll_loss",
    "nll_loss_and_grads",
    "train",
]


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 500
    learning_rate: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    n_train: int = 10_000
    n_layers: int = 4
    hidden: int = 16
    clip_norm: float = 100.0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "learning_rate", "n_train", "n_layers", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size > self.n_train:
            raise ValueError(
                f"batch_size {self.batch_size} exceeds dataset size {self.n_train}"
            )


@dataclass
class TrainTrace:
    """Per-epoch mean NLL, wall-clock seconds, and clip-event counts."""

    nll: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    clipped: list[int] = field(default_factory=list)

    def write_csv(self, path) -> None:
        lines = ["epoch,nll"]
        lines += [f"{i},{format(v, '.17g')}" for i, v in enumerate(self.nll)]
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")


class NonFiniteLossError(RuntimeError):
    """The likelihood of some batch element is non-finite."""

    def __init__(self, batch_index: int):
        super().__init__(f"non-finite log-likelihood at batch index {batch_index}")
        self.batch_index = batch_index


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss; carries the trace so far."""

    def __init__(self, message: str, trace: TrainTrace):
        super().__init__(message)
        self.trace = trace


def _per_sample_log_lik(model: fl.FlowModel, batch: np.ndarray) -> np.ndarray:
    z, log_det_inv = model.inverse(batch)
    log_qz = -0.5 * model.dim * fl.LOG_TWO_PI - 0.5 * np.sum(z * z, axis=-1)
    return log_qz + log_det_inv


def _first_nonfinite_index(values: np.ndarray) -> int:
    return int(np.flatnonzero(~np.isfinite(values))[0])


def nll_loss(model: fl.FlowModel, batch) -> float:
    """Mean negative log-likelihood of a batch under the model."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("nll_loss: batch is empty")
    try:
        log_lik = _per_sample_log_lik(model, batch)
    except fl.NonFiniteFlowError as err:
        raise NonFiniteLossError(_locate_bad_sample(model, batch)) from err
    if not np.all(np.isfinite(log_lik)):
        raise NonFiniteLossError(_first_nonfinite_index(log_lik))
    return float(-np.mean(log_lik))


def _locate_bad_sample(model: fl.FlowModel, batch: np.ndarray) -> int:
    for i, x in enumerate(batch):
        try:
            if not np.all(np.isfinite(_per_sample_log_lik(model, x[None]))):
                return i
        except fl.NonFiniteFlowError:
            return i
    return 0


def nll_loss_and_grads(
    model: fl.FlowModel, batch
) -> tuple[float, list[np.ndarray]]:
    """Loss plus its gradient for every model parameter, via the tape.

    Gradient order matches ``model.parameters()``.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("nll_loss_and_grads: batch is empty")
    n = batch.shape[0]
    tape = ag.Tape()
    params = fl.params_on_tape(tape, model)
    xv = tape.leaf(batch)
    zv, log_det_inv = fl.inverse_on_tape(tape, model, xv, params)
    # total -log lik = n * dim/2 * log 2pi + 0.5 * sum z^2 - total log|J_inv|
    half_sq = ag.scale(ag.sum_all(ag.mul(zv, zv)), 0.5)
    root = ag.scale(ag.add(half_sq, ag.scale(log_det_inv, -1.0)), 1.0 / n)
    root = ag.shift(root, 0.5 * model.dim * fl.LOG_TWO_PI)
    loss = float(root.value)
    if not math.isfinite(loss):
        raise NonFiniteLossError(_locate_bad_sample(model, batch))
    adjoints = ag.backward(tape, root)
    grads = []
    for layer_vars in params:
        for var in layer_vars:
            adj = adjoints[var.idx]
            grads.append(
                np.zeros_like(var.value) if adj is None else np.asarray(adj)
            )
    return loss, grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def adam_init(params: list[Parameter]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p.value) for p in params],
        v=[np.zeros_like(p.value) for p in params],
    )


def adam_step(
    params: list[Parameter],
    grads: list[np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[list[Parameter], AdamState]:
    """One Adam update with bias correction; mutates params and state in place."""
    if len(grads) != len(params):
        raise ValueError(
            f"adam_step: {len(grads)} gradients for {len(params)} parameters"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(g) != p.shape:
            raise ValueError(
                f"adam_step: gradient {i} has shape {np.shape(g)}, parameter has {p.shape}"
            )
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - config.learning_rate * (m / bc1) / (
            np.sqrt(v / bc2) + config.eps_adam
        )
    return params, state


def clip_global_norm(
    grads: list[np.ndarray], max_norm: float
) -> tuple[list[np.ndarray], bool]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        factor = max_norm / total
        return [g * factor for g in grads], True
    return grads, False


def train(
    spec: Target,
    config: TrainConfig,
    model: fl.FlowModel | None = None,
) -> tuple[fl.FlowModel, TrainTrace]:
    """Fit a flow to the target by SGD over shuffled batches.

    Draws the training set once (seeded), then runs ``epochs`` passes of Adam
    over full permutations, keeping the last short batch. Aborts with
    :class:`TrainingDivergedError` if the loss goes non-finite.
    """
    config.validate()
    data = spec.sample(config.n_train, stream(config.seed, "data"))
    if model is None:
        model = fl.build_flow(
            dim=2,
            n_layers=config.n_layers,
            hidden=config.hidden,
            rng=stream(config.seed, "init"),
        )
    params = model.parameters()
    state = adam_init(params)
    shuffle_rng = stream(config.seed, "train")
    trace = TrainTrace()
    n = config.n_train
    for _ in range(config.epochs):
        tic = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        clip_events = 0
        for start in range(0, n, config.batch_size):
            batch = data[perm[start : start + config.batch_size]]
            try:
                loss, grads = nll_loss_and_grads(model, batch)
            except NonFiniteLossError as err:
                raise TrainingDivergedError(
                    f"training diverged: {err}", trace
                ) from err
            grads, was_clipped = clip_global_norm(grads, config.clip_norm)
            clip_events += was_clipped
            adam_step(params, grads, state, config)
            loss_sum += loss * batch.shape[0]
        trace.nll.append(loss_sum / n)
        trace.seconds.append(time.perf_counter() - tic)
        trace.clipped.append(clip_events)
    return model, trace
