"""Training of neural control policies by backpropagation through rollouts.

The objective per trajectory is the control energy plus the terminal cost;
its batch mean is minimised with Adam on the globally clipped gradient.
Fresh Brownian increments are drawn for every batch from the ``train``
substream, so a run is fully determined by its configuration and seed.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rng_mod
from .autodiff import AdamState, Tape, adam_step, clip_vector
from .errors import ConfigurationError, TrainingError
from .policy import NeuralPolicy, make_policy
from .sde import SdeConfig, draw_noises, rollout, simulate_batch, terminal_cost, terminal_cost_node
from .validation import check_positive

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    sde: SdeConfig
    epochs: int = 30
    batches_per_epoch: int = 50
    batch_size: int = 300
    lr: float = 5e-3
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size"):
            check_positive(name, getattr(self, name), integer=True)
        check_positive("lr", self.lr)
        check_positive("grad_clip_norm", self.grad_clip_norm)

    def as_dict(self):
        out = asdict(self)
        out["sde"] = asdict(self.sde)
        return out


@dataclass
class TrainState:
    params: object
    adam: AdamState
    step: int = 0
    loss_history: list = field(default_factory=list)   # (step, loss, terminal, energy)


@dataclass(frozen=True)
class BatchLoss:
    loss: float
    terminal: np.ndarray
    energy: np.ndarray
    param_grads: np.ndarray = None


def loss_batch(policy, target, config, batch, key=None, start=0, noises=None, grad=True):
    """Mean of ``energy + terminal_cost(x_T)`` over a batch of rollouts.

    The ``u . dw`` term is left out: it has zero mean under the controlled
    process.  With ``grad`` the parameter gradient of the mean is returned as
    well.  ``noises`` (shape (batch, N, d), including the sqrt(dt) scale)
    overrides the substream.
    """
    if noises is None:
        check_positive("batch", batch, integer=True)
        key = rng_mod.stream_key(config.seed, "train") if key is None else key
        noises = draw_noises(config, key, start, batch)
    tape = Tape(record=grad and isinstance(policy, NeuralPolicy))
    x, energy, _, _ = rollout(policy, config, noises, tape)
    term = terminal_cost_node(tape, x, target, config)
    per_traj = tape.add(energy, term)
    loss = tape.mean(per_traj)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingError("non-finite loss", diagnostics={
            "max_state_norm": float(np.max(np.linalg.norm(x.value, axis=1))),
            "max_energy": float(np.max(energy.value))})
    grads = None
    if grad and tape.record:
        grads, _ = tape.backprop(loss)
    return BatchLoss(value, term.value, energy.value, grads)


def train(target, train_config, policy_kind="grad", policy=None, callback=None, **policy_kw):
    """Train a ``policy_kind`` policy on ``target``.

    Runs ``epochs * batches_per_epoch`` Adam steps.  ``callback(epoch, state,
    policy)`` is called after every epoch (checkpointing hooks in here).  On
    a non-finite loss or gradient a :class:`TrainingError` is raised whose
    ``state`` attribute holds the last finite parameters.
    Returns ``(state, policy)``.
    """
    sde = train_config.sde
    if target.dim != sde.dim:
        raise ConfigurationError(f"target dim {target.dim} != sde dim {sde.dim}")
    if policy is None:
        policy = make_policy(policy_kind, sde.dim, sde.horizon, target=target,
                             seed=train_config.seed, **policy_kw)
    if not isinstance(policy, NeuralPolicy):
        raise ConfigurationError("only neural policies can be trained")
    params = policy.params
    state = TrainState(params, AdamState.zeros(params.size, lr=train_config.lr))
    key = rng_mod.stream_key(train_config.seed, "train")
    for epoch in range(train_config.epochs):
        for _ in range(train_config.batches_per_epoch):
            step = state.step
            try:
                out = loss_batch(policy, target, sde, train_config.batch_size, key=key,
                                 start=step * train_config.batch_size)
                g = clip_vector(out.param_grads, train_config.grad_clip_norm)
                backup = (params.flat.copy(), state.adam.copy())
                adam_step(state.adam, params, g)
            except TrainingError as exc:
                exc.step = step
                exc.state = state
                logger.error("training stopped at step %d: %s", step, exc)
                raise
            if not np.all(np.isfinite(params.flat)):
                params.flat[:], state.adam = backup
                raise TrainingError(f"non-finite parameters after step {step}", step=step)
            state.step += 1
            state.loss_history.append((step, out.loss, float(np.mean(out.terminal)),
                                       float(np.mean(out.energy))))
        logger.info("epoch %d: loss %.5f", epoch, state.loss_history[-1][1])
        if callback is not None:
            callback(epoch, state, policy)
    return state, policy


def evaluate_kl_gap(policy, target, config, n, key=None):
    """Monte-Carlo ``KL(Q^u || Q*) = E[girsanov + terminal cost] + log Z``.

    Returns ``(estimate, stderr)``.
    """
    if target.true_log_z is None:
        raise ConfigurationError(f"{target.name} has no known log Z")
    key = rng_mod.stream_key(config.seed, "kl-gap") if key is None else key
    trajs = simulate_batch(policy, target, config, n, key=key)
    s = trajs.cost_girsanov + terminal_cost(trajs.terminal, target, config)
    err = float(np.std(s, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(s) + target.true_log_z), err
