"""Euler-Maruyama simulation of the controlled diffusion ``dx = u dt + dw``.

The process starts at the origin, so without control the terminal state is
``N(0, T I)``.  Besides the states, a rollout accumulates the control energy
``sum 0.5 |u|^2 dt`` and the Girsanov cost ``sum (u.dw + 0.5 |u|^2 dt)``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .autodiff import Tape
from .errors import ConfigurationError, SimulationError
from .targets import GaussianTarget
from .validation import check_positive

CHUNK_SIZE = 2048


@dataclass(frozen=True)
class SdeConfig:
    dim: int
    horizon: float = 1.0
    steps: int = 100
    seed: int = 0

    def __post_init__(self):
        check_positive("dim", self.dim, integer=True)
        check_positive("horizon", self.horizon)
        check_positive("steps", self.steps, integer=True)

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def times(self):
        """Left endpoints t_0 .. t_{N-1} at which the control is evaluated."""
        return np.arange(self.steps) * self.dt

    def replace(self, **changes):
        fields = dict(dim=self.dim, horizon=self.horizon, steps=self.steps, seed=self.seed)
        fields.update(changes)
        return SdeConfig(**fields)


def reference_density(config):
    """The uncontrolled terminal density N(0, T I) as a target object."""
    return GaussianTarget(np.zeros(config.dim), np.full(config.dim, float(config.horizon)))


def reference_terminal_log_pdf(x, config):
    return reference_density(config).log_unnorm(x)


def terminal_cost(x, target, config):
    """``log N(x; 0, T I) - log target(x)``."""
    return reference_terminal_log_pdf(x, config) - target.log_unnorm(x)


def terminal_cost_node(tape, x, target, config):
    """Terminal cost of a batch of states as a tape node of shape (B,)."""
    ref = reference_density(config)
    xv = x.value
    value = ref.log_unnorm(xv) - target.log_unnorm(xv)
    grad = ref.grad_log(xv) - target.grad_log(xv)
    return tape.custom(value, (x,), lambda g: (g[:, None] * grad,))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray      # (N+1, d); None when paths were not kept
    noises: np.ndarray      # (N, d); None when paths were not kept
    terminal: np.ndarray    # (d,)
    cost_energy: float
    cost_girsanov: float


class TrajectoryBatch:
    """Results of a batch of rollouts, stored as stacked arrays.

    Indexing yields :class:`Trajectory` objects, so the batch also behaves as
    a list of trajectories.
    """

    def __init__(self, terminal, cost_energy, cost_girsanov, states=None, noises=None):
        self.terminal = terminal
        self.cost_energy = cost_energy
        self.cost_girsanov = cost_girsanov
        self.states = states
        self.noises = noises

    def __len__(self):
        return self.terminal.shape[0]

    def __getitem__(self, i):
        return Trajectory(
            None if self.states is None else self.states[i],
            None if self.noises is None else self.noises[i],
            self.terminal[i], float(self.cost_energy[i]), float(self.cost_girsanov[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def concatenate(cls, parts):
        cat = lambda name: (None if getattr(parts[0], name) is None
                            else np.concatenate([getattr(p, name) for p in parts]))
        return cls(cat("terminal"), cat("cost_energy"), cat("cost_girsanov"),
                   cat("states"), cat("noises"))


def rollout(policy, config, noises, tape, keep_path=False, offset=0):
    """Unroll the Euler scheme on ``tape`` for pre-drawn increments.

    ``noises`` has shape (B, N, d) and already carries the sqrt(dt) scale.
    Returns ``(x_T, energy, cross, states)`` where ``x_T`` and ``energy`` are
    tape values, ``cross`` is the numeric sum of ``u . dw`` and ``states`` the
    list of visited states (only when ``keep_path``).
    """
    batch, n_steps, dim = noises.shape
    if n_steps != config.steps or dim != config.dim:
        raise ConfigurationError(f"noise shape {noises.shape} does not match config")
    if policy.dim != config.dim:
        raise ConfigurationError(f"policy dim {policy.dim} != config dim {config.dim}")
    dt = config.dt
    control = policy.stepper(tape, config)
    x = tape.constant(np.zeros((batch, dim)))
    energy = tape.constant(np.zeros(batch))
    cross = np.zeros(batch)
    states = [x.value] if keep_path else None
    for k in range(n_steps):
        u = control(k, x)
        dw = noises[:, k, :]
        energy = tape.add(energy, tape.sqnorm(u))
        cross += np.sum(u.value * dw, axis=1)
        x = tape.add(tape.add(x, tape.scale(u, dt)), tape.constant(dw))
        if not np.all(np.isfinite(x.value)):
            bad = int(np.argmax(~np.all(np.isfinite(x.value), axis=1)))
            raise SimulationError(f"non-finite state at step {k + 1} (trajectory {offset + bad})",
                                  step=k + 1, index=offset + bad)
        if keep_path:
            states.append(x.value)
    energy = tape.scale(energy, 0.5 * dt)
    if keep_path:
        states = np.stack(states, axis=1)
    return x, energy, cross, states


def draw_noises(config, key, start, count):
    """Brownian increments for trajectories ``start .. start+count-1``."""
    z = rng_mod.trajectory_normals(key, start, count, config.steps, config.dim)
    return z * np.sqrt(config.dt)


def default_key(config, stream="sample"):
    return rng_mod.stream_key(config.seed, stream)


def _simulate_chunk(policy, config, key, start, count, keep_path, noises=None):
    if noises is None:
        noises = draw_noises(config, key, start, count)
    tape = Tape(record=False)
    x, energy, cross, states = rollout(policy, config, noises, tape, keep_path, offset=start)
    e = energy.value
    return TrajectoryBatch(x.value, e, cross + e, states, noises if keep_path else None)


def simulate(policy, target, config, key=None, index=0, noises=None):
    """One trajectory driven by substream ``(key, index)`` (or by ``noises``).

    ``target`` is only used to check dimensions.
    """
    if target is not None and target.dim != config.dim:
        raise ConfigurationError(f"target dim {target.dim} != config dim {config.dim}")
    key = default_key(config) if key is None else key
    if noises is not None:
        noises = np.asarray(noises, dtype=float).reshape(1, config.steps, config.dim)
    return _simulate_chunk(policy, config, key, index, 1, True, noises)[0]


def simulate_batch(policy, target, config, batch, key=None, start=0, workers=1,
                   keep_path=False, chunk_size=CHUNK_SIZE):
    """``batch`` independent trajectories.

    Trajectory ``i`` uses substream ``(key, start + i)`` and the batch is
    processed in fixed-size chunks, so results do not depend on ``workers``.
    """
    check_positive("batch", batch, integer=True)
    if target is not None and target.dim != config.dim:
        raise ConfigurationError(f"target dim {target.dim} != config dim {config.dim}")
    key = default_key(config) if key is None else key
    starts = list(range(start, start + batch, chunk_size))
    counts = [min(chunk_size, start + batch - s) for s in starts]
    job = lambda sc: _simulate_chunk(policy, config, key, sc[0], sc[1], keep_path)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, zip(starts, counts)))
    else:
        parts = [job(sc) for sc in zip(starts, counts)]
    return TrajectoryBatch.concatenate(parts)
