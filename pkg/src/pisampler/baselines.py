"""Reference samplers: Hamiltonian Monte Carlo and annealed SMC.

Both run all chains / particles as one vectorised batch with identity mass.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import rng as rng_mod
from .errors import ConfigurationError, EstimationError
from .targets import GaussianTarget
from .validation import check_points, check_positive


@dataclass(frozen=True)
class HmcConfig:
    n_iterations: int = 10
    leapfrog_steps: int = 10
    step_size: float = 0.1

    def __post_init__(self):
        check_positive("n_iterations", self.n_iterations, integer=True)
        check_positive("leapfrog_steps", self.leapfrog_steps, integer=True)
        check_positive("step_size", self.step_size)


@dataclass(frozen=True)
class SmcConfig:
    n_particles: int = 2000
    n_temperatures: int = 10
    hmc: HmcConfig = HmcConfig()
    resample_threshold: float = 0.5

    def __post_init__(self):
        check_positive("n_particles", self.n_particles, integer=True)
        check_positive("n_temperatures", self.n_temperatures, integer=True)
        if not 0.0 <= self.resample_threshold <= 1.0:
            raise ConfigurationError("resample_threshold must lie in [0, 1]")

    @property
    def temperatures(self):
        """Linear schedule including both endpoints 0 and 1."""
        return np.linspace(0.0, 1.0, self.n_temperatures + 1)


class TemperedDensity:
    """``base^(1 - beta) * target^beta``."""

    def __init__(self, base, target, beta):
        self.base, self.target, self.beta = base, target, float(beta)
        self.dim = target.dim

    def log_unnorm(self, x):
        return (1.0 - self.beta) * self.base.log_unnorm(x) + self.beta * self.target.log_unnorm(x)

    def grad_log(self, x):
        return (1.0 - self.beta) * self.base.grad_log(x) + self.beta * self.target.grad_log(x)


def leapfrog(target, x, p, step_size, n_steps):
    """Kick-drift-kick integration of ``H = -log target(x) + |p|^2 / 2``."""
    if step_size <= 0:
        raise ConfigurationError("step_size must be positive")
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    if n_steps == 0:
        return x, p
    half = 0.5 * step_size
    with np.errstate(over="ignore", invalid="ignore"):
        p = p + half * target.grad_log(x)
        for i in range(n_steps):
            x = x + step_size * p
            g = target.grad_log(x)
            p = p + (step_size if i < n_steps - 1 else half) * g
    return x, p


def hmc_step(target, x, config, gen):
    """One Metropolis-corrected leapfrog proposal per row of ``x``.

    Returns the new states and the per-chain acceptance indicators.
    """
    p = gen.standard_normal(x.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        h0 = -target.log_unnorm(x) + 0.5 * np.sum(p * p, axis=1)
        x_new, p_new = leapfrog(target, x, p, config.step_size, config.leapfrog_steps)
        h1 = -target.log_unnorm(x_new) + 0.5 * np.sum(p_new * p_new, axis=1)
        log_ratio = h0 - h1
    finite = np.isfinite(log_ratio) & np.all(np.isfinite(x_new), axis=1)
    log_ratio = np.where(finite, log_ratio, -np.inf)
    accept = np.log(gen.uniform(size=x.shape[0])) < log_ratio
    return np.where(accept[:, None], x_new, x), accept


def hmc_sample(target, config, init=None, n_samples=1000, seed=0):
    """Endpoints of ``n_samples`` independent HMC chains.

    ``init`` is an (n_samples, d) array of starting points; by default they
    are drawn from N(0, I).  Returns ``(samples, acceptance_rate)``.
    """
    check_positive("n_samples", n_samples, integer=True)
    gen = rng_mod.generator(seed, "hmc")
    x = gen.standard_normal((n_samples, target.dim)) if init is None else \
        check_points(np.array(init, dtype=float), target.dim, allow_nonfinite=False)
    accepted = 0.0
    for _ in range(config.n_iterations):
        x, acc = hmc_step(target, x, config, gen)
        accepted += acc.mean()
    return x, accepted / config.n_iterations


@dataclass(frozen=True)
class SmcResult:
    points: np.ndarray
    log_w: np.ndarray          # normalized log weights of the final particles
    log_z: float
    ess_history: np.ndarray
    acceptance: float


def smc_annealed(target, config, seed=0):
    """Annealed SMC from N(0, I) to ``target`` with HMC moves.

    Per level: incremental reweighting, multinomial resampling when the ESS
    fraction drops below the threshold, then HMC moves invariant for the
    current tempered density.  ``log_z`` sums the log-mean incremental weights.
    """
    gen = rng_mod.generator(seed, "smc")
    dim, n = target.dim, config.n_particles
    base = GaussianTarget(np.zeros(dim), np.ones(dim))
    betas = config.temperatures
    x = gen.standard_normal((n, dim))
    log_w = np.full(n, -np.log(n))
    log_z = 0.0
    ess_hist, acc_total = [], 0.0
    delta = target.log_unnorm(x) - base.log_unnorm(x)
    for k in range(1, betas.size):
        inc = (betas[k] - betas[k - 1]) * delta
        inc = np.where(np.isnan(inc), -np.inf, inc)
        log_w = log_w + inc
        step_z = logsumexp(log_w)
        if not np.isfinite(step_z):
            raise EstimationError(f"all particles have zero weight at level {k}")
        log_z += step_z
        log_w = log_w - step_z
        ess = float(np.exp(-logsumexp(2.0 * log_w)) / n)
        ess_hist.append(ess)
        if ess < config.resample_threshold:
            idx = gen.choice(n, size=n, p=np.exp(log_w))
            x = x[idx]
            log_w = np.full(n, -np.log(n))
        pi_k = TemperedDensity(base, target, betas[k])
        for _ in range(config.hmc.n_iterations):
            x, acc = hmc_step(pi_k, x, config.hmc, gen)
            acc_total += acc.mean()
        delta = target.log_unnorm(x) - base.log_unnorm(x)
    acceptance = acc_total / (config.hmc.n_iterations * (betas.size - 1))
    return SmcResult(x, log_w, float(log_z), np.array(ess_hist), float(acceptance))
