"""Estimator-style wrappers around the samplers.

``fit`` takes a :class:`~pisampler.targets.TargetDensity` (there is no data
matrix: the target plays the role of the training set).  Fitted attributes
end in an underscore and ``get_params`` / ``set_params`` come from
scikit-learn's ``BaseEstimator``.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import estimators as est_mod
from .baselines import HmcConfig, SmcConfig, hmc_sample, smc_annealed
from .errors import ConfigurationError, IncompatibleDataError
from .policy import NeuralPolicy, make_policy
from .rng import stream_key
from .sde import SdeConfig
from .targets import TargetDensity
from .trainer import TrainConfig, train
from .validation import check_points, check_positive


def _check_target(target, dim=None):
    if not isinstance(target, TargetDensity):
        raise ConfigurationError(f"expected a TargetDensity, got {type(target).__name__}")
    if dim is not None and target.dim != dim:
        raise IncompatibleDataError(f"target dim {target.dim} != fitted dim {dim}")
    return target


class PathIntegralSampler(BaseEstimator):
    """Trains a control policy whose terminal law approximates the target.

    ``policy`` is one of 'nn', 'grad' (trained), 'zero' or 'oracle' (used
    as is; 'oracle' needs a Gaussian target).
    """

    def __init__(self, policy="grad", horizon=1.0, steps=100, epochs=30, batches_per_epoch=50,
                 batch_size=300, lr=5e-3, grad_clip_norm=1.0, hidden=64, num_freq=64,
                 activation="tanh", score_clip=1e2, per_coordinate=False,
                 score_gradient="exact", seed=0, workers=1):
        self.policy = policy
        self.horizon = horizon
        self.steps = steps
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip_norm = grad_clip_norm
        self.hidden = hidden
        self.num_freq = num_freq
        self.activation = activation
        self.score_clip = score_clip
        self.per_coordinate = per_coordinate
        self.score_gradient = score_gradient
        self.seed = seed
        self.workers = workers

    def _policy_kwargs(self):
        kw = {"hidden": self.hidden, "num_freq": self.num_freq, "activation": self.activation}
        if self.policy == "grad":
            kw.update(grad_clip=self.score_clip, per_coordinate=self.per_coordinate,
                      score_gradient=self.score_gradient)
        return kw

    def fit(self, target, y=None, callback=None):
        target = _check_target(target)
        sde = SdeConfig(target.dim, self.horizon, self.steps, self.seed)
        if self.policy in ("nn", "grad"):
            cfg = TrainConfig(sde, self.epochs, self.batches_per_epoch, self.batch_size,
                              self.lr, self.grad_clip_norm, self.seed)
            state, policy = train(target, cfg, self.policy, callback=callback,
                                  **self._policy_kwargs())
            self.loss_history_ = np.array(state.loss_history, dtype=float).reshape(-1, 4)
            self.n_iter_ = state.step
        else:
            policy = make_policy(self.policy, target.dim, self.horizon, target=target)
            self.loss_history_ = np.empty((0, 4))
            self.n_iter_ = 0
        self.target_, self.policy_, self.sde_config_ = target, policy, sde
        self.n_features_in_ = target.dim
        return self

    def sample(self, n, seed=None):
        """Weighted terminal samples (:class:`WeightedSamples`)."""
        check_is_fitted(self, "policy_")
        check_positive("n", n, integer=True)
        cfg = self.sde_config_ if seed is None else self.sde_config_.replace(seed=seed)
        return est_mod.sample_weighted(self.policy_, self.target_, cfg, n,
                                       key=stream_key(cfg.seed, "sample"), workers=self.workers)

    def estimate_log_z(self, n=2000, method="is", seed=None):
        """``(estimate, stderr)``; ``method`` is 'is' or 'elbo'."""
        ws = self.sample(n, seed)
        if method == "is":
            return est_mod.log_z_is(ws)
        if method == "elbo":
            return est_mod.log_z_elbo(ws)
        raise ConfigurationError(f"unknown method {method!r}; expected 'is' or 'elbo'")

    def control(self, t, X):
        check_is_fitted(self, "policy_")
        X = check_points(X, self.n_features_in_, allow_nonfinite=False)
        return self.policy_.control(t, X)

    def score(self, target=None, y=None, n=2000):
        """ELBO of the fitted policy (higher is better)."""
        check_is_fitted(self, "policy_")
        if target is not None:
            _check_target(target, self.n_features_in_)
        return self.estimate_log_z(n, "elbo")[0]

    @property
    def trainable(self):
        return isinstance(getattr(self, "policy_", None), NeuralPolicy)


class HMCSampler(BaseEstimator):
    """Independent HMC chains; ``fit`` only binds the target."""

    def __init__(self, n_iterations=10, leapfrog_steps=10, step_size=0.1, seed=0):
        self.n_iterations = n_iterations
        self.leapfrog_steps = leapfrog_steps
        self.step_size = step_size
        self.seed = seed

    def fit(self, target, y=None):
        self.target_ = _check_target(target)
        self.config_ = HmcConfig(self.n_iterations, self.leapfrog_steps, self.step_size)
        self.n_features_in_ = target.dim
        return self

    def sample(self, n, init=None, seed=None):
        check_is_fitted(self, "target_")
        if init is not None:
            init = check_points(init, self.n_features_in_, allow_nonfinite=False)
            if init.shape[0] != n:
                raise ConfigurationError("init must have one row per sample")
        x, acc = hmc_sample(self.target_, self.config_, init, n,
                            self.seed if seed is None else seed)
        self.acceptance_rate_ = acc
        return x


class SMCSampler(BaseEstimator):
    """Annealed SMC from N(0, I); ``fit`` runs the particle system."""

    def __init__(self, n_particles=2000, n_temperatures=10, n_iterations=10, leapfrog_steps=10,
                 step_size=0.1, resample_threshold=0.5, seed=0):
        self.n_particles = n_particles
        self.n_temperatures = n_temperatures
        self.n_iterations = n_iterations
        self.leapfrog_steps = leapfrog_steps
        self.step_size = step_size
        self.resample_threshold = resample_threshold
        self.seed = seed

    def fit(self, target, y=None):
        target = _check_target(target)
        cfg = SmcConfig(self.n_particles, self.n_temperatures,
                        HmcConfig(self.n_iterations, self.leapfrog_steps, self.step_size),
                        self.resample_threshold)
        res = smc_annealed(target, cfg, self.seed)
        self.target_, self.result_ = target, res
        self.log_z_ = res.log_z
        self.acceptance_rate_ = res.acceptance
        self.n_features_in_ = target.dim
        return self

    def sample(self, n=None):
        check_is_fitted(self, "result_")
        ws = est_mod.WeightedSamples(self.result_.points, self.result_.log_w, self.seed)
        if n is None or n == len(ws):
            return ws
        check_positive("n", n, integer=True)
        if n > len(ws):
            raise ConfigurationError(f"only {len(ws)} particles available")
        return est_mod.WeightedSamples(ws.points[:n], ws.log_w[:n], self.seed)

    def estimate_log_z(self):
        check_is_fitted(self, "result_")
        return self.log_z_
