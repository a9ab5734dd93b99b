"""Control policies ``u(t, x)`` and path-integral estimates of the optimal one.

Four kinds are provided: the zero control, a time-conditioned network
(``nn``), a network that also feeds the clipped target score (``grad``), and
the closed-form optimal control for diagonal Gaussian targets (``oracle``).
"""
import json

import numpy as np

from . import rng as rng_mod
from .autodiff import MLPSpec, ParameterStore, Tape, fourier_time_features, init_mlp, mlp_forward
from .errors import ConfigurationError, EstimationError, IncompatibleDataError
from .sde import SdeConfig, terminal_cost
from .targets import GaussianTarget
from .validation import check_points, check_positive

POLICY_KINDS = ("zero", "nn", "grad", "oracle")
CHECKPOINT_MAGIC = "# pisampler-policy v1"


class Policy:
    """Common interface.

    ``stepper(tape, config)`` returns a function ``(k, x) -> u`` evaluating the
    control at ``t_k`` on tape values; ``control(t, x)`` is the plain numeric
    evaluation.
    """

    kind = None

    def __init__(self, dim, horizon):
        self.dim = int(dim)
        self.horizon = float(horizon)

    def stepper(self, tape, config):
        raise NotImplementedError

    def _check_time(self, t):
        if not 0.0 <= t <= self.horizon:
            raise ConfigurationError(f"time {t} outside [0, {self.horizon}]")

    def control(self, t, x):
        self._check_time(t)
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = check_points(x, self.dim)
        out = self._control(float(t), xb)
        return out[0] if single else out

    def _control(self, t, x):
        tape = Tape(record=False)
        return self._eval_times(tape, np.array([t]))(0, tape.constant(x)).value

    def _eval_times(self, tape, times):
        raise NotImplementedError


class ZeroPolicy(Policy):
    kind = "zero"

    def stepper(self, tape, config):
        zeros = None

        def step(k, x):
            nonlocal zeros
            if zeros is None or zeros.shape != x.shape:
                zeros = tape.constant(np.zeros(x.shape))
            return zeros

        return step

    def _control(self, t, x):
        return np.zeros_like(x)


class GaussianOraclePolicy(Policy):
    """Optimal control for ``N(mean, diag(var))`` targets: ``a(t) x + b(t)``.

    With ``s = T - t`` and ``c = 1/var - 1/T`` completing the square in the
    Feynman-Kac integral gives ``a = -c / (1 + c s)`` and
    ``b = mean / (var (1 + c s))``.  ``offset`` adds a constant to the control
    (used to build deliberately sub-optimal policies).
    """

    kind = "oracle"

    def __init__(self, mean, var, horizon, offset=None):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = np.broadcast_to(np.asarray(var, dtype=float), mean.shape).copy()
        super().__init__(mean.size, horizon)
        if np.any(var <= 0):
            raise ConfigurationError("oracle variance must be positive")
        self.mean, self.var = mean, var
        self.c = 1.0 / var - 1.0 / self.horizon
        # 1 + c s > 0 for all s in (0, T]  <=>  1 + c T > 0
        if np.any(1.0 + self.c * self.horizon <= 0):
            raise ConfigurationError(
                "precision condition 1/(T-t) + 1/var - 1/T > 0 violated; oracle undefined")
        self.offset = np.zeros(self.dim) if offset is None else \
            np.broadcast_to(np.asarray(offset, dtype=float), (self.dim,)).copy()

    def coefficients(self, t):
        s = self.horizon - t
        denom = 1.0 + self.c * s
        return -self.c / denom, self.mean / (self.var * denom) + self.offset

    def stepper(self, tape, config):
        times = config.times

        def step(k, x):
            a, b = self.coefficients(times[k])
            return tape.add(tape.scale(x, a), tape.constant(b))

        return step

    def _control(self, t, x):
        a, b = self.coefficients(t)
        return x * a + b

    def perturbed(self, offset):
        return GaussianOraclePolicy(self.mean, self.var, self.horizon, self.offset + offset)


def gaussian_oracle(mean, var, config, offset=None):
    return GaussianOraclePolicy(mean, var, config.horizon, offset)


def oracle_for_target(target, config):
    """Oracle policy of a :class:`GaussianTarget` (its scale is irrelevant)."""
    if not isinstance(target, GaussianTarget):
        raise ConfigurationError("the closed-form oracle needs a Gaussian target")
    return gaussian_oracle(target.mean, target.cov_diag, config)


class NeuralPolicy(Policy):
    """Fourier-time branch and state branch merged by an MLP head.

    ``grad`` policies add a time-only network producing a scale (one value,
    or one per coordinate) applied to the clipped target score:
    ``u = head(t, x) - scale(t) * clip(grad log target(x))``.
    """

    def __init__(self, kind, dim, horizon, hidden=64, num_freq=64, activation="tanh",
                 target=None, grad_clip=1e2, per_coordinate=False, score_gradient="exact",
                 params=None, seed=0):
        if kind not in ("nn", "grad"):
            raise ConfigurationError(f"neural policy kind must be 'nn' or 'grad', got {kind!r}")
        super().__init__(dim, horizon)
        self.kind = kind
        self.hidden, self.num_freq, self.activation = int(hidden), int(num_freq), activation
        self.grad_clip = float(grad_clip)
        self.per_coordinate = bool(per_coordinate)
        if score_gradient not in ("exact", "stop"):
            raise ConfigurationError("score_gradient must be 'exact' or 'stop'")
        self.score_gradient = score_gradient
        h, f = self.hidden, self.num_freq
        self.specs = {
            "time": MLPSpec((2 * f, h, h), activation),
            "state": MLPSpec((self.dim, h, h), activation),
            "head": MLPSpec((2 * h, h, h, self.dim), activation),
        }
        if kind == "grad":
            if target is None:
                raise ConfigurationError("grad policy needs a target")
            if target.dim != self.dim:
                raise ConfigurationError(f"target dim {target.dim} != policy dim {self.dim}")
            if score_gradient == "exact" and not target.has_hvp:
                raise ConfigurationError(f"{target.name} lacks a Hessian-vector product")
            check_positive("grad_clip", self.grad_clip)
            self.specs["scale"] = MLPSpec((2 * f, h, h, self.dim if per_coordinate else 1),
                                          activation)
        self.target = target
        shapes = [s for name, spec in self.specs.items() for s in spec.shapes(name)]
        if params is None:
            params = ParameterStore(shapes)
            gen = rng_mod.generator(seed, "init")
            for name, spec in self.specs.items():
                init_mlp(params, spec, name, gen, zero_last=name in ("head", "scale"))
        elif [n for n, _ in shapes] != params.names or \
                ParameterStore(shapes).size != params.size:
            raise ConfigurationError("parameter layout does not match the architecture")
        self.params = params

    def architecture(self):
        return {"kind": self.kind, "dim": self.dim, "horizon": self.horizon,
                "hidden": self.hidden, "num_freq": self.num_freq,
                "activation": self.activation, "grad_clip": self.grad_clip,
                "per_coordinate": self.per_coordinate, "score_gradient": self.score_gradient}

    def _score(self, tape, x):
        xv = x.value
        score = self.target.grad_log(xv)
        if self.score_gradient == "exact":
            target = self.target
            s = tape.custom(score, (x,), lambda g: (target.hvp_log(xv, g),))
        else:
            s = tape.constant(score)
        return tape.clip_rows(s, self.grad_clip)

    def _eval_times(self, tape, times):
        feats = tape.constant(fourier_time_features(times, self.num_freq, self.horizon))
        t_emb = mlp_forward(self.params, self.specs["time"], feats, tape, "time")
        scale = None
        if self.kind == "grad":
            scale = mlp_forward(self.params, self.specs["scale"], feats, tape, "scale")

        def step(k, x):
            s_emb = mlp_forward(self.params, self.specs["state"], x, tape, "state")
            h = tape.activation(self.activation, tape.concat([tape.take_row(t_emb, k), s_emb]))
            u = mlp_forward(self.params, self.specs["head"], h, tape, "head")
            if scale is not None:
                u = tape.sub(u, tape.mul(tape.take_row(scale, k), self._score(tape, x)))
            return u

        return step

    def stepper(self, tape, config):
        if config.horizon != self.horizon:
            raise ConfigurationError(f"policy horizon {self.horizon} != config {config.horizon}")
        return self._eval_times(tape, config.times)

    def with_params(self, params):
        return NeuralPolicy(self.kind, self.dim, self.horizon, self.hidden, self.num_freq,
                            self.activation, self.target, self.grad_clip, self.per_coordinate,
                            self.score_gradient, params=params)


def make_policy(kind, dim, horizon, target=None, **kw):
    """Build a policy of ``kind`` in {'zero', 'nn', 'grad', 'oracle'}."""
    if kind == "zero":
        return ZeroPolicy(dim, horizon)
    if kind == "oracle":
        return oracle_for_target(target, SdeConfig(dim, horizon, 1))
    if kind in ("nn", "grad"):
        return NeuralPolicy(kind, dim, horizon, target=target, **kw)
    raise ConfigurationError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")


# checkpoints ----------------------------------------------------------------
def save_policy(path, policy, extra=None):
    """Write a neural policy as a text checkpoint.

    Line 1 is a magic string, line 2 a JSON header (architecture plus
    ``extra``), then one float per line with 17 significant digits.
    """
    if not isinstance(policy, NeuralPolicy):
        raise ConfigurationError("only neural policies have checkpoints")
    header = dict(policy.architecture())
    header["n_params"] = policy.params.size
    header.update(extra or {})
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.writelines(f"{v:.17g}\n" for v in policy.params.flat)


def read_checkpoint(path):
    with open(path) as fh:
        if fh.readline().rstrip("\n") != CHECKPOINT_MAGIC:
            raise IncompatibleDataError(f"{path}: not a policy checkpoint")
        header = json.loads(fh.readline())
        flat = np.array([float(line) for line in fh if line.strip()])
    if flat.size != header["n_params"]:
        raise IncompatibleDataError(f"{path}: expected {header['n_params']} values, got {flat.size}")
    return header, flat


def load_policy(path, target=None):
    header, flat = read_checkpoint(path)
    if target is not None and target.dim != header["dim"]:
        raise IncompatibleDataError(
            f"checkpoint dim {header['dim']} does not match target dim {target.dim}")
    proto = NeuralPolicy(header["kind"], header["dim"], header["horizon"], header["hidden"],
                         header["num_freq"], header["activation"], target,
                         header["grad_clip"], header["per_coordinate"],
                         header["score_gradient"])
    store = proto.params.copy()
    store.flat[:] = flat
    return proto.with_params(store), header


# path-integral estimates ------------------------------------------------------
def _uncontrolled_terminals(x, remaining, n, gen, first_dt=None):
    dim = x.size
    if first_dt is None:
        return x + np.sqrt(remaining) * gen.standard_normal((n, dim)), None
    dw = np.sqrt(first_dt) * gen.standard_normal((n, dim))
    rest = np.sqrt(max(remaining - first_dt, 0.0)) * gen.standard_normal((n, dim))
    return x + dw + rest, dw


def _weights(target, config, x_t):
    log_w = -terminal_cost(x_t, target, config)
    shift = np.max(log_w)
    return np.exp(log_w - shift), shift


def pi_value_mc(target, config, t, x, n_rollouts, seed=None):
    """Monte-Carlo ``phi_t(x) = E[exp(-terminal_cost(x_T)) | x_t = x]``.

    Uncontrolled rollouts are exact here (``x_T = x + sqrt(T - t) z``).
    Returns ``(estimate, stderr)``.
    """
    check_positive("n_rollouts", n_rollouts, integer=True)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gen = rng_mod.generator(config.seed if seed is None else seed, "pi-value", repr(float(t)),
                            repr(x.tolist()))
    x_t, _ = _uncontrolled_terminals(x, config.horizon - t, n_rollouts, gen)
    w, shift = _weights(target, config, x_t)
    scale = np.exp(shift)
    est = w.mean() * scale
    err = (w.std(ddof=1) / np.sqrt(n_rollouts) * scale) if n_rollouts > 1 else 0.0
    return float(est), float(err)


def pi_control_mc(target, config, t, x, n_rollouts, seed=None):
    """Ratio estimate ``E[e^{-Psi} dw] / (dt E[e^{-Psi}])`` of ``u*_t(x)``.

    ``dw`` is the first Brownian increment over ``[t, t + dt]`` with
    ``dt = T / N``.  Returns ``(estimate, stderr)`` per coordinate, the error
    from the delta method.
    """
    check_positive("n_rollouts", n_rollouts, integer=True)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dt = min(config.dt, config.horizon - t)
    if dt <= 0:
        raise ConfigurationError("pi_control_mc needs t < T")
    gen = rng_mod.generator(config.seed if seed is None else seed, "pi-control", repr(float(t)),
                            repr(x.tolist()))
    x_t, dw = _uncontrolled_terminals(x, config.horizon - t, n_rollouts, gen, dt)
    w, _ = _weights(target, config, x_t)
    denom = w.mean()
    if not denom > 0:
        raise EstimationError("denominator estimate is not positive")
    num = (w[:, None] * dw).mean(axis=0)
    est = num / (dt * denom)
    resid = w[:, None] * (dw - dt * est)
    err = resid.std(axis=0, ddof=1) / (np.sqrt(n_rollouts) * dt * denom)
    return est, err
