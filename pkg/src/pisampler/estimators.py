"""Importance-weighted samples and normalizing-constant estimates.

A sample's log weight is ``-(girsanov cost + terminal cost)``; because the
terminal cost uses the unnormalized target, weights carry the unknown
constant Z.  All weight arithmetic stays in log space.
"""
import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import rng as rng_mod
from .errors import ConfigurationError, IncompatibleDataError
from .sde import simulate_batch, terminal_cost
from .validation import check_log_weights, check_positive


@dataclass
class WeightedSamples:
    points: np.ndarray
    log_w: np.ndarray
    seed: int = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.log_w = check_log_weights(self.log_w)
        if self.points.shape[0] != self.log_w.size:
            raise ConfigurationError("points and log weights differ in length")

    def __len__(self):
        return self.log_w.size

    @property
    def dim(self):
        return self.points.shape[1]

    def normalized_weights(self):
        return np.exp(self.log_w - logsumexp(self.log_w))


def sample_weighted(policy, target, config, n, key=None, workers=1):
    """Run ``n`` controlled rollouts and attach their path-integral weights."""
    check_positive("n", n, integer=True)
    key = rng_mod.stream_key(config.seed, "sample") if key is None else key
    trajs = simulate_batch(policy, target, config, n, key=key, workers=workers)
    log_w = -(trajs.cost_girsanov + terminal_cost(trajs.terminal, target, config))
    return WeightedSamples(trajs.terminal, log_w, config.seed,
                           {"dim": config.dim, "horizon": config.horizon,
                            "steps": config.steps, "policy": policy.kind})


def _require_two(ws):
    if len(ws) < 2:
        raise ConfigurationError("need at least two samples")


def log_z_elbo(ws):
    """Mean log weight, a lower bound on log Z; ``(estimate, stderr)``."""
    _require_two(ws)
    lw = ws.log_w
    return float(np.mean(lw)), float(np.std(lw, ddof=1) / np.sqrt(lw.size))


def log_z_is(ws):
    """``log mean exp(log_w)``; stderr from the delta method (approximate)."""
    _require_two(ws)
    lw = ws.log_w
    n = lw.size
    est = logsumexp(lw) - np.log(n)
    w = np.exp(lw - lw.max())
    err = np.std(w, ddof=1) / (np.sqrt(n) * np.mean(w))
    return float(est), float(err)


def ess_fraction(ws):
    """``(sum w)^2 / (n sum w^2)`` in (0, 1]."""
    lw = ws.log_w if isinstance(ws, WeightedSamples) else check_log_weights(ws)
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw) - np.log(lw.size)))


def self_normalized_expectation(ws, test_fn):
    """``sum w f(x) / sum w`` with a delta-method stderr."""
    _require_two(ws)
    w = ws.normalized_weights()
    f = np.asarray(test_fn(ws.points), dtype=float).reshape(-1)
    if f.size != len(ws):
        raise ConfigurationError("test_fn must return one value per point")
    est = float(np.sum(w * f))
    err = float(np.sqrt(np.sum(w * w * (f - est) ** 2)))
    return est, err


# files ----------------------------------------------------------------------
def write_samples_csv(path, ws):
    """Header ``x_1..x_d,log_w``; floats with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x_{i + 1}" for i in range(ws.dim)] + ["log_w"])
        for p, lw in zip(ws.points, ws.log_w):
            writer.writerow([f"{v:.17g}" for v in p] + [f"{lw:.17g}"])


def read_samples_csv(path):
    """Inverse of :func:`write_samples_csv`; errors name the offending row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IncompatibleDataError(f"{path}: empty samples file")
    header = rows[0]
    if not header or header[-1] != "log_w" or \
            header[:-1] != [f"x_{i + 1}" for i in range(len(header) - 1)]:
        raise IncompatibleDataError(f"{path}: row 1: bad header {header}")
    width = len(header)
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise IncompatibleDataError(f"{path}: row {i}: expected {width} fields, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise IncompatibleDataError(f"{path}: row {i}: {exc}") from exc
    if not data:
        raise IncompatibleDataError(f"{path}: no samples")
    arr = np.array(data)
    return WeightedSamples(arr[:, :-1], arr[:, -1])


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def metrics_record(ws, config=None):
    """Metrics dict: log_z_elbo, log_z_is (with stderr), ess, n, seed, config hash."""
    elbo, elbo_err = log_z_elbo(ws)
    lz, lz_err = log_z_is(ws)
    return {"log_z_elbo": elbo, "log_z_elbo_stderr": elbo_err,
            "log_z_is": lz, "log_z_is_stderr": lz_err,
            "ess": ess_fraction(ws), "n": len(ws), "seed": ws.seed,
            "config_hash": config_hash(config if config is not None else ws.config)}
