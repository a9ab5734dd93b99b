"""Unnormalized target densities.

Each target evaluates ``log_unnorm``, ``grad_log`` and a Hessian-vector
product ``hvp_log`` on a single point of shape (d,) or a batch of shape
(n, d).  The Hessian-vector product lets policies that feed the target score
into the control be differentiated exactly.
"""
import csv
from importlib import resources

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import ConfigurationError
from .validation import check_points

LOG_2PI = float(np.log(2.0 * np.pi))


class TargetDensity:
    """Base class; subclasses implement the batched ``_log``/``_grad``/``_hvp``."""

    name = "target"
    true_log_z = None

    def __init__(self, dim):
        self.dim = int(dim)

    def _apply(self, fn, x, *extra):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = check_points(x, self.dim)
        out = fn(xb, *[np.atleast_2d(np.asarray(e, dtype=float)) for e in extra])
        return out[0] if single else out

    def log_unnorm(self, x):
        return self._apply(self._log, x)

    def grad_log(self, x):
        return self._apply(self._grad, x)

    def hvp_log(self, x, v):
        """Hessian of ``log_unnorm`` at ``x`` applied to ``v``."""
        return self._apply(self._hvp, x, v)

    def _hvp(self, x, v):
        raise NotImplementedError(f"{self.name} has no Hessian-vector product")

    @property
    def has_hvp(self):
        return type(self)._hvp is not TargetDensity._hvp

    def describe(self):
        """JSON-friendly description used in configs and checkpoints."""
        return {"name": self.name, "dim": self.dim}

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class GaussianTarget(TargetDensity):
    """``exp(scale_log_z) * N(mean, diag(cov_diag))``."""

    name = "gaussian"

    def __init__(self, mean, cov_diag, scale_log_z=0.0):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov_diag = np.broadcast_to(np.asarray(cov_diag, dtype=float), mean.shape).copy()
        if np.any(cov_diag <= 0):
            raise ConfigurationError("cov_diag must be positive elementwise")
        super().__init__(mean.size)
        self.mean, self.cov_diag = mean, cov_diag
        self.scale_log_z = float(scale_log_z)
        self.true_log_z = self.scale_log_z
        self._const = self.scale_log_z - 0.5 * (self.dim * LOG_2PI + np.sum(np.log(cov_diag)))

    def _log(self, x):
        return self._const - 0.5 * np.sum((x - self.mean) ** 2 / self.cov_diag, axis=-1)

    def _grad(self, x):
        return (self.mean - x) / self.cov_diag

    def _hvp(self, x, v):
        return np.broadcast_to(-v / self.cov_diag, x.shape).copy()

    def describe(self):
        return {"name": self.name, "mean": self.mean.tolist(),
                "cov_diag": self.cov_diag.tolist(), "scale_log_z": self.scale_log_z}


def gaussian_target(mean, cov_diag, scale_log_z=0.0):
    return GaussianTarget(mean, cov_diag, scale_log_z)


class MixtureTarget(TargetDensity):
    """Normalized mixture of isotropic Gaussians with shared variance."""

    name = "mixture"

    def __init__(self, centers, variance, weights=None):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        super().__init__(centers.shape[1])
        k = centers.shape[0]
        weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        if variance <= 0 or np.any(weights <= 0):
            raise ConfigurationError("variance and weights must be positive")
        self.centers = centers
        self.variance = float(variance)
        self.log_weights = np.log(weights / weights.sum())
        self.true_log_z = 0.0
        self._const = -0.5 * self.dim * (LOG_2PI + np.log(self.variance))

    def _component_logs(self, x):
        d2 = np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=-1)
        return self.log_weights + self._const - 0.5 * d2 / self.variance

    def _responsibilities(self, x):
        comp = self._component_logs(x)
        return np.exp(comp - logsumexp(comp, axis=1, keepdims=True))

    def _log(self, x):
        return logsumexp(self._component_logs(x), axis=1)

    def _grad(self, x):
        r = self._responsibilities(x)
        return (r @ self.centers - x) / self.variance

    def _hvp(self, x, v):
        r = self._responsibilities(x)
        gk = (self.centers[None] - x[:, None, :]) / self.variance     # (n, k, d)
        g = np.einsum("nk,nkd->nd", r, gk)
        gkv = np.einsum("nkd,nd->nk", gk, v)
        return (-v / self.variance + np.einsum("nk,nk,nkd->nd", r, gkv, gk)
                - g * np.sum(g * v, axis=1, keepdims=True))

    def describe(self):
        return {"name": self.name, "centers": self.centers.tolist(),
                "variance": self.variance}


class MoGTarget(MixtureTarget):
    name = "mog"

    def __init__(self):
        grid = np.array([-5.0, 0.0, 5.0])
        centers = np.array([(a, b) for a in grid for b in grid])
        super().__init__(centers, 0.3)

    def describe(self):
        return {"name": self.name}


def mog_target():
    """Nine-mode 2-D mixture on {-5, 0, 5}^2, variance 0.3, equal weights."""
    return MoGTarget()


class FunnelTarget(TargetDensity):
    """``x0 ~ N(0, 9)``, ``x_i | x0 ~ N(0, exp(x0))``; normalized."""

    name = "funnel"

    def __init__(self, dim=10, scale=3.0):
        if dim < 2:
            raise ConfigurationError("funnel needs dim >= 2")
        super().__init__(dim)
        self.scale = float(scale)
        self.true_log_z = 0.0

    def _log(self, x):
        x0, rest = x[:, 0], x[:, 1:]
        k = self.dim - 1
        return (-0.5 * x0 ** 2 / self.scale ** 2 - 0.5 * (LOG_2PI + 2 * np.log(self.scale))
                - 0.5 * np.exp(-x0) * np.sum(rest ** 2, axis=1)
                - 0.5 * k * x0 - 0.5 * k * LOG_2PI)

    def _grad(self, x):
        x0, rest = x[:, 0], x[:, 1:]
        e = np.exp(-x0)
        g = np.empty_like(x)
        g[:, 0] = (-x0 / self.scale ** 2 + 0.5 * e * np.sum(rest ** 2, axis=1)
                   - 0.5 * (self.dim - 1))
        g[:, 1:] = -rest * e[:, None]
        return g

    def _hvp(self, x, v):
        x0, rest = x[:, 0], x[:, 1:]
        e = np.exp(-x0)
        v0, vr = v[:, 0], v[:, 1:]
        out = np.empty_like(x)
        cross = e * np.sum(rest * vr, axis=1)
        out[:, 0] = (-1.0 / self.scale ** 2 - 0.5 * e * np.sum(rest ** 2, axis=1)) * v0 + cross
        out[:, 1:] = (rest * v0[:, None] - vr) * e[:, None]
        return out

    def describe(self):
        return {"name": self.name, "dim": self.dim}


def funnel_target(dim=10):
    return FunnelTarget(dim)


class RingsTarget(TargetDensity):
    """Three concentric rings of radii 1, 3 and 5; no known log Z."""

    name = "rings"
    radii = np.array([1.0, 3.0, 5.0])

    def __init__(self):
        super().__init__(2)

    def _radial(self, x):
        r = np.sqrt(np.sum(x ** 2, axis=1))
        nearest = self.radii[np.argmin((r[:, None] - self.radii) ** 2, axis=1)]
        return r, nearest

    def _log(self, x):
        r, c = self._radial(x)
        return -((r - c) ** 2) / 100.0

    def _grad(self, x):
        r, c = self._radial(x)
        safe = np.where(r > 0, r, 1.0)
        coef = np.where(r > 0, -2.0 * (r - c) / (100.0 * safe), 0.0)
        return x * coef[:, None]

    def _hvp(self, x, v):
        r, c = self._radial(x)
        safe = np.where(r > 0, r, 1.0)
        xh = x / safe[:, None]
        first = -2.0 * (r - c) / 100.0
        proj = np.sum(xh * v, axis=1, keepdims=True)
        out = -2.0 / 100.0 * xh * proj + (first / safe)[:, None] * (v - xh * proj)
        return np.where((r > 0)[:, None], out, 0.0)


def rings_target():
    return RingsTarget()


LGCP_DEFAULT_BETA = 1.0 / 33.0
LGCP_VARIANCE = 1.91


def lgcp_grid(grid_side):
    """Cell centres of the M x M grid on the unit square, row-major."""
    c = (np.arange(grid_side) + 0.5) / grid_side
    gx, gy = np.meshgrid(c, c, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def lgcp_kernel(grid_side, beta=LGCP_DEFAULT_BETA, variance=LGCP_VARIANCE):
    pts = lgcp_grid(grid_side)
    dist = np.sqrt(np.sum((pts[:, None] - pts[None]) ** 2, axis=-1))
    return variance * np.exp(-dist / (grid_side * beta))


class LGCPTarget(TargetDensity):
    """Log-Gaussian Cox process posterior over the M x M latent field."""

    name = "lgcp"

    def __init__(self, grid_side, beta, observations, variance=LGCP_VARIANCE,
                 mean_variance=None, jitter=1e-6):
        if grid_side < 2:
            raise ConfigurationError("grid_side must be >= 2")
        if beta <= 0:
            raise ConfigurationError("beta must be positive")
        obs = np.asarray(observations, dtype=float).ravel()
        if obs.size != grid_side ** 2:
            raise ConfigurationError(
                f"expected {grid_side ** 2} observations, got {obs.size}")
        super().__init__(grid_side ** 2)
        self.grid_side, self.beta, self.variance = int(grid_side), float(beta), float(variance)
        self.mean_variance = self.variance if mean_variance is None else float(mean_variance)
        self.observations = obs
        self.alpha = 1.0 / grid_side ** 2
        self.mean = np.full(self.dim, np.log(126.0) - self.mean_variance)
        self.kernel = lgcp_kernel(grid_side, beta, variance) + jitter * np.eye(self.dim)
        try:
            self._chol = cho_factor(self.kernel, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError(f"LGCP kernel is not positive definite: {exc}") from exc

    def _solve(self, r):
        return cho_solve(self._chol, r.T).T

    def _log(self, x):
        r = x - self.mean
        quad = np.sum(r * self._solve(r), axis=1)
        return -0.5 * quad + x @ self.observations - self.alpha * np.sum(np.exp(x), axis=1)

    def _grad(self, x):
        return -self._solve(x - self.mean) + self.observations - self.alpha * np.exp(x)

    def _hvp(self, x, v):
        return -self._solve(v) - self.alpha * np.exp(x) * v

    def describe(self):
        return {"name": self.name, "grid_side": self.grid_side, "beta": self.beta}


def load_counts(path):
    """Read an LGCP observation file: one count per line, row-major."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and r[0].strip()]
    try:
        return np.array([float(r[0]) for r in rows])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed count ({exc})") from exc


def default_lgcp_counts(grid_side=8):
    ref = resources.files("pisampler") / "data" / f"lgcp_counts_m{grid_side}.csv"
    with resources.as_file(ref) as path:
        if not path.exists():
            raise ConfigurationError(f"no bundled LGCP observations for M={grid_side}")
        return load_counts(path)


def simulate_lgcp_counts(grid_side, beta=LGCP_DEFAULT_BETA, seed=0,
                         variance=LGCP_VARIANCE, mean_variance=None):
    """Draw a field and Poisson counts from the LGCP generative model."""
    mean_variance = variance if mean_variance is None else mean_variance
    rng = np.random.default_rng(seed)
    k = lgcp_kernel(grid_side, beta, variance) + 1e-6 * np.eye(grid_side ** 2)
    field = np.log(126.0) - mean_variance + np.linalg.cholesky(k) @ rng.standard_normal(grid_side ** 2)
    return rng.poisson(np.exp(field) / grid_side ** 2).astype(float)


def lgcp_target(grid_side=8, beta=LGCP_DEFAULT_BETA, observations=None, **kw):
    if observations is None:
        observations = default_lgcp_counts(grid_side)
    return LGCPTarget(grid_side, beta, observations, **kw)


def make_target(name, **params):
    """Build a registered target from its name and keyword parameters."""
    builders = {
        "gaussian": lambda p: gaussian_target(p.get("mean", [0.0]), p.get("cov_diag", 1.0),
                                              p.get("scale_log_z", 0.0)),
        "mog": lambda p: mog_target(),
        "funnel": lambda p: funnel_target(int(p.get("dim", 10))),
        "rings": lambda p: rings_target(),
        "lgcp": lambda p: lgcp_target(
            int(p.get("grid_side", 8)), float(p.get("beta", LGCP_DEFAULT_BETA)),
            load_counts(p["observations"]) if p.get("observations") else None),
    }
    if name not in builders:
        raise ConfigurationError(f"unknown target {name!r}; expected one of {sorted(builders)}")
    return builders[name](params)
