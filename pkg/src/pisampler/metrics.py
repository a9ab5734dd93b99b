"""Sample-quality metrics: 1-D Wasserstein-2, sliced W2 and moments."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError


@dataclass
class SampleSet:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        self.points = pts[:, None] if pts.ndim == 1 else pts
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.size != self.points.shape[0] or np.any(w < 0):
                raise ConfigurationError("weights must be non-negative, one per point")
            if not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-9):
                raise ConfigurationError("weights must sum to 1")
            self.weights = w

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def _as_set(a):
    return a if isinstance(a, SampleSet) else SampleSet(a)


def _weighted_quantile_w2(xa, wa, xb, wb):
    oa, ob = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa, xb, wb = xa[oa], wa[oa], xb[ob], wb[ob]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    levels = np.union1d(ca, cb)
    levels = levels[levels > 0]
    mass = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - 0.5 * mass
    ia = np.minimum(np.searchsorted(ca, mid), xa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mid), xb.size - 1)
    return float(np.sqrt(np.sum(mass * (xa[ia] - xb[ib]) ** 2)))


def w2_1d(a, b):
    """Exact W2 between two 1-D empirical measures (sorted coupling)."""
    a, b = _as_set(a), _as_set(b)
    if a.dim != 1 or b.dim != 1:
        raise UsageError("w2_1d needs one-dimensional samples")
    xa, xb = a.points[:, 0], b.points[:, 0]
    if a.weights is None and b.weights is None:
        if xa.size != xb.size:
            raise UsageError("unweighted w2_1d needs equal sample sizes")
        return float(np.sqrt(np.mean((np.sort(xa) - np.sort(xb)) ** 2)))
    wa = np.full(xa.size, 1.0 / xa.size) if a.weights is None else a.weights
    wb = np.full(xb.size, 1.0 / xb.size) if b.weights is None else b.weights
    return _weighted_quantile_w2(xa, wa, xb, wb)


def random_directions(n, dim, gen):
    """``n`` unit vectors, each uniform on the sphere.

    They are taken from stacked Haar-random orthonormal frames, so that
    within each frame the squared projections of any vector sum to its
    squared norm; this removes most of the direction noise.
    """
    frames = []
    for _ in range(-(-n // dim)):
        q, r = np.linalg.qr(gen.standard_normal((dim, dim)))
        frames.append((q * np.sign(np.diag(r))).T)
    return np.concatenate(frames)[:n]


def sliced_w2(a, b, n_projections=100, gen=None, directions=None):
    """Root-mean of squared 1-D W2 over random unit projections."""
    a, b = _as_set(a), _as_set(b)
    if a.dim != b.dim:
        raise ConfigurationError("sample sets differ in dimension")
    if directions is None:
        gen = np.random.default_rng(0) if gen is None else gen
        directions = random_directions(n_projections, a.dim, gen)
    total = 0.0
    for v in np.atleast_2d(directions):
        pa = SampleSet(a.points @ v, a.weights)
        pb = SampleSet(b.points @ v, b.weights)
        total += w2_1d(pa, pb) ** 2
    return float(np.sqrt(total / len(np.atleast_2d(directions))))


def moment_report(a):
    """Weighted (when weights exist) mean, variance and covariance."""
    a = _as_set(a)
    if len(a) < 2:
        raise ConfigurationError("need at least two points")
    if a.weights is None:
        mean = a.points.mean(axis=0)
        centred = a.points - mean
        cov = centred.T @ centred / len(a)
    else:
        w = a.weights
        mean = w @ a.points
        centred = a.points - mean
        cov = (centred * w[:, None]).T @ centred
    return {"mean": mean, "variance": np.diag(cov).copy(), "covariance": cov}
