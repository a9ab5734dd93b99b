"""Plot-ready summaries of weighted samples: histograms and 2-D density grids."""
import numpy as np
from scipy.stats import gaussian_kde

from .errors import ConfigurationError


def weighted_histograms(points, weights, bins=50, ranges=None):
    """Per-coordinate histograms; returns a list of ``(edges, counts)``.

    Counts are the summed weights in each bin.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if bins < 1:
        raise ConfigurationError("bins must be >= 1")
    out = []
    for j in range(points.shape[1]):
        rng = None if ranges is None else ranges[j]
        col = points[:, j]
        if rng is None and col.min() == col.max():
            rng = (col.min() - 0.5, col.max() + 0.5)
        counts, edges = np.histogram(col, bins=bins, range=rng, weights=weights)
        out.append((edges, counts))
    return out


def density_grid(points, weights, bbox, resolution=80, bandwidth=None):
    """Weighted Gaussian-KDE density of 2-D points on a regular grid.

    ``bbox`` is ``(xmin, xmax, ymin, ymax)``.  Returns ``(xs, ys, dens)`` with
    ``dens[i, j]`` the density at ``(xs[i], ys[j])``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ConfigurationError("density_grid needs 2-D points")
    xs = np.linspace(bbox[0], bbox[1], resolution)
    ys = np.linspace(bbox[2], bbox[3], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    kde = gaussian_kde(points.T, bw_method=bandwidth, weights=weights)
    dens = kde(np.vstack([gx.ravel(), gy.ravel()])).reshape(gx.shape)
    return xs, ys, dens


def local_maxima(grid, rel_threshold=0.05):
    """Cells strictly above all 8 neighbours and above ``rel_threshold * max``."""
    grid = np.asarray(grid, dtype=float)
    padded = np.pad(grid, 1, constant_values=-np.inf)
    is_max = np.ones(grid.shape, dtype=bool)
    n0, n1 = grid.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            shifted = padded[1 + di:1 + di + n0, 1 + dj:1 + dj + n1]
            is_max &= grid > shifted
    is_max &= grid >= rel_threshold * grid.max()
    return np.argwhere(is_max)


def count_modes(points, weights, bbox, resolution=80, bandwidth=None, rel_threshold=0.05):
    _, _, dens = density_grid(points, weights, bbox, resolution, bandwidth)
    return len(local_maxima(dens, rel_threshold))
