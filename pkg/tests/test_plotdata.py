import numpy as np
import pytest

from pisampler.errors import ConfigurationError
from pisampler.plotdata import count_modes, density_grid, local_maxima, weighted_histograms
from pisampler.targets import mog_target


def test_one_sample_one_bin():
    (edges, counts), = weighted_histograms(np.array([[0.3]]), np.array([1.0]), bins=1)
    assert counts.tolist() == [1.0]


def test_weights_respected():
    (edges, counts), = weighted_histograms(np.array([[0.0], [1.0]]), np.array([0.75, 0.25]),
                                           bins=2)
    assert counts.tolist() == [0.75, 0.25]
    with pytest.raises(ConfigurationError):
        weighted_histograms(np.zeros((2, 1)), None, bins=0)


def test_local_maxima():
    g = np.zeros((5, 5))
    g[1, 1], g[3, 3], g[3, 1] = 1.0, 0.5, 0.01
    assert local_maxima(g, 0.05).tolist() == [[1, 1], [3, 3]]
    flat = np.ones((3, 3))
    assert len(local_maxima(flat)) == 0


def test_density_grid_integrates_to_one():
    x = np.random.default_rng(0).normal(size=(500, 2))
    xs, ys, dens = density_grid(x, None, (-6, 6, -6, 6), 121)
    assert dens.sum() * (xs[1] - xs[0]) * (ys[1] - ys[0]) == pytest.approx(1.0, abs=1e-2)
    with pytest.raises(ConfigurationError):
        density_grid(np.zeros((3, 3)), None, (0, 1, 0, 1))


def test_exact_mog_draws_have_nine_modes():
    gen = np.random.default_rng(1)
    t = mog_target()
    idx = gen.integers(0, 9, 2000)
    x = t.centers[idx] + np.sqrt(0.3) * gen.standard_normal((2000, 2))
    assert count_modes(x, None, (-8, 8, -8, 8), 80) == 9
