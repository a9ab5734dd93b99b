"""Input validation helpers built on scikit-learn's checks."""
import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ConfigurationError


def check_points(x, dim, allow_nonfinite=True):
    """Return ``x`` as a float64 array of shape (n, dim).

    A single point of shape (dim,) is promoted to (1, dim).
    """
    if isinstance(x, np.ndarray) and x.dtype == np.float64 and x.ndim == 2 \
            and x.shape[1] == dim and allow_nonfinite:
        return x
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    try:
        x = check_array(x, dtype=np.float64, ensure_all_finite=not allow_nonfinite,
                        ensure_min_samples=1)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if x.shape[1] != dim:
        raise ConfigurationError(f"points have dimension {x.shape[1]}, expected {dim}")
    return x


def check_positive(name, value, integer=False):
    ok = isinstance(value, numbers.Integral) if integer else isinstance(value, numbers.Real)
    if not ok or isinstance(value, bool) or not value > 0:
        kind = "a positive integer" if integer else "positive"
        raise ConfigurationError(f"{name} must be {kind}, got {value!r}")
    return value


def check_log_weights(log_w):
    log_w = np.asarray(log_w, dtype=float).ravel()
    if log_w.size == 0:
        raise ConfigurationError("need at least one weight")
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise ConfigurationError("log weights must not be NaN or +inf")
    return log_w
