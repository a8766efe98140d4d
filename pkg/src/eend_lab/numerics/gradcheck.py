"""Central finite differences, the oracle for every hand-written backward pass."""

import math

import numpy as np

from eend_lab.errors import EvaluationError


def finite_difference_gradient(f, theta, h=1e-5):
    """g_i = (f(theta + h e_i) - f(theta - h e_i)) / (2h).

    ``theta`` is not modified; ``f`` receives a perturbed copy each call.
    """
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        orig = probe[i]
        probe[i] = orig + h
        f_plus = float(f(probe))
        probe[i] = orig - h
        f_minus = float(f(probe))
        probe[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is ~0 from dividing
    finite-difference noise (~1e-10 at h=1e-5) by itself.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom
