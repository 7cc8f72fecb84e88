"""Shared helpers for the test suite."""

import numpy as np
from scipy.stats import norm


def truncnorm_sample(rng, n, lo=-1.0, hi=1.0, mean=0.0, sd=1.0):
    """Inverse-CDF draws from a truncated normal, independent of the package."""
    a = norm.cdf((lo - mean) / sd)
    b = norm.cdf((hi - mean) / sd)
    u = rng.uniform(a, b, size=n)
    return mean + sd * norm.ppf(u)


def cox_de_boor(t, i, degree, x):
    """Naive recursive B-spline evaluation, the oracle for the builder.

    The last nonempty interval is treated as closed so the basis is exact at
    the right boundary.
    """
    if degree == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        if x == t[-1] and t[i] < t[i + 1] and t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if t[i + degree] > t[i]:
        out += (x - t[i]) / (t[i + degree] - t[i]) * cox_de_boor(t, i, degree - 1, x)
    if t[i + degree + 1] > t[i + 1]:
        out += (
            (t[i + degree + 1] - x)
            / (t[i + degree + 1] - t[i + 1])
            * cox_de_boor(t, i + 1, degree - 1, x)
        )
    return out


def proportional_residual(col, target):
    """Relative residual of col after projecting out the direction of target."""
    fit = (col @ target) / (target @ target)
    return np.linalg.norm(col - fit * target) / np.linalg.norm(col)
