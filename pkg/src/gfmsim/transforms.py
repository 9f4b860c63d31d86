"""Clarke/Park transforms (amplitude-invariant, d-axis on phase a at theta = 0)."""

import math

import numba
import numpy as np

SQRT3_2 = math.sqrt(3.0) / 2.0


@numba.njit(cache=True)
def clarke(a, b, c):
    alpha = (2.0 / 3.0) * (a - 0.5 * b - 0.5 * c)
    beta = (2.0 / 3.0) * SQRT3_2 * (b - c)
    return alpha, beta


@numba.njit(cache=True)
def inv_clarke(alpha, beta):
    a = alpha
    b = -0.5 * alpha + SQRT3_2 * beta
    c = -0.5 * alpha - SQRT3_2 * beta
    return a, b, c


@numba.njit(cache=True)
def ab_to_dq(alpha, beta, theta):
    """Rotate a stationary-frame pair by -theta."""
    c = math.cos(theta)
    s = math.sin(theta)
    return c * alpha + s * beta, -s * alpha + c * beta


@numba.njit(cache=True)
def dq_to_ab(d, q, theta):
    c = math.cos(theta)
    s = math.sin(theta)
    return c * d - s * q, s * d + c * q


def park(x, theta):
    """Transform a three-phase (a, b, c) or stationary (alpha, beta) sample to (d, q)."""
    x = np.asarray(x, dtype=float)
    if x.shape == (3,):
        alpha, beta = clarke(x[0], x[1], x[2])
    elif x.shape == (2,):
        alpha, beta = x
    else:
        raise ValueError(f"expected 2 or 3 components, got shape {x.shape}")
    return ab_to_dq(float(alpha), float(beta), float(theta))


def inverse_park(dq, theta):
    """Inverse of :func:`park` returning the (alpha, beta) pair."""
    d, q = dq
    return dq_to_ab(float(d), float(q), float(theta))


def inverse_park_abc(dq, theta):
    d, q = dq
    alpha, beta = dq_to_ab(float(d), float(q), float(theta))
    return inv_clarke(alpha, beta)


def balanced_abc(magnitude, angle):
    """Balanced positive-sequence three-phase sample of the given peak magnitude."""
    return np.array([
        magnitude * math.cos(angle),
        magnitude * math.cos(angle - 2.0 * math.pi / 3.0),
        magnitude * math.cos(angle + 2.0 * math.pi / 3.0),
    ])
