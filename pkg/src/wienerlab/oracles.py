"""Independent reference values used to check the grid solvers."""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate


def sphere_area(N: int) -> float:
    """Surface area of the unit sphere in R^N."""
    return 2 * math.pi ** (N / 2) / math.gamma(N / 2)


def radial_capacity(N: int, p: float, r: float, R: float) -> float:
    """cap_p(B_r, B_R) from the radial Euler-Lagrange equation.

    Radial minimisers satisfy ``s^(N-1) |u'|^(p-1) = const``; imposing
    ``u(r) = 1, u(R) = 0`` leaves ``cap = |S^(N-1)| * J^(1-p)`` with
    ``J = int_r^R s^((1-N)/(p-1)) ds``, evaluated here by adaptive
    quadrature.
    """
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    if p <= 1:
        raise ValueError("need p > 1")
    expo = (1 - N) / (p - 1)
    J, err = integrate.quad(lambda s: s ** expo, r, R, epsabs=0, epsrel=1e-13, limit=200)
    return sphere_area(N) * J ** (1 - p)


def radial_capacity_closed_form(N: int, p: float, r: float, R: float) -> float:
    if p == N:
        return sphere_area(N) * math.log(R / r) ** (1 - N)
    a = (p - N) / (p - 1)
    return sphere_area(N) * abs((N - p) / (p - 1)) ** (p - 1) * abs(r ** a - R ** a) ** (1 - p)


def radial_profile(N: int, p: float, r: float, R: float, s: np.ndarray) -> np.ndarray:
    """The radial capacity potential at radii ``s`` (clipped to [r, R])."""
    expo = (1 - N) / (p - 1)
    s = np.clip(np.asarray(s, dtype=float), r, R)
    J = integrate.quad(lambda t: t ** expo, r, R, epsrel=1e-13)[0]
    out = np.empty_like(s)
    for i, v in np.ndenumerate(s):
        out[i] = integrate.quad(lambda t: t ** expo, v, R, epsrel=1e-13)[0] / J
    return out
