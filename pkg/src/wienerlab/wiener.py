"""Harnack exponent q_o, Wiener-type integrals and boundary-point classification."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .capacity import CapacityProfile

CLASSES = ("wiener-point", "p-fat", "inconclusive")


class AdmissibilityError(ValueError):
    pass


def critical_exponent(N: int) -> float:
    return 2 * N / (N + 1)


@dataclass
class HarnackParams:
    p: float
    N: int
    r: float
    lambda_r: float
    d: float
    d_mode: str
    q_o: float
    theta: Optional[float] = None
    sigma: Optional[float] = None
    c2: Optional[float] = None

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


def lambda_r(p: float, N: int, r: float) -> float:
    return N * (p - 2) + r * p


def prototype_d(p: float, N: int, r: float) -> float:
    """Explicit Harnack exponent for the prototype equation."""
    return 1 + lambda_r(p, N, r) / (p * r * (2 - p))


def qo_value(p: float, r: float, lam: float, d: float) -> float:
    return (1 + d * p * (r - 1) / lam) / (p - 1)


def qo_exponent(p: float, N: int, r: Optional[float] = None, d_mode: str = "prototype",
                d: Optional[float] = None) -> HarnackParams:
    """Exponent q_o for the Wiener integral.

    ``d_mode`` is ``"prototype"`` (explicit d) or ``"user"`` (``d`` given).
    ``r=None`` picks the admissible r minimising q_o on a log grid.
    """
    if not 1 < p <= critical_exponent(N) * (1 + 1e-12):
        raise AdmissibilityError(f"p={p} is outside the sub-critical range (1, {critical_exponent(N):.6g}]")
    if d_mode not in ("prototype", "user"):
        raise ValueError(f"unknown d_mode {d_mode!r}")
    if d_mode == "user" and (d is None or d < 0):
        raise ValueError("user-supplied d must be a non-negative number")
    if r is None:
        r = optimal_r(p, N, d_mode, d)
    lam = lambda_r(p, N, r)
    if not lam > 0:
        raise AdmissibilityError(
            f"lambda_r = N(p-2) + rp = {lam:.6g} must be strictly positive (r={r}, p={p}, N={N})")
    dd = prototype_d(p, N, r) if d_mode == "prototype" else float(d)
    return HarnackParams(p, N, float(r), lam, dd, d_mode, qo_value(p, r, lam, dd))


def optimal_r(p: float, N: int, d_mode: str = "prototype", d: Optional[float] = None,
              num: int = 400) -> float:
    r_min = max(1.0, N * (2 - p) / p)
    grid = r_min * (1 + np.geomspace(1e-3, 1e3, num))
    best, best_q = None, math.inf
    for r in grid:
        lam = lambda_r(p, N, r)
        if lam <= 0:
            continue
        dd = prototype_d(p, N, r) if d_mode == "prototype" else float(d)
        q = qo_value(p, r, lam, dd)
        if q < best_q:
            best, best_q = float(r), q
    return best


# --------------------------------------------------------------------------
# integrals


def _pieces(profile: CapacityProfile):
    """Normalised interval ends and delta values.

    delta_j is taken constant on [s_j, s_{j-1}) with s_{-1} = 1, where
    s_j = rho_j / rho_ref.
    """
    s = profile.normalized_scales()
    upper = np.concatenate(([1.0], s[:-1]))
    return s, upper, np.asarray(profile.deltas, dtype=float)


def wiener_integral(profile: CapacityProfile, q_o: float, tau: float) -> float:
    """``int_tau^1 delta(s)^q_o ds/s`` with delta piecewise constant."""
    if q_o <= 0:
        raise ValueError("q_o must be positive")
    s, upper, d = _pieces(profile)
    if s[0] > 1 + 1e-12:
        raise ValueError("profile scales exceed the reference scale")
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if tau < s[-1] * (1 - 1e-12):
        raise ValueError(f"tau={tau:g} lies below the smallest profiled scale {s[-1]:g}")
    total = 0.0
    for lo, hi, dj in zip(s, upper, d):
        a, b = max(lo, tau), hi
        if b <= a:
            continue
        if np.isnan(dj):
            raise ValueError(f"profile has a gap on [{lo:g}, {hi:g}) needed for tau={tau:g}")
        if dj > 0:
            total += dj ** q_o * math.log(b / a)
    return total


def cumulative_integrals(profile: CapacityProfile, q_o: float, alpha: float = 1.0) -> np.ndarray:
    """Integral from ``s_j**alpha`` to 1 for every profiled scale."""
    s = profile.normalized_scales()
    return np.array([wiener_integral(profile, q_o, float(v) ** alpha) for v in s])


def modulus(profile: CapacityProfile, q_o: float, tau: float) -> float:
    return math.exp(-wiener_integral(profile, q_o, tau))


# --------------------------------------------------------------------------
# report


@dataclass
class WienerReport:
    profile: CapacityProfile
    q_o: float
    alpha: float
    scales: List[float]
    integrals: List[float]
    moduli: List[float]
    r_tilde: List[float]
    reference_half_edge: List[float]
    reference_duration: List[float]
    classification: str
    slope: float
    params: Optional[HarnackParams] = None
    notes: Dict[str, object] = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "delta", "integral", "modulus", "r_tilde"])
            for row in zip(self.scales, self.profile.deltas, self.integrals, self.moduli, self.r_tilde):
                w.writerow([repr(float(v)) for v in row])
        return path

    def summary(self) -> Dict[str, object]:
        out = {
            "q_o": self.q_o,
            "alpha": self.alpha,
            "classification": self.classification,
            "slope": self.slope,
            "gamma_o": self.profile.gamma_o,
            "rho_bar": self.profile.rho_bar,
        }
        if self.params is not None:
            out.update({"r": self.params.r, "d": self.params.d, "lambda_r": self.params.lambda_r,
                        "d_mode": self.params.d_mode})
        out.update(self.notes)
        return out

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def integral_slope(profile: CapacityProfile, q_o: float) -> float:
    """Regression slope of the integral against ln(1/tau) over the deepest half of the scales."""
    s = profile.normalized_scales()
    valid = profile.valid
    n = len(s)
    lo = n // 2 if n >= 4 else 0
    idx = [j for j in range(lo, n) if valid[: j + 1].all()]
    if len(idx) < 2:
        return float("nan")
    x = np.log(1 / s[idx])
    y = np.array([wiener_integral(profile, q_o, float(s[j])) for j in idx])
    return float(np.polyfit(x, y, 1)[0])


def classify(profile: CapacityProfile, q_o: float, slope_min: float = 0.0,
             fat_ratio: float = 0.5) -> str:
    """``p-fat`` when every delta is positive and the deeper half of the
    profile keeps at least ``fat_ratio`` of the shallow half's largest value
    (no visible decay towards zero); otherwise ``wiener-point`` when the
    integral still grows over the deepest scales, else ``inconclusive``."""
    d = np.asarray(profile.deltas, dtype=float)
    valid = profile.valid
    if valid.any() and (d[valid] > 0).all():
        v = d[valid]
        half = max(len(v) // 2, 1)
        if v[half:].size == 0 or v[half:].min() >= fat_ratio * v[:half].max():
            return "p-fat"
    slope = integral_slope(profile, q_o)
    if np.isfinite(slope) and slope > slope_min:
        return "wiener-point"
    return "inconclusive"


def modulus_and_reference(profile: CapacityProfile, q_o: float, alpha: float = 1.0, c: float = 0.1,
                          omega_o: float = 1.0, p: float = 4 / 3, t_o: float = 0.0,
                          params: Optional[HarnackParams] = None,
                          slope_min: float = 0.0) -> WienerReport:
    """Tabulate the modulus, the reference radius and the reference cylinder.

    ``r_tilde`` is dimensionless (in units of ``profile.rho_ref``); the
    reference cylinder is ``K_{2 r_tilde rho_ref}(x_o) x [t_o - 2 c omega_o^(2-p) (2 r_tilde rho_ref)^p, t_o]``.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    s = profile.normalized_scales()
    ints, mods, rts, half, dur = [], [], [], [], []
    for v in s:
        I = wiener_integral(profile, q_o, float(v))
        ints.append(I)
        mods.append(math.exp(-I))
        rt = math.exp(-wiener_integral(profile, q_o, float(v) ** alpha)) ** 0.5
        rts.append(rt)
        edge = 2 * rt * profile.rho_ref
        half.append(edge)
        dur.append(2 * c * omega_o ** (2 - p) * edge ** p)
    slope = integral_slope(profile, q_o)
    return WienerReport(profile, q_o, alpha, list(profile.scales), ints, mods, rts, half, dur,
                        classify(profile, q_o, slope_min), slope, params,
                        {"t_o": t_o, "c": c, "omega_o": omega_o})
