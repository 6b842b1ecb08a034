"""Elliptic p-capacities of condensers and capacity-ratio profiles.

The discrete capacity of a condenser ``(K, Omega)`` is

    min  sum_cells h^N |D_h u|^p    over grid fields u = 1 on K, 0 off Omega,

with ``D_h`` the averaged one-sided gradient of :mod:`wienerlab.stencil`.
The minimiser is found on the regularised energy ``(|D_h u|^2 + eps^2)^(p/2)``
by damped Newton with nested iteration (coarse solves seed the fine one);
the reported value is the unregularised energy of that minimiser.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from .geometry import Cube, DomainMask, GeometryError
from .stencil import Stencil

logger = logging.getLogger(__name__)

DEFAULT_ANNULUS_RATIO = 1.5


class CapacityError(RuntimeError):
    """Newton iteration did not converge; ``residual`` is the last relative decrement."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class UnresolvableScale(GeometryError):
    pass


@dataclass(frozen=True)
class CapacitySettings:
    eps: Optional[float] = None      # None: one grid spacing
    tol: float = 1e-8                # relative Newton decrement
    max_iter: int = 80
    stencil: str = "pair"
    nested: bool = True
    min_level: int = 24              # coarsest grid (cells per axis) for nested iteration
    direct_limit: int = 40000        # unknowns below which a sparse direct solve is used
    clamp_tol: float = 1e-6          # delta may exceed 1 by this much before clamping


@dataclass
class Condenser:
    inner: np.ndarray
    outer: np.ndarray
    h: float
    p: float
    outer_cube: Optional[Cube] = None

    def __post_init__(self):
        self.inner = np.asarray(self.inner, dtype=bool)
        self.outer = np.asarray(self.outer, dtype=bool)
        if self.inner.shape != self.outer.shape:
            raise ValueError("inner and outer masks must have the same shape")
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        if self.inner.any():
            full = ndimage.generate_binary_structure(self.inner.ndim, self.inner.ndim)
            grown = ndimage.binary_dilation(self.inner, structure=full)
            if (grown & ~self.outer).any():
                raise ValueError("obstacle K touches the boundary of Omega")


@dataclass
class CapacityResult:
    value: float
    iterations: int
    energy_residual: float
    minimizer: np.ndarray
    eps: float


# --------------------------------------------------------------------------
# energy and Newton


def _energy(st: Stencil, u: np.ndarray, p: float, eps: float) -> float:
    total = 0.0
    for g in st.gradients(u):
        total += float((((g * g).sum(0) + eps * eps) ** (p / 2)).sum())
    return total * st.weight * st.h ** st.ndim


def p_energy(u: np.ndarray, h: float, p: float, stencil: str = "pair") -> float:
    """Discrete p-Dirichlet energy ``sum h^N |D_h u|^p``."""
    return _energy(Stencil(u.shape, h, stencil), u, p, 0.0)


def _newton(st: Stencil, u: np.ndarray, unknown: np.ndarray, p: float, eps: float,
            cfg: CapacitySettings, tol: float) -> Tuple[np.ndarray, int, float]:
    hN = st.h ** st.ndim
    ndim = st.ndim
    m = int(unknown.sum())
    ml = None
    rel_dec = math.inf
    for it in range(1, cfg.max_iter + 1):
        fluxes, blocks = [], []
        energy = 0.0
        for g in st.gradients(u):
            q = (g * g).sum(0) + eps * eps
            energy += float((q ** (p / 2)).sum())
            a = p * q ** (p / 2 - 1) * hN
            fluxes.append(a * g)
            B = np.einsum("i...,j...->ij...", g, g) * ((p - 2) / q)
            for i in range(ndim):
                B[i, i] += 1.0
            blocks.append(B * a)
        energy *= st.weight * hN
        grad = st.divergence(fluxes)[unknown]
        H = st.hessian(blocks, unknown)
        if m <= cfg.direct_limit:
            d = -spla.spsolve(H.tocsc(), grad)
        else:
            import pyamg

            if ml is None:
                ml = pyamg.smoothed_aggregation_solver(H, symmetry="symmetric", max_coarse=500)
            rtol = min(1e-2, max(1e-10, rel_dec))
            d, info = spla.cg(H, -grad, M=ml.aspreconditioner(), rtol=rtol, maxiter=400)
            if info != 0:
                ml = pyamg.smoothed_aggregation_solver(H, symmetry="symmetric", max_coarse=500)
                d, info = spla.cg(H, -grad, M=ml.aspreconditioner(), rtol=rtol, maxiter=400)
        dec = float(-grad @ d)
        rel_dec = abs(dec) / max(energy, 1e-300)
        if rel_dec < tol:
            return u, it, rel_dec / 2
        step = 1.0
        while True:
            trial = u.copy()
            trial[unknown] += step * d
            e_new = _energy(st, trial, p, eps)
            if e_new <= energy - 1e-4 * step * dec:
                break
            step *= 0.5
            if step < 1e-10:
                if rel_dec < 1e3 * tol:
                    return u, it, rel_dec / 2
                raise CapacityError("line search failed", rel_dec)
        u = trial
    raise CapacityError(f"no convergence in {cfg.max_iter} Newton iterations", rel_dec)


def _crop(cond: Condenser) -> Tuple[np.ndarray, np.ndarray, Tuple[slice, ...], Tuple[slice, ...]]:
    """Bounding box of Omega plus a ring of fixed zero cells.

    Returns the cropped masks and the matching (source, destination)
    slices into the caller's grid and the cropped grid.
    """
    idx = np.nonzero(cond.outer)
    lo = [max(int(a.min()) - 1, 0) for a in idx]
    hi = [min(int(a.max()) + 2, n) for a, n in zip(idx, cond.outer.shape)]
    src = tuple(slice(a, b) for a, b in zip(lo, hi))
    before = [1 if a == int(ix.min()) else 0 for a, ix in zip(lo, idx)]
    after = [1 if b == int(ix.max()) + 1 else 0 for b, ix in zip(hi, idx)]
    pad = list(zip(before, after))
    dst = tuple(slice(b, b + (s.stop - s.start)) for b, s in zip(before, src))
    return np.pad(cond.inner[src], pad), np.pad(cond.outer[src], pad), src, dst


def _coarsen(inner: np.ndarray, outer: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray, Tuple]]:
    ndim = inner.ndim
    pad = [(0, n % 2) for n in inner.shape]
    fi = np.pad(inner, pad).astype(float)
    fo = np.pad(outer, pad).astype(float)
    shape = fi.shape
    red = tuple(s // 2 for s in shape)
    blocked = []
    for arr in (fi, fo):
        view = arr.reshape(sum(((r, 2) for r in red), ()))
        blocked.append(view.mean(axis=tuple(range(1, 2 * ndim, 2))))
    ci = blocked[0] > 0.5
    co = blocked[1] > 0.5
    border = np.ones(red, dtype=bool)
    border[tuple(slice(1, -1) for _ in red)] = False
    co &= ~border
    full = ndimage.generate_binary_structure(ndim, ndim)
    ci &= ndimage.binary_erosion(co, structure=full)
    if not ci.any() or not (co & ~ci).any():
        return None
    return ci, co, shape


def _solve_level(inner: np.ndarray, outer: np.ndarray, h: float, p: float,
                 cfg: CapacitySettings, tol: float) -> Tuple[np.ndarray, int, float, float]:
    u0 = None
    if cfg.nested and min(inner.shape) >= 2 * cfg.min_level:
        coarse = _coarsen(inner, outer)
        if coarse is not None:
            ci, co, padded = coarse
            uc, _, _, _ = _solve_level(ci, co, 2 * h, p, cfg, max(tol, 1e-5))
            up = ndimage.zoom(uc, 2, order=1, grid_mode=True, mode="nearest")
            u0 = up[tuple(slice(0, n) for n in inner.shape)]
    if u0 is None:
        u0 = np.zeros(inner.shape)
    u = np.clip(u0, 0.0, 1.0)
    u[~outer] = 0.0
    u[inner] = 1.0
    unknown = outer & ~inner
    eps = cfg.eps if cfg.eps is not None else h
    st = Stencil(inner.shape, h, cfg.stencil)
    u, its, resid = _newton(st, u, unknown, p, eps, cfg, tol)
    return u, its, resid, eps


def p_capacity(condenser: Condenser, cfg: CapacitySettings = CapacitySettings()) -> CapacityResult:
    """Discrete p-capacity of ``condenser``."""
    if cfg.tol <= 0:
        raise ValueError("tolerance must be positive")
    if cfg.eps is not None and cfg.eps <= 0:
        raise ValueError("regularisation eps must be positive")
    eps_default = cfg.eps if cfg.eps is not None else condenser.h
    if not condenser.inner.any():
        return CapacityResult(0.0, 0, 0.0, np.zeros(condenser.inner.shape), eps_default)
    inner, outer, src, dst = _crop(condenser)
    u, its, resid, eps = _solve_level(inner, outer, condenser.h, condenser.p, cfg, cfg.tol)
    st = Stencil(u.shape, condenser.h, cfg.stencil)
    value = _energy(st, u, condenser.p, 0.0)
    full = np.zeros(condenser.inner.shape)
    full[src] = u[dst]
    return CapacityResult(value, its, resid, full, eps)


def ball_condenser(N: int, p: float, r: float, R: float, grid_n: int) -> Condenser:
    """Concentric balls ``B_r`` (closed) inside ``B_R`` (open) on a grid whose
    bounding cube leaves one spare cell beyond ``B_R``."""
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    L = R * (1 + 2.0 / grid_n)
    h = 2 * L / grid_n
    x = -L + (np.arange(grid_n) + 0.5) * h
    rad = np.sqrt(sum(c ** 2 for c in np.meshgrid(*([x] * N), indexing="ij")))
    return Condenser(rad <= r, rad < R, h, p)


def cube_condenser(N: int, p: float, rho: float, grid_n: int, half_edge: float = 1.0,
                   annulus_ratio: float = DEFAULT_ANNULUS_RATIO) -> Condenser:
    """``(K_rho, K_{annulus_ratio rho})`` centred in a bounding cube."""
    h = 2 * half_edge / grid_n
    x = -half_edge + (np.arange(grid_n) + 0.5) * h
    X = np.stack(np.meshgrid(*([x] * N), indexing="ij"))
    inner = Cube((0.0,) * N, rho).contains(X, closed=True)
    outer_cube = Cube((0.0,) * N, annulus_ratio * rho)
    if not outer_cube.inside_of(Cube((0.0,) * N, half_edge)):
        raise UnresolvableScale("outer cube leaves the bounding cube")
    return Condenser(inner, outer_cube.contains(X, closed=False), h, p, outer_cube)


# --------------------------------------------------------------------------
# capacity ratio delta(rho)

_denominator_cache: Dict[tuple, CapacityResult] = {}


def _cube_condensers(domain: DomainMask, x_o: Sequence[float], rho: float, p: float,
                     annulus_ratio: float) -> Tuple[Condenser, Condenser]:
    outer_cube = Cube(tuple(x_o), annulus_ratio * rho)
    if not outer_cube.inside_of(domain.bounding_cube):
        raise UnresolvableScale(
            f"K_{annulus_ratio}rho(x_o) with rho={rho:g} leaves the bounding cube")
    if 2 * rho < 4 * domain.h * (1 - 1e-9):
        raise UnresolvableScale(f"rho={rho:g} spans fewer than 4 cells (h={domain.h:g})")
    x = domain.coords()
    full = Cube(tuple(x_o), rho).contains(x, closed=True)
    omega = outer_cube.contains(x, closed=False)
    try:
        num = Condenser(full & domain.outside, omega, domain.h, p, outer_cube)
        den = Condenser(full, omega, domain.h, p, outer_cube)
    except ValueError as exc:
        raise UnresolvableScale(f"rho={rho:g}: {exc}") from exc
    return num, den


def _cached_capacity(cond: Condenser, cfg: CapacitySettings) -> CapacityResult:
    inner, outer, _, _ = _crop(cond)
    key = (inner.shape, inner.tobytes(), outer.tobytes(), cond.h, cond.p, cfg)
    hit = _denominator_cache.get(key)
    if hit is None:
        hit = p_capacity(cond, cfg)
        if len(_denominator_cache) > 64:
            _denominator_cache.clear()
        _denominator_cache[key] = hit
    return hit


@dataclass
class DeltaResult:
    rho: float
    delta: float
    numerator: float
    denominator: float
    residual: float


def delta_detail(domain: DomainMask, x_o: Sequence[float], rho: float, p: float,
                 cfg: CapacitySettings = CapacitySettings(),
                 annulus_ratio: float = DEFAULT_ANNULUS_RATIO) -> DeltaResult:
    num, den = _cube_condensers(domain, x_o, rho, p, annulus_ratio)
    d = _cached_capacity(den, cfg)
    if not num.inner.any():
        return DeltaResult(rho, 0.0, 0.0, d.value, d.energy_residual)
    if np.array_equal(num.inner, den.inner):
        return DeltaResult(rho, 1.0, d.value, d.value, d.energy_residual)
    n = p_capacity(num, cfg)
    raw = n.value / d.value
    if raw > 1.0:
        if raw - 1.0 > cfg.clamp_tol:
            raise CapacityError(f"capacity ratio {raw:.8f} exceeds 1 at rho={rho:g}",
                                max(n.energy_residual, d.energy_residual))
        raw = 1.0
    return DeltaResult(rho, raw, n.value, d.value, max(n.energy_residual, d.energy_residual))


def delta_ratio(domain: DomainMask, x_o: Sequence[float], rho: float, p: float,
                cfg: CapacitySettings = CapacitySettings(),
                annulus_ratio: float = DEFAULT_ANNULUS_RATIO) -> float:
    """``cap_p(K_rho \\ E, K_{3/2 rho}) / cap_p(K_rho, K_{3/2 rho})`` at ``x_o``."""
    return delta_detail(domain, x_o, rho, p, cfg, annulus_ratio).delta


# --------------------------------------------------------------------------
# profiles


@dataclass
class CapacityProfile:
    x_o: Tuple[float, ...]
    p: float
    scales: List[float]
    deltas: List[float]
    numerators: List[float]
    denominators: List[float]
    residuals: List[float]
    ratio: float = 0.5
    rho_ref: Optional[float] = None
    gaps: Dict[float, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.rho_ref is None and self.scales:
            self.rho_ref = self.scales[0] / self.ratio
        if any(b >= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError("profile scales must be strictly decreasing")

    @classmethod
    def from_deltas(cls, scales: Sequence[float], deltas: Sequence[float], ratio: float = 0.5,
                    rho_ref: Optional[float] = None, p: float = float("nan"),
                    x_o: Sequence[float] = ()) -> "CapacityProfile":
        n = len(scales)
        nan = [float("nan")] * n
        return cls(tuple(x_o), p, list(map(float, scales)), list(map(float, deltas)), nan, nan,
                   [0.0] * n, ratio, rho_ref)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(np.asarray(self.deltas, dtype=float))

    @property
    def gamma_o(self) -> float:
        d = np.asarray(self.deltas, dtype=float)[self.valid]
        return float(d.min()) if d.size else float("nan")

    @property
    def rho_bar(self) -> float:
        return float(self.scales[0])

    def normalized_scales(self) -> np.ndarray:
        return np.asarray(self.scales) / self.rho_ref

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "delta", "numerator_cap", "denominator_cap", "residual"])
            for row in zip(self.scales, self.deltas, self.numerators, self.denominators, self.residuals):
                w.writerow([repr(float(v)) for v in row])
        return path


def _profile_job(args):
    domain, x_o, rho, p, cfg, annulus_ratio = args
    try:
        return delta_detail(domain, x_o, rho, p, cfg, annulus_ratio), None
    except (GeometryError, CapacityError) as exc:
        return None, str(exc)


def default_max_scale(domain: DomainMask, x_o: Sequence[float],
                      annulus_ratio: float = DEFAULT_ANNULUS_RATIO) -> float:
    room = min(domain.half_edge - abs(x - c) for x, c in zip(x_o, domain.center))
    return room / annulus_ratio


def capacity_profile(domain: DomainMask, x_o: Sequence[float], p: float, num_scales: int,
                     cfg: CapacitySettings = CapacitySettings(), rho_max: Optional[float] = None,
                     ratio: float = 0.5, rho_ref: Optional[float] = None,
                     annulus_ratio: float = DEFAULT_ANNULUS_RATIO, workers: int = 1) -> CapacityProfile:
    """delta(rho_j) at ``rho_j = rho_max * ratio**j``.

    Scales that cannot be computed are recorded in ``gaps`` with NaN deltas.
    """
    if num_scales < 3:
        raise ValueError("a profile needs at least 3 scales")
    if not 0 < ratio < 1:
        raise ValueError("scale ratio must lie in (0, 1)")
    if rho_max is None:
        rho_max = default_max_scale(domain, x_o, annulus_ratio)
    if not Cube(tuple(x_o), annulus_ratio * rho_max).inside_of(domain.bounding_cube):
        raise UnresolvableScale("largest profile scale does not fit the bounding cube")
    scales = [rho_max * ratio ** j for j in range(num_scales)]
    jobs = [(domain, tuple(x_o), rho, p, cfg, annulus_ratio) for rho in scales]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_profile_job, jobs))
    else:
        results = [_profile_job(j) for j in jobs]
    deltas, nums, dens, res, gaps = [], [], [], [], {}
    for rho, (r, err) in zip(scales, results):
        if r is None:
            gaps[rho] = err
            logger.info("profile gap at rho=%g: %s", rho, err)
            deltas.append(float("nan"))
            nums.append(float("nan"))
            dens.append(float("nan"))
            res.append(float("nan"))
        else:
            deltas.append(r.delta)
            nums.append(r.numerator)
            dens.append(r.denominator)
            res.append(r.residual)
    return CapacityProfile(tuple(float(v) for v in x_o), p, scales, deltas, nums, dens, res,
                           ratio, rho_ref, gaps)
