"""Implicit solver for the singular parabolic p-Laplacian on masked domains.

The unknowns are the cells of ``E``.  Every other cell of the bounding
cube, plus one ghost layer around it, carries the Dirichlet datum ``g``;
fluxes whose base cell is fixed use the prototype law, which is the
zero-extension of the flux outside ``E``.  One time step solves

    (u - u_old) / dt + D^T A_eps(x, t, D u) = f

by damped Newton, with ``A_eps(xi) = (|xi|^2 + eps^2)^((p-2)/2) a * xi``
and ``D``, ``D^T`` the averaged one-sided stencils of :mod:`.stencil`.
"""
from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Cube, Cylinder, DomainMask, GeometryError
from .stencil import Stencil

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray, float], np.ndarray]


class SolverError(RuntimeError):
    """Newton failed even after the allowed number of step halvings."""

    def __init__(self, message: str, history: Sequence[float] = ()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class StructureParams:
    p: float
    N: int
    C_o: float = 1.0
    C_1: float = 1.0
    Lambda: float = 0.0

    def __post_init__(self):
        if not 1 < self.p < 2:
            raise ValueError(f"p must lie in (1, 2), got {self.p}")
        if self.N not in (1, 2, 3):
            raise ValueError(f"N must be 1, 2 or 3, got {self.N}")
        if not 0 < self.C_o <= self.C_1:
            raise ValueError("need 0 < C_o <= C_1")
        if self.Lambda < 0:
            raise ValueError("Lambda must be non-negative")

    @property
    def p_star(self) -> float:
        return 2 * self.N / (self.N + 1)

    @property
    def subcritical(self) -> bool:
        return self.p <= self.p_star + 1e-12


@dataclass
class FluxModel:
    """``prototype`` (a = 1) or ``diagonal-matrix`` with ``a_i(x, t)``.

    ``coefficients`` maps cell coordinates (N, ...) and a time to an array
    (N, ...) of diagonal entries; ``bounds`` records their ellipticity range.
    """

    kind: str = "prototype"
    coefficients: Optional[Field] = None
    bounds: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("prototype", "diagonal-matrix"):
            raise ValueError(f"unknown flux model {self.kind!r}")
        if self.kind == "diagonal-matrix" and self.coefficients is None:
            raise ValueError("diagonal-matrix model needs coefficients")
        lo, hi = self.bounds
        if not 0 < lo <= hi:
            raise ValueError("coefficient bounds must satisfy 0 < lo <= hi")

    @classmethod
    def constant_diagonal(cls, diag: Sequence[float]) -> "FluxModel":
        a = np.asarray(diag, dtype=float)

        def coeff(x, t):
            return np.broadcast_to(a.reshape((-1,) + (1,) * (x.ndim - 1)), x.shape).copy()

        return cls("diagonal-matrix", coeff, (float(a.min()), float(a.max())))

    def structure(self, p: float, N: int) -> StructureParams:
        return StructureParams(p, N, *self.bounds)


@dataclass(frozen=True)
class SolverSettings:
    eps: Optional[float] = None  # None -> grid spacing
    tol: float = 1e-9
    max_newton: int = 40
    dt0: float = 1e-3
    dt_growth: float = 1.1
    dt_max: float = 1e-2
    max_halvings: int = 8
    store_every: int = 1
    stencil: str = "pair"

    def __post_init__(self):
        if self.tol <= 0 or self.dt0 <= 0 or self.dt_max < self.dt0 or self.dt_growth < 1:
            raise ValueError("invalid solver settings")


# --------------------------------------------------------------------------
# grid plumbing


class _Grid:
    """The domain grid padded by one ghost layer of fixed cells."""

    def __init__(self, domain: DomainMask, model: FluxModel, p: float, cfg: SolverSettings):
        self.domain = domain
        self.model = model
        self.p = p
        self.h = domain.h
        self.eps = self.h if cfg.eps is None else float(cfg.eps)
        N = domain.dim
        n = domain.grid_n
        self.shape = (n + 2,) * N
        self.core = (slice(1, n + 1),) * N
        self.unknown = np.zeros(self.shape, dtype=bool)
        self.unknown[self.core] = domain.inside
        self.fixed = ~self.unknown
        axes = [np.concatenate(([a[0] - self.h], a, [a[-1] + self.h])) for a in map(domain.axis, range(N))]
        self.coords = np.stack(np.meshgrid(*axes, indexing="ij"))
        self.fixed_coords = self.coords[:, self.fixed]
        self.unknown_coords = self.coords[:, self.unknown]
        self.stencil = Stencil(self.shape, self.h, cfg.stencil)
        self._coeff_cache: Dict[float, List[Optional[np.ndarray]]] = {}

    def boundary_values(self, g: Field, t: float) -> np.ndarray:
        return np.asarray(g(self.fixed_coords, t), dtype=float) * np.ones(self.fixed_coords.shape[1])

    def coefficients(self, t: float) -> List[Optional[np.ndarray]]:
        """Per-orientation diagonal coefficients on each stencil base region."""
        if self.model.kind == "prototype":
            return [None] * len(self.stencil.sigmas)
        hit = self._coeff_cache.get(t)
        if hit is not None:
            return hit
        a = np.asarray(self.model.coefficients(self.coords, t), dtype=float)
        a = np.where(self.fixed[None], 1.0, a)
        out = [a[(slice(None),) + base] for base, _ in self.stencil._slices]
        self._coeff_cache = {t: out}
        return out

    def pad(self, interior: np.ndarray) -> np.ndarray:
        u = np.zeros(self.shape)
        u[self.core] = interior
        return u


def _residual_parts(grid: _Grid, u: np.ndarray, coeffs, want_jacobian: bool):
    st = grid.stencil
    p, eps2 = grid.p, grid.eps ** 2
    fluxes, blocks = [], []
    for g, a in zip(st.gradients(u), coeffs):
        q = (g * g).sum(0) + eps2
        w = q ** ((p - 2) / 2)
        ag = g if a is None else a * g
        fluxes.append(w * ag)
        if want_jacobian:
            B = np.einsum("i...,j...->ij...", ag, g) * ((p - 2) / q)
            for i in range(st.ndim):
                B[i, i] += 1.0 if a is None else a[i]
            blocks.append(B * w)
    return st.divergence(fluxes), blocks


def _newton_step(grid: _Grid, u_old: np.ndarray, t_new: float, dt: float, g: Field,
                 source: Optional[Field], cfg: SolverSettings) -> Tuple[np.ndarray, List[float]]:
    u = u_old.copy()
    u[grid.fixed] = grid.boundary_values(g, t_new)
    coeffs = grid.coefficients(t_new)
    rhs = u_old[grid.unknown] / dt
    if source is not None:
        rhs = rhs + np.asarray(source(grid.unknown_coords, t_new), dtype=float)
    m = int(grid.unknown.sum())
    eye = sp.identity(m, format="csr") / dt

    def residual(v):
        div, _ = _residual_parts(grid, v, coeffs, False)
        return v[grid.unknown] / dt + div[grid.unknown] - rhs

    history: List[float] = []
    if m == 0:
        return u, history
    R = residual(u)
    for _ in range(cfg.max_newton):
        res = dt * float(np.abs(R).max())
        history.append(res)
        if res < cfg.tol:
            return u, history
        div, blocks = _residual_parts(grid, u, coeffs, True)
        J = eye + grid.stencil.hessian(blocks, grid.unknown)
        d = spla.spsolve(J.tocsc(), -R)
        norm0 = float(np.linalg.norm(R))
        lam = 1.0
        while True:
            trial = u.copy()
            trial[grid.unknown] += lam * d
            R_new = residual(trial)
            if np.linalg.norm(R_new) <= (1 - 1e-4 * lam) * norm0 or lam < 1e-3:
                break
            lam *= 0.5
        u, R = trial, R_new
    res = dt * float(np.abs(R).max())
    history.append(res)
    if res < cfg.tol:
        return u, history
    raise SolverError(f"Newton did not converge at t={t_new:g}, dt={dt:g}", history)


def step(state: np.ndarray, t: float, dt: float, domain: DomainMask, model: FluxModel, p: float,
         cfg: SolverSettings = SolverSettings(), g: Optional[Field] = None,
         source: Optional[Field] = None, _grid: Optional[_Grid] = None) -> np.ndarray:
    """Advance a field (shape ``domain.shape``) from ``t`` to ``t + dt``.

    Boundary values are taken from ``g`` (default: the domain's datum) at
    ``t + dt``.  On Newton failure the step is split into halves, up to
    ``cfg.max_halvings`` times.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = _grid or _Grid(domain, model, p, cfg)
    g = g or domain.boundary_datum
    u_old = grid.pad(state)
    u_old[grid.fixed] = grid.boundary_values(g, t)
    return grid_step(grid, u_old, t, dt, g, source, cfg)[grid.core]


def grid_step(grid: _Grid, u_old: np.ndarray, t: float, dt: float, g: Field,
              source: Optional[Field], cfg: SolverSettings, depth: int = 0) -> np.ndarray:
    try:
        u, _ = _newton_step(grid, u_old, t + dt, dt, g, source, cfg)
        return u
    except SolverError as exc:
        if depth >= cfg.max_halvings:
            raise
        log.debug("halving dt=%g at t=%g (%s)", dt, t, exc)
        mid = grid_step(grid, u_old, t, dt / 2, g, source, cfg, depth + 1)
        return grid_step(grid, mid, t + dt / 2, dt / 2, g, source, cfg, depth + 1)


# --------------------------------------------------------------------------
# trajectories


def time_grid(T: float, cfg: SolverSettings, anchors: Sequence[float] = ()) -> np.ndarray:
    """Greedy step sequence ``0 = t_0 < ... = T`` hitting every anchor exactly.

    The k-th step length is ``min(dt0 * growth^k, dt_max)`` cut short at the
    next anchor, so the sequence up to any anchor does not depend on ``T``
    or on later anchors.
    """
    if T <= 0:
        raise ValueError("final time must be positive")
    stops = sorted({float(a) for a in anchors if 0 < a < T} | {float(T)})
    times = [0.0]
    k = 0
    for stop in stops:
        while times[-1] < stop:
            dt = min(cfg.dt0 * cfg.dt_growth ** k, cfg.dt_max)
            t_next = times[-1] + dt
            # avoid a sliver step right before an anchor
            if t_next >= stop - 1e-3 * dt:
                t_next = stop
            times.append(t_next)
            k += 1
    return np.array(times)


@dataclass
class Trajectory:
    domain: DomainMask
    p: float
    times: np.ndarray
    fields: List[np.ndarray]
    eps: float
    model_kind: str = "prototype"
    settings: Optional[SolverSettings] = None
    step_times: Optional[np.ndarray] = None
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.domain.h

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} is not stored (nearest {self.times[k]:g})")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.fields[self.index_of(t)]

    def window(self, t_start: float, t_end: float, closed_start: bool = False) -> List[int]:
        tol = 1e-12 * max(1.0, abs(t_end))
        lo = self.times >= t_start - tol if closed_start else self.times > t_start + tol
        return [int(k) for k in np.nonzero(lo & (self.times <= t_end + tol))[0]]

    def array(self) -> np.ndarray:
        return np.stack(self.fields)

    # ---- I/O
    _MAGIC = b"WLTRAJ01"

    def save(self, path: str | Path) -> Path:
        """Flat binary checkpoint.

        Layout (little endian): magic[8]; int32 dim; int32 grid_n;
        int64 n_times; float64 h, eps, p, half_edge; float64 center[dim];
        uint8 inside[grid_n^dim]; float64 times[n_times];
        float64 fields[n_times, grid_n^dim] in row-major order.
        """
        path = Path(path)
        d = self.domain
        with path.open("wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<iiq", d.dim, d.grid_n, len(self.times)))
            fh.write(struct.pack("<4d", d.h, self.eps, self.p, d.half_edge))
            fh.write(np.asarray(d.center, dtype="<f8").tobytes())
            fh.write(d.inside.astype(np.uint8).tobytes())
            fh.write(np.asarray(self.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.array(), dtype="<f8").tobytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        raw = Path(path).read_bytes()
        if raw[:8] != cls._MAGIC:
            raise ValueError(f"{path} is not a trajectory checkpoint")
        off = 8
        dim, n, nt = struct.unpack_from("<iiq", raw, off)
        off += 16
        h, eps, p, half = struct.unpack_from("<4d", raw, off)
        off += 32
        center = tuple(np.frombuffer(raw, "<f8", dim, off))
        off += 8 * dim
        cells = n ** dim
        inside = np.frombuffer(raw, np.uint8, cells, off).astype(bool).reshape((n,) * dim)
        off += cells
        times = np.frombuffer(raw, "<f8", nt, off).copy()
        off += 8 * nt
        data = np.frombuffer(raw, "<f8", nt * cells, off).reshape((nt,) + (n,) * dim)
        domain = DomainMask(dim, center, half, n, inside)
        return cls(domain, p, times, [f.copy() for f in data], eps)

    def export_slice(self, path: str | Path, t: float, axis: int = 0, index: Optional[int] = None) -> Path:
        """CSV of one stored time: all cells in 1-D/2-D, a mid-plane in 3-D."""
        u = self.at(t)
        d = self.domain
        coords = d.coords()
        inside = d.inside
        if d.dim == 3:
            k = d.grid_n // 2 if index is None else index
            sl = [slice(None)] * 3
            sl[axis] = k
            sl = tuple(sl)
            u, inside = u[sl], inside[sl]
            coords = coords[(slice(None),) + sl]
        path = Path(path)
        names = [f"x{i + 1}" for i in range(coords.shape[0])]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["inside", "u"])
            for idx in np.ndindex(u.shape):
                w.writerow([repr(float(coords[(i,) + idx])) for i in range(coords.shape[0])]
                           + [int(inside[idx]), repr(float(u[idx]))])
        return path


def solve_cauchy_dirichlet(domain: DomainMask, model: FluxModel, p: float, T: float,
                           cfg: SolverSettings = SolverSettings(), g: Optional[Field] = None,
                           initial: Optional[Field | np.ndarray] = None,
                           source: Optional[Field] = None,
                           anchors: Sequence[float] = ()) -> Trajectory:
    """Solve on ``E x (0, T]`` with ``u = g`` off ``E`` and ``u(., 0) = initial``.

    ``initial`` defaults to ``g(., 0)``.  Every step is stored when
    ``cfg.store_every == 1``; anchors and ``T`` are always stored.
    """
    if not 1 < p < 2:
        raise ValueError(f"p must lie in (1, 2), got {p}")
    g = g or domain.boundary_datum
    grid = _Grid(domain, model, p, cfg)
    u = np.zeros(grid.shape)
    if initial is None:
        u[...] = np.asarray(g(grid.coords, 0.0), dtype=float) * np.ones(grid.shape)
    elif callable(initial):
        u[...] = np.asarray(initial(grid.coords, 0.0), dtype=float) * np.ones(grid.shape)
    else:
        init = np.asarray(initial, dtype=float)
        if init.shape != domain.shape:
            raise ValueError(f"initial field has shape {init.shape}, expected {domain.shape}")
        u[grid.core] = init
    u[grid.fixed] = grid.boundary_values(g, 0.0)
    steps = time_grid(T, cfg, anchors)
    keep = {float(a) for a in anchors} | {float(T)}
    times, fields = [0.0], [u[grid.core].copy()]
    for k in range(1, len(steps)):
        t0, t1 = steps[k - 1], steps[k]
        u = grid_step(grid, u, t0, t1 - t0, g, source, cfg)
        if k % cfg.store_every == 0 or t1 in keep:
            times.append(t1)
            fields.append(u[grid.core].copy())
    return Trajectory(domain, p, np.array(times), fields, grid.eps, model.kind, cfg, steps)


# --------------------------------------------------------------------------
# measurements


def _cylinder_selection(traj: Trajectory, cyl: Cylinder) -> Tuple[List[int], np.ndarray]:
    cells = traj.domain.cells_in(cyl.cube) & traj.domain.inside
    ks = traj.window(cyl.t_start, cyl.t_end)
    if not ks or not cells.any():
        raise GeometryError(
            f"cylinder {cyl} has no stored node inside E in the trajectory's range "
            f"[{traj.times[0]:g}, {traj.T:g}]")
    return ks, cells


def ess_osc(traj: Trajectory, cyl: Cylinder) -> Tuple[float, float, float]:
    """(max, min, max - min) over stored nodes of ``cyl`` that lie in E."""
    ks, cells = _cylinder_selection(traj, cyl)
    vals = np.stack([traj.fields[k][cells] for k in ks])
    hi, lo = float(vals.max()), float(vals.min())
    return hi, lo, hi - lo


@dataclass
class Truncation:
    """``u_k`` (or ``u_h``) and ``v = mu - u_k`` on a working cylinder."""

    mode: str
    level: float
    mu: float
    times: np.ndarray
    truncated: List[np.ndarray]
    v: List[np.ndarray]
    cube: Cube
    boundary_extreme: float

    def v_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} is not stored")
        return self.v[k]


def truncate_and_extend(traj: Trajectory, level: float, cube: Cube, t_start: float, t_end: float,
                        mode: str = "upper", boundary_tol: float = 1e-12) -> Truncation:
    """Truncate at ``level`` and extend by zero off ``E`` inside the working cylinder.

    upper: ``u_k = (u - k)_+`` on E, needs ``k >= sup`` of the lateral data.
    lower: ``u_h = (h - u)_+`` on E, needs ``h <= inf`` of the lateral data.
    The lateral data are the fixed values on complement cells of ``cube``.
    """
    if mode not in ("upper", "lower"):
        raise ValueError(f"mode must be 'upper' or 'lower', got {mode!r}")
    d = traj.domain
    in_cube = d.cells_in(cube)
    comp = in_cube & d.outside
    ks = traj.window(t_start, t_end, closed_start=True)
    if not ks:
        raise GeometryError("working cylinder holds no stored time")
    if comp.any():
        lateral = np.concatenate([traj.fields[k][comp] for k in ks])
        extreme = float(lateral.max() if mode == "upper" else lateral.min())
    else:
        extreme = -math.inf if mode == "upper" else math.inf
    if mode == "upper" and level < extreme - boundary_tol:
        raise ValueError(f"truncation level {level:g} is below the lateral sup {extreme:g}")
    if mode == "lower" and level > extreme + boundary_tol:
        raise ValueError(f"truncation level {level:g} is above the lateral inf {extreme:g}")
    sel = in_cube & d.inside
    trunc = []
    for k in ks:
        u = traj.fields[k]
        w = np.maximum(u - level, 0.0) if mode == "upper" else np.maximum(level - u, 0.0)
        w = np.where(sel, w, 0.0)
        trunc.append(w)
    mu = max(float(w[in_cube].max()) for w in trunc)
    v = [np.where(in_cube, mu - w, 0.0) for w in trunc]
    return Truncation(mode, level, mu, traj.times[ks], trunc, v, cube, extreme)
