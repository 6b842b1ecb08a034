"""Spatial domains, cubes and space-time cylinders on a uniform grid.

A domain is described by a plain ``dict`` descriptor with a ``kind`` key
(see :data:`DESCRIPTOR_KINDS`) and rasterised by cell-centre membership
into a :class:`DomainMask`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

Point = Tuple[float, ...]

DESCRIPTOR_KINDS = (
    "full-cube",
    "half-space",
    "spike",
    "corkscrew",
    "slab-with-cusp",
    "union",
)


class GeometryError(ValueError):
    """Raised for degenerate descriptors or points that violate a precondition."""


@dataclass(frozen=True)
class Cube:
    """Axis-aligned cube ``K_rho(x_o)`` of edge ``2 * half_edge``."""

    center: Point
    half_edge: float

    def __post_init__(self):
        if not self.half_edge > 0:
            raise GeometryError(f"cube half-edge must be positive, got {self.half_edge}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dim(self) -> int:
        return len(self.center)

    def scaled(self, factor: float) -> "Cube":
        return Cube(self.center, self.half_edge * factor)

    def contains(self, coords: np.ndarray, closed: bool = True) -> np.ndarray:
        """Membership of points given as an array of shape (N, ...)."""
        dist = np.zeros(coords.shape[1:])
        for i, c in enumerate(self.center):
            dist = np.maximum(dist, np.abs(coords[i] - c))
        # tolerance keeps grid-aligned faces deterministic under round-off
        tol = 1e-9 * self.half_edge
        if closed:
            return dist <= self.half_edge + tol
        return dist < self.half_edge - tol

    def inside_of(self, other: "Cube") -> bool:
        return all(
            abs(c - o) + self.half_edge <= other.half_edge * (1 + 1e-12)
            for c, o in zip(self.center, other.center)
        )


@dataclass(frozen=True)
class Cylinder:
    """Backward space-time cylinder ``cube x (t_end - duration, t_end]``."""

    cube: Cube
    t_end: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise GeometryError(f"cylinder duration must be positive, got {self.duration}")

    @property
    def t_start(self) -> float:
        return self.t_end - self.duration


@dataclass
class BoundaryDatum:
    """Boundary/initial datum ``g(x, t)``.

    ``evaluator`` receives coordinates of shape (N, ...) and a time and
    returns values of shape (...).
    """

    evaluator: Callable[[np.ndarray, float], np.ndarray]
    holder_exponent: Optional[float] = None
    holder_constant: Optional[float] = None
    modulus_bound: Optional[Callable[[float], float]] = None
    description: Dict[str, Any] = field(default_factory=dict)

    def __call__(self, coords: np.ndarray, t: float) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.evaluator(coords, t), dtype=float), coords.shape[1:])


def zero_datum() -> BoundaryDatum:
    return BoundaryDatum(lambda x, t: np.zeros(x.shape[1:]), holder_exponent=1.0,
                         holder_constant=0.0, description={"kind": "zero"})


def build_datum(spec: Optional[Mapping[str, Any]]) -> BoundaryDatum:
    """Datum from a descriptor.

    Kinds: ``zero``; ``constant`` (value); ``far-field`` (value, center,
    radius, width: zero inside the ball of ``radius`` around ``center``,
    ramping linearly to ``value`` over ``width``); ``holder`` (amplitude,
    exponent, center: ``amplitude * |x - center|^exponent``); ``affine``
    (value, gradient).
    """
    if spec is None:
        return zero_datum()
    kind = spec.get("kind", "zero")
    desc = dict(spec)
    if kind == "zero":
        return zero_datum()
    if kind == "constant":
        value = float(spec["value"])
        return BoundaryDatum(lambda x, t: np.full(x.shape[1:], value), 1.0, 0.0, description=desc)
    if kind == "far-field":
        value = float(spec.get("value", 1.0))
        center = np.asarray(spec["center"], dtype=float)
        radius = float(spec["radius"])
        width = float(spec.get("width", radius))
        if radius < 0 or width <= 0:
            raise GeometryError("far-field datum needs radius >= 0 and width > 0")

        def far(x, t):
            r = _radius(x, center)
            return value * np.clip((r - radius) / width, 0.0, 1.0)

        return BoundaryDatum(far, 1.0, abs(value) / width, description=desc)
    if kind == "holder":
        amp = float(spec.get("amplitude", 1.0))
        expo = float(spec["exponent"])
        center = np.asarray(spec["center"], dtype=float)
        if not 0 < expo <= 1:
            raise GeometryError(f"holder exponent must lie in (0, 1], got {expo}")
        return BoundaryDatum(lambda x, t: amp * _radius(x, center) ** expo, expo, abs(amp),
                             description=desc)
    if kind == "affine":
        value = float(spec.get("value", 0.0))
        grad = np.asarray(spec["gradient"], dtype=float)

        def affine(x, t):
            return value + np.tensordot(grad, x, axes=(0, 0))

        return BoundaryDatum(affine, 1.0, float(np.linalg.norm(grad)), description=desc)
    raise GeometryError(f"unknown datum kind {kind!r}")


def _radius(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    return np.sqrt(sum((x[i] - center[i]) ** 2 for i in range(x.shape[0])))


@dataclass
class DomainMask:
    """Cell-centre rasterisation of a domain ``E`` inside a bounding cube."""

    dim: int
    center: Point
    half_edge: float
    grid_n: int
    inside: np.ndarray
    boundary_datum: BoundaryDatum = field(default_factory=zero_datum)
    descriptor: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.inside = np.asarray(self.inside, dtype=bool)
        if self.inside.shape != (self.grid_n,) * self.dim:
            raise GeometryError(
                f"inside field has shape {self.inside.shape}, expected {(self.grid_n,) * self.dim}"
            )
        if not self.inside.any():
            raise GeometryError("domain has no inside cell")

    @property
    def h(self) -> float:
        return 2.0 * self.half_edge / self.grid_n

    @property
    def bounding_cube(self) -> Cube:
        return Cube(self.center, self.half_edge)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.inside.shape

    def axis(self, i: int) -> np.ndarray:
        return self.center[i] - self.half_edge + (np.arange(self.grid_n) + 0.5) * self.h

    def coords(self) -> np.ndarray:
        """Cell-centre coordinates, shape (N, n, ..., n)."""
        return np.stack(np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij"))

    @property
    def outside(self) -> np.ndarray:
        return ~self.inside

    def has_complement(self) -> bool:
        return bool(self.outside.any())

    def boundary_cells(self) -> np.ndarray:
        """Inside cells with at least one face neighbour outside."""
        if not self.has_complement():
            return np.zeros_like(self.inside)
        grown = ndimage.binary_dilation(self.outside, structure=ndimage.generate_binary_structure(self.dim, 1))
        return self.inside & grown

    def volume_fraction(self) -> float:
        return float(self.inside.mean())

    def cells_in(self, cube: Cube, closed: bool = True) -> np.ndarray:
        return cube.contains(self.coords(), closed=closed)

    def nearest_cell(self, point: Sequence[float]) -> Tuple[int, ...]:
        idx = []
        for i, x in enumerate(point):
            k = int(math.floor((x - (self.center[i] - self.half_edge)) / self.h))
            idx.append(min(max(k, 0), self.grid_n - 1))
        return tuple(idx)

    def cell_center(self, index: Sequence[int]) -> Point:
        return tuple(self.axis(i)[k] for i, k in enumerate(index))

    def on_boundary(self, point: Sequence[float]) -> bool:
        """True when the closed cube of half-edge ``h`` around ``point``
        holds both inside and outside cell centres."""
        if len(point) != self.dim:
            raise GeometryError(f"point {tuple(point)} has wrong dimension for a {self.dim}-d domain")
        box = Cube(tuple(point), self.h).contains(self.coords())
        return bool(box.any() and self.inside[box].any() and self.outside[box].any())

    def to_pgm(self, path: str | Path) -> Path:
        """Dump the mask (2-D, or the middle slice in 3-D) as a plain PGM."""
        img = self.inside
        while img.ndim > 2:
            img = img[img.shape[0] // 2]
        if img.ndim == 1:
            img = img[None, :]
        # image rows run along -x_2 so the picture has the usual orientation
        pix = np.flipud(img.T).astype(np.uint8) * 255
        path = Path(path)
        lines = [f"P2\n{pix.shape[1]} {pix.shape[0]}\n255\n"]
        lines += [" ".join(str(v) for v in row) + "\n" for row in pix]
        path.write_text("".join(lines))
        return path


# --------------------------------------------------------------------------
# descriptors


def _vec(value: Any, dim: int, name: str) -> np.ndarray:
    if np.isscalar(value):
        arr = np.full(dim, float(value))
    else:
        arr = np.asarray(value, dtype=float).ravel()
    if arr.size != dim:
        raise GeometryError(f"{name} must have {dim} components, got {arr.size}")
    return arr


def _unit(value: Any, dim: int, name: str) -> np.ndarray:
    v = _vec(value, dim, name)
    n = np.linalg.norm(v)
    if n == 0:
        raise GeometryError(f"{name} must be non-zero")
    return v / n


def _membership(desc: Mapping[str, Any], x: np.ndarray) -> np.ndarray:
    kind = desc["kind"]
    dim = x.shape[0]
    if kind == "full-cube":
        return np.ones(x.shape[1:], dtype=bool)
    if kind == "half-space":
        # E = {x : (x - point) . normal < 0}
        normal = _unit(desc.get("normal", [1.0] + [0.0] * (dim - 1)), dim, "normal")
        point = _vec(desc.get("point", 0.0), dim, "point")
        return np.tensordot(normal, x - point.reshape((dim,) + (1,) * (x.ndim - 1)), axes=(0, 0)) < 0
    if kind == "spike":
        # E near the tip is the cone of opening angle beta around -axis
        beta = float(desc["beta"])
        if not 0 < beta < math.pi:
            raise GeometryError(f"spike opening angle beta must lie in (0, pi), got {beta}")
        tip = _vec(desc.get("tip", 0.0), dim, "tip")
        axis = _unit(desc.get("axis", [1.0] + [0.0] * (dim - 1)), dim, "axis")
        rel = x - tip.reshape((dim,) + (1,) * (x.ndim - 1))
        along = -np.tensordot(axis, rel, axes=(0, 0))
        r = np.sqrt((rel ** 2).sum(0))
        inside = along > r * math.cos(beta / 2)
        length = desc.get("length")
        if length is not None:
            # spike of finite length attached to the half-space behind it
            inside |= along > float(length)
        return inside
    if kind == "corkscrew":
        M = float(desc["M"])
        r_o = float(desc["r_o"])
        if M < 4 or r_o <= 0:
            raise GeometryError("corkscrew descriptor needs M >= 4 and r_o > 0")
        x_o = _vec(desc.get("point", 0.0), dim, "point")
        direction = _unit(desc.get("direction", [1.0] + [0.0] * (dim - 1)), dim, "direction")
        levels = int(desc.get("levels", 24))
        comp = np.zeros(x.shape[1:], dtype=bool)
        for k in range(levels):
            r_k = r_o * 0.5 ** k
            a_k = x_o + 0.5 * r_k * direction
            comp |= _radius(x, a_k) <= 1.5 * r_k / M
        # complement also holds the far half-space so that E is connected
        comp |= np.tensordot(direction, x - x_o.reshape((dim,) + (1,) * (x.ndim - 1)), axes=(0, 0)) >= r_o
        return ~comp
    if kind == "slab-with-cusp":
        # complement = slab {x.axis >= slab_at} union cusp from the tip
        tip = _vec(desc.get("tip", 0.0), dim, "tip")
        axis = _unit(desc.get("axis", [1.0] + [0.0] * (dim - 1)), dim, "axis")
        width = float(desc.get("width", 1.0))
        power = float(desc.get("power", 2.0))
        slab_at = float(desc.get("slab_at", 0.5))
        if power <= 1 or width <= 0 or slab_at <= 0:
            raise GeometryError("slab-with-cusp needs power > 1, width > 0, slab_at > 0")
        rel = x - tip.reshape((dim,) + (1,) * (x.ndim - 1))
        along = np.tensordot(axis, rel, axes=(0, 0))
        perp = np.sqrt(np.maximum((rel ** 2).sum(0) - along ** 2, 0.0))
        cusp = (along >= 0) & (perp <= width * np.maximum(along, 0.0) ** power)
        return ~(cusp | (along >= slab_at))
    if kind == "union":
        shapes = desc.get("shapes")
        if not shapes:
            raise GeometryError("union descriptor needs a non-empty 'shapes' list")
        inside = np.zeros(x.shape[1:], dtype=bool)
        for s in shapes:
            c = _vec(s["center"], dim, "shape center")
            size = float(s["size"])
            if size <= 0:
                raise GeometryError("shape size must be positive")
            if s.get("shape", "ball") == "ball":
                inside |= _radius(x, c) < size
            elif s["shape"] == "cube":
                inside |= Cube(tuple(c), size).contains(x, closed=False)
            else:
                raise GeometryError(f"unknown shape {s['shape']!r}")
        if desc.get("invert", False):
            inside = ~inside
        return inside
    raise GeometryError(f"unknown descriptor kind {kind!r}; expected one of {DESCRIPTOR_KINDS}")


def membership(desc: Mapping[str, Any], points: np.ndarray) -> np.ndarray:
    """Continuum membership of points (shape (N, ...)) in the described set."""
    return _membership(desc, np.asarray(points, dtype=float))


def build_domain(desc: Mapping[str, Any], datum: Optional[BoundaryDatum] = None) -> DomainMask:
    """Rasterise a descriptor.

    Required keys: ``kind``, ``dim``, ``grid_n``; optional ``center`` and
    ``half_edge`` of the bounding cube (defaults: origin, 1).
    """
    desc = dict(desc)
    if "kind" not in desc:
        raise GeometryError("descriptor is missing the 'kind' field")
    dim = int(desc.get("dim", 2))
    if dim not in (1, 2, 3):
        raise GeometryError(f"dim must be 1, 2 or 3, got {dim}")
    grid_n = int(desc.get("grid_n", 64))
    if grid_n < 8:
        raise GeometryError(f"grid_n must be at least 8, got {grid_n}")
    center = tuple(_vec(desc.get("center", 0.0), dim, "center"))
    half_edge = float(desc.get("half_edge", 1.0))
    if half_edge <= 0:
        raise GeometryError("half_edge must be positive")
    h = 2 * half_edge / grid_n
    axes = [center[i] - half_edge + (np.arange(grid_n) + 0.5) * h for i in range(dim)]
    x = np.stack(np.meshgrid(*axes, indexing="ij"))
    inside = _membership(desc, x)
    if not inside.any():
        raise GeometryError(f"descriptor {desc['kind']!r} yields an empty domain at grid_n={grid_n}")
    if desc["kind"] != "full-cube" and inside.all():
        raise GeometryError(
            f"descriptor {desc['kind']!r} promises a complement but none is resolved at grid_n={grid_n}"
        )
    return DomainMask(dim, center, half_edge, grid_n, inside, datum or zero_datum(), desc)


# --------------------------------------------------------------------------
# corkscrew condition


@dataclass
class CorkscrewReport:
    x_o: Point
    M: float
    scales: List[float]
    passed: List[bool]
    resolvable: List[bool]
    witnesses: List[Optional[Point]]

    @property
    def all_resolvable_pass(self) -> bool:
        return all(p for p, r in zip(self.passed, self.resolvable) if r)


def corkscrew_check(domain: DomainMask, x_o: Sequence[float], M: float, r_o: float,
                    scales: Sequence[float], strict: bool = True) -> CorkscrewReport:
    """Outer corkscrew test at ``x_o`` over the given radii.

    For each ``r`` looks for a complement cell ``a`` with
    ``r/M < |a - x_o| < r`` and ``dist(a, dE) > r/M``, where the distance
    comes from the Euclidean distance transform of the complement (minus
    half a cell, so the test is conservative).  A scale counts as
    resolvable when ``r/M`` spans at least one cell.
    """
    if M < 2:
        raise GeometryError(f"corkscrew constant M must be >= 2, got {M}")
    x_o = tuple(float(v) for v in x_o)
    if strict and not domain.on_boundary(x_o):
        raise GeometryError(f"point {x_o} is not on the discrete boundary of the domain")
    if any(not 0 < r < r_o for r in scales):
        raise GeometryError("corkscrew scales must lie in (0, r_o)")
    h = domain.h
    comp = domain.outside
    dist = ndimage.distance_transform_edt(comp) * h - 0.5 * h
    x = domain.coords()
    rad = _radius(x, np.asarray(x_o))
    passed, resolv, wit = [], [], []
    for r in scales:
        cand = comp & (rad > r / M) & (rad < r) & (dist > r / M)
        resolv.append(r / M >= h)
        if cand.any():
            flat = np.where(cand, dist, -np.inf)
            idx = np.unravel_index(int(np.argmax(flat)), flat.shape)
            passed.append(True)
            wit.append(domain.cell_center(idx))
        else:
            passed.append(False)
            wit.append(None)
    return CorkscrewReport(x_o, M, list(scales), passed, resolv, wit)


# --------------------------------------------------------------------------
# intrinsic cylinders


def intrinsic_cylinder(x_o: Sequence[float], t_o: float, rho: float, omega_o: float,
                       c: float, p: float) -> Cylinder:
    """``K_rho(x_o) x (t_o - c/2 omega_o^(2-p) rho^p, t_o]``."""
    if not 1 < p < 2:
        raise GeometryError(f"intrinsic cylinders need 1 < p < 2, got {p}")
    if rho <= 0 or omega_o <= 0 or c <= 0:
        raise GeometryError("rho, omega_o and c must be positive")
    duration = 0.5 * c * omega_o ** (2 - p) * rho ** p
    return Cylinder(Cube(tuple(x_o), rho), float(t_o), duration)
