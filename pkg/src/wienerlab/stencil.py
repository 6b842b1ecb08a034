"""One-sided difference stencils on uniform cell-centred grids.

Every discrete gradient in the package is built from the same family of
one-sided stencils.  For an orientation ``sigma`` in ``{-1, +1}^N`` the
gradient at cell ``c`` is

    g_i = sigma_i * (u[c + sigma_i e_i] - u[c]) / h

and energies/fluxes are averaged over a set of orientations with equal
weights.  ``"pair"`` uses the forward and the backward orientation (in 2-D
this is exactly P1 finite elements on a triangulated grid), ``"all"`` uses
all ``2^N`` sign choices.
"""
from __future__ import annotations

import itertools
from typing import Dict, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

Orientation = Tuple[int, ...]


def orientations(ndim: int, mode: str = "pair") -> List[Orientation]:
    if mode == "pair":
        return [(1,) * ndim, (-1,) * ndim]
    if mode == "forward":
        return [(1,) * ndim]
    if mode == "all":
        return [tuple(s) for s in itertools.product((1, -1), repeat=ndim)]
    raise ValueError(f"unknown stencil mode {mode!r}")


def _base_slices(shape: Sequence[int], sigma: Orientation) -> Tuple[slice, ...]:
    return tuple(slice(0, n - 1) if s > 0 else slice(1, n) for n, s in zip(shape, sigma))


def _shifted(base: Tuple[slice, ...], axis: int, step: int) -> Tuple[slice, ...]:
    out = list(base)
    sl = base[axis]
    out[axis] = slice(sl.start + step, sl.stop + step)
    return tuple(out)


class Stencil:
    """Gradient, divergence and Hessian assembly for one grid shape."""

    def __init__(self, shape: Sequence[int], h: float, mode: str = "pair"):
        self.shape = tuple(int(n) for n in shape)
        self.ndim = len(self.shape)
        self.h = float(h)
        self.mode = mode
        self.sigmas = orientations(self.ndim, mode)
        self.weight = 1.0 / len(self.sigmas)
        self._slices = []
        for sigma in self.sigmas:
            base = _base_slices(self.shape, sigma)
            nbrs = [_shifted(base, i, sigma[i]) for i in range(self.ndim)]
            self._slices.append((base, nbrs))

    def gradients(self, u: np.ndarray) -> List[np.ndarray]:
        """One array of shape (N, *region) per orientation."""
        out = []
        for sigma, (base, nbrs) in zip(self.sigmas, self._slices):
            uc = u[base]
            g = np.empty((self.ndim,) + uc.shape)
            for i in range(self.ndim):
                g[i] = (u[nbrs[i]] - uc) * (sigma[i] / self.h)
            out.append(g)
        return out

    def divergence(self, fluxes: Sequence[np.ndarray]) -> np.ndarray:
        """Adjoint of :meth:`gradients`, weighted by the orientation weight.

        Returns ``sum_sigma w * D_sigma^T F_sigma`` on the full grid.
        """
        out = np.zeros(self.shape)
        for sigma, (base, nbrs), F in zip(self.sigmas, self._slices, fluxes):
            for i in range(self.ndim):
                fi = F[i] * (self.weight * sigma[i] / self.h)
                out[base] -= fi
                out[nbrs[i]] += fi
        return out

    def hessian(self, blocks: Sequence[np.ndarray], unknown: np.ndarray) -> sp.csr_matrix:
        """Assemble ``sum_sigma w D_sigma^T B_sigma D_sigma`` on unknown cells.

        ``blocks[k]`` has shape (N, N, *region) and holds the per-cell
        Jacobian of the flux with respect to the gradient.  The matrix need
        not be symmetric.
        """
        coeffs: Dict[Tuple[int, ...], np.ndarray] = {}

        def acc(offset, where, values):
            arr = coeffs.get(offset)
            if arr is None:
                arr = coeffs[offset] = np.zeros(self.shape)
            arr[where] += values

        zero = (0,) * self.ndim
        for sigma, (base, nbrs), B in zip(self.sigmas, self._slices, blocks):
            for i in range(self.ndim):
                ei = np.zeros(self.ndim, dtype=int)
                ei[i] = sigma[i]
                for j in range(self.ndim):
                    ej = np.zeros(self.ndim, dtype=int)
                    ej[j] = sigma[j]
                    w = B[i, j] * (self.weight * sigma[i] * sigma[j] / self.h ** 2)
                    # H += w (e_nb_i - e_c)(e_nb_j - e_c)^T
                    acc(zero, base, w)
                    acc(tuple(ej), base, -w)
                    acc(tuple(-ei), nbrs[i], -w)
                    acc(tuple(ej - ei), nbrs[i], w)
        return _to_csr(coeffs, unknown)


def _to_csr(coeffs: Dict[Tuple[int, ...], np.ndarray], unknown: np.ndarray) -> sp.csr_matrix:
    shape = unknown.shape
    index = np.full(shape, -1, dtype=np.int64)
    cells = np.nonzero(unknown)
    m = cells[0].size
    index[cells] = np.arange(m)
    rows, cols, vals = [], [], []
    for offset, arr in coeffs.items():
        nb = tuple(c + o for c, o in zip(cells, offset))
        valid = np.ones(m, dtype=bool)
        for ax, n in enumerate(shape):
            valid &= (nb[ax] >= 0) & (nb[ax] < n)
        src = np.nonzero(valid)[0]
        nb_idx = index[tuple(a[src] for a in nb)]
        keep = nb_idx >= 0
        src = src[keep]
        rows.append(src)
        cols.append(nb_idx[keep])
        vals.append(arr[tuple(c[src] for c in cells)])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
