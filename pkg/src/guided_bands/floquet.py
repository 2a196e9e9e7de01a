"""Floquet fibers of the unperturbed periodic host.

The fiber matrix at quasimomentum ``k`` acts on functions on the quotient
vertex set.  The first ``d`` components of ``k`` are the guide quasimomentum
``theta``; the rest (``phi``) diagonalize the transverse periodicity of the
cylinder.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .graph_model import PeriodicGraphSpec

#: band-width threshold below which a band is reported as flat
TOL_FLAT = 1e-6


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float
    flat: bool = False
    multiplicity: int = 1

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class BandSet:
    bands: list[Band] = field(default_factory=list)

    def __post_init__(self):
        self.bands = sorted(self.bands, key=lambda b: (b.lo, b.hi))

    def __iter__(self):
        return iter(self.bands)

    def __len__(self):
        return len(self.bands)

    def __getitem__(self, i):
        return self.bands[i]

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return any(b.lo - tol <= x <= b.hi + tol for b in self.bands)

    def measure(self) -> float:
        return sum(b.width for b in merge_intervals(self).bands)

    @classmethod
    def from_intervals(cls, intervals, tol_flat: float = TOL_FLAT) -> "BandSet":
        return cls([Band(float(lo), float(hi), (hi - lo) < tol_flat) for lo, hi in intervals])


def merge_intervals(bands: BandSet | Sequence[Band], tol: float = 0.0, tol_flat: float = TOL_FLAT) -> BandSet:
    """Union of overlapping intervals."""
    items = sorted(((b.lo, b.hi) for b in bands))
    merged: list[list[float]] = []
    for lo, hi in items:
        if merged and lo <= merged[-1][1] + tol:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return BandSet.from_intervals(merged, tol_flat)


def torus_axis(n: int) -> np.ndarray:
    """``n`` points on (-pi, pi] always containing 0 and pi.

    Odd ``n`` gives ``linspace(-pi, pi, n)`` (the endpoints coincide on the
    torus); even ``n`` gives the uniform grid ``-pi + 2 pi k / n``, k = 1..n.
    """
    if n < 2:
        raise ValueError("at least 2 grid points per dimension are required")
    if n % 2:
        return np.linspace(-np.pi, np.pi, n)
    return -np.pi + 2 * np.pi * np.arange(1, n + 1) / n


def _edge_arrays(spec: PeriodicGraphSpec):
    pos = spec.position()
    rows, cols, taus, mults = [], [], [], []
    for u, v, tau, m in spec.oriented_edges():
        rows.append(pos[u])
        cols.append(pos[v])
        taus.append(tau)
        mults.append(m)
    deg = np.array([spec.degrees()[v] for v in spec.vertex_ids], dtype=float)
    return (np.array(rows, dtype=int), np.array(cols, dtype=int),
            np.array(taus, dtype=float).reshape(len(rows), spec.dim_total),
            np.array(mults, dtype=float), deg)


def assemble_full_fiber_batch(spec: PeriodicGraphSpec, ks: np.ndarray) -> np.ndarray:
    """Fiber matrices for an array of full quasimomenta ``ks`` of shape (n, D)."""
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    rows, cols, taus, mults, deg = _edge_arrays(spec)
    nu = spec.nu
    out = np.zeros((ks.shape[0], nu, nu), dtype=complex)
    out[:, np.arange(nu), np.arange(nu)] = deg
    if len(rows):
        phases = np.exp(1j * ks @ taus.T) * mults  # (n, E)
        for e in range(len(rows)):
            out[:, rows[e], cols[e]] -= phases[:, e]
    return out


def assemble_full_fiber(spec: PeriodicGraphSpec, theta: Sequence[float], phi: Sequence[float] = ()) -> np.ndarray:
    """Fiber Laplacian on the quotient vertices at ``(theta, phi)``.

    Diagonal entries are vertex degrees; an oriented edge ``(v, u)`` with index
    ``tau`` contributes ``-exp(i <tau, (theta, phi)>)`` to entry ``(v, u)``.
    """
    k = np.concatenate([np.atleast_1d(np.asarray(theta, float)), np.atleast_1d(np.asarray(phi, float))])
    if k.size != spec.dim_total:
        raise ValueError(f"quasimomentum must have {spec.dim_total} components")
    return assemble_full_fiber_batch(spec, k[None, :])[0]


def _grid(dims: int, n: int) -> np.ndarray:
    ax = torus_axis(n)
    mesh = np.meshgrid(*([ax] * dims), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _branch_value(spec, k_fixed, free_slice, branch, sign):
    def f(x):
        k = k_fixed.copy()
        k[free_slice] = x
        return sign * np.linalg.eigvalsh(assemble_full_fiber_batch(spec, k[None, :])[0])[branch]
    return f


def _refine(spec, k_fixed, free_slice, x0, branch, sign, h):
    """Polish a grid extremum of eigenvalue branch ``branch`` (minimize sign*value)."""
    f = _branch_value(spec, k_fixed, free_slice, branch, sign)
    x0 = np.atleast_1d(x0)
    if x0.size == 1:
        res = optimize.minimize_scalar(lambda x: f(np.array([x])), bounds=(x0[0] - h, x0[0] + h),
                                       method="bounded", options={"xatol": 1e-10})
        return min(f(x0), res.fun)
    res = optimize.minimize(f, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 400})
    return min(f(x0), res.fun)


def unperturbed_bands(spec: PeriodicGraphSpec, grid_points_per_dim: int = 128, refine: bool = True,
                      tol_flat: float = TOL_FLAT) -> tuple[BandSet, float]:
    """Per-branch band intervals of the host and ``rho = sup sigma``.

    Eigenvalues of the fiber are computed on a uniform torus grid (containing 0
    and pi in every direction); branch extrema are then polished locally.
    """
    D = spec.dim_total
    ks = _grid(D, grid_points_per_dim)
    ev = np.linalg.eigvalsh(assemble_full_fiber_batch(spec, ks))  # (n, nu)
    lo = ev.min(axis=0)
    hi = ev.max(axis=0)
    if refine:
        h = 2 * np.pi / grid_points_per_dim
        full = slice(0, D)
        for b in range(spec.nu):
            k0 = ks[np.argmin(ev[:, b])]
            lo[b] = min(lo[b], _refine(spec, k0.copy(), full, k0, b, 1.0, h))
            k1 = ks[np.argmax(ev[:, b])]
            hi[b] = max(hi[b], -_refine(spec, k1.copy(), full, k1, b, -1.0, h))
    bands = BandSet([Band(float(a), float(b), (b - a) < tol_flat) for a, b in zip(lo, hi)])
    return bands, float(hi.max())


def essential_spectrum_at(spec: PeriodicGraphSpec, d: int, theta: Sequence[float], phi_grid: int | None = None,
                          refine: bool = True, tol_flat: float = TOL_FLAT) -> tuple[BandSet, float, float]:
    """Spectrum of the unperturbed cylinder fiber at guide quasimomentum ``theta``.

    Returns the union of per-branch intervals over the transverse torus plus
    ``m_minus`` and ``m_plus``, its lower and upper endpoints.
    """
    theta = np.atleast_1d(np.asarray(theta, float))
    if theta.size != d:
        raise ValueError(f"theta must have {d} components")
    T = spec.dim_total - d
    if phi_grid is None:
        phi_grid = default_phi_grid(T)
    phis = _grid(T, phi_grid)
    ks = np.hstack([np.broadcast_to(theta, (phis.shape[0], d)), phis])
    ev = np.linalg.eigvalsh(assemble_full_fiber_batch(spec, ks))
    lo = ev.min(axis=0)
    hi = ev.max(axis=0)
    if refine:
        h = 2 * np.pi / phi_grid
        free = slice(d, spec.dim_total)
        for b in range(spec.nu):
            k0 = ks[np.argmin(ev[:, b])].copy()
            lo[b] = min(lo[b], _refine(spec, k0, free, k0[free], b, 1.0, h))
            k1 = ks[np.argmax(ev[:, b])].copy()
            hi[b] = max(hi[b], -_refine(spec, k1, free, k1[free], b, -1.0, h))
    intervals = merge_intervals([Band(float(a), float(b)) for a, b in zip(lo, hi)], tol_flat=tol_flat)
    return intervals, float(lo.min()), float(hi.max())


def default_phi_grid(transverse_dims: int) -> int:
    return 256 if transverse_dims == 1 else 32
