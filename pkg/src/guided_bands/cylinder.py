"""Finite sections of the fiber Laplacian on the perturbed cylinder.

Rows are laid out as ``cell * nu + q`` for host vertex ``q`` in transverse cell
``cell`` of the window ``{-W..W}^(D-d)``, followed by the guide vertices that
are not attached to the host.  Attached guide vertices share the row of their
host image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .floquet import unperturbed_bands
from .graph_model import (GuideSpec, IndexedEdge, PeriodicGraphSpec, QuotientVertex)

BOUNDARIES = ("periodic", "dirichlet")

#: outer fraction of transverse cells used by the localization filter
SHELL_FRACTION = 0.2
#: maximal relative l2 mass allowed in the outer shell
SHELL_MASS = 1e-4


class WindowError(ValueError):
    pass


def default_half_width(transverse_dims: int) -> int:
    return {1: 50, 2: 12}.get(transverse_dims, 4)


@dataclass(frozen=True)
class CylinderWindow:
    """Truncation of the cylinder to ``2W+1`` cells per transverse direction."""

    half_width: int
    boundary: str
    nu: int
    transverse_dims: int
    cells: np.ndarray            # (n_cells, D-d) integer cell coordinates
    guide_rows: dict             # guide vertex -> row
    host_vertex_ids: tuple
    n: int

    @classmethod
    def build(cls, spec: PeriodicGraphSpec, guide: GuideSpec, half_width: int | None = None,
              boundary: str = "periodic") -> "CylinderWindow":
        T = spec.dim_total - guide.dim_guide
        W = default_half_width(T) if half_width is None else int(half_width)
        if W < 1:
            raise WindowError("window half width must be positive")
        if boundary not in BOUNDARIES:
            raise WindowError(f"boundary must be one of {BOUNDARIES}")
        d = guide.dim_guide
        reach = max((max((abs(x) for x in e.index[d:]), default=0) for e in spec.quotient_edges), default=0)
        if W < reach:
            raise WindowError(f"window too small: W={W} < max transverse index {reach}")
        axis = np.arange(-W, W + 1)
        mesh = np.meshgrid(*([axis] * T), indexing="ij")
        cells = np.stack([m.ravel() for m in mesh], axis=-1)
        nu = spec.nu
        pos = spec.position()
        rows = {}
        n = cells.shape[0] * nu
        att = guide.attached
        for v in guide.vertices:
            if v in att:
                off = np.asarray(att[v].transverse_offset)
                if np.any(np.abs(off) > W):
                    raise WindowError(f"attachment of {v!r} lies outside the window")
                rows[v] = cls._cell_index(off, W) * nu + pos[att[v].lattice_vertex]
            else:
                rows[v] = n
                n += 1
        return cls(W, boundary, nu, T, cells, rows, spec.vertex_ids, n)

    @staticmethod
    def _cell_index(cell, W):
        idx = 0
        for c in np.atleast_1d(cell):
            idx = idx * (2 * W + 1) + int(c) + W
        return idx

    @property
    def n_host(self) -> int:
        return self.cells.shape[0] * self.nu

    def host_row(self, q_index: int, cell: Sequence[int]) -> int:
        return self._cell_index(cell, self.half_width) * self.nu + q_index

    def shell_mask(self) -> np.ndarray:
        """Rows belonging to the outer ``SHELL_FRACTION`` of transverse cells."""
        W = self.half_width
        outer = np.max(np.abs(self.cells), axis=1) > (1 - SHELL_FRACTION) * W
        mask = np.zeros(self.n, dtype=bool)
        mask[: self.n_host] = np.repeat(outer, self.nu)
        return mask

    def localized(self, vectors: np.ndarray) -> np.ndarray:
        """Localization filter applied to the columns of ``vectors``."""
        mask = self.shell_mask()
        total = np.sum(np.abs(vectors) ** 2, axis=0)
        shell = np.sum(np.abs(vectors[mask]) ** 2, axis=0)
        return shell < SHELL_MASS * total


def _host_part(spec: PeriodicGraphSpec, d: int, theta, window: CylinderWindow, select: str) -> np.ndarray:
    """Host contribution restricted to ``select`` in {'all', 'bridges', 'nonbridges'}."""
    theta = np.atleast_1d(np.asarray(theta, float))
    if theta.size != d:
        raise ValueError(f"theta must have {d} components")
    W, nu, cells = window.half_width, window.nu, window.cells
    L = 2 * W + 1
    pos = spec.position()
    A = np.zeros((window.n, window.n), dtype=complex)
    diag = np.zeros(nu)
    base = np.arange(cells.shape[0])
    for u, v, tau, m in spec.oriented_edges():
        is_bridge = any(tau[:d])
        if (select == "bridges" and not is_bridge) or (select == "nonbridges" and is_bridge):
            continue
        diag[pos[u]] += m
        tgt = cells + np.asarray(tau[d:], dtype=int)
        if window.boundary == "periodic":
            tgt = (tgt + W) % L - W
            keep = np.ones(len(base), dtype=bool)
        else:
            keep = np.all(np.abs(tgt) <= W, axis=1)
        tidx = np.zeros(len(base), dtype=int)
        for c in range(tgt.shape[1]):
            tidx = tidx * L + tgt[:, c] + W
        r = base[keep] * nu + pos[u]
        c = tidx[keep] * nu + pos[v]
        phase = np.exp(1j * float(np.dot(tau[:d], theta)))
        np.add.at(A, (r, c), -m * phase)
    host_rows = np.arange(window.n_host)
    A[host_rows, host_rows] += np.tile(diag, cells.shape[0])
    return A


@dataclass(frozen=True)
class GuideLaplacian:
    vertices: tuple
    matrix: np.ndarray              # Laplacian of the finite guide graph
    contacts: tuple                 # V_01
    dirichlet_vertices: tuple       # V_1 \ V_01
    dirichlet: np.ndarray           # submatrix over V_1 \ V_01
    eigenvalues: np.ndarray         # ascending
    eigenvectors: np.ndarray
    zetas: np.ndarray               # positive eigenvalues, descending
    n_components: int

    @property
    def p(self) -> int:
        return len(self.zetas)


def guide_matrix(guide: GuideSpec) -> np.ndarray:
    idx = {v: i for i, v in enumerate(guide.vertices)}
    M = np.zeros((guide.nu1, guide.nu1))
    for e in guide.edges:
        i, j = idx[e.u], idx[e.v]
        M[i, i] += e.multiplicity
        M[j, j] += e.multiplicity
        M[i, j] -= e.multiplicity
        M[j, i] -= e.multiplicity
    return M


def guide_laplacian(guide: GuideSpec) -> GuideLaplacian:
    """Laplacian of the finite guide graph, its Dirichlet block and positive spectrum."""
    M = guide_matrix(guide)
    w, V = np.linalg.eigh(M) if guide.nu1 else (np.zeros(0), np.zeros((0, 0)))
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    c = guide.n_components
    # the kernel has dimension c exactly; snap the c smallest to zero
    w = w.copy()
    w[:c] = 0.0
    zetas = np.sort(w[c:])[::-1]
    if np.any(zetas <= 1e-9 * scale):
        raise ArithmeticError("guide Laplacian kernel larger than the number of components")
    contacts = guide.contact_vertices
    dverts = tuple(v for v in guide.vertices if v not in set(contacts))
    keep = [i for i, v in enumerate(guide.vertices) if v in set(dverts)]
    return GuideLaplacian(tuple(guide.vertices), M, contacts, dverts, M[np.ix_(keep, keep)],
                          w, V, zetas, c)


def _guide_part(guide: GuideSpec, window: CylinderWindow) -> np.ndarray:
    M = guide_matrix(guide)
    rows = np.array([window.guide_rows[v] for v in guide.vertices], dtype=int)
    A = np.zeros((window.n, window.n), dtype=complex)
    if len(rows):
        A[np.ix_(rows, rows)] += M
    return A


def assemble_truncated_fiber(spec: PeriodicGraphSpec, guide: GuideSpec, theta, window: CylinderWindow) -> np.ndarray:
    """Finite section of the fiber Laplacian on the perturbed cylinder at ``theta``."""
    return _host_part(spec, guide.dim_guide, theta, window, "all") + _guide_part(guide, window)


def host_fiber(spec: PeriodicGraphSpec, guide: GuideSpec, theta, window: CylinderWindow) -> np.ndarray:
    """Unperturbed fiber restricted to the host rows, embedded in the window space."""
    return _host_part(spec, guide.dim_guide, theta, window, "all")


def guide_block(guide: GuideSpec, window: CylinderWindow) -> np.ndarray:
    return _guide_part(guide, window)


def bridge_operator(spec: PeriodicGraphSpec, guide: GuideSpec, theta, window: CylinderWindow) -> np.ndarray:
    """Magnetic Laplacian of the bridges alone (diagonal = bridge count per vertex)."""
    return _host_part(spec, guide.dim_guide, theta, window, "bridges")


def assemble_bridge_deleted(spec: PeriodicGraphSpec, guide: GuideSpec, window: CylinderWindow) -> np.ndarray:
    """Laplacian of the cylinder with all bridges removed (real symmetric)."""
    d = guide.dim_guide
    A = _host_part(spec, d, np.zeros(d), window, "nonbridges") + _guide_part(guide, window)
    return A.real.copy()


def bridge_deleted_host(spec: PeriodicGraphSpec, d: int) -> PeriodicGraphSpec:
    """The transverse periodic graph left after deleting bridges (not necessarily connected)."""
    edges = tuple(IndexedEdge(e.u, e.v, e.index[d:], e.multiplicity)
                  for e in spec.quotient_edges if not any(e.index[:d]))
    verts = tuple(QuotientVertex(v.id) for v in spec.quotient_vertices)
    return PeriodicGraphSpec(spec.dim_total - d, verts, edges)


def sup_ess_bridge_deleted(spec: PeriodicGraphSpec, d: int, grid: int | None = None) -> float:
    reduced = bridge_deleted_host(spec, d)
    if not reduced.quotient_edges:
        return 0.0
    n = grid or (256 if reduced.dim_total == 1 else 32)
    return unperturbed_bands(reduced, n)[1]


def mu_values(spec: PeriodicGraphSpec, guide: GuideSpec, window: CylinderWindow, count: int,
              tol_ess: float = 1e-6) -> list[float]:
    """``mu_j = max(mu~_j, sup ess(bridge-deleted Laplacian))`` for ``j = 1..count``."""
    sup_ess = sup_ess_bridge_deleted(spec, guide.dim_guide)
    A = assemble_bridge_deleted(spec, guide, window)
    w, V = np.linalg.eigh(A)
    sel = w > sup_ess + tol_ess
    if window.boundary == "dirichlet":
        sel &= window.localized(V)
    above = np.sort(w[sel])[::-1]
    return [float(above[j]) if j < len(above) else sup_ess for j in range(count)]
