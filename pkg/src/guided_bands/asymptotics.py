"""Large-multiplicity behaviour of guided bands.

When every guide edge carries multiplicity ``t`` the j-th guided band sits at
``t zeta_j + W_j(theta) + O(1/t)``, where ``W_j`` is the quadratic form of the
unperturbed cylinder fiber on the contact vertices evaluated at the guide
eigenvector ``f_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .cylinder import CylinderWindow, guide_laplacian
from .graph_model import GuideSpec, PeriodicGraphSpec, bridge_stats
from .guided import _map, solve

#: grid points per guide dimension used to locate the extrema of W_j
W_GRID = 401
#: relative gap below which two guide eigenvalues count as equal
DEGENERACY_TOL = 1e-9
#: |f_j| below this on every contact makes the profile flat
FLAT_TOL = 1e-10


class DegenerateEigenvalueError(ValueError):
    pass


@dataclass(frozen=True)
class AsymptoticProfile:
    j: int
    zeta: float
    vertices: tuple
    f: np.ndarray                  # normalized eigenvector over the guide vertices
    constant: float                # sum over contacts of kappa0 |f|^2 minus the tau-free edge terms
    taus: np.ndarray               # (m, d) longitudinal indices of oriented edges among contacts
    coefs: np.ndarray              # f(u) f(v) per oriented edge
    W_minus: float
    W_plus: float
    flat: bool
    theta_minus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_plus: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def W_dot(self) -> float:
        return self.W_plus - self.W_minus

    def W(self, theta) -> np.ndarray | float:
        """``W_j`` at one theta (shape (d,)) or a batch (shape (n, d))."""
        th = np.asarray(theta, float)
        single = th.ndim <= 1
        th = np.atleast_2d(th.reshape(-1, self.taus.shape[1]) if self.taus.size else th.reshape(-1, max(1, th.size)))
        val = self.constant - self.omega_batch(th)
        return float(val[0]) if single else val

    def omega_batch(self, th: np.ndarray) -> np.ndarray:
        """Oscillating part: bridge terms only, zero mean over the torus."""
        if not len(self.coefs):
            return np.zeros(th.shape[0])
        return np.cos(th @ self.taus.T) @ self.coefs

    def omega(self, theta) -> float:
        return float(self.omega_batch(np.atleast_2d(np.asarray(theta, float)))[0])


def _contact_terms(spec: PeriodicGraphSpec, guide: GuideSpec, f: np.ndarray, vertices: tuple):
    """Constant part and oriented bridge list of the contact quadratic form."""
    d = guide.dim_guide
    deg = spec.degrees()
    att = guide.attached
    fv = dict(zip(vertices, f))
    const = 0.0
    taus, coefs = [], []
    for a, A in att.items():
        const += deg[A.lattice_vertex] * fv[a] ** 2
    for a, A in att.items():
        for b, B in att.items():
            shift = tuple(int(y) - int(x) for x, y in zip(A.transverse_offset, B.transverse_offset))
            for u, v, tau, m in spec.oriented_edges():
                if u != A.lattice_vertex or v != B.lattice_vertex or tuple(tau[d:]) != shift:
                    continue
                c = m * fv[a] * fv[b]
                if any(tau[:d]):
                    taus.append(tau[:d])
                    coefs.append(c)
                else:
                    const -= c
    return const, np.array(taus, dtype=float).reshape(len(taus), d), np.array(coefs, dtype=float)


def _extremum(prof_w, d: int, sign: float, grid: int) -> tuple[float, np.ndarray]:
    """Global minimum of ``sign * W`` by a torus grid and local polishing."""
    if d == 1:
        ax = np.linspace(-np.pi, np.pi, grid)
        vals = sign * prof_w(ax[:, None])
        i = int(np.argmin(vals))
        h = ax[1] - ax[0]
        res = optimize.minimize_scalar(lambda x: sign * prof_w(np.array([[x]]))[0],
                                       bounds=(ax[i] - h, ax[i] + h), method="bounded",
                                       options={"xatol": 1e-12})
        if res.fun < vals[i]:
            return sign * float(res.fun), np.array([res.x])
        return sign * float(vals[i]), np.array([ax[i]])
    n = max(9, int(round(grid ** (2.0 / d))) if d > 2 else grid)
    ax = np.linspace(-np.pi, np.pi, n)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = sign * prof_w(pts)
    i = int(np.argmin(vals))
    res = optimize.minimize(lambda x: sign * prof_w(x[None, :])[0], pts[i], method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000})
    if res.fun < vals[i]:
        return sign * float(res.fun), res.x
    return sign * float(vals[i]), pts[i]


def wj_function(spec: PeriodicGraphSpec, guide: GuideSpec, j: int, grid: int = W_GRID) -> AsymptoticProfile:
    """Profile of the j-th (1-based, descending) positive guide eigenvalue."""
    lap = guide_laplacian(guide)
    if not 1 <= j <= lap.p:
        raise IndexError(f"j must lie in 1..{lap.p}")
    zeta = float(lap.zetas[j - 1])
    scale = max(1.0, abs(zeta))
    close = np.abs(lap.eigenvalues - zeta) <= DEGENERACY_TOL * scale
    if int(np.sum(close)) != 1:
        raise DegenerateEigenvalueError(f"zeta_{j} = {zeta:.9g} is degenerate (multiplicity {int(np.sum(close))})")
    f = lap.eigenvectors[:, int(np.argmax(close))].real.copy()
    f /= np.linalg.norm(f)
    # fix the sign for reproducible output
    k = int(np.argmax(np.abs(f) > 1e-12))
    if f[k] < 0:
        f = -f
    contacts = [lap.vertices.index(v) for v in lap.contacts]
    flat = bool(np.all(np.abs(f[contacts]) < FLAT_TOL)) if contacts else True
    const, taus, coefs = _contact_terms(spec, guide, f, lap.vertices)
    d = guide.dim_guide

    def w(th):
        th = np.atleast_2d(th)
        if not len(coefs):
            return np.full(th.shape[0], const)
        return const - np.cos(th @ taus.T) @ coefs

    lo, tlo = _extremum(w, d, 1.0, grid)
    hi, thi = _extremum(w, d, -1.0, grid)
    return AsymptoticProfile(j, zeta, lap.vertices, f, const, taus, coefs, lo, hi, flat, tlo, thi)


def profiles(spec: PeriodicGraphSpec, guide: GuideSpec, grid: int = W_GRID) -> tuple[list[AsymptoticProfile], list[int]]:
    """Profiles of all simple positive guide eigenvalues, plus the skipped (degenerate) indices."""
    out, skipped = [], []
    for j in range(1, guide_laplacian(guide).p + 1):
        try:
            out.append(wj_function(spec, guide, j, grid))
        except DegenerateEigenvalueError:
            skipped.append(j)
    return out, skipped


def predicted_band_edges(profile: AsymptoticProfile, t: float) -> tuple[float, float]:
    if t < 1:
        raise ValueError("t must be at least 1")
    base = t * profile.zeta
    if profile.flat:
        return base, base
    return base + profile.W_minus, base + profile.W_plus


@dataclass(frozen=True)
class ConvergenceRow:
    t: float
    measured: tuple[float, float] | None
    predicted: tuple[float, float]
    residual_lo: float
    residual_hi: float

    @property
    def residual(self) -> float:
        return max(self.residual_lo, self.residual_hi)

    @property
    def width(self) -> float:
        return math.nan if self.measured is None else self.measured[1] - self.measured[0]


@dataclass
class ConvergenceStudy:
    j: int
    profile: AsymptoticProfile
    rows: list[ConvergenceRow]
    slope: float                    # fitted log-log exponent of the residual
    slope_lo: float
    slope_hi: float
    beta_01: int

    @property
    def beta_bound_ok(self) -> bool:
        return self.profile.W_dot <= 2 * self.beta_01 + 1e-12


def _loglog_slope(ts, rs) -> float:
    ts, rs = np.asarray(ts, float), np.asarray(rs, float)
    m = np.isfinite(rs) & (rs > 0)
    if m.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ts[m]), np.log(rs[m]), 1)[0])


def measured_edges(spec: PeriodicGraphSpec, guide: GuideSpec, j: int, t: float, grid: int = 201,
                   window: int | None = None) -> tuple[float, float] | None:
    """Edges of the j-th band above the essential spectrum for guide multiplicities scaled by ``t``."""
    g = guide.scaled(int(t))
    win = CylinderWindow.build(spec, g, window)
    spectrum, _ = solve(spec, g, grid, win, certify=False)
    above = spectrum.above
    if len(above) < j:
        return None
    b = above[j - 1]
    return b.lo, b.hi


def convergence_study(spec: PeriodicGraphSpec, guide: GuideSpec, j: int, t_list, grid: int = 201,
                      window: int | None = None) -> ConvergenceStudy:
    if any(float(t) != int(t) for t in t_list):
        raise ValueError("multiplicity scales must be integers")
    t_list = [int(t) for t in t_list]
    if len(t_list) < 2 or any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("t_list must be ascending with at least two entries")
    prof = wj_function(spec, guide, j)
    meas = _map(lambda t: measured_edges(spec, guide, j, t, grid, window), t_list)
    rows = []
    for t, m in zip(t_list, meas):
        pred = predicted_band_edges(prof, t)
        if m is None:
            rows.append(ConvergenceRow(t, None, pred, math.inf, math.inf))
        else:
            rows.append(ConvergenceRow(t, m, pred, abs(m[0] - pred[0]), abs(m[1] - pred[1])))
    ts = [r.t for r in rows]
    return ConvergenceStudy(j, prof, rows, _loglog_slope(ts, [r.residual for r in rows]),
                            _loglog_slope(ts, [r.residual_lo for r in rows]),
                            _loglog_slope(ts, [r.residual_hi for r in rows]),
                            bridge_stats(spec, guide).beta_01)


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin >= -1e-9 * max(1.0, abs(self.rhs))


def guide_eigenvalue_bounds(guide: GuideSpec) -> list[BoundCheck]:
    """Degree bounds on the largest and smallest positive eigenvalue of each guide component.

    ``nu/(nu-1) max kappa <= zeta_1 <= max_{u~v}(kappa_u + kappa_v)`` and
    ``min_{u~v}(kappa_u + kappa_v) - (nu - 2) <= zeta_p <= nu/(nu-1) min kappa``.
    Failures are reported through the margin, never raised.
    """
    out = []
    deg = guide.degrees()
    for n, comp in enumerate(guide.components()):
        verts = [v for v in guide.vertices if v in comp]
        if len(verts) < 2:
            continue
        sub = GuideSpec(guide.dim_guide, tuple(verts),
                        tuple(e for e in guide.edges if e.u in comp), ())
        z = guide_laplacian(sub).zetas
        nu = len(verts)
        k = [deg[v] for v in verts]
        pair = [deg[e.u] + deg[e.v] for e in sub.edges]
        tag = f"[component {n + 1}]"
        out += [BoundCheck(f"zeta_1_lower{tag}", nu / (nu - 1) * max(k), float(z[0])),
                BoundCheck(f"zeta_1_upper{tag}", float(z[0]), float(max(pair))),
                BoundCheck(f"zeta_p_lower{tag}", float(min(pair) - (nu - 2)), float(z[-1])),
                BoundCheck(f"zeta_p_upper{tag}", float(z[-1]), nu / (nu - 1) * min(k))]
    return out
