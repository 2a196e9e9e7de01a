"""Guided bands from a quasimomentum sweep of the truncated fiber Laplacian."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cylinder import (CylinderWindow, GuideLaplacian, assemble_truncated_fiber, guide_laplacian, mu_values)
from .floquet import TOL_FLAT, Band, BandSet, essential_spectrum_at, torus_axis, unperturbed_bands
from .graph_model import GuideSpec, PeriodicGraphSpec, bridge_stats

log = logging.getLogger(__name__)

TOL_ESS = 1e-6
#: slack allowed on certificate margins (numerical round-off only)
CERT_SLACK = 1e-9


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("GB_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    k = n_threads()
    if k == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


REGIONS = ("above", "gap", "below")


@dataclass
class FiberPoint:
    theta: np.ndarray
    discrete: np.ndarray          # all discrete eigenvalues, descending
    m_minus: float
    m_plus: float
    essential: BandSet

    def region(self, name: str) -> np.ndarray:
        """Eigenvalues above ``m_+`` (descending), inside gaps (descending) or below
        ``m_-`` (ascending)."""
        e = self.discrete
        if name == "above":
            return e[e > self.m_plus]
        if name == "below":
            return np.sort(e[e < self.m_minus])
        if name == "gap":
            return e[(e >= self.m_minus) & (e <= self.m_plus)]
        raise ValueError(f"unknown region {name!r}")


@dataclass
class DispersionTrace:
    points: list[FiberPoint]
    evaluate: Callable[[np.ndarray], FiberPoint] | None = None
    axis: np.ndarray | None = None
    transverse_dims: int = 0

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.points])

    @property
    def m_minus(self) -> np.ndarray:
        return np.array([p.m_minus for p in self.points])

    @property
    def m_plus(self) -> np.ndarray:
        return np.array([p.m_plus for p in self.points])

    @property
    def eigenvalues(self) -> list[np.ndarray]:
        """Discrete eigenvalues above the essential spectrum, descending (lambda_j)."""
        return [p.region("above") for p in self.points]

    def counts(self, region: str = "above") -> np.ndarray:
        return np.array([len(p.region(region)) for p in self.points], dtype=int)

    def n_bands(self, region: str = "above") -> int:
        return int(self.counts(region).max(initial=0))

    def branch(self, j: int, region: str = "above") -> tuple[np.ndarray, np.ndarray]:
        """Grid indices and values of the j-th (0-based) eigenvalue of ``region``."""
        idx, vals = [], []
        for i, p in enumerate(self.points):
            e = p.region(region)
            if len(e) > j:
                idx.append(i)
                vals.append(e[j])
        return np.array(idx, dtype=int), np.array(vals)


@dataclass(frozen=True)
class Certificate:
    name: str
    passed: bool
    margin: float
    detail: str = ""
    required: bool = True


@dataclass(frozen=True)
class GuidedBand(Band):
    region: str = "above"
    index: int = 1


@dataclass
class GuidedSpectrum:
    """Guided bands; ``above`` holds the bands above the essential spectrum in
    the order lambda_1 >= lambda_2 >= ..., the others come from gaps or from
    below the essential spectrum."""

    bands: list[GuidedBand]
    flat_bands: list[tuple[float, int]]
    certificates: list[Certificate] = field(default_factory=list)
    exact: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def above(self) -> list[GuidedBand]:
        return sorted((b for b in self.bands if b.region == "above"), key=lambda b: b.index)

    @property
    def band_set(self) -> BandSet:
        return BandSet(list(self.bands))

    @property
    def ac_bands(self) -> list[GuidedBand]:
        return [b for b in self.bands if not b.flat]

    @property
    def n_bands(self) -> int:
        return len(self.bands)


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------

def theta_grid(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    ax = torus_axis(n)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    return ax, np.stack([m.ravel() for m in mesh], axis=-1)


def fiber_solver(spec: PeriodicGraphSpec, guide: GuideSpec, window: CylinderWindow,
                 tol_ess: float = TOL_ESS, phi_grid: int | None = None) -> Callable[[np.ndarray], FiberPoint]:
    """Closure computing discrete eigenvalues of the truncated fiber at one ``theta``."""
    d = guide.dim_guide

    def at(theta) -> FiberPoint:
        theta = np.atleast_1d(np.asarray(theta, float))
        ess, m_minus, m_plus = essential_spectrum_at(spec, d, theta, phi_grid)
        A = assemble_truncated_fiber(spec, guide, theta, window)
        if window.boundary == "dirichlet":
            w, V = np.linalg.eigh(A)
            keep = window.localized(V)
        else:
            w = np.linalg.eigvalsh(A)
            keep = np.ones(w.shape, dtype=bool)
        for b in ess:
            keep &= (w < b.lo - tol_ess) | (w > b.hi + tol_ess)
        return FiberPoint(theta, np.sort(w[keep])[::-1], m_minus, m_plus, ess)

    return at


def sweep(spec: PeriodicGraphSpec, guide: GuideSpec, grid: int = 201, window: CylinderWindow | None = None,
          tol_ess: float = TOL_ESS, phi_grid: int | None = None) -> DispersionTrace:
    """Discrete eigenvalues of the truncated fiber Laplacian on a theta grid.

    Eigenvalues within ``tol_ess`` of the essential intervals are discarded.
    Under a Dirichlet window the localization filter is applied as well.
    """
    if window is None:
        window = CylinderWindow.build(spec, guide)
    ax, thetas = theta_grid(guide.dim_guide, grid)
    at = fiber_solver(spec, guide, window, tol_ess, phi_grid)
    return DispersionTrace(_map(at, list(thetas)), at, ax, spec.dim_total - guide.dim_guide)


# --------------------------------------------------------------------------
# Bands
# --------------------------------------------------------------------------

_GOLD = (math.sqrt(5) - 1) / 2


def golden_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
               maxiter: int = 200) -> tuple[float, float]:
    """Golden-section maximization; ``f`` may return ``-inf`` where undefined.

    Returns the best ``(x, f(x))`` seen during the search.
    """
    best = (a, f(a))
    fb = f(b)
    if fb > best[1]:
        best = (b, fb)
    c = b - _GOLD * (b - a)
    e = a + _GOLD * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(maxiter):
        for x, fx in ((c, fc), (e, fe)):
            if fx > best[1]:
                best = (x, fx)
        if abs(b - a) < tol:
            break
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + _GOLD * (b - a)
            fe = f(e)
    return best


#: binding energies used to extrapolate a branch onto its threshold; the
#: bound state decays over ~1/sqrt(b) cells, well inside the default window
THRESHOLD_BINDING = (0.01, 0.1)
#: fits on the full and the inner binding range must agree this well
THRESHOLD_AGREEMENT = 1e-3


def _cubic_root(lams: np.ndarray, roots_b: np.ndarray) -> float | None:
    """Zero of a cubic fit of sqrt(binding) against the eigenvalue, next to the data."""
    if len(lams) < 4:
        return None
    idx = np.linspace(0, len(lams) - 1, min(6, len(lams))).astype(int)
    xs, ys = lams[idx], roots_b[idx]
    near = xs[np.argmin(ys)]
    span = float(np.ptp(xs))
    cands = [r.real for r in np.roots(np.polyfit(xs, ys, 3)) if abs(r.imag) < 1e-9 and abs(r.real - near) < span]
    if not cands:
        return None
    return float(min(cands, key=lambda r: abs(r - near)))


def _refine_extremum(trace: DispersionTrace, j: int, region: str, i0: int, sign: float) -> float:
    """Polish the extremum of branch ``j`` near grid point ``i0`` (sign=+1 max, -1 min)."""
    at = trace.evaluate
    ax = trace.axis
    h = float(ax[1] - ax[0])
    theta = trace.thetas[i0].astype(float).copy()

    def value(th):
        e = at(th).region(region)
        return sign * e[j] if len(e) > j else -math.inf

    best = sign * trace.points[i0].region(region)[j]
    for _ in range(2 if theta.size > 1 else 1):
        for k in range(theta.size):
            def f(x, k=k):
                th = theta.copy()
                th[k] = x
                return value(th)
            x, fx = golden_max(f, theta[k] - h, theta[k] + h, tol=1e-9)
            if fx > best:
                best = fx
                theta[k] = x
    if trace.transverse_dims == 1 and theta.size == 1 and (region, sign) in (("above", 1.0), ("below", -1.0)):
        edge = _threshold_edge(trace, j, region, theta, h)
        if edge is not None and sign * edge > best:
            best = sign * edge
    return sign * best


def _threshold_edge(trace: DispersionTrace, j: int, region: str, theta: np.ndarray, h: float) -> float | None:
    """Edge value of a branch that dissolves into the essential spectrum.

    If the branch ceases to exist just beyond ``theta`` it ends on the
    threshold, where its binding energy ``b`` has a double zero.  ``sqrt(b)``
    is sampled as a function of the eigenvalue where the window resolves the
    bound state and a cubic fit is continued to its zero, which is the edge.
    ``None`` when the configuration does not apply.
    """
    at = trace.evaluate
    lo_b, hi_b = THRESHOLD_BINDING

    def sample(th):
        pt = at(np.array([th]))
        e = pt.region(region)
        if len(e) <= j:
            return None
        return e[j], (e[j] - pt.m_plus if region == "above" else pt.m_minus - e[j])

    x0 = float(theta[0])
    for direction in (1.0, -1.0):
        if sample(x0 + direction * 1e-7) is not None:
            continue
        lams, roots_b = [], []
        x = x0
        while abs(x - x0) < np.pi:
            x -= direction * h / 16
            got = sample(x)
            if got is None:
                return None
            lam, b = got
            if b > hi_b:
                break
            if b >= lo_b:
                lams.append(lam)
                roots_b.append(math.sqrt(b))
        lams, roots_b = np.array(lams), np.array(roots_b)
        first = _cubic_root(lams, roots_b)
        inner = roots_b <= math.sqrt(0.5 * (lo_b + hi_b))
        second = _cubic_root(lams[inner], roots_b[inner])
        if first is None or second is None or abs(first - second) > THRESHOLD_AGREEMENT:
            return None
        return first
    return None


def guided_bands(trace: DispersionTrace, refine: bool = True, tol_flat: float = TOL_FLAT) -> GuidedSpectrum:
    """Band j of a region is the range of its j-th eigenvalue over the grid.

    Extrema are polished by golden-section search around the best grid point;
    a branch that ceases to exist counts as ``-inf`` there, so the search also
    converges onto the edge of its existence domain.
    """
    bands = []
    for region in REGIONS:
        for j in range(trace.n_bands(region)):
            idx, vals = trace.branch(j, region)
            lo, hi = float(vals.min()), float(vals.max())
            if refine and trace.evaluate is not None and hi - lo >= tol_flat:
                lo = min(lo, _refine_extremum(trace, j, region, int(idx[np.argmin(vals)]), -1.0))
                hi = max(hi, _refine_extremum(trace, j, region, int(idx[np.argmax(vals)]), 1.0))
            lo = max(lo, 0.0)
            bands.append(GuidedBand(float(lo), float(hi), bool(hi - lo < tol_flat), 1, region, j + 1))
    return GuidedSpectrum(bands, group_flat([b for b in bands if b.flat]))


def group_flat(flat: Sequence[Band], tol: float = TOL_FLAT) -> list[tuple[float, int]]:
    groups: list[list[float]] = []
    for b in sorted(flat, key=lambda b: b.lo):
        v = 0.5 * (b.lo + b.hi)
        if groups and abs(v - groups[-1][0]) < tol:
            groups[-1][1] += 1
        else:
            groups.append([v, 1])
    return [(float(v), int(m)) for v, m in groups]


# --------------------------------------------------------------------------
# Flat bands from the guide alone
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FlatBand:
    value: float
    multiplicity: int
    eigenvectors: np.ndarray      # columns over guide vertices, zero on V_01


def flat_bands(lap: GuideLaplacian, tol: float = 1e-9) -> list[FlatBand]:
    """Eigenvalues of the guide Laplacian owning eigenvectors that vanish on the contacts."""
    w, V = lap.eigenvalues, lap.eigenvectors
    cidx = [lap.vertices.index(v) for v in lap.contacts]
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    out = []
    i = lap.n_components  # skip the kernel
    while i < len(w):
        k = i
        while k + 1 < len(w) and abs(w[k + 1] - w[i]) <= tol * scale:
            k += 1
        E = V[:, i:k + 1]
        R = E[cidx, :] if cidx else np.zeros((0, E.shape[1]))
        if R.size:
            _, s, vh = np.linalg.svd(R)
            rank = int(np.sum(s > tol))
            null = vh[rank:].conj().T
        else:
            null = np.eye(E.shape[1])
        if null.shape[1]:
            vecs = E @ null
            out.append(FlatBand(float(np.mean(w[i:k + 1])), int(null.shape[1]), vecs))
        i = k + 1
    return out


def theta_independent_eigenvalues(spec: PeriodicGraphSpec, guide: GuideSpec, thetas=None,
                                  window: CylinderWindow | None = None, tol: float = 1e-8) -> list[tuple[float, int]]:
    """Eigenvalues of the truncated fiber shared by every sampled ``theta``.

    The multiplicity is the smallest count seen over the samples.  Host
    eigenvalues move with ``theta``, so only flat bands survive.
    """
    if window is None:
        window = CylinderWindow.build(spec, guide, 10)
    if thetas is None:
        rng = np.random.default_rng(0)
        thetas = rng.uniform(-np.pi, np.pi, size=(5, guide.dim_guide))
    spectra = [np.linalg.eigvalsh(assemble_truncated_fiber(spec, guide, np.atleast_1d(th), window))
               for th in thetas]
    scale = max(1.0, float(np.abs(spectra[0]).max()))
    out = []
    for v, _ in group_flat([Band(x, x) for x in spectra[0]], tol * scale):
        mult = min(int(np.sum(np.abs(w - v) <= tol * scale)) for w in spectra)
        if mult:
            out.append((v, mult))
    return out


# --------------------------------------------------------------------------
# Certificates
# --------------------------------------------------------------------------

def _cert(name, margin, detail="", required=True):
    return Certificate(name, bool(margin >= -CERT_SLACK), float(margin), detail, required)


def verify_certificates(spec: PeriodicGraphSpec, guide: GuideSpec, spectrum: GuidedSpectrum,
                        trace: DispersionTrace | None = None, window: CylinderWindow | None = None,
                        rho: float | None = None) -> list[Certificate]:
    """Check the bracketing estimates for the guided band parts above ``rho``.

    Failures are reported through ``passed`` and a negative margin, never raised.
    """
    if rho is None:
        rho = unperturbed_bands(spec)[1]
    lap = guide_laplacian(guide)
    zetas, p = lap.zetas, lap.p
    if window is None:
        window = CylinderWindow.build(spec, guide)
    above = spectrum.above
    mus = mu_values(spec, guide, window, max(p, len(above)))
    beta_plus = bridge_stats(spec, guide).beta_plus
    certs = []
    n_g = 0
    for j, band in enumerate(above):
        if band.hi <= rho:
            continue
        n_g += 1
        lo, hi = max(band.lo, rho), band.hi
        tag = f"[j={j + 1}]"
        if j < p:
            z = zetas[j]
            certs.append(_cert(f"zeta_bracket{tag}", min(lo - z, z + rho - hi),
                               f"[{lo:.9g}, {hi:.9g}] in [{z:.9g}, {z + rho:.9g}]"))
        else:
            certs.append(_cert(f"zeta_bracket{tag}", -math.inf, "band index exceeds p"))
        mu = mus[j]
        certs.append(_cert(f"mu_bracket{tag}", min(lo - mu, mu + 2 * beta_plus - hi),
                           f"[{lo:.9g}, {hi:.9g}] in [{mu:.9g}, {mu + 2 * beta_plus:.9g}]"))
        if not band.flat:
            certs.append(_cert(f"width{tag}", 2 * beta_plus - (hi - lo),
                               f"|part| = {hi - lo:.9g} <= 2 beta_+ = {2 * beta_plus}"))
    need = int(np.sum(zetas > rho))
    certs.append(_cert("band_count_lower", n_g - need, f"N_g = {n_g} >= #{{zeta_j > rho}} = {need}"))
    certs.append(_cert("band_count_upper", p - len(above), f"N_above = {len(above)} <= p = {p}"))
    # guide vertices off the host add a zero eigenvalue to the unperturbed
    # operator; each can leave one band below (or inside) the essential spectrum
    free = sum(1 for v in guide.vertices if v not in guide.attached)
    certs.append(_cert("band_count_total", p + free - spectrum.n_bands,
                       f"N = {spectrum.n_bands} <= p + #unattached = {p + free}"))
    if trace is not None:
        certs.extend(theta_bracketing(trace, zetas))
    return certs


def theta_bracketing(trace: DispersionTrace, zetas: np.ndarray) -> list[Certificate]:
    """Pointwise bracketing ``zeta_j <= lambda_j(theta) <= zeta_j + m_+(theta)`` for
    eigenvalues above the essential spectrum, plus the sharper lower bound
    ``zeta_j + m_-(theta)``."""
    upper = lower = sharp = math.inf
    for i, above in enumerate(trace.eigenvalues):
        for j, lam in enumerate(above[: len(zetas)]):
            upper = min(upper, zetas[j] + trace.m_plus[i] - lam)
            lower = min(lower, lam - zetas[j])
            sharp = min(sharp, lam - zetas[j] - trace.m_minus[i])
        if len(above) > len(zetas):
            upper = -math.inf
    if upper == math.inf:
        return []
    return [_cert("theta_bracket_upper", upper, "lambda_j(theta) <= zeta_j + m_+(theta)"),
            _cert("theta_bracket_lower", lower, "lambda_j(theta) >= zeta_j"),
            _cert("theta_bracket_lower_m_minus", sharp, "lambda_j(theta) >= zeta_j + m_-(theta)",
                  required=False)]


def solve(spec: PeriodicGraphSpec, guide: GuideSpec, grid: int = 201, window: CylinderWindow | None = None,
          tol_ess: float = TOL_ESS, certify: bool = True) -> tuple[GuidedSpectrum, DispersionTrace]:
    """Sweep, band extraction, flat-band certification and estimate certificates."""
    if window is None:
        window = CylinderWindow.build(spec, guide)
    trace = sweep(spec, guide, grid, window, tol_ess)
    spectrum = guided_bands(trace)
    if guide.nu1:
        certified = flat_bands(guide_laplacian(guide))
        for value, mult in spectrum.flat_bands:
            if not any(abs(value - fb.value) < 1e-6 for fb in certified):
                spectrum.notes.append(f"numerically flat, uncertified: {value:.9g} (x{mult})")
        # certified flat bands are exact eigenvalues of every fiber; those
        # embedded in the essential spectrum never reach the sweep
        merged = {round(fb.value, 9): (fb.value, fb.multiplicity) for fb in certified}
        for value, mult in spectrum.flat_bands:
            if not any(abs(value - v) < 1e-6 for v, _ in merged.values()):
                merged[round(value, 9)] = (value, mult)
        spectrum.flat_bands = sorted(merged.values())
    if certify and guide.nu1:
        spectrum.certificates = verify_certificates(spec, guide, spectrum, trace, window)
    return spectrum, trace
