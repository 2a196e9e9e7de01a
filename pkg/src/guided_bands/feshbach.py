"""Exact guided bands for a single-contact guide on the square lattice.

Eliminating the guide vertices off the host leaves the host cylinder with a
point potential ``Q(lambda)`` at the contact.  On the square lattice the
cylinder fiber is ``(2 - 2 cos theta) + h`` with ``h`` the Laplacian on Z, so
an eigenvalue is a solution of a scalar equation in ``lambda``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .cylinder import CylinderWindow, guide_laplacian, guide_matrix, host_fiber
from .floquet import TOL_FLAT
from .graph_model import GuideSpec, PeriodicGraphSpec
from .guided import GuidedBand, GuidedSpectrum, flat_bands, group_flat

#: relative distance to a pole below which Q is not evaluated
POLE_TOL = 1e-12
#: squared-weight threshold separating coupled from decoupled Dirichlet modes
WEIGHT_TOL = 1e-12


class UnsupportedError(ValueError):
    """The exact reduction does not apply; use the truncated sweep instead."""


class PoleError(ArithmeticError):
    def __init__(self, lam, pole):
        super().__init__(f"lambda = {lam!r} is a pole of Q (Dirichlet eigenvalue {pole!r})")
        self.lam = lam
        self.pole = pole


@dataclass(frozen=True)
class ContactPotential:
    """Energy-dependent point potential seen by the host at one contact vertex.

    ``Q(lam) = degree - sum_k weights[k] / (dirichlet[k] - lam)``, where the
    sum runs over the Dirichlet eigenvalues that couple to the contact.
    """

    contact: str
    vertices: tuple
    laplacian: np.ndarray           # guide Laplacian of the component
    degree: float                   # guide degree of the contact
    dirichlet: np.ndarray           # all Dirichlet eigenvalues, ascending
    weights: np.ndarray             # squared coupling to the contact per Dirichlet eigenvalue
    poles: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "poles", np.unique(np.round(self.dirichlet[self.weights > WEIGHT_TOL], 12)))

    @property
    def scale(self) -> float:
        return max(1.0, float(np.abs(self.laplacian).max(initial=0.0)))

    def _check_pole(self, lam):
        for p in self.poles:
            if abs(lam - p) <= POLE_TOL * self.scale:
                raise PoleError(lam, float(p))

    def __call__(self, lam: float) -> float:
        """Value at ``lam`` from a dense solve; the Schur form is the fallback."""
        lam = float(lam)
        self._check_pole(lam)
        ci = self.vertices.index(self.contact)
        A = self.laplacian - lam * np.diag([0.0 if v == self.contact else 1.0 for v in self.vertices])
        e = np.zeros(len(self.vertices))
        e[ci] = 1.0
        try:
            x = linalg.solve(A, e, assume_a="sym")
            if np.isfinite(x[ci]) and abs(x[ci]) > 1e-12 and np.linalg.cond(A) < 1e12:
                return float(1.0 / x[ci])
        except (linalg.LinAlgError, ValueError):
            pass
        return self.schur(lam)

    def schur(self, lam: float) -> float:
        """Schur-complement form, valid away from the poles."""
        lam = float(lam)
        self._check_pole(lam)
        m = self.weights > WEIGHT_TOL
        return float(self.degree - np.sum(self.weights[m] / (self.dirichlet[m] - lam)))

    def derivative(self, lam: float) -> float:
        m = self.weights > WEIGHT_TOL
        return float(-np.sum(self.weights[m] / (self.dirichlet[m] - lam) ** 2))

    def zeros(self) -> np.ndarray:
        """One zero per interval between consecutive poles, plus the one below the first pole."""
        out = []
        edges = [-math.inf, *self.poles.tolist(), math.inf]
        for a, b in zip(edges[:-1], edges[1:]):
            if math.isinf(b):
                continue  # Q tends to the contact degree > 0 on the last interval
            lo = _inside(a, b, self, left=True)
            hi = _inside(a, b, self, left=False)
            if lo is None or hi is None:
                continue
            out.append(optimize.brentq(self.schur, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500))
        return np.array(out)

    def admissible(self) -> list[tuple[float, float]]:
        """Intervals where ``Q > 0`` restricted to ``lam >= 0``."""
        return [(a, b) for a, b, s in self.sign_intervals() if s > 0]

    def sign_intervals(self) -> list[tuple[float, float, int]]:
        """Maximal intervals in ``[0, inf)`` on which Q has constant sign (poles and zeros removed)."""
        pts = sorted([0.0, *self.poles.tolist(), *self.zeros().tolist()])
        pts = [x for x in pts if x >= -1e-12]
        pts = sorted(set(max(0.0, x) for x in pts)) + [math.inf]
        out = []
        for a, b in zip(pts[:-1], pts[1:]):
            mid = a + 1.0 if math.isinf(b) else 0.5 * (a + b)
            q = self.schur(mid)
            out.append((a, b, 1 if q > 0 else -1))
        return out


def _inside(a, b, Q, left):
    """A point near the ``left`` (or right) end of ``(a, b)`` where Q has the end's sign."""
    want = 1.0 if left else -1.0  # Q decreases from +inf (or degree) to -inf
    if left and math.isinf(a):
        x = min(-1.0, b - 1.0)
        for _ in range(200):
            if Q.schur(x) > 0:
                return x
            x *= 2
        return None
    end = a if left else b
    width = (b - a) if not (math.isinf(a) or math.isinf(b)) else 1.0
    delta = 1e-3 * width
    for _ in range(60):
        x = end + delta if left else end - delta
        if want * Q.schur(x) > 0:
            return x
        delta /= 4
    return None


def q_potential(guide: GuideSpec, contact: str | None = None) -> ContactPotential:
    """Contact potential of the component of ``guide`` containing ``contact``."""
    contacts = guide.contact_vertices
    if contact is None:
        if len(contacts) != 1:
            raise UnsupportedError("a contact vertex must be given when the guide has several")
        contact = contacts[0]
    comp = next((c for c in guide.components() if contact in c), None)
    if comp is None:
        raise ValueError(f"unknown contact vertex {contact!r}")
    if sum(1 for v in comp if v in contacts) != 1:
        raise UnsupportedError("the component must have exactly one contact vertex")
    verts = tuple(v for v in guide.vertices if v in comp)
    idx = [guide.vertices.index(v) for v in verts]
    M = guide_matrix(guide)[np.ix_(idx, idx)]
    ci = verts.index(contact)
    rest = [i for i in range(len(verts)) if i != ci]
    D = M[np.ix_(rest, rest)]
    b = M[rest, ci]
    if len(rest):
        w, U = np.linalg.eigh(D)
        weights = (U.T @ b) ** 2
    else:
        w, weights = np.zeros(0), np.zeros(0)
    return ContactPotential(contact, verts, M, float(M[ci, ci]), w, weights)


def point_potential_eigenvalue(Q: float) -> float | None:
    """Eigenvalue of the Laplacian on Z plus ``Q`` at one site (``None`` for Q = 0)."""
    if Q == 0:
        return None
    r = math.sqrt(4.0 + Q * Q)
    return 2.0 + r if Q > 0 else 2.0 - r


@dataclass(frozen=True)
class DispersionRoot:
    lam: float
    q_sign: int


def _g(Q: ContactPotential, sign: int):
    # Q > 0: lam - sqrt(4+Q^2);  Q < 0: lam + sqrt(4+Q^2).  Both increase in lam.
    def f(lam):
        q = Q.schur(lam)
        return lam - sign * math.sqrt(4.0 + q * q)
    return f


def _solve_branch(Q: ContactPotential, a: float, b: float, sign: int, target: float) -> float | None:
    """Root of the monotone branch function on the sign interval ``(a, b)``."""
    f = _g(Q, sign)
    poles = set(Q.poles.tolist())
    if sign > 0:
        # left end: pole (f -> -inf) or 0; right end: zero of Q (f = b - 2) or inf
        if math.isinf(b):
            hi = max(a + 1.0, target + 2 + 2 * abs(Q.degree))
            while f(hi) <= target:
                hi *= 2
        else:
            if b - 2.0 <= target:
                return None
            hi = b
        lo = a
        if a in poles:
            width = (b - a) if not math.isinf(b) else 1.0
            delta = 1e-3 * width
            lo = a + delta
            while (Q.schur(lo) <= 0 or f(lo) >= target) and delta > 1e-15 * max(1.0, a):
                delta /= 4
                lo = a + delta
        if f(lo) >= target:
            return None
    else:
        # left end: zero of Q (f = a + 2); right end: pole (f -> +inf)
        if a + 2.0 >= target:
            return None
        lo = a
        hi = _inside(a, b, Q, left=False) if b in poles else b
        if hi is None or math.isinf(hi):
            return None
        # _inside gives a point with Q < 0; move closer to the pole until f > target
        delta = (b - hi)
        while f(hi) <= target and delta > 1e-15 * max(1.0, b):
            delta /= 4
            hi = b - delta
        if f(hi) <= target:
            return None
    return optimize.brentq(lambda x: f(x) - target, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def dispersion_solve(Q: ContactPotential, theta: float, include_negative: bool = False) -> list[DispersionRoot]:
    """Eigenvalues of the fiber at ``theta`` for the square lattice plus a point guide.

    Roots of ``lam - sqrt(4+Q^2) = 4 - 2 cos theta`` with ``Q > 0`` (above the
    essential spectrum), in descending order; with ``include_negative`` the
    roots of ``lam + sqrt(4+Q^2) = 4 - 2 cos theta`` with ``Q < 0`` (below it)
    follow.
    """
    target = 4.0 - 2.0 * math.cos(float(theta))
    pos, neg = [], []
    for a, b, s in Q.sign_intervals():
        if s < 0 and not include_negative:
            continue
        r = _solve_branch(Q, a, b, s, target)
        if r is not None:
            (pos if s > 0 else neg).append(DispersionRoot(float(r), s))
    pos.sort(key=lambda r: -r.lam)
    neg.sort(key=lambda r: r.lam)
    return pos + neg


def is_square_lattice(spec: PeriodicGraphSpec) -> bool:
    if spec.nu != 1 or spec.dim_total != 2:
        return False
    idx = sorted(tuple(abs(x) for x in e.index) for e in spec.quotient_edges)
    return idx == [(0, 1), (1, 0)] and all(e.multiplicity == 1 for e in spec.quotient_edges)


def check_supported(spec: PeriodicGraphSpec, guide: GuideSpec) -> None:
    if not is_square_lattice(spec):
        raise UnsupportedError("exact reduction needs the square lattice host; use the truncated sweep")
    if guide.dim_guide != 1:
        raise UnsupportedError("exact reduction needs a guide periodic in one direction")
    if len(guide.contact_vertices) != 1:
        raise UnsupportedError("exact reduction needs exactly one contact vertex; use the truncated sweep")


def _band_edges(Q: ContactPotential, a: float, b: float, s: int) -> tuple[float, float] | None:
    """Closure of the band swept by the branch on ``(a, b)`` as theta runs over the torus."""
    r2 = _solve_branch(Q, a, b, s, 2.0)
    r6 = _solve_branch(Q, a, b, s, 6.0)
    if s > 0:
        if r2 is None:
            return None
        return r2, (r6 if r6 is not None else b)
    if r6 is None:
        return None
    return (r2 if r2 is not None else a), r6


def guided_spectrum_exact(spec: PeriodicGraphSpec, guide: GuideSpec, grid: int = 201,
                          tol_flat: float = TOL_FLAT) -> GuidedSpectrum:
    """Guided bands from the scalar dispersion relation.

    Each sign interval of Q carries one monotone branch, so band edges are the
    roots at ``theta = 0`` and ``theta = pi`` (or the end of the interval where
    the branch dissolves).  Monotonicity in ``|theta|`` is checked on the grid.
    Bands with ``Q > 0`` lie above the essential spectrum and carry the index
    ``j``; bands with ``Q < 0`` lie below it.
    """
    check_supported(spec, guide)
    Q = q_potential(guide)
    above, below = [], []
    for a, b, s in Q.sign_intervals():
        e = _band_edges(Q, a, b, s)
        if e is None:
            continue
        (above if s > 0 else below).append(e)
    above.sort(key=lambda e: -e[1])
    below.sort(key=lambda e: e[0])
    bands = [GuidedBand(lo, hi, bool(hi - lo < tol_flat), 1, "above", j + 1) for j, (lo, hi) in enumerate(above)]
    bands += [GuidedBand(lo, hi, bool(hi - lo < tol_flat), 1, "below", j + 1) for j, (lo, hi) in enumerate(below)]
    notes = _check_monotone(Q, bands, grid)
    fb = flat_bands(guide_laplacian(guide))
    flat = [(f.value, f.multiplicity) for f in fb]
    # the projected guide operator on the contact is just the contact degree
    if not any(abs(Q.degree - v) < 1e-9 for v, _ in flat):
        notes.append(f"contact-projected guide operator has eigenvalue {Q.degree:.9g}, "
                     f"which is not a flat band; flat bands are {[round(v, 9) for v, _ in flat]}")
    if any(b.region == "below" for b in bands):
        notes.append("Q < 0 branches give bands below the essential spectrum")
    return GuidedSpectrum(bands, flat, exact=True, notes=notes)


def _check_monotone(Q: ContactPotential, bands: list[GuidedBand], grid: int) -> list[str]:
    """Verify that every root stays inside its band and moves monotonically in |theta|."""
    thetas = np.linspace(0.0, np.pi, max(2, grid // 2 + 1))
    prev = None
    notes = []
    up = [b for b in bands if b.region == "above"]
    down = [b for b in bands if b.region == "below"]
    for th in thetas:
        roots = dispersion_solve(Q, th, include_negative=True)
        pos = [r.lam for r in roots if r.q_sign > 0]
        neg = [r.lam for r in roots if r.q_sign < 0]
        cur = (pos, neg)
        for vals, bs in ((pos, up), (neg, down)):
            for v, b in zip(vals, bs):
                if not (b.lo - 1e-9 <= v <= b.hi + 1e-9):
                    notes.append(f"root {v:.9g} at theta={th:.6g} outside band [{b.lo:.9g}, {b.hi:.9g}]")
        if prev is not None:
            for a_, b_ in zip(prev[0], pos):
                if b_ < a_ - 1e-9:
                    notes.append(f"non-monotone Q>0 branch at theta={th:.6g}")
            for a_, b_ in zip(prev[1], neg):
                if b_ < a_ - 1e-9:
                    notes.append(f"non-monotone Q<0 branch at theta={th:.6g}")
        prev = cur
    return notes


def feshbach_map(spec: PeriodicGraphSpec, guide: GuideSpec, theta, lam: float,
                 window: CylinderWindow | None = None) -> np.ndarray:
    """Finite section of the Feshbach map of ``Delta(theta) - lam`` onto the host rows.

    The guide vertices off the host are eliminated by a Schur complement.
    Raises ``PoleError`` when ``lam`` is an eigenvalue of their (Dirichlet) block.
    """
    if window is None:
        window = CylinderWindow.build(spec, guide)
    n_host = window.n_host
    F = host_fiber(spec, guide, theta, window)[:n_host, :n_host] - lam * np.eye(n_host)
    if not guide.nu1:
        return F
    M = guide_matrix(guide)
    rows = np.array([window.guide_rows[v] for v in guide.vertices])
    on_host = rows < n_host
    hi, fi = np.where(on_host)[0], np.where(~on_host)[0]
    A = M[np.ix_(hi, hi)].astype(complex)
    if len(fi):
        D = M[np.ix_(fi, fi)] - lam * np.eye(len(fi))
        w = np.linalg.eigvalsh(M[np.ix_(fi, fi)])
        scale = max(1.0, float(np.abs(M).max()))
        if np.any(np.abs(w - lam) <= POLE_TOL * scale * 1e3):
            raise PoleError(lam, float(w[np.argmin(np.abs(w - lam))]))
        B = M[np.ix_(hi, fi)]
        A = A - B @ np.linalg.solve(D, B.T)
    r = rows[hi]
    F[np.ix_(r, r)] += A
    return F
