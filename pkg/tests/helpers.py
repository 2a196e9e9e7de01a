"""Shared fixtures: cached solves, random graphs and an independent fiber assembler."""
from __future__ import annotations

import functools

import numpy as np

from guided_bands.cylinder import CylinderWindow
from guided_bands.feshbach import guided_spectrum_exact
from guided_bands.graph_model import (Attachment, GuideEdge, GuideSpec, IndexedEdge, PeriodicGraphSpec,
                                      QuotientVertex, SpecError, builtin_example, square_lattice, validate)
from guided_bands.guided import solve


def _key(params):
    return tuple(sorted(params.items()))


@functools.lru_cache(maxsize=None)
def _solved(name, key):
    spec, guide = builtin_example(name, dict(key))
    return solve(spec, guide, 201, CylinderWindow.build(spec, guide, 50, "periodic"))


def swept(name, **params):
    """Truncated sweep (W=50, periodic, 201 points) of a builtin, cached per session."""
    return _solved(name, _key(params))


@functools.lru_cache(maxsize=None)
def _exact(name, key):
    spec, guide = builtin_example(name, dict(key))
    return guided_spectrum_exact(spec, guide)


def exact(name, **params):
    return _exact(name, _key(params))


def above(spectrum):
    return [b for b in spectrum.above if not b.flat]


# --------------------------------------------------------------------------
# Random graphs
# --------------------------------------------------------------------------

def random_host(rng, max_nu=4, max_index=2, D=2):
    """Connected Z^D-periodic graph with at most ``max_nu`` quotient vertices."""
    while True:
        nu = int(rng.integers(1, max_nu + 1))
        ids = [f"q{i}" for i in range(nu)]
        edges, seen = [], set()
        for _ in range(int(rng.integers(D, D + 2 * nu + 1))):
            u, v = ids[rng.integers(nu)], ids[rng.integers(nu)]
            tau = tuple(int(x) for x in rng.integers(-max_index, max_index + 1, size=D))
            if u == v and not any(tau):
                continue
            key, rkey = (u, v, tau), (v, u, tuple(-x for x in tau))
            if key in seen or rkey in seen:
                continue
            seen.add(key)
            edges.append(IndexedEdge(u, v, tau, int(rng.integers(1, 3))))
        spec = PeriodicGraphSpec(D, tuple(QuotientVertex(i) for i in ids), tuple(edges))
        try:
            validate(spec, GuideSpec(1))
        except SpecError:
            continue
        return spec


def random_guide(rng, spec, max_vertices=4, max_offset=1, max_mult=3):
    """Random finite guide; every component gets at least one contact."""
    d = 1
    T = spec.dim_total - d
    while True:
        n = int(rng.integers(2, max_vertices + 1))
        verts = tuple(f"g{i}" for i in range(n))
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.5:
                    edges.append(GuideEdge(verts[i], verts[j], int(rng.integers(1, max_mult + 1))))
        g0 = GuideSpec(d, verts, tuple(edges))
        used, atts = set(), []
        for comp in g0.components():
            for v in comp:
                if v == comp[0] or rng.random() < 0.3:
                    for _ in range(20):
                        q = spec.vertex_ids[rng.integers(spec.nu)]
                        off = tuple(int(x) for x in rng.integers(-max_offset, max_offset + 1, size=T))
                        if (q, off) not in used:
                            used.add((q, off))
                            atts.append(Attachment(v, q, off))
                            break
        guide = GuideSpec(d, verts, tuple(edges), tuple(atts))
        try:
            validate(spec, guide)
        except SpecError:
            continue
        return guide


def random_square_guide(rng, max_vertices=6):
    """Random small guide on the square lattice (contacts on vertex ``o``)."""
    return random_guide(rng, square_lattice(), max_vertices=max_vertices, max_offset=2)


# --------------------------------------------------------------------------
# Independent assembly
# --------------------------------------------------------------------------

def naive_fiber(spec, guide, theta, W, boundary="periodic"):
    """Truncated fiber built from an unoriented edge list of the perturbed cylinder.

    Vertices are ``(q, cell)`` for host vertices and guide names for the rest;
    attached guide vertices are merged into their host image.
    """
    d = guide.dim_guide
    T = spec.dim_total - d
    L = 2 * W + 1
    theta = np.atleast_1d(theta)
    cells = [tuple(c) for c in np.array(np.meshgrid(*([np.arange(-W, W + 1)] * T), indexing="ij")).reshape(T, -1).T]
    names = [(q, c) for c in cells for q in spec.vertex_ids]
    att = guide.attached
    alias = {v: (att[v].lattice_vertex, tuple(att[v].transverse_offset)) for v in att}
    names += [v for v in guide.vertices if v not in att]
    pos = {x: i for i, x in enumerate(names)}
    n = len(names)
    A = np.zeros((n, n), dtype=complex)
    deg = np.zeros(n)
    links = []
    for e in spec.quotient_edges:
        tl, tt = np.array(e.index[:d]), np.array(e.index[d:])
        for c in cells:
            t = np.array(c) + tt
            if boundary == "periodic":
                t = (t + W) % L - W
            elif np.any(np.abs(t) > W):
                # edge leaves the window: it still counts in the degree
                deg[pos[(e.u, c)]] += e.multiplicity
                continue
            links.append(((e.u, c), (e.v, tuple(int(x) for x in t)), float(tl @ theta), e.multiplicity))
    for e in guide.edges:
        links.append((alias.get(e.u, e.u), alias.get(e.v, e.v), 0.0, e.multiplicity))
    for x, y, phase, m in links:
        i, j = pos[x], pos[y]
        A[i, j] += m * np.exp(1j * phase)
        A[j, i] += m * np.exp(-1j * phase)
        deg[i] += m
        deg[j] += m
    if boundary == "dirichlet":
        # an edge pointing out of the window from the other side was also cut
        for e in spec.quotient_edges:
            tt = np.array(e.index[d:])
            for c in cells:
                src = np.array(c) - tt
                if np.any(np.abs(src) > W):
                    deg[pos[(e.v, c)]] += e.multiplicity
    return np.diag(deg) - A


# --------------------------------------------------------------------------
# Invariant checks shared by the property and acceptance suites
# --------------------------------------------------------------------------

def property_failures(spec, guide, rng, W=4, n_theta=3):
    """Names of the fiber invariants violated by ``(spec, guide)`` (empty when all hold)."""
    from guided_bands.cylinder import (assemble_bridge_deleted, assemble_truncated_fiber, bridge_operator,
                                       guide_block, host_fiber)
    from guided_bands.graph_model import max_total_degree

    bad = []
    win = CylinderWindow.build(spec, guide, W)
    kappa = max_total_degree(spec, guide)
    G = assemble_bridge_deleted(spec, guide, win)
    pairs = list(spec.oriented_edges())
    if sorted((u, v, t, m) for u, v, t, m in pairs) != sorted((v, u, tuple(-x for x in t), m) for u, v, t, m in pairs):
        bad.append("antisymmetry")
    for th in rng.uniform(-np.pi, np.pi, size=(n_theta, guide.dim_guide)):
        A = assemble_truncated_fiber(spec, guide, th, win)
        if not np.allclose(A, A.conj().T, atol=1e-12):
            bad.append("hermitian")
        w = np.linalg.eigvalsh(A)
        if w[0] < -1e-9 or w[-1] > 2 * kappa + 1e-9:
            bad.append("bounds")
        if not np.allclose(A, host_fiber(spec, guide, th, win) + guide_block(guide, win), atol=1e-12):
            bad.append("host_guide_split")
        if not np.allclose(A, G + bridge_operator(spec, guide, th, win), atol=1e-12):
            bad.append("bridge_split")
        if not np.allclose(A, naive_fiber(spec, guide, th, W), atol=1e-12):
            bad.append("edge_list")
        wm = np.linalg.eigvalsh(assemble_truncated_fiber(spec, guide, -th, win))
        if not np.allclose(w, wm, atol=1e-9):
            bad.append("theta_symmetry")
    return sorted(set(bad))


def property_cases(n_random=50, seed=2024):
    """Builtin examples followed by ``n_random`` random hosts (nu <= 4, D = 2, |index| <= 2) with guides."""
    cases = [builtin_example(n, p) for n, p in [("square", {}), ("square_star", {"p": 3}),
                                               ("square_double_mandarin", {"s": 2}), ("square_path", {"t": 2}),
                                               ("square_multi_mandarin", {"p": 2}), ("square_pendant", {"t": 2})]]
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        spec = random_host(rng, max_nu=4, max_index=2, D=2)
        cases.append((spec, random_guide(rng, spec)))
    return cases


def flat_mismatch(spec, guide):
    """Certified flat bands against eigenvalues shared by every sampled theta; None when they agree."""
    from guided_bands.cylinder import guide_laplacian
    from guided_bands.guided import flat_bands, theta_independent_eigenvalues

    cert = sorted((round(f.value, 6), f.multiplicity) for f in flat_bands(guide_laplacian(guide)))
    num = sorted((round(v, 6), m) for v, m in theta_independent_eigenvalues(spec, guide))
    return None if cert == num else (cert, num)


def _with_twin_leaves(rng, guide):
    """Hang two or three leaves of equal multiplicity on one guide vertex."""
    hub = guide.vertices[rng.integers(guide.nu1)]
    m = int(rng.integers(1, 4))
    leaves = tuple(f"leaf{i}" for i in range(int(rng.integers(2, 4))))
    return GuideSpec(guide.dim_guide, guide.vertices + leaves,
                     guide.edges + tuple(GuideEdge(hub, x, m) for x in leaves), guide.attachments)


def flat_cases(n=20, seed=11):
    """Random square-lattice guides; every other one carries twin leaves."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        g = random_square_guide(rng, 6 if k % 2 == 0 else 3)
        out.append((square_lattice(), g if k % 2 == 0 else _with_twin_leaves(rng, g)))
    return out


# --------------------------------------------------------------------------
# Acceptance bookkeeping
# --------------------------------------------------------------------------

#: criterion number -> list of (clause, passed, detail)
ACCEPTANCE: dict[int, list] = {}


class Criterion:
    """Collects the clauses of one acceptance criterion and prints a single verdict line."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.clauses = ACCEPTANCE.setdefault(number, [])
        self._mine = []

    def check(self, clause: str, passed, detail: str = ""):
        item = (clause, bool(passed), detail)
        self.clauses.append(item)
        self._mine.append(item)
        return bool(passed)

    def finish(self):
        failed = [c for c in self._mine if not c[1]]
        verdict = "PASS" if not failed else "FAIL"
        print(f"criterion {self.number} [{self.title}]: {verdict} ({len(self._mine) - len(failed)}/{len(self._mine)} clauses)")
        for clause, _, detail in failed:
            print(f"    failed: {clause}: {detail}")
        assert not failed, "; ".join(f"{c}: {d}" for c, _, d in failed)


def acceptance_lines() -> list[str]:
    lines = []
    for n in sorted(ACCEPTANCE):
        items = ACCEPTANCE[n]
        failed = [c for c in items if not c[1]]
        lines.append(f"criterion {n}: {'PASS' if not failed else 'FAIL'} "
                     f"({len(items) - len(failed)}/{len(items)} clauses)")
        lines += [f"    failed clause: {c}: {d}" for c, _, d in failed]
    return lines
