"""Periodic graphs with guides: data model, validation and combinatorics.

A host graph is described by its finite quotient (vertices plus edges carrying
an integer translation index in Z^D).  A guide is a finite graph glued onto the
cylinder obtained by quotienting the host by its first ``d`` periods; each
attached guide vertex is identified with a host vertex in a given transverse
cell.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence


class SpecError(ValueError):
    """Raised when a graph document violates the schema or an invariant."""


class SpecParseError(SpecError):
    """Malformed document text; carries the line/column of the failure."""

    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + where)


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuotientVertex:
    id: str
    coords: tuple[Fraction, ...] | None = None


@dataclass(frozen=True)
class IndexedEdge:
    """Edge class of the periodic host.  ``index`` is the translation from the
    cell of ``u`` to the cell of ``v``; the reverse orientation carries ``-index``."""

    u: str
    v: str
    index: tuple[int, ...]
    multiplicity: int = 1


@dataclass(frozen=True)
class PeriodicGraphSpec:
    dim_total: int
    quotient_vertices: tuple[QuotientVertex, ...]
    quotient_edges: tuple[IndexedEdge, ...]

    @property
    def nu(self) -> int:
        return len(self.quotient_vertices)

    @property
    def vertex_ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.quotient_vertices)

    def position(self) -> dict[str, int]:
        return {vid: i for i, vid in enumerate(self.vertex_ids)}

    def oriented_edges(self) -> Iterator[tuple[str, str, tuple[int, ...], int]]:
        """Both orientations of every edge as ``(start, end, index, multiplicity)``."""
        for e in self.quotient_edges:
            yield e.u, e.v, e.index, e.multiplicity
            yield e.v, e.u, tuple(-x for x in e.index), e.multiplicity

    def degrees(self) -> dict[str, int]:
        deg = {vid: 0 for vid in self.vertex_ids}
        for u, _, _, m in self.oriented_edges():
            deg[u] += m
        return deg

    @property
    def max_degree(self) -> int:
        return max(self.degrees().values())


@dataclass(frozen=True)
class GuideEdge:
    u: str
    v: str
    multiplicity: int = 1


@dataclass(frozen=True)
class Attachment:
    guide_vertex: str
    lattice_vertex: str
    transverse_offset: tuple[int, ...]


@dataclass(frozen=True)
class GuideSpec:
    dim_guide: int
    vertices: tuple[str, ...] = ()
    edges: tuple[GuideEdge, ...] = ()
    attachments: tuple[Attachment, ...] = ()

    @property
    def nu1(self) -> int:
        return len(self.vertices)

    @property
    def attached(self) -> dict[str, Attachment]:
        return {a.guide_vertex: a for a in self.attachments}

    @property
    def contact_vertices(self) -> tuple[str, ...]:
        """The set V_01, in guide-vertex order."""
        att = self.attached
        return tuple(v for v in self.vertices if v in att)

    def degrees(self) -> dict[str, int]:
        deg = {v: 0 for v in self.vertices}
        for e in self.edges:
            deg[e.u] += e.multiplicity
            deg[e.v] += e.multiplicity
        return deg

    def components(self) -> list[list[str]]:
        parent = {v: v for v in self.vertices}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.edges:
            ru, rv = find(e.u), find(e.v)
            if ru != rv:
                parent[ru] = rv
        groups: dict[str, list[str]] = defaultdict(list)
        for v in self.vertices:
            groups[find(v)].append(v)
        return list(groups.values())

    @property
    def n_components(self) -> int:
        return len(self.components()) if self.vertices else 0

    def scaled(self, t: int) -> "GuideSpec":
        """Same guide with every edge multiplicity multiplied by ``t``."""
        if t < 1:
            raise SpecError("multiplicity scale t must be a positive integer")
        edges = tuple(GuideEdge(e.u, e.v, e.multiplicity * t) for e in self.edges)
        return GuideSpec(self.dim_guide, self.vertices, edges, self.attachments)


@dataclass(frozen=True)
class BridgeStats:
    beta_per_vertex: Mapping[str, int]
    beta_plus: int
    beta_01: int


# --------------------------------------------------------------------------
# Index arithmetic
# --------------------------------------------------------------------------

def compute_edge_indices(embedded_edges: Iterable[tuple[Sequence, Sequence]]) -> list[tuple[int, ...]]:
    """Edge indices ``[v] - [u]`` from endpoint coordinates in the period basis.

    ``[x]`` is the componentwise floor, so ``x = x_0 + [x]`` with ``x_0`` in the
    unit cell.

    >>> compute_edge_indices([((0.0, 0.0), (-0.5, 2.5))])
    [(-1, 2)]
    """
    out = []
    for u, v in embedded_edges:
        if len(u) != len(v):
            raise SpecError("endpoint coordinates have different lengths")
        out.append(tuple(math.floor(b) - math.floor(a) for a, b in zip(u, v)))
    return out


def split_index(index: Sequence[int], d: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split a full index into its longitudinal (first ``d``) and transverse parts."""
    if not 0 < d < len(index):
        raise SpecError("d must satisfy 0 < d < D")
    index = tuple(int(x) for x in index)
    return index[:d], index[d:]


def _integer_rank_and_unimodular(vectors: list[tuple[int, ...]], dim: int) -> bool:
    """True iff the integer vectors generate all of Z^dim (Hermite reduction)."""
    rows = [list(v) for v in vectors if any(v)]
    basis = []
    for col in range(dim):
        # Euclid on column ``col`` over the remaining rows
        while True:
            nz = [r for r in rows if r[col] != 0]
            if len(nz) <= 1:
                break
            nz.sort(key=lambda r: abs(r[col]))
            pivot = nz[0]
            for r in nz[1:]:
                q = r[col] // pivot[col]
                for k in range(dim):
                    r[k] -= q * pivot[k]
            rows = [r for r in rows if any(r)]
        nz = [r for r in rows if r[col] != 0]
        if not nz:
            return False
        pivot = nz[0]
        basis.append(abs(pivot[col]))
        rows = [r for r in rows if r is not pivot]
    return all(b == 1 for b in basis)


def _check_host_connected(spec: PeriodicGraphSpec) -> None:
    pos = spec.position()
    D = spec.dim_total
    # spanning tree potentials p(v) in Z^D; cycle translations generate the
    # subgroup of Z^D along which the periodic graph is connected
    potential: dict[str, tuple[int, ...]] = {}
    adj: dict[str, list[tuple[str, tuple[int, ...]]]] = defaultdict(list)
    for u, v, tau, _ in spec.oriented_edges():
        adj[u].append((v, tau))
    start = spec.vertex_ids[0]
    potential[start] = (0,) * D
    stack = [start]
    while stack:
        u = stack.pop()
        for v, tau in adj[u]:
            if v not in potential:
                potential[v] = tuple(a + b for a, b in zip(potential[u], tau))
                stack.append(v)
    if len(potential) != len(pos):
        missing = sorted(set(pos) - set(potential))
        raise SpecError(f"periodic graph is not connected: quotient vertices {missing} unreachable")
    cycles = []
    for e in spec.quotient_edges:
        cycles.append(tuple(pu + t - pv for pu, t, pv in zip(potential[e.u], e.index, potential[e.v])))
    if not _integer_rank_and_unimodular(cycles, D):
        raise SpecError("periodic graph is not connected: edge indices do not generate Z^D")


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def validate(spec: PeriodicGraphSpec, guide: GuideSpec) -> None:
    D = spec.dim_total
    if D < 1:
        raise SpecError("dim_total must be >= 1")
    if not spec.quotient_vertices:
        raise SpecError("at least one quotient vertex is required")
    ids = spec.vertex_ids
    if len(set(ids)) != len(ids):
        raise SpecError("quotient vertex ids must be unique")
    for qv in spec.quotient_vertices:
        if qv.coords is not None:
            if len(qv.coords) != D:
                raise SpecError(f"coords of vertex {qv.id!r} must have length {D}")
            if any(not 0 <= c < 1 for c in qv.coords):
                raise SpecError(f"coords of vertex {qv.id!r} must lie in the unit cell [0,1)^D")
    idset = set(ids)
    seen = set()
    for e in spec.quotient_edges:
        if e.u not in idset or e.v not in idset:
            raise SpecError(f"edge ({e.u!r}, {e.v!r}) references unknown quotient vertex")
        if len(e.index) != D:
            raise SpecError(f"edge ({e.u!r}, {e.v!r}) index must have length {D}")
        if e.multiplicity < 1:
            raise SpecError(f"edge ({e.u!r}, {e.v!r}) multiplicity must be >= 1")
        key = (e.u, e.v, e.index)
        rkey = (e.v, e.u, tuple(-x for x in e.index))
        if key in seen or rkey in seen:
            raise SpecError(f"edge ({e.u!r}, {e.v!r}, {list(e.index)}) listed twice; "
                            "use the multiplicity field")
        seen.add(key)
    deg = spec.degrees()
    lonely = [v for v, k in deg.items() if k == 0]
    if lonely:
        raise SpecError(f"quotient vertices with degree 0: {lonely}")
    _check_host_connected(spec)

    d = guide.dim_guide
    if not 1 <= d < D:
        raise SpecError(f"d must satisfy d < D (got d={d}, D={D})")
    gids = guide.vertices
    if len(set(gids)) != len(gids):
        raise SpecError("guide vertex ids must be unique")
    gset = set(gids)
    for e in guide.edges:
        if e.u not in gset or e.v not in gset:
            raise SpecError(f"guide edge ({e.u!r}, {e.v!r}) references unknown guide vertex")
        if e.multiplicity < 1:
            raise SpecError(f"guide edge ({e.u!r}, {e.v!r}) multiplicity must be >= 1")
    targets = set()
    attached = set()
    for a in guide.attachments:
        if a.guide_vertex not in gset:
            raise SpecError(f"attachment references unknown guide vertex {a.guide_vertex!r}")
        if a.lattice_vertex not in idset:
            raise SpecError(f"guide attachment references unknown quotient vertex {a.lattice_vertex!r}")
        if len(a.transverse_offset) != D - d:
            raise SpecError(f"transverse_offset of {a.guide_vertex!r} must have length D-d={D - d}")
        if a.guide_vertex in attached:
            raise SpecError(f"guide vertex {a.guide_vertex!r} attached twice")
        target = (a.lattice_vertex, tuple(a.transverse_offset))
        if target in targets:
            raise SpecError(f"two guide vertices attached to the same cylinder vertex {target}")
        attached.add(a.guide_vertex)
        targets.add(target)
    for comp in guide.components():
        if not any(v in attached for v in comp):
            raise SpecError(f"guide component {sorted(comp)} is not attached; "
                            "the perturbed graph would be disconnected")


# --------------------------------------------------------------------------
# Document I/O
# --------------------------------------------------------------------------

def _as_int_tuple(x, what: str) -> tuple[int, ...]:
    if not isinstance(x, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in x):
        raise SpecError(f"{what} must be a list of integers")
    return tuple(x)


def _as_mult(obj: dict, what: str) -> int:
    m = obj.get("multiplicity", 1)
    if not isinstance(m, int) or isinstance(m, bool):
        raise SpecError(f"{what} multiplicity must be an integer")
    return m


def _require(obj, key, what):
    if not isinstance(obj, dict) or key not in obj:
        raise SpecError(f"{what} is missing required field {key!r}")
    return obj[key]


def from_document(doc: dict) -> tuple[PeriodicGraphSpec, GuideSpec]:
    """Build and validate specs from an already-parsed document."""
    if not isinstance(doc, dict):
        raise SpecError("document root must be an object")
    D = _require(doc, "dim_total", "document")
    d = _require(doc, "dim_guide", "document")
    if not isinstance(D, int) or not isinstance(d, int):
        raise SpecError("dim_total and dim_guide must be integers")
    verts = []
    for i, qv in enumerate(_require(doc, "quotient_vertices", "document")):
        vid = _require(qv, "id", f"quotient_vertices[{i}]")
        coords = qv.get("coords")
        if coords is not None:
            try:
                coords = tuple(Fraction(str(c)) for c in coords)
            except (ValueError, TypeError) as exc:
                raise SpecError(f"quotient_vertices[{i}].coords: {exc}") from None
        verts.append(QuotientVertex(str(vid), coords))
    edges = []
    for i, e in enumerate(_require(doc, "quotient_edges", "document")):
        what = f"quotient_edges[{i}]"
        edges.append(IndexedEdge(str(_require(e, "u", what)), str(_require(e, "v", what)),
                                 _as_int_tuple(_require(e, "index", what), f"{what}.index"),
                                 _as_mult(e, what)))
    g = doc.get("guide") or {}
    gverts = tuple(str(v) for v in g.get("vertices", []))
    gedges = []
    for i, e in enumerate(g.get("edges", [])):
        what = f"guide.edges[{i}]"
        gedges.append(GuideEdge(str(_require(e, "u", what)), str(_require(e, "v", what)), _as_mult(e, what)))
    atts = []
    for i, a in enumerate(g.get("attachments", [])):
        what = f"guide.attachments[{i}]"
        atts.append(Attachment(str(_require(a, "guide_vertex", what)),
                               str(_require(a, "lattice_vertex", what)),
                               _as_int_tuple(_require(a, "transverse_offset", what), f"{what}.transverse_offset")))
    spec = PeriodicGraphSpec(D, tuple(verts), tuple(edges))
    guide = GuideSpec(d, gverts, tuple(gedges), tuple(atts))
    validate(spec, guide)
    return spec, guide


def load_spec(document: str) -> tuple[PeriodicGraphSpec, GuideSpec]:
    """Parse a JSON graph document and validate it."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return from_document(doc)


def to_document(spec: PeriodicGraphSpec, guide: GuideSpec) -> dict:
    def num(c: Fraction):
        return int(c) if c.denominator == 1 else str(c)

    verts = []
    for qv in spec.quotient_vertices:
        item: dict = {"id": qv.id}
        if qv.coords is not None:
            item["coords"] = [num(c) for c in qv.coords]
        verts.append(item)
    return {
        "dim_total": spec.dim_total,
        "dim_guide": guide.dim_guide,
        "quotient_vertices": verts,
        "quotient_edges": [{"u": e.u, "v": e.v, "index": list(e.index), "multiplicity": e.multiplicity}
                           for e in spec.quotient_edges],
        "guide": {
            "vertices": list(guide.vertices),
            "edges": [{"u": e.u, "v": e.v, "multiplicity": e.multiplicity} for e in guide.edges],
            "attachments": [{"guide_vertex": a.guide_vertex, "lattice_vertex": a.lattice_vertex,
                             "transverse_offset": list(a.transverse_offset)} for a in guide.attachments],
        },
    }


def dump_spec(spec: PeriodicGraphSpec, guide: GuideSpec) -> str:
    return json.dumps(to_document(spec, guide), indent=2)


# --------------------------------------------------------------------------
# Bridges
# --------------------------------------------------------------------------

def bridge_stats(spec: PeriodicGraphSpec, guide: GuideSpec) -> BridgeStats:
    """Count oriented bridges (edges with nonzero longitudinal index) on the cylinder."""
    d = guide.dim_guide
    beta = {vid: 0 for vid in spec.vertex_ids}
    for u, _, tau, m in spec.oriented_edges():
        if any(tau[:d]):
            beta[u] += m
    per_vertex = dict(beta)
    for g in guide.vertices:
        if g not in guide.attached:
            per_vertex[g] = 0
    beta_plus = max(per_vertex.values())

    contacts = {(a.lattice_vertex, a.transverse_offset) for a in guide.attachments}
    beta_01 = 0
    for q, n in contacts:
        for u, v, tau, m in spec.oriented_edges():
            if u != q or not any(tau[:d]):
                continue
            end = (v, tuple(a + b for a, b in zip(n, tau[d:])))
            if end in contacts:
                beta_01 += m
    return BridgeStats(per_vertex, beta_plus, beta_01)


def summary(spec: PeriodicGraphSpec, guide: GuideSpec) -> dict:
    bs = bridge_stats(spec, guide)
    c = guide.n_components
    return {
        "dim_total": spec.dim_total,
        "dim_guide": guide.dim_guide,
        "nu": spec.nu,
        "nu1": guide.nu1,
        "components": c,
        "p": guide.nu1 - c,
        "beta_plus": bs.beta_plus,
        "beta_01": bs.beta_01,
        "kappa_plus": max_total_degree(spec, guide),
    }


def max_total_degree(spec: PeriodicGraphSpec, guide: GuideSpec) -> int:
    """Largest vertex degree of the perturbed graph."""
    deg = dict(spec.degrees())
    gdeg = guide.degrees()
    best = max(deg.values())
    att = guide.attached
    for v in guide.vertices:
        extra = deg[att[v].lattice_vertex] if v in att else 0
        best = max(best, gdeg[v] + extra)
    return best


# --------------------------------------------------------------------------
# Builtin families
# --------------------------------------------------------------------------

def square_lattice() -> PeriodicGraphSpec:
    return PeriodicGraphSpec(
        2, (QuotientVertex("o", (Fraction(0), Fraction(0))),),
        (IndexedEdge("o", "o", (1, 0)), IndexedEdge("o", "o", (0, 1))))


def _positive(params: Mapping[str, int], key: str, default: int | None = None) -> int:
    if key not in params:
        if default is None:
            raise SpecError(f"missing parameter {key!r}")
        return default
    val = params[key]
    if not isinstance(val, int) or val < 1:
        raise SpecError(f"parameter {key!r} must be a positive integer")
    return val


def _star(p: int, t: int) -> GuideSpec:
    verts = ("c",) + tuple(f"x{i}" for i in range(1, p + 1))
    edges = tuple(GuideEdge("c", f"x{i}", t) for i in range(1, p + 1))
    return GuideSpec(1, verts, edges, (Attachment("c", "o", (0,)),))


def _double_mandarin(s: int, t: int) -> GuideSpec:
    edges = (GuideEdge("v1", "v2", s * t), GuideEdge("v1", "v3", s * t))
    return GuideSpec(1, ("v1", "v2", "v3"), edges, (Attachment("v1", "o", (0,)),))


def _path(t: int) -> GuideSpec:
    edges = (GuideEdge("v1", "v2", t), GuideEdge("v2", "v3", t))
    return GuideSpec(1, ("v1", "v2", "v3"), edges, (Attachment("v1", "o", (0,)),))


def _multi_mandarin(p: int, t: int) -> GuideSpec:
    verts, edges, atts = [], [], []
    for j in range(1, p + 1):
        verts += [f"u{j}", f"v{j}"]
        edges.append(GuideEdge(f"u{j}", f"v{j}", j * t))
        atts.append(Attachment(f"u{j}", "o", (j - 1,)))
    return GuideSpec(1, tuple(verts), tuple(edges), tuple(atts))


def decorated_square_lattice() -> PeriodicGraphSpec:
    """Square lattice with one pendant vertex ``w`` per cell; ``w`` has no bridges."""
    return PeriodicGraphSpec(
        2, (QuotientVertex("o"), QuotientVertex("w")),
        (IndexedEdge("o", "o", (1, 0)), IndexedEdge("o", "o", (0, 1)), IndexedEdge("o", "w", (0, 0))))


BUILTIN_NAMES = ("square", "square_star", "square_double_mandarin", "square_path",
                 "square_multi_mandarin", "square_pendant")


def builtin_example(name: str, params: Mapping[str, int] | None = None) -> tuple[PeriodicGraphSpec, GuideSpec]:
    """Builtin host/guide configurations.

    ``square``                  unperturbed square lattice (empty guide)
    ``square_star(p, t=1)``     star with ``p`` pendants at each vertex of Z x {0}
    ``square_double_mandarin(s, t=1)``  two ``s``-mandarins sharing the contact vertex
    ``square_path(t)``          path of length 2, each edge of multiplicity ``t``
    ``square_multi_mandarin(p, t=1)``   components j = 1..p, each two vertices joined
                                by ``j`` edges, contacts in consecutive transverse cells
    ``square_pendant(t)``       pendant of multiplicity ``t`` attached to a bridge-free
                                vertex of the decorated square lattice

    The optional ``t`` scales every guide edge multiplicity.
    """
    params = dict(params or {})
    if name == "square":
        spec, guide = square_lattice(), GuideSpec(1)
    elif name == "square_star":
        spec, guide = square_lattice(), _star(_positive(params, "p"), _positive(params, "t", 1))
    elif name == "square_double_mandarin":
        spec, guide = square_lattice(), _double_mandarin(_positive(params, "s"), _positive(params, "t", 1))
    elif name == "square_path":
        spec, guide = square_lattice(), _path(_positive(params, "t"))
    elif name == "square_multi_mandarin":
        spec, guide = square_lattice(), _multi_mandarin(_positive(params, "p"), _positive(params, "t", 1))
    elif name == "square_pendant":
        t = _positive(params, "t")
        guide = GuideSpec(1, ("g", "x"), (GuideEdge("g", "x", t),), (Attachment("g", "w", (0,)),))
        spec = decorated_square_lattice()
    else:
        raise SpecError(f"unknown builtin example {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    validate(spec, guide)
    return spec, guide
