"""Simplicial complexes with piecewise-flat metrics.

A complex of dimension n (n = 1 or 2) is described by its maximal
simplices and a positive length for every edge.  This module builds the
combinatorial structure (faces, adjacency, skeleton classification,
links) and checks admissibility: dimensional homogeneity plus
chainability through codimension-one faces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping, Sequence

BARY_TOL = 1e-12

BUNDLED_NAMES = (
    "interval",
    "star_2",
    "star_3",
    "star_5",
    "square",
    "book_2",
    "book_3",
    "book_5",
)


class ComplexError(ValueError):
    """Malformed complex description."""


class LinkUndefinedError(ValueError):
    """Link requested on the codimension-2 skeleton."""


class PointClass(Enum):
    INTERIOR = "interior"
    FACE_INTERIOR = "face-interior"
    CODIM2 = "codim-2"


@dataclass(frozen=True)
class Simplex:
    """A simplex given by sorted vertex indices."""

    dim: int
    index: int
    vertices: tuple[int, ...]

    def facets(self) -> list[tuple[int, ...]]:
        vs = self.vertices
        return [tuple(v for j, v in enumerate(vs) if j != i) for i in range(len(vs))]


@dataclass(frozen=True)
class Point:
    """A point as (maximal simplex index, barycentric coordinates).

    Coordinates follow the order of ``Simplex.vertices`` and sum to one.
    """

    simplex: int
    bary: tuple[float, ...]


@dataclass(frozen=True)
class LinkBranch:
    simplex: int
    mass: float


@dataclass(frozen=True)
class Link:
    """Directions available at a point, grouped by adjacent maximal simplex.

    Each branch carries equal sampling mass 1/k.  At a manifold point the
    link is the full sphere of directions inside the single host simplex
    (k = 1); on an open codimension-one face there is one half-sphere
    branch per adjacent maximal simplex.
    """

    point: Point
    kind: PointClass
    branches: tuple[LinkBranch, ...]
    face: int | None = None

    @property
    def k(self) -> int:
        return len(self.branches)


class Polyhedron:
    """A piecewise-flat simplicial complex of dimension 1 or 2.

    Instances are immutable in spirit; geometry caches attach lazily.
    Equality is identity, which lets chart atlases be cached per object.
    """

    def __init__(
        self,
        dimension: int,
        vertex_ids: Sequence[str],
        maximal: Sequence[Simplex],
        stray: Sequence[Simplex],
        faces: Sequence[Simplex],
        adjacency: Sequence[tuple[int, ...]],
        edge_lengths: Mapping[tuple[int, int], float],
    ) -> None:
        self.dimension = dimension
        self.vertex_ids = tuple(vertex_ids)
        self.vertex_index = {v: i for i, v in enumerate(self.vertex_ids)}
        self.maximal = tuple(maximal)
        self.stray = tuple(stray)
        self.faces = tuple(faces)
        self.face_of = {f.vertices: f.index for f in self.faces}
        self.adjacency = tuple(tuple(a) for a in adjacency)
        self.edge_lengths = dict(edge_lengths)
        self._atlas = None  # populated by geometry.get_atlas

    # -- basic queries -------------------------------------------------

    def edge_length(self, i: int, j: int) -> float:
        return self.edge_lengths[(i, j) if i < j else (j, i)]

    def face_index(self, vertices: Iterable[int]) -> int:
        key = tuple(sorted(vertices))
        if key not in self.face_of:
            raise ComplexError(f"no such face: {key}")
        return self.face_of[key]

    def maximal_with_vertex(self, v: int) -> list[int]:
        return [s.index for s in self.maximal if v in s.vertices]

    def simplex_volume(self, s: int) -> float:
        """Length (n=1) or flat area (n=2) of a maximal simplex."""
        vs = self.maximal[s].vertices
        if self.dimension == 1:
            return self.edge_length(*vs)
        a = self.edge_length(vs[0], vs[1])
        b = self.edge_length(vs[0], vs[2])
        c = self.edge_length(vs[1], vs[2])
        p = 0.5 * (a + b + c)
        rad = p * (p - a) * (p - b) * (p - c)
        if rad <= 0.0:
            raise ComplexError(f"degenerate triangle {vs}")
        return math.sqrt(rad)

    def total_volume(self) -> float:
        return sum(self.simplex_volume(s.index) for s in self.maximal)

    def star_of_point(self, point: Point) -> tuple[int, ...]:
        """Maximal simplices whose closure contains the point."""
        kind, where = classify_point(self, point)
        if kind is PointClass.INTERIOR:
            return (point.simplex,)
        if kind is PointClass.FACE_INTERIOR:
            return self.adjacency[where]
        return tuple(sorted(self.maximal_with_vertex(where)))

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"Polyhedron(n={self.dimension}, vertices={len(self.vertex_ids)}, "
            f"maximal={len(self.maximal)}, faces={len(self.faces)})"
        )


@dataclass
class AdmissibilityReport:
    """Outcome of the admissibility checks, with offending items listed."""

    dimensionally_homogeneous: bool
    stray_simplices: list[tuple[str, ...]]
    isolated_vertices: list[str]
    chainable: bool
    components: int
    star_failures: list[str]

    @property
    def passed(self) -> bool:
        return self.dimensionally_homogeneous and self.chainable and not self.star_failures

    def summary(self) -> str:
        lines = [
            f"dimensional homogeneity: {'ok' if self.dimensionally_homogeneous else 'FAIL'}",
            f"codim-1 chainability:    {'ok' if self.chainable else 'FAIL'}"
            + ("" if self.chainable else f" ({self.components} components)"),
        ]
        if self.stray_simplices:
            lines.append(f"  stray simplices: {self.stray_simplices}")
        if self.isolated_vertices:
            lines.append(f"  isolated vertices: {self.isolated_vertices}")
        if self.star_failures:
            lines.append(f"  non-chainable vertex stars: {self.star_failures}")
        lines.append(f"admissible: {'yes' if self.passed else 'no'}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# construction


def _edge_key_str(a: str, b: str) -> str:
    return f"{a}-{b}" if a < b else f"{b}-{a}"


def build_complex(spec: Mapping) -> Polyhedron:
    """Build a Polyhedron from a parsed description.

    Expected keys: ``dimension``, ``vertices`` (list of string ids),
    ``simplices`` (vertex-id tuples of the maximal simplices) and
    ``edge_lengths`` (map from "a-b" with lexicographically sorted ids to
    a positive length).  An optional ``simplex_edge_lengths`` list may
    override lengths per maximal simplex; inconsistent overrides on a
    shared face are rejected.
    """
    try:
        dimension = int(spec["dimension"])
        vertex_ids = list(spec["vertices"])
        simplex_lists = list(spec["simplices"])
        raw_lengths = dict(spec["edge_lengths"])
    except (KeyError, TypeError) as exc:
        raise ComplexError(f"missing or malformed field: {exc}") from exc

    if dimension not in (1, 2):
        raise ComplexError(f"dimension must be 1 or 2, got {dimension}")
    if len(set(vertex_ids)) != len(vertex_ids):
        raise ComplexError("duplicate vertex ids")
    vindex = {v: i for i, v in enumerate(vertex_ids)}

    seen: set[tuple[int, ...]] = set()
    maximal: list[Simplex] = []
    stray: list[Simplex] = []
    for entry in simplex_lists:
        try:
            verts = tuple(sorted(vindex[v] for v in entry))
        except KeyError as exc:
            raise ComplexError(f"simplex references unknown vertex {exc}") from exc
        if len(set(verts)) != len(verts):
            raise ComplexError(f"repeated vertex in simplex {tuple(entry)}")
        dim = len(verts) - 1
        if dim > dimension:
            raise ComplexError(f"simplex {tuple(entry)} exceeds declared dimension")
        if verts in seen:
            raise ComplexError(f"duplicate simplex {tuple(entry)}")
        seen.add(verts)
        if dim == dimension:
            maximal.append(Simplex(dim, len(maximal), verts))
        else:
            stray.append(Simplex(dim, len(stray), verts))
    if not maximal:
        raise ComplexError("no maximal simplex of the declared dimension")

    # resolve the metric; a single global map is consistent by construction,
    # per-simplex overrides must agree on shared edges
    overrides = spec.get("simplex_edge_lengths")
    edge_lengths: dict[tuple[int, int], float] = {}

    def _set_length(i: int, j: int, value: float, origin: str) -> None:
        key = (i, j) if i < j else (j, i)
        value = float(value)
        if value <= 0.0 or not math.isfinite(value):
            raise ComplexError(f"non-positive length for edge {origin}")
        if key in edge_lengths and abs(edge_lengths[key] - value) > 1e-12 * max(1.0, value):
            raise ComplexError(f"inconsistent shared-face lengths at edge {origin}")
        edge_lengths[key] = value

    for s_pos, s in enumerate(maximal):
        vs = s.vertices
        for a in range(len(vs)):
            for b in range(a + 1, len(vs)):
                ia, ib = vs[a], vs[b]
                name = _edge_key_str(vertex_ids[ia], vertex_ids[ib])
                value = None
                if overrides is not None and s_pos < len(overrides):
                    value = overrides[s_pos].get(name)
                if value is None:
                    value = raw_lengths.get(name)
                if value is None:
                    raise ComplexError(f"missing edge length for {name}")
                _set_length(ia, ib, value, name)

    if dimension == 2:
        for s in maximal:
            u, v, w = s.vertices
            a = edge_lengths[(u, v)]
            b = edge_lengths[(u, w)]
            c = edge_lengths[(v, w)]
            if a + b <= c or a + c <= b or b + c <= a:
                raise ComplexError(
                    f"degenerate triangle {tuple(vertex_ids[i] for i in s.vertices)}"
                )

    # synthesize codimension-one faces and adjacency
    face_map: dict[tuple[int, ...], list[int]] = {}
    for s in maximal:
        for f in s.facets():
            face_map.setdefault(f, []).append(s.index)
    faces = []
    adjacency = []
    for verts in sorted(face_map):
        faces.append(Simplex(dimension - 1, len(faces), verts))
        adjacency.append(tuple(sorted(face_map[verts])))

    return Polyhedron(dimension, vertex_ids, maximal, stray, faces, adjacency, edge_lengths)


def load_complex(path) -> Polyhedron:
    """Read a complex description from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        return build_complex(json.load(fh))


def bundled_complex(name: str) -> Polyhedron:
    """Load one of the complexes shipped with the package."""
    if name not in BUNDLED_NAMES:
        raise ComplexError(f"unknown bundled complex {name!r}; have {BUNDLED_NAMES}")
    text = resources.files("polybrownian.data").joinpath(f"{name}.json").read_text()
    return build_complex(json.loads(text))


def make_star(k: int, edge_length: float = 1.0) -> Polyhedron:
    """A 1-dimensional star with k unit edges around a central vertex."""
    if k < 1:
        raise ComplexError("star needs at least one edge")
    vertices = ["c"] + [f"v{i}" for i in range(1, k + 1)]
    simplices = [["c", f"v{i}"] for i in range(1, k + 1)]
    lengths = {_edge_key_str("c", f"v{i}"): edge_length for i in range(1, k + 1)}
    return build_complex(
        {"dimension": 1, "vertices": vertices, "simplices": simplices, "edge_lengths": lengths}
    )


# ---------------------------------------------------------------------------
# admissibility


def validate_admissible(P: Polyhedron) -> AdmissibilityReport:
    """Check dimensional homogeneity and codimension-one chainability.

    Chainability is tested on the whole complex and on the star of every
    vertex: the maximal simplices of such a set must be connected through
    shared codimension-one faces (through faces containing the vertex,
    for stars).
    """
    used = set()
    for s in P.maximal:
        used.update(s.vertices)
    isolated = [P.vertex_ids[i] for i in range(len(P.vertex_ids)) if i not in used]
    stray = [tuple(P.vertex_ids[v] for v in s.vertices) for s in P.stray]
    homogeneous = not stray and not isolated

    components = _dual_components(P, [s.index for s in P.maximal], None)
    chainable = components == 1

    star_failures: list[str] = []
    if P.dimension == 2:
        for v in range(len(P.vertex_ids)):
            members = P.maximal_with_vertex(v)
            if len(members) <= 1:
                continue
            if _dual_components(P, members, v) != 1:
                star_failures.append(P.vertex_ids[v])

    return AdmissibilityReport(
        dimensionally_homogeneous=homogeneous,
        stray_simplices=stray,
        isolated_vertices=isolated,
        chainable=chainable,
        components=components,
        star_failures=star_failures,
    )


def _dual_components(P: Polyhedron, members: list[int], through_vertex: int | None) -> int:
    """Connected components of the dual graph restricted to ``members``.

    Edges of the dual graph are shared codimension-one faces; when
    ``through_vertex`` is given only faces containing it count.
    """
    member_set = set(members)
    neighbors: dict[int, set[int]] = {m: set() for m in members}
    for f in P.faces:
        if through_vertex is not None and through_vertex not in f.vertices:
            continue
        adj = [s for s in P.adjacency[f.index] if s in member_set]
        for a in adj:
            for b in adj:
                if a != b:
                    neighbors[a].add(b)
    seen: set[int] = set()
    components = 0
    for m in members:
        if m in seen:
            continue
        components += 1
        stack = [m]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(neighbors[cur] - seen)
    return components


# ---------------------------------------------------------------------------
# points, classification, links


def point_from_bary(P: Polyhedron, simplex: int, bary: Sequence[float]) -> Point:
    b = tuple(float(x) for x in bary)
    if len(b) != P.dimension + 1:
        raise ComplexError(f"barycentric tuple must have {P.dimension + 1} entries")
    if any(x < -BARY_TOL for x in b) or abs(sum(b) - 1.0) > 1e-9:
        raise ComplexError(f"invalid barycentric coordinates {b}")
    return Point(simplex, b)


def classify_point(P: Polyhedron, point: Point) -> tuple[PointClass, int | None]:
    """Classify a point by the zero pattern of its barycentric coordinates.

    Returns (class, where): ``where`` is the face index for face-interior
    points, the vertex index for codimension-2 points, None otherwise.
    """
    s = P.maximal[point.simplex]
    zeros = [i for i, x in enumerate(point.bary) if abs(x) <= BARY_TOL]
    if not zeros:
        return PointClass.INTERIOR, None
    if len(zeros) == 1:
        facet = tuple(v for j, v in enumerate(s.vertices) if j != zeros[0])
        return PointClass.FACE_INTERIOR, P.face_of[facet]
    # two zero coordinates: the point sits at a vertex (n = 2 only)
    live = max(range(len(point.bary)), key=lambda i: point.bary[i])
    return PointClass.CODIM2, s.vertices[live]


def link_at(P: Polyhedron, point: Point) -> Link:
    """The link of a point: branches of directions with equal mass 1/k."""
    kind, where = classify_point(P, point)
    if kind is PointClass.CODIM2:
        raise LinkUndefinedError(
            "link undefined at codimension-2 point in this artifact"
        )
    if kind is PointClass.INTERIOR:
        return Link(point, kind, (LinkBranch(point.simplex, 1.0),), None)
    adj = P.adjacency[where]
    mass = 1.0 / len(adj)
    return Link(point, kind, tuple(LinkBranch(s, mass) for s in adj), where)


def sample_point(P: Polyhedron, rng) -> Point:
    """Sample a point uniformly with respect to the volume measure."""
    vols = [P.simplex_volume(s.index) for s in P.maximal]
    total = sum(vols)
    u = rng.random() * total
    acc = 0.0
    chosen = len(vols) - 1
    for i, v in enumerate(vols):
        acc += v
        if u <= acc:
            chosen = i
            break
    b = rng.dirichlet([1.0] * (P.dimension + 1))
    return Point(chosen, tuple(float(x) for x in b))
