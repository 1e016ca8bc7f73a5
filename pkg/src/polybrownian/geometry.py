"""Flat charts, face transitions and geodesic tracing.

Every maximal simplex gets a Euclidean chart (edges on the line,
triangles with their longest edge on the x-axis).  Crossing a
codimension-one face is an affine isometry between the two charts that
matches the shared face pointwise; the tangential component of a
direction is preserved and the normal component is re-emitted into the
chosen simplex.  The same machinery covers deterministic unfolding
(k = 2), uniform branching (k >= 3, incoming simplex included) and
reflection at boundary faces (k = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .complexes import (
    BARY_TOL,
    ComplexError,
    Link,
    Point,
    PointClass,
    Polyhedron,
    classify_point,
    link_at,
)

DIST_RTOL = 1e-12


class Codim2HitError(RuntimeError):
    """A traced segment reached the codimension-2 skeleton."""


class GeodesicError(RuntimeError):
    """Tracing failed (crossing budget exhausted or bad state)."""


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class Chart:
    """Flat chart of one maximal simplex.

    ``vertices`` holds chart positions row-aligned with the simplex's
    sorted vertex tuple.  ``bary_matrix`` and ``bary_offset`` give the
    affine map x -> barycentric coordinates.  Facet row i is the face
    opposite vertex i; tangents follow the canonical (sorted) vertex
    order of the face so that adjacent charts orient faces identically.
    """

    simplex: int
    vertices: np.ndarray
    bary_matrix: np.ndarray
    bary_offset: np.ndarray
    facet_face: np.ndarray
    facet_anchor: np.ndarray
    facet_tangent: np.ndarray
    facet_normal: np.ndarray  # unit outward normals

    def to_chart(self, bary: Sequence[float]) -> np.ndarray:
        return np.asarray(bary, dtype=float) @ self.vertices

    def from_chart(self, x: np.ndarray) -> np.ndarray:
        return self.bary_matrix @ np.asarray(x, dtype=float) + self.bary_offset


@dataclass(frozen=True)
class Crossing:
    """Transition data for one (simplex, facet) pair.

    ``targets`` lists the maximal simplices adjacent to the face (sorted,
    the source included); ``linear``/``offset`` hold one affine map per
    target taking source-chart positions on the face to target-chart
    positions, with the linear part transporting directions.  The map to
    the source itself is the reflection about the face.
    """

    face: int
    targets: np.ndarray
    self_index: int
    other_index: int
    linear: np.ndarray
    offset: np.ndarray

    @property
    def k(self) -> int:
        return len(self.targets)


def _build_chart(P: Polyhedron, s: int) -> tuple[np.ndarray, ...]:
    verts = P.maximal[s].vertices
    n = P.dimension
    if n == 1:
        L = P.edge_length(*verts)
        pos = np.array([[0.0], [L]])
        return (pos,)
    i0, i1, i2 = verts
    l01 = P.edge_length(i0, i1)
    l02 = P.edge_length(i0, i2)
    l12 = P.edge_length(i1, i2)
    pairs = [((0, 1), l01), ((0, 2), l02), ((1, 2), l12)]
    (a, b), base = max(pairs, key=lambda kv: (kv[1], -kv[0][0], -kv[0][1]))
    c = next(i for i in range(3) if i not in (a, b))
    lac = P.edge_length(verts[a], verts[c])
    lbc = P.edge_length(verts[b], verts[c])
    x = (lac * lac + base * base - lbc * lbc) / (2.0 * base)
    y_sq = lac * lac - x * x
    if y_sq <= 0.0:
        raise ComplexError(f"degenerate triangle {verts}")
    pos = np.zeros((3, 2))
    pos[a] = (0.0, 0.0)
    pos[b] = (base, 0.0)
    pos[c] = (x, math.sqrt(y_sq))
    return (pos,)


class Atlas:
    """Charts plus crossing maps for a polyhedron, with packed arrays
    used by the vectorized tracer."""

    def __init__(self, P: Polyhedron) -> None:
        self.poly = P
        n = P.dimension
        self.dim = n
        m = len(P.maximal)
        charts: list[Chart] = []
        for s in range(m):
            (pos,) = _build_chart(P, s)
            verts = P.maximal[s].vertices
            # affine chart -> barycentric map
            V = pos[1:].T - pos[0][:, None]
            Vinv = np.linalg.inv(V)
            G = np.zeros((n + 1, n))
            G[1:] = Vinv
            G[0] = -G[1:].sum(axis=0)
            c = np.zeros(n + 1)
            c[1:] = -G[1:] @ pos[0]
            c[0] = 1.0 - c[1:].sum()
            facet_face = np.zeros(n + 1, dtype=np.int64)
            anchor = np.zeros((n + 1, n))
            tangent = np.zeros((n + 1, n))
            normal = np.zeros((n + 1, n))
            for i in range(n + 1):
                fverts = tuple(v for j, v in enumerate(verts) if j != i)
                facet_face[i] = P.face_of[fverts]
                rows = [j for j in range(n + 1) if j != i]
                anchor[i] = pos[rows[0]]
                if n == 2:
                    t = pos[rows[1]] - pos[rows[0]]
                    t = t / np.linalg.norm(t)
                    tangent[i] = t
                    nu = np.array([-t[1], t[0]])
                    if nu @ (pos[i] - anchor[i]) > 0.0:
                        nu = -nu
                    normal[i] = nu
                else:
                    normal[i] = np.array([1.0]) if anchor[i][0] > pos[i][0] else np.array([-1.0])
            charts.append(
                Chart(s, pos, G, c, facet_face, anchor, tangent, normal)
            )
        self.charts = charts

        # packed per-simplex arrays for the tracer
        self.Gs = np.stack([c.bary_matrix for c in charts])
        self.cs = np.stack([c.bary_offset for c in charts])
        self.corners = np.stack([c.vertices for c in charts])
        self.k_of = np.zeros((m, n + 1), dtype=np.int64)

        self.facet_of_face: dict[tuple[int, int], int] = {}
        for s, ch in enumerate(charts):
            for i in range(n + 1):
                self.facet_of_face[(s, int(ch.facet_face[i]))] = i

        self.crossings: dict[tuple[int, int], Crossing] = {}
        for s, ch in enumerate(charts):
            for i in range(n + 1):
                f = int(ch.facet_face[i])
                targets = P.adjacency[f]
                self.k_of[s, i] = len(targets)
                linear = np.zeros((len(targets), n, n))
                offset = np.zeros((len(targets), n))
                self_index = other_index = -1
                nu_out = ch.facet_normal[i]
                t_src = ch.facet_tangent[i]
                for j, tgt in enumerate(targets):
                    if tgt == s:
                        self_index = j
                        R = np.eye(n) - 2.0 * np.outer(nu_out, nu_out)
                        linear[j] = R
                        offset[j] = ch.facet_anchor[i] - R @ ch.facet_anchor[i]
                        continue
                    other_index = j
                    ct = charts[tgt]
                    ft = self.facet_of_face[(tgt, f)]
                    nu_in_t = -ct.facet_normal[ft]
                    if n == 2:
                        R = np.outer(ct.facet_tangent[ft], t_src) + np.outer(nu_in_t, nu_out)
                    else:
                        R = np.outer(nu_in_t, nu_out)
                    linear[j] = R
                    offset[j] = ct.facet_anchor[ft] - R @ ch.facet_anchor[i]
                if len(targets) == 2 and other_index < 0:
                    other_index = self_index
                self.crossings[(s, i)] = Crossing(
                    f, np.asarray(targets, dtype=np.int64), self_index, other_index, linear, offset
                )

    def chart_position(self, point: Point) -> np.ndarray:
        return self.charts[point.simplex].to_chart(point.bary)

    def point_from_chart(self, s: int, x: np.ndarray, clip: bool = True) -> Point:
        b = self.charts[s].from_chart(x)
        if clip:
            b = np.clip(b, 0.0, None)
            b = b / b.sum()
        return Point(s, tuple(float(v) for v in b))

    def locate_in_simplex(self, point: Point, target: int) -> np.ndarray:
        """Chart coordinates of a point re-expressed in another simplex.

        Valid when target equals the host or the point lies on a face
        shared with the target.
        """
        if point.simplex == target:
            return self.chart_position(point)
        kind, where = classify_point(self.poly, point)
        if kind is PointClass.INTERIOR:
            raise GeodesicError("point interior to a different simplex")
        ch = self.charts[point.simplex]
        if kind is PointClass.FACE_INTERIOR:
            faces = [where]
        else:
            faces = [
                int(ch.facet_face[i])
                for i in range(self.dim + 1)
                if where in self.poly.faces[int(ch.facet_face[i])].vertices
            ]
        for f in faces:
            if target not in self.poly.adjacency[f]:
                continue
            i = self.facet_of_face[(point.simplex, f)]
            cr = self.crossings[(point.simplex, i)]
            j = int(np.nonzero(cr.targets == target)[0][0])
            return cr.linear[j] @ self.chart_position(point) + cr.offset[j]
        raise GeodesicError("point does not lie on a face shared with the target simplex")


def get_atlas(P: Polyhedron) -> Atlas:
    if P._atlas is None:
        P._atlas = Atlas(P)
    return P._atlas


# ---------------------------------------------------------------------------
# flow state and single-path stepping


@dataclass(frozen=True)
class FlowState:
    """Position plus a unit chart direction and the length travelled."""

    point: Point
    direction: np.ndarray
    elapsed: float = 0.0


def make_flow_state(P: Polyhedron, point: Point, direction: Sequence[float]) -> FlowState:
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if not norm > 0.0:
        raise GeodesicError("zero direction")
    return FlowState(point, d / norm, 0.0)


def geodesic_step(
    P: Polyhedron,
    state: FlowState,
    length: float,
    rng=None,
    crossing_rule: str = "unfold",
    max_crossings: int = 100000,
) -> FlowState:
    """Trace the generalized geodesic flow for a given length.

    The random generator is consumed only where a branch choice is
    required: faces with k >= 3 adjacent simplices, or k = 2 under the
    ``uniform`` crossing rule.
    """
    if crossing_rule not in ("unfold", "uniform"):
        raise ValueError(f"unknown crossing rule {crossing_rule!r}")
    atlas = get_atlas(P)
    n = atlas.dim
    s = state.point.simplex
    x = atlas.chart_position(state.point)
    d = np.asarray(state.direction, dtype=float)
    d = d / np.linalg.norm(d)
    remaining = float(length)
    for _ in range(max_crossings):
        G = atlas.Gs[s]
        b0 = G @ x + atlas.cs[s]
        db = G @ d
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(db < -1e-300, -np.maximum(b0, 0.0) / db, np.inf)
        i = int(np.argmin(t))
        t_exit = float(t[i])
        if t_exit >= remaining:
            x = x + remaining * d
            return FlowState(
                atlas.point_from_chart(s, x),
                d,
                state.elapsed + float(length),
            )
        x = x + t_exit * d
        remaining -= t_exit
        bf = G @ x + atlas.cs[s]
        if n == 2 and int((np.abs(bf) <= BARY_TOL).sum()) >= 2:
            raise Codim2HitError("codimension-2 hit")
        cr = atlas.crossings[(s, i)]
        k = cr.k
        if k == 1:
            j = cr.self_index
        elif k == 2 and crossing_rule == "unfold":
            j = cr.other_index
        else:
            if rng is None:
                raise GeodesicError("branch choice required but no rng supplied")
            j = int(rng.integers(k))
        x = cr.linear[j] @ x + cr.offset[j]
        d = cr.linear[j] @ d
        d = d / np.linalg.norm(d)
        s = int(cr.targets[j])
    raise GeodesicError("crossing budget exhausted")


# ---------------------------------------------------------------------------
# exponential map and normal coordinates


@dataclass(frozen=True)
class NormalCoordinates:
    """Coordinates relative to a codimension-one face: arc-length along
    the face (canonical orientation), distance to it, and the branch."""

    tangent: float
    normal: float
    branch: int


def exponential_map(P: Polyhedron, p: Point, branch: int, v: float = 0.0, w: float = 0.0) -> Point:
    """Image of the tangent vector (v, w) at a face point: v along the
    face, |w| into the chosen adjacent simplex."""
    kind, where = classify_point(P, p)
    if kind is not PointClass.FACE_INTERIOR:
        raise GeodesicError("exponential map is anchored at an open codimension-one face")
    if branch not in P.adjacency[where]:
        raise GeodesicError(f"simplex {branch} is not adjacent to face {where}")
    atlas = get_atlas(P)
    ch = atlas.charts[branch]
    i = atlas.facet_of_face[(branch, where)]
    x0 = atlas.locate_in_simplex(p, branch)
    x = x0 + float(v) * ch.facet_tangent[i] + abs(float(w)) * (-ch.facet_normal[i])
    b = ch.from_chart(x)
    if np.any(b < -BARY_TOL):
        raise GeodesicError("exponential out of range")
    b = np.clip(b, 0.0, None)
    return Point(branch, tuple(float(t) for t in b / b.sum()))


def normal_coordinates(P: Polyhedron, face: int, x: Point) -> NormalCoordinates:
    """Tangential/normal coordinates of a point near a face."""
    atlas = get_atlas(P)
    host = x.simplex
    if face not in {int(f) for f in atlas.charts[host].facet_face}:
        raise GeodesicError("point's simplex is not adjacent to the face")
    ch = atlas.charts[host]
    i = atlas.facet_of_face[(host, face)]
    rel = atlas.chart_position(x) - ch.facet_anchor[i]
    tang = float(rel @ ch.facet_tangent[i]) if atlas.dim == 2 else 0.0
    norm = float(rel @ -ch.facet_normal[i])
    return NormalCoordinates(tang, norm, host)


def broken_geodesic_length(
    P: Polyhedron,
    points: Sequence[Point],
    segment_simplices: Sequence[int] | None = None,
) -> float:
    """Sum of straight-chart distances over consecutive point pairs.

    Each segment must be contained in a single maximal simplex; hosts are
    inferred when not supplied.
    """
    if len(points) < 2:
        return 0.0
    atlas = get_atlas(P)
    total = 0.0
    for i in range(len(points) - 1):
        a, b = points[i], points[i + 1]
        if segment_simplices is not None:
            s = segment_simplices[i]
        else:
            shared = set(P.star_of_point(a)) & set(P.star_of_point(b))
            if not shared:
                raise GeodesicError(
                    f"consecutive points {i}, {i + 1} share no maximal simplex"
                )
            s = min(shared)
        xa = atlas.locate_in_simplex(a, s)
        xb = atlas.locate_in_simplex(b, s)
        total += float(np.linalg.norm(xb - xa))
    return total


def sample_link_direction(P: Polyhedron, link: Link, rng) -> tuple[int, np.ndarray]:
    """Draw (simplex, unit direction) uniformly from a link.

    Branches carry equal mass; within a branch the angular measure is
    uniform (full circle at manifold points, half circle into the
    simplex on a face, the single inward direction in dimension one).
    """
    atlas = get_atlas(P)
    n = atlas.dim
    if link.kind is PointClass.INTERIOR:
        s = link.branches[0].simplex
        if n == 1:
            return s, np.array([1.0 if rng.random() < 0.5 else -1.0])
        theta = rng.random() * 2.0 * math.pi
        return s, np.array([math.cos(theta), math.sin(theta)])
    idx = int(rng.integers(link.k))
    s = link.branches[idx].simplex
    i = atlas.facet_of_face[(s, link.face)]
    ch = atlas.charts[s]
    nu_in = -ch.facet_normal[i]
    if n == 1:
        return s, nu_in.copy()
    theta = rng.random() * math.pi
    return s, math.cos(theta) * ch.facet_tangent[i] + math.sin(theta) * nu_in


# ---------------------------------------------------------------------------
# regions


class Region:
    """A subset of the complex used for stopped processes."""

    def allows_simplex(self, s: int) -> bool:
        return True

    def exit_fraction(self, atlas: Atlas, sim: np.ndarray, pos: np.ndarray, seg: np.ndarray) -> np.ndarray:
        """Fraction along each segment at which the region is left without
        crossing a face; inf when no such interior exit occurs."""
        return np.full(len(sim), np.inf)

    def contains(self, P: Polyhedron, point: Point) -> bool:
        return True


class WholeComplex(Region):
    pass


class StarRegion(Region):
    """Union of the closed maximal simplices around a point, open at its
    outer boundary."""

    def __init__(self, P: Polyhedron, point: Point) -> None:
        self.members = frozenset(P.star_of_point(point))
        self.center = point

    def allows_simplex(self, s: int) -> bool:
        return s in self.members

    def contains(self, P: Polyhedron, point: Point) -> bool:
        return point.simplex in self.members


class EdgeInterval(Region):
    """An interval [lo, hi] in the chart coordinate of a single edge
    (dimension-one complexes)."""

    def __init__(self, P: Polyhedron, simplex: int, lo: float, hi: float) -> None:
        if P.dimension != 1:
            raise ValueError("EdgeInterval regions require a 1-dimensional complex")
        if not lo < hi:
            raise ValueError("empty interval")
        self.simplex = simplex
        self.lo = float(lo)
        self.hi = float(hi)

    def allows_simplex(self, s: int) -> bool:
        return s == self.simplex

    def exit_fraction(self, atlas, sim, pos, seg):
        x = pos[:, 0]
        dx = seg[:, 0]
        out = np.full(len(sim), np.inf)
        up = dx > 0.0
        down = dx < 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where(up, (self.hi - x) / np.where(up, dx, 1.0), np.inf)
            t_down = np.where(down, (self.lo - x) / np.where(down, dx, 1.0), np.inf)
        out = np.minimum(t_up, t_down)
        out[sim != self.simplex] = np.inf
        return np.maximum(out, 0.0)

    def contains(self, P, point):
        if point.simplex != self.simplex:
            return False
        atlas = get_atlas(P)
        x = float(atlas.chart_position(point)[0])
        return self.lo - 1e-12 <= x <= self.hi + 1e-12


class TangentialInterval(Region):
    """Paths stop once the arc-length coordinate along a face leaves
    [lo, hi].  The coordinate is affine in every chart, so interior exits
    solve linearly; no simplex is blocked outright."""

    def __init__(self, P: Polyhedron, face: int, lo: float, hi: float) -> None:
        if not lo < hi:
            raise ValueError("empty interval")
        self.lo = float(lo)
        self.hi = float(hi)
        self.poly = P
        frames = branch_frames(P, face)
        self.lin = {s: fr.matrix[0].copy() for s, fr in frames.items()}
        self.off = {s: float(fr.offset[0]) for s, fr in frames.items()}

    def _coord(self, sim: np.ndarray, pos: np.ndarray) -> np.ndarray:
        out = np.empty(len(sim))
        for s in np.unique(sim):
            mask = sim == s
            out[mask] = pos[mask] @ self.lin[int(s)] + self.off[int(s)]
        return out

    def exit_fraction(self, atlas, sim, pos, seg):
        y = self._coord(sim, pos)
        dy = np.empty(len(sim))
        for s in np.unique(sim):
            mask = sim == s
            dy[mask] = seg[mask] @ self.lin[int(s)]
        out = np.full(len(sim), np.inf)
        up = dy > 0.0
        down = dy < 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where(up, (self.hi - y) / np.where(up, dy, 1.0), np.inf)
            t_down = np.where(down, (self.lo - y) / np.where(down, dy, 1.0), np.inf)
        return np.maximum(np.minimum(t_up, t_down), 0.0)

    def contains(self, P, point):
        atlas = get_atlas(P)
        x = atlas.chart_position(point)
        y = float(x @ self.lin[point.simplex] + self.off[point.simplex])
        return self.lo - 1e-12 <= y <= self.hi + 1e-12


# ---------------------------------------------------------------------------
# vectorized segment tracing


class TraceCounters:
    """Mutable tallies shared across tracer calls."""

    def __init__(self) -> None:
        self.face_counts: dict[int, np.ndarray] = {}
        self.crossings = 0

    def ensure_face(self, face: int, k: int) -> np.ndarray:
        if face not in self.face_counts:
            self.face_counts[face] = np.zeros(k, dtype=np.int64)
        return self.face_counts[face]


def trace_displacements(
    atlas: Atlas,
    sim: np.ndarray,
    pos: np.ndarray,
    disp: np.ndarray,
    idx: np.ndarray,
    rng,
    *,
    crossing_rule: str = "unfold",
    region: Region | None = None,
    counters: TraceCounters | None = None,
    tally_faces: frozenset | None = None,
    branch_weights: Mapping[int, np.ndarray] | None = None,
    max_rounds: int = 64,
    seg_out: np.ndarray | None = None,
):
    """Advance paths ``idx`` by their chart displacements, in place.

    Returns (discarded_idx, exited_idx, exit_frac): paths that hit the
    codimension-2 skeleton (or exhausted the crossing budget) and paths
    that left the region, with the fraction of the displacement consumed
    at the exit.  Random numbers are drawn in path order, one uniform per
    required branch choice, so results do not depend on how paths are
    grouped or threaded.

    When ``seg_out`` is given it is used as the segment scratch buffer;
    after the call row i holds the remaining displacement rotated into
    the final chart, whose direction is the direction of travel at the
    end of the move.
    """
    n = atlas.dim
    uniform2 = crossing_rule == "uniform"
    if crossing_rule not in ("unfold", "uniform"):
        raise ValueError(f"unknown crossing rule {crossing_rule!r}")
    seg = seg_out if seg_out is not None else np.zeros_like(pos)
    seg[idx] = disp
    rem = np.ones(len(sim))
    discarded: list[np.ndarray] = []
    exited: list[np.ndarray] = []
    exit_frac: list[np.ndarray] = []
    live = idx.copy()

    for _ in range(max_rounds):
        if len(live) == 0:
            break
        G = atlas.Gs[sim[live]]
        c = atlas.cs[sim[live]]
        p = pos[live]
        v = seg[live]
        b0 = np.einsum("mij,mj->mi", G, p) + c
        db = np.einsum("mij,mj->mi", G, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(db < -1e-300, -np.maximum(b0, 0.0) / db, np.inf)
        facet = np.argmin(t, axis=1)
        t_face = t[np.arange(len(live)), facet]
        t_reg = (
            region.exit_fraction(atlas, sim[live], p, v)
            if region is not None
            else np.full(len(live), np.inf)
        )

        inside = (t_face >= 1.0) & (t_reg >= 1.0)
        if inside.any():
            fin = live[inside]
            pos[fin] += seg[fin]
            live = live[~inside]
            if len(live) == 0:
                break
            facet = facet[~inside]
            t_face = t_face[~inside]
            t_reg = t_reg[~inside]

        reg_first = t_reg < t_face
        if reg_first.any():
            hit = live[reg_first]
            tr = t_reg[reg_first]
            pos[hit] += tr[:, None] * seg[hit]
            exited.append(hit)
            exit_frac.append(1.0 - rem[hit] * (1.0 - tr))
            live = live[~reg_first]
            if len(live) == 0:
                break
            facet = facet[~reg_first]
            t_face = t_face[~reg_first]

        # move to the crossing points
        tf = t_face[:, None]
        pos[live] += tf * seg[live]
        seg[live] *= 1.0 - tf
        rem[live] *= 1.0 - t_face

        if n == 2:
            bf = np.einsum("mij,mj->mi", atlas.Gs[sim[live]], pos[live]) + atlas.cs[sim[live]]
            corner = (np.abs(bf) <= BARY_TOL).sum(axis=1) >= 2
            if corner.any():
                discarded.append(live[corner])
                live = live[~corner]
                facet = facet[~corner]
                if len(live) == 0:
                    break

        if counters is not None:
            counters.crossings += len(live)

        # branch choices, drawn in path order
        k_arr = atlas.k_of[sim[live], facet]
        need = k_arr >= 3
        if uniform2:
            need = need | (k_arr == 2)
        u = np.empty(len(live))
        if need.any():
            u[need] = rng.random(int(need.sum()))

        order = np.lexsort((facet, sim[live]))
        new_sim = np.empty(len(live), dtype=sim.dtype)
        blocked = np.zeros(len(live), dtype=bool)
        start = 0
        while start < len(order):
            stop = start
            s0 = sim[live[order[start]]]
            f0 = facet[order[start]]
            while stop < len(order) and sim[live[order[stop]]] == s0 and facet[order[stop]] == f0:
                stop += 1
            g = order[start:stop]
            start = stop
            cr = atlas.crossings[(int(s0), int(f0))]
            k = cr.k
            if k == 1:
                choice = np.zeros(len(g), dtype=np.int64)
            elif k == 2 and not uniform2:
                choice = np.full(len(g), cr.other_index, dtype=np.int64)
            else:
                w = branch_weights.get(cr.face) if branch_weights else None
                if w is not None:
                    edges = np.cumsum(np.asarray(w, dtype=float))
                    edges = edges / edges[-1]
                    choice = np.searchsorted(edges, u[g], side="right")
                    choice = np.minimum(choice, k - 1)
                else:
                    choice = np.minimum((u[g] * k).astype(np.int64), k - 1)
            if counters is not None and tally_faces is not None and cr.face in tally_faces:
                tally = counters.ensure_face(cr.face, k)
                np.add.at(tally, choice, 1)
            tgt = cr.targets[choice]
            if region is not None:
                bad = np.array([not region.allows_simplex(int(s)) for s in tgt])
                if bad.any():
                    blocked[g[bad]] = True
                    ok = ~bad
                    g, choice, tgt = g[ok], choice[ok], tgt[ok]
                    if len(g) == 0:
                        continue
            rows = live[g]
            A = cr.linear[choice]
            pos[rows] = np.einsum("gij,gj->gi", A, pos[rows]) + cr.offset[choice]
            seg[rows] = np.einsum("gij,gj->gi", A, seg[rows])
            new_sim[g] = tgt
        if blocked.any():
            rows = live[blocked]
            exited.append(rows)
            exit_frac.append(1.0 - rem[rows])
            keep = ~blocked
            live = live[keep]
            new_sim = new_sim[keep]
        sim[live] = new_sim
    else:
        if len(live) > 0:
            # crossing budget exhausted: treat as skeleton-adjacent loss
            discarded.append(live)
            live = live[:0]

    disc = np.concatenate(discarded) if discarded else np.empty(0, dtype=idx.dtype)
    ex = np.concatenate(exited) if exited else np.empty(0, dtype=idx.dtype)
    ef = np.concatenate(exit_frac) if exit_frac else np.empty(0)
    return disc, ex, ef


# ---------------------------------------------------------------------------
# coordinate fields relative to a face


@dataclass(frozen=True)
class BranchFrame:
    """Affine map of one chart into the plane unfolded across a face:
    row 0 gives the tangential coordinate, row 1 the normal distance."""

    branch: int
    matrix: np.ndarray
    offset: np.ndarray


def branch_frames(P: Polyhedron, face: int) -> dict[int, BranchFrame]:
    """Unfold each side of a face into a flat frame.

    Starting from every simplex adjacent to the face, neighboring
    simplices are merged across manifold (k = 2) faces.  Works for
    complexes whose sides unfold to disjoint trees (stars, books, the
    square); reaching a simplex from two different branches is an error.
    """
    atlas = get_atlas(P)
    n = atlas.dim
    frames: dict[int, BranchFrame] = {}
    for b_idx, root in enumerate(P.adjacency[face]):
        ch = atlas.charts[root]
        i = atlas.facet_of_face[(root, face)]
        M = np.zeros((2, n))
        if n == 2:
            M[0] = ch.facet_tangent[i]
        M[1] = -ch.facet_normal[i]
        off = -M @ ch.facet_anchor[i]
        stack = [(root, M, off)]
        while stack:
            s, Ms, offs = stack.pop()
            if s in frames:
                if frames[s].branch != b_idx:
                    raise GeodesicError("face sides do not unfold to disjoint branches")
                continue
            frames[s] = BranchFrame(b_idx, Ms, offs)
            for fi in range(n + 1):
                f2 = int(atlas.charts[s].facet_face[fi])
                if f2 == face:
                    continue
                adj = P.adjacency[f2]
                if len(adj) != 2:
                    continue
                t = adj[0] if adj[1] == s else adj[1]
                if t in frames:
                    continue
                cr = atlas.crossings[(t, atlas.facet_of_face[(t, f2)])]
                j = int(np.nonzero(cr.targets == s)[0][0])
                stack.append((t, Ms @ cr.linear[j], Ms @ cr.offset[j] + offs))
    return frames


class ChartField:
    """A scalar field given per maximal simplex in chart coordinates.

    ``fns`` maps simplex index to a vectorized callable on (m, n) chart
    positions.  Supports the same evaluate protocol as discrete fields.
    """

    def __init__(self, P: Polyhedron, fns: Mapping[int, Callable[[np.ndarray], np.ndarray]]):
        self.poly = P
        self.fns = dict(fns)

    def evaluate(self, sim: np.ndarray, pos: np.ndarray) -> np.ndarray:
        out = np.empty(len(sim))
        for s in np.unique(sim):
            mask = sim == s
            out[mask] = self.fns[int(s)](pos[mask])
        return out

    def at_point(self, point: Point) -> float:
        atlas = get_atlas(self.poly)
        x = atlas.chart_position(point)
        return float(self.fns[point.simplex](x[None, :])[0])


def tangential_coordinate_field(P: Polyhedron, face: int) -> ChartField:
    """Arc-length along the face direction, extended across each branch."""
    frames = branch_frames(P, face)
    fns = {
        s: (lambda fr: (lambda x: x @ fr.matrix[0] + fr.offset[0]))(fr)
        for s, fr in frames.items()
    }
    return ChartField(P, fns)


def normal_distance_field(P: Polyhedron, face: int) -> ChartField:
    """Unfolded distance to the face on each branch."""
    frames = branch_frames(P, face)
    fns = {
        s: (lambda fr: (lambda x: x @ fr.matrix[1] + fr.offset[1]))(fr)
        for s, fr in frames.items()
    }
    return ChartField(P, fns)


def normal_square_field(P: Polyhedron, face: int, coeffs: Sequence[float] | None = None) -> ChartField:
    """Per-branch multiples of the squared distance to the face."""
    frames = branch_frames(P, face)
    k = len(P.adjacency[face])
    cs = np.ones(k) if coeffs is None else np.asarray(coeffs, dtype=float)
    if len(cs) != k:
        raise ValueError(f"need {k} branch coefficients")
    fns = {
        s: (lambda fr, cc: (lambda x: cc * (x @ fr.matrix[1] + fr.offset[1]) ** 2))(
            fr, float(cs[fr.branch])
        )
        for s, fr in frames.items()
    }
    return ChartField(P, fns)
