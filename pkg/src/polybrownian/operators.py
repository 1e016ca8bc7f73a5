"""Discrete operators on piecewise-flat complexes.

Structured P1 meshes (every maximal simplex subdivided uniformly, so
lattices match along shared faces), stiffness and lumped-mass assembly,
one-sided pointwise second derivatives, the branch-averaged Laplacian at
faces, normal-trace sums, and a Monte Carlo estimate of the generator
acting at a point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .complexes import Point, PointClass, Polyhedron, classify_point
from .geometry import ChartField, StarRegion, get_atlas
from .process import Estimate, brownian_ensemble, estimate

__all__ = [
    "Mesh",
    "DiscreteField",
    "OperatorMatrix",
    "GeneratorDomainError",
    "build_mesh",
    "assemble_stiffness",
    "lumped_mass",
    "dirichlet_energy",
    "laplacian_in_simplex",
    "tilde_laplacian",
    "normal_trace_sum",
    "estimate_generator_mc",
]

# node kinds
INTERIOR = "interior"
MANIFOLD = "manifold-face"
SINGULAR = "singular-face"
BOUNDARY = "boundary"
CORNER = "corner"


class GeneratorDomainError(ValueError):
    """The function fails the zero-normal-trace condition at the point."""


@dataclass
class Mesh:
    """Structured P1 mesh over all maximal simplices.

    In two dimensions every triangle is subdivided into m^2 congruent
    children with one global m, so nodes on a shared face coming from
    either side coincide.  Node keys are canonical: lattice nodes belong
    to their simplex, face nodes to the face, vertex nodes to the vertex.
    """

    P: Polyhedron
    h: float
    m_of: dict[int, int]
    node_keys: list[tuple]
    node_kind: list[str]
    node_sim: np.ndarray
    node_pos: np.ndarray
    node_map: dict[tuple, int]
    lattices: dict[int, np.ndarray]
    el_nodes: np.ndarray
    el_sim: np.ndarray
    el_grads: np.ndarray
    el_vol: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_keys)

    @property
    def n_elements(self) -> int:
        return len(self.el_nodes)

    @property
    def spacing(self) -> float:
        """Largest element edge length actually realized."""
        atlas = get_atlas(self.P)
        worst = 0.0
        for s, m in self.m_of.items():
            verts = atlas.charts[s].vertices
            if self.P.dimension == 1:
                worst = max(worst, abs(verts[1, 0] - verts[0, 0]) / m)
            else:
                for a in range(3):
                    for b in range(a + 1, 3):
                        worst = max(worst, float(np.linalg.norm(verts[a] - verts[b])) / m)
        return worst

    def nodes_of_kind(self, *kinds: str) -> list[int]:
        return [i for i, k in enumerate(self.node_kind) if k in kinds]

    def node_point(self, i: int) -> Point:
        atlas = get_atlas(self.P)
        return atlas.point_from_chart(int(self.node_sim[i]), self.node_pos[i], clip=True)

    def nearest_node(self, point: Point) -> int:
        atlas = get_atlas(self.P)
        lat = self.lattices[point.simplex]
        ids = np.unique(lat[lat >= 0])
        x = atlas.chart_position(point)
        # node positions in the chart of point.simplex, via the lattice
        best, best_d = -1, np.inf
        verts = atlas.charts[point.simplex].vertices
        m = self.m_of[point.simplex]
        if self.P.dimension == 1:
            for i in range(m + 1):
                nid = lat[i, 0]
                p = verts[0] + (verts[1] - verts[0]) * (i / m)
                d = abs(float(p[0] - x[0]))
                if d < best_d:
                    best, best_d = nid, d
        else:
            e1 = verts[1] - verts[0]
            e2 = verts[2] - verts[0]
            for i in range(m + 1):
                for j in range(m + 1 - i):
                    nid = lat[i, j]
                    p = verts[0] + e1 * (i / m) + e2 * (j / m)
                    d = float(np.linalg.norm(p - x))
                    if d < best_d:
                        best, best_d = nid, d
        return int(best)


def _face_node_key(P: Polyhedron, face: int, coeff_hi: int) -> tuple:
    return ("f", face, coeff_hi)


def _classify_face_kind(P: Polyhedron, face: int) -> str:
    k = len(P.adjacency[face])
    if k == 1:
        return BOUNDARY
    if k == 2:
        return MANIFOLD
    return SINGULAR


def build_mesh(P: Polyhedron, h: float) -> Mesh:
    """Mesh every maximal simplex so that no element edge exceeds h."""
    if h <= 0.0:
        raise ValueError("mesh size must be positive")
    atlas = get_atlas(P)
    n = P.dimension
    node_keys: list[tuple] = []
    node_kind: list[str] = []
    node_sim: list[int] = []
    node_pos: list[np.ndarray] = []
    node_map: dict[tuple, int] = {}
    lattices: dict[int, np.ndarray] = {}
    el_nodes: list[list[int]] = []
    el_sim: list[int] = []
    el_grads: list[np.ndarray] = []
    el_vol: list[float] = []

    def intern(key: tuple, kind: str, s: int, x: np.ndarray) -> int:
        got = node_map.get(key)
        if got is not None:
            return got
        idx = len(node_keys)
        node_map[key] = idx
        node_keys.append(key)
        node_kind.append(kind)
        node_sim.append(s)
        node_pos.append(x)
        return idx

    if n == 1:
        m_of = {
            s.index: max(1, math.ceil(P.edge_length(*s.vertices) / h))
            for s in P.maximal
        }
    else:
        m = 1
        for s in P.maximal:
            vs = s.vertices
            for a in range(3):
                for b in range(a + 1, 3):
                    m = max(m, math.ceil(P.edge_length(vs[a], vs[b]) / h))
        m_of = {s.index: m for s in P.maximal}

    for s in P.maximal:
        ch = atlas.charts[s.index]
        verts = ch.vertices
        m = m_of[s.index]
        if n == 1:
            lat = np.full((m + 1, 1), -1, dtype=np.int64)
            L = verts[1, 0] - verts[0, 0]
            for i in range(m + 1):
                x = verts[0] + (verts[1] - verts[0]) * (i / m)
                if i == 0 or i == m:
                    vid = s.vertices[0 if i == 0 else 1]
                    face = P.face_of[(vid,)]
                    lat[i, 0] = intern(("v", vid), _classify_face_kind(P, face), s.index, x)
                else:
                    lat[i, 0] = intern(("s", s.index, i), INTERIOR, s.index, x)
            lattices[s.index] = lat
            length = L / m
            g = np.array([[-1.0 / length], [1.0 / length]])
            for i in range(m):
                el_nodes.append([int(lat[i, 0]), int(lat[i + 1, 0])])
                el_sim.append(s.index)
                el_grads.append(g)
                el_vol.append(length)
            continue
        lat = np.full((m + 1, m + 1), -1, dtype=np.int64)
        e1 = verts[1] - verts[0]
        e2 = verts[2] - verts[0]
        v0, v1, v2 = s.vertices
        for i in range(m + 1):
            for j in range(m + 1 - i):
                a = m - i - j
                x = verts[0] + e1 * (i / m) + e2 * (j / m)
                zero = [c == 0 for c in (a, i, j)]
                nz = zero.count(True)
                if nz == 0:
                    lat[i, j] = intern(("s", s.index, i, j), INTERIOR, s.index, x)
                elif nz == 2:
                    vid = (v0, v1, v2)[zero.index(False)]
                    lat[i, j] = intern(("v", vid), CORNER, s.index, x)
                else:
                    which = zero.index(True)  # opposite vertex is zeroed
                    pair = [(v1, v2), (v0, v2), (v0, v1)][which]
                    coeffs = [(i, j), (a, j), (a, i)][which]
                    face = P.face_index(pair)
                    p, q = P.faces[face].vertices
                    hi = coeffs[1] if (pair[0], pair[1]) == (p, q) else coeffs[0]
                    lat[i, j] = intern(
                        _face_node_key(P, face, hi), _classify_face_kind(P, face), s.index, x
                    )
        lattices[s.index] = lat
        # congruent children: gradients depend only on orientation
        E1, E2 = e1 / m, e2 / m

        def _grads(Mcols: np.ndarray) -> np.ndarray:
            g = np.zeros((3, 2))
            inv = np.linalg.inv(Mcols)
            g[1] = inv[0]
            g[2] = inv[1]
            g[0] = -g[1] - g[2]
            return g

        up_g = _grads(np.column_stack([E1, E2]))
        dn_g = _grads(np.column_stack([E2 - E1, E2]))  # (i+1,j) -> (i,j+1), (i+1,j+1)
        vol = abs(float(np.linalg.det(np.column_stack([E1, E2])))) / 2.0
        for i in range(m):
            for j in range(m - i):
                el_nodes.append([int(lat[i, j]), int(lat[i + 1, j]), int(lat[i, j + 1])])
                el_sim.append(s.index)
                el_grads.append(up_g)
                el_vol.append(vol)
                if i + j <= m - 2:
                    el_nodes.append(
                        [int(lat[i + 1, j]), int(lat[i, j + 1]), int(lat[i + 1, j + 1])]
                    )
                    el_sim.append(s.index)
                    el_grads.append(dn_g)
                    el_vol.append(vol)

    return Mesh(
        P,
        h,
        m_of,
        node_keys,
        node_kind,
        np.asarray(node_sim, dtype=np.int64),
        np.asarray(node_pos, dtype=float),
        node_map,
        lattices,
        np.asarray(el_nodes, dtype=np.int64),
        np.asarray(el_sim, dtype=np.int64),
        np.asarray(el_grads, dtype=float),
        np.asarray(el_vol, dtype=float),
    )


@dataclass
class DiscreteField:
    """Nodal values with P1 interpolation."""

    mesh: Mesh
    values: np.ndarray

    @classmethod
    def from_function(cls, mesh: Mesh, f) -> "DiscreteField":
        """Sample a chart field (or callable on points) at the nodes."""
        if isinstance(f, ChartField):
            vals = f.evaluate(mesh.node_sim, mesh.node_pos)
        else:
            vals = np.array([f(mesh.node_point(i)) for i in range(mesh.n_nodes)])
        return cls(mesh, np.asarray(vals, dtype=float))

    def evaluate(self, sims: np.ndarray, pos: np.ndarray) -> np.ndarray:
        mesh = self.mesh
        atlas = get_atlas(mesh.P)
        sims = np.asarray(sims)
        pos = np.atleast_2d(pos)
        out = np.empty(len(sims))
        for s in np.unique(sims):
            mask = sims == s
            x = pos[mask]
            m = mesh.m_of[int(s)]
            lat = mesh.lattices[int(s)]
            verts = atlas.charts[int(s)].vertices
            if mesh.P.dimension == 1:
                L = verts[1, 0] - verts[0, 0]
                t = (x[:, 0] - verts[0, 0]) / L * m
                i = np.clip(np.floor(t).astype(int), 0, m - 1)
                u = t - i
                va = self.values[lat[i, 0]]
                vb = self.values[lat[i + 1, 0]]
                out[mask] = (1 - u) * va + u * vb
                continue
            e1 = verts[1] - verts[0]
            e2 = verts[2] - verts[0]
            A = np.column_stack([e1, e2])
            ab = np.linalg.solve(A, (x - verts[0]).T).T * m
            i = np.clip(np.floor(ab[:, 0]).astype(int), 0, m - 1)
            j = np.clip(np.floor(ab[:, 1]).astype(int), 0, m - 1)
            j = np.minimum(j, m - 1 - i)
            u = ab[:, 0] - i
            v = ab[:, 1] - j
            lower = u + v <= 1.0
            val = np.empty(len(x))
            li = lat[i, j]
            lu = lat[i + 1, j]
            lv = lat[i, j + 1]
            val[lower] = (
                (1 - u - v)[lower] * self.values[li[lower]]
                + u[lower] * self.values[lu[lower]]
                + v[lower] * self.values[lv[lower]]
            )
            hi = ~lower
            if hi.any():
                # the last lattice row has no upper child; project onto the
                # diagonal there (only numerical spill reaches this case)
                edge = hi & (i + j >= m - 1)
                if edge.any():
                    ssum = u[edge] + v[edge]
                    val[edge] = (
                        u[edge] * self.values[lu[edge]]
                        + v[edge] * self.values[lv[edge]]
                    ) / ssum
                rest = hi & ~edge
                if rest.any():
                    ld = lat[i[rest] + 1, j[rest] + 1]
                    val[rest] = (
                        (u[rest] + v[rest] - 1) * self.values[ld]
                        + (1 - v[rest]) * self.values[lu[rest]]
                        + (1 - u[rest]) * self.values[lv[rest]]
                    )
            out[mask] = val
        return out

    def at_point(self, point: Point) -> float:
        atlas = get_atlas(self.mesh.P)
        x = atlas.chart_position(point)
        return float(self.evaluate(np.array([point.simplex]), x[None, :])[0])


@dataclass
class OperatorMatrix:
    """Sparse operator with per-row node classification."""

    matrix: sparse.csr_matrix
    row_kind: list[str]
    mesh: Mesh

    def dump_triples(self, fh) -> None:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        fh.write("row,col,value\n")
        for t in order:
            fh.write(f"{coo.row[t]},{coo.col[t]},{coo.data[t]:.17g}\n")


def assemble_stiffness(mesh: Mesh) -> OperatorMatrix:
    """P1 stiffness matrix; (1/2) f^T K f is the Dirichlet energy."""
    nn = mesh.P.dimension + 1
    E = mesh.n_elements
    gi = mesh.el_grads  # (E, nn, n)
    local = np.einsum("eik,ejk->eij", gi, gi) * mesh.el_vol[:, None, None]
    rows = np.repeat(mesh.el_nodes, nn, axis=1).ravel()
    cols = np.tile(mesh.el_nodes, (1, nn)).ravel()
    K = sparse.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    ).tocsr()
    K.sum_duplicates()
    return OperatorMatrix(K, list(mesh.node_kind), mesh)


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Diagonal mass: each element spreads its volume evenly on its nodes."""
    M = np.zeros(mesh.n_nodes)
    share = mesh.el_vol / (mesh.P.dimension + 1)
    np.add.at(M, mesh.el_nodes.ravel(), np.repeat(share, mesh.P.dimension + 1))
    return M


def dirichlet_energy(mesh: Mesh, values: np.ndarray, K: OperatorMatrix | None = None) -> float:
    Km = (K or assemble_stiffness(mesh)).matrix
    v = np.asarray(values, dtype=float)
    return 0.5 * float(v @ (Km @ v))


# ---------------------------------------------------------------------------
# pointwise derivatives by local sampling


def _quadratic_fit(field_vals: np.ndarray, offsets: np.ndarray):
    """Least-squares quadratic through sampled offsets; returns the
    coefficient vector of [1, dx, dy, dx^2/2, dx dy, dy^2/2]."""
    dx, dy = offsets[:, 0], offsets[:, 1]
    A = np.column_stack([np.ones(len(dx)), dx, dy, dx * dx / 2, dx * dy, dy * dy / 2])
    coef, *_ = np.linalg.lstsq(A, field_vals, rcond=None)
    return coef


def _sample(field, sim: int, base: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    sims = np.full(len(offsets), sim, dtype=np.int64)
    return field.evaluate(sims, base[None, :] + offsets)


def laplacian_in_simplex(
    P: Polyhedron, field, point: Point, simplex: int, h: float = 1e-3
) -> float:
    """One-sided Laplacian of a chart field at a point, inside one
    adjacent maximal simplex.

    Uses second differences in one dimension and a least-squares
    quadratic fit over an interior lattice patch in two; both are exact
    on piecewise-quadratic fields.
    """
    atlas = get_atlas(P)
    n = atlas.dim
    x = atlas.locate_in_simplex(point, simplex)
    ch = atlas.charts[simplex]
    # room toward each facet, to keep sample offsets inside
    G = atlas.Gs[simplex]
    c = atlas.cs[simplex]
    bary = G @ x + c
    if n == 1:
        L = abs(ch.vertices[1, 0] - ch.vertices[0, 0])
        lo = float(ch.vertices[:, 0].min() - x[0])  # <= 0
        hi = float(ch.vertices[:, 0].max() - x[0])  # >= 0
        step = min(h, L / 8.0)
        if hi >= step and -lo >= step:
            vals = _sample(field, simplex, x, np.array([[-step], [0.0], [step]]))
            return float((vals[0] - 2 * vals[1] + vals[2]) / step**2)
        sgn = 1.0 if hi >= -lo else -1.0
        room = hi if sgn > 0 else -lo
        step = min(step, room / 3.0)
        if step <= 0.0:
            raise ValueError("no room to place a sample patch at this point")
        offs = sgn * step * np.array([[0.0], [1.0], [2.0], [3.0]])
        v = _sample(field, simplex, x, offs)
        return float((2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / step**2)
    # 2-d: pick a frame pointing into the simplex
    on_facet = np.abs(bary) <= 1e-9
    if on_facet.sum() >= 2:
        raise ValueError("cannot sample a patch at a codimension-2 point")
    if on_facet.any():
        i = int(np.nonzero(on_facet)[0][0])
        t_hat = ch.facet_tangent[i]
        nu_in = -ch.facet_normal[i]
        grid = [(a, b) for b in range(0, 3) for a in range(-2, 3)]
    else:
        t_hat = np.array([1.0, 0.0])
        nu_in = np.array([0.0, 1.0])
        grid = [(a, b) for b in range(-2, 3) for a in range(-2, 3)]
    step = _fit_step(atlas, simplex, x, t_hat, nu_in, grid, h)
    rel = np.array(grid, dtype=float)  # fit in units of step, for conditioning
    offsets = step * rel @ np.vstack([t_hat, nu_in])
    vals = _sample(field, simplex, x, offsets)
    coef = _quadratic_fit(vals, rel)
    return float((coef[3] + coef[5]) / step**2)


def _fit_step(atlas, simplex: int, x: np.ndarray, t_hat, nu_in, grid, h: float) -> float:
    """Shrink the patch spacing until every sample stays in the simplex."""
    G = atlas.Gs[simplex]
    c = atlas.cs[simplex]
    step = h
    dirs = np.array([[a, b] for a, b in grid], dtype=float) @ np.vstack([t_hat, nu_in])
    for _ in range(60):
        bar = (x[None, :] + step * dirs) @ G.T + c
        if (bar >= -1e-12).all():
            return step
        step *= 0.5
    raise ValueError("no room to place a sample patch at this point")


def tilde_laplacian(P: Polyhedron, field, point: Point, h: float = 1e-3) -> float:
    """Branch-averaged Laplacian: the mean of the one-sided values over
    the maximal simplices adjacent to the point's face.

    At interior points this is the ordinary chart Laplacian; at
    codimension-2 points the operator is undefined.
    """
    kind, where = classify_point(P, point)
    if kind is PointClass.CODIM2:
        raise ValueError("branch-averaged operator undefined at codimension-2 points")
    if kind is PointClass.INTERIOR:
        return laplacian_in_simplex(P, field, point, point.simplex, h)
    hosts = P.adjacency[where]
    vals = [laplacian_in_simplex(P, field, point, s, h) for s in hosts]
    return float(np.mean(vals))


def normal_trace_sum(P: Polyhedron, field, point: Point, h: float = 1e-3) -> float:
    """Sum over branches of the one-sided inward normal derivative.

    Vanishing of this sum is the flux-balance condition singling out the
    domain of the branch-averaged generator at a singular face.
    """
    kind, where = classify_point(P, point)
    if kind is not PointClass.FACE_INTERIOR:
        raise ValueError("normal traces are defined at face-interior points")
    atlas = get_atlas(P)
    total = 0.0
    for s in P.adjacency[where]:
        x = atlas.locate_in_simplex(point, s)
        i = atlas.facet_of_face[(s, where)]
        ch = atlas.charts[s]
        nu_in = -ch.facet_normal[i]
        if P.dimension == 1:
            step = min(h, P.edge_length(*P.maximal[s].vertices) / 8.0)
            offs = step * np.array([[0.0], [1.0], [2.0]]) * nu_in
            v = _sample(field, s, x, offs)
            total += float((-3 * v[0] + 4 * v[1] - v[2]) / (2 * step))
        else:
            t_hat = ch.facet_tangent[i]
            grid = [(a, b) for b in range(0, 3) for a in range(-2, 3)]
            step = _fit_step(atlas, s, x, t_hat, nu_in, grid, h)
            rel = np.array(grid, dtype=float)
            offsets = step * rel @ np.vstack([t_hat, nu_in])
            vals = _sample(field, s, x, offsets)
            coef = _quadratic_fit(vals, rel)
            total += float(coef[2] / step)  # derivative along nu_in
    return total


def _gradient_scale(P: Polyhedron, field, point: Point, h: float) -> float:
    """Crude magnitude of the field gradient near the point, for
    tolerance scaling."""
    atlas = get_atlas(P)
    kind, where = classify_point(P, point)
    hosts = P.adjacency[where] if kind is PointClass.FACE_INTERIOR else [point.simplex]
    worst = 0.0
    for s in hosts:
        x = atlas.locate_in_simplex(point, s)
        ch = atlas.charts[s]
        if P.dimension == 1:
            i = atlas.facet_of_face[(s, where)] if kind is PointClass.FACE_INTERIOR else 0
            sgn = -ch.facet_normal[i] if kind is PointClass.FACE_INTERIOR else np.array([1.0])
            v = _sample(field, s, x, h * np.array([[0.0], [1.0]]) * sgn)
            worst = max(worst, abs(v[1] - v[0]) / h)
        else:
            if kind is PointClass.FACE_INTERIOR:
                i = atlas.facet_of_face[(s, where)]
                frame = np.vstack([ch.facet_tangent[i], -ch.facet_normal[i]])
            else:
                frame = np.eye(2)
            offs = h * np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]) @ frame
            v = _sample(field, s, x, offs)
            worst = max(worst, float(np.hypot(v[1] - v[0], v[2] - v[0]) / h))
    return worst


def estimate_generator_mc(
    P: Polyhedron,
    field,
    point: Point,
    *,
    t: float,
    step: float = 1e-4,
    n_paths: int = 200_000,
    seed: int = 0,
    h_check: float = 1e-3,
    threads: int = 1,
    confidence: float = 0.99,
) -> tuple[Estimate, dict]:
    """Monte Carlo generator action (E[f(B_{t ^ tau})] - f(p)) / t.

    Paths are stopped at the boundary of the star of the point.  The
    function must satisfy the flux balance sum_branches D_l f = 0 at the
    point; otherwise it lies outside the generator domain and the
    estimate would be meaningless, so a GeneratorDomainError is raised
    first.
    """
    kind, where = classify_point(P, point)
    if kind is PointClass.CODIM2:
        raise ValueError("generator undefined at codimension-2 points")
    if kind is PointClass.FACE_INTERIOR:
        trace = normal_trace_sum(P, field, point, h_check)
        scale = max(1.0, _gradient_scale(P, field, point, h_check))
        tol = 10.0 * h_check * scale
        if abs(trace) > tol:
            raise GeneratorDomainError(
                f"normal traces sum to {trace:.6g} (tolerance {tol:.2g}); "
                "the function is not in the generator domain at this point"
            )
    region = StarRegion(P, point)
    res = brownian_ensemble(
        P,
        point,
        step=step,
        horizon=t,
        n_paths=n_paths,
        seed=seed,
        record_times=[t],
        fields=[field],
        region=region,
        threads=threads,
    )
    f0 = field.at_point(point)
    vals = (res.field_values(0) - f0) / t
    est = estimate(vals, confidence)
    info = {
        "exited": int(res.exited.sum()),
        "discarded": res.n_discarded,
        "f_at_point": f0,
    }
    return est, info
