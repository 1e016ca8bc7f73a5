"""Charts, crossings, geodesic tracing, and chart fields.

The square complex (two right triangles glued along the diagonal) is
intrinsically the flat unit square, which supplies an independent planar
oracle for the unfolding rule: geodesics must map to straight lines
under the global isometry built here from the vertex positions alone.
"""
import math

import numpy as np
import pytest

from polybrownian import (
    ChartField,
    Codim2HitError,
    EdgeInterval,
    GeodesicError,
    Point,
    StarRegion,
    TangentialInterval,
    WholeComplex,
    broken_geodesic_length,
    bundled_complex,
    classify_point,
    exponential_map,
    geodesic_step,
    get_atlas,
    link_at,
    make_flow_state,
    normal_coordinates,
    normal_distance_field,
    normal_square_field,
    point_on_edge,
    point_on_face,
    sample_link_direction,
    tangential_coordinate_field,
)
from polybrownian.geometry import branch_frames, trace_displacements

SQUARE_EMBED = {"a": (0.0, 0.0), "b": (1.0, 0.0), "c": (1.0, 1.0), "d": (0.0, 1.0)}


def _planar_maps(P):
    """Per-simplex affine chart-to-plane isometries from vertex images."""
    atlas = get_atlas(P)
    maps = {}
    for s in P.maximal:
        X, Y = [], []
        for j, v in enumerate(s.vertices):
            e = np.zeros(3)
            e[j] = 1.0
            X.append(np.append(atlas.charts[s.index].to_chart(e), 1.0))
            Y.append(SQUARE_EMBED[P.vertex_ids[v]])
        A, *_ = np.linalg.lstsq(np.asarray(X), np.asarray(Y), rcond=None)
        maps[s.index] = lambda x, A=A: np.append(x, 1.0) @ A
    return maps


def _straight_budget(pmap, x0, d):
    """Length until the planar image leaves the open unit square."""
    start = pmap(x0)
    vec = pmap(x0 + d) - start
    out = []
    for k in range(2):
        if vec[k] > 1e-12:
            out.append((1.0 - start[k]) / vec[k])
        elif vec[k] < -1e-12:
            out.append(-start[k] / vec[k])
    return min(out)


def test_charts_are_isometric():
    for name in ("square", "book_3", "star_3"):
        P = bundled_complex(name)
        atlas = get_atlas(P)
        for s in P.maximal:
            ch = atlas.charts[s.index]
            verts = s.vertices
            for i in range(len(verts)):
                for j in range(i + 1, len(verts)):
                    ei = np.zeros(len(verts))
                    ej = np.zeros(len(verts))
                    ei[i] = ej[j] = 1.0
                    d = np.linalg.norm(ch.to_chart(ei) - ch.to_chart(ej))
                    assert d == pytest.approx(
                        P.edge_length(verts[i], verts[j]), abs=1e-12)


def test_crossing_maps_are_orthogonal():
    P = bundled_complex("book_3")
    atlas = get_atlas(P)
    for (s, i), cr in atlas.crossings.items():
        for j in range(cr.k):
            R = cr.linear[j]
            assert np.allclose(R @ R.T, np.eye(len(R)), atol=1e-12)


def test_unfold_traces_straight_lines():
    P = bundled_complex("square")
    maps = _planar_maps(P)
    atlas = get_atlas(P)
    p0 = Point(0, (0.25, 0.45, 0.30))
    x0 = atlas.chart_position(p0)
    for angle in (0.3, 0.8, 1.2, 2.4, 4.0):
        d = np.array([math.cos(angle), math.sin(angle)])
        plane_start = maps[0](x0)
        plane_dir = maps[0](x0 + d) - plane_start
        L = 0.9 * _straight_budget(maps[0], x0, d)
        st = geodesic_step(P, make_flow_state(P, p0, d), L)
        end = maps[st.point.simplex](atlas.chart_position(st.point))
        assert np.allclose(end, plane_start + L * plane_dir, atol=1e-9)
        assert st.elapsed == pytest.approx(L, abs=1e-12)


def test_geodesic_reversal_returns_to_start():
    P = bundled_complex("square")
    atlas = get_atlas(P)
    p0 = Point(0, (0.2, 0.5, 0.3))
    d = np.array([math.cos(1.1), math.sin(1.1)])
    out = geodesic_step(P, make_flow_state(P, p0, d), 0.7)
    back = geodesic_step(P, make_flow_state(P, out.point, -out.direction), 0.7)
    assert back.point.simplex == p0.simplex
    assert np.allclose(
        atlas.chart_position(back.point), atlas.chart_position(p0), atol=1e-9)


def test_geodesic_exact_vertex_hit_raises():
    P = bundled_complex("square")
    atlas = get_atlas(P)
    p0 = Point(0, (0.4, 0.3, 0.3))
    x0 = atlas.chart_position(p0)
    c_idx = list(P.maximal[0].vertices).index(P.vertex_index["c"])
    e = np.zeros(3)
    e[c_idx] = 1.0
    xc = atlas.charts[0].to_chart(e)
    d = (xc - x0) / np.linalg.norm(xc - x0)
    with pytest.raises(Codim2HitError):
        geodesic_step(P, make_flow_state(P, p0, d), 2.0 * np.linalg.norm(xc - x0))


def test_geodesic_needs_rng_at_singular_faces():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p0 = exponential_map(P, point_on_face(P, spine, 0.5), P.adjacency[spine][0], 0.0, 0.05)
    atlas = get_atlas(P)
    i = atlas.facet_of_face[(p0.simplex, spine)]
    toward = atlas.charts[p0.simplex].facet_normal[i]
    with pytest.raises(GeodesicError):
        geodesic_step(P, make_flow_state(P, p0, toward), 0.2)
    st = geodesic_step(P, make_flow_state(P, p0, toward), 0.2,
                       rng=np.random.default_rng(3), crossing_rule="uniform")
    assert st.elapsed == pytest.approx(0.2, abs=1e-12)


def test_exponential_normal_roundtrip():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p = point_on_face(P, spine, 0.4)
    base = {b: normal_coordinates(P, spine, exponential_map(P, p, b)).tangent
            for b in P.adjacency[spine]}
    # the spine triangles are right-angled at s1: w <= y inside the chart
    for branch in P.adjacency[spine]:
        for v, w in ((0.0, 0.2), (0.1, 0.05), (0.2, 0.3), (-0.1, 0.2), (0.0, 0.0)):
            q = exponential_map(P, p, branch, v, w)
            nc = normal_coordinates(P, spine, q)
            assert nc.branch == branch
            assert nc.normal == pytest.approx(abs(w), abs=1e-12)
            assert nc.tangent - base[branch] == pytest.approx(v, abs=1e-12)


def test_exponential_map_rejects_bad_anchor():
    P = bundled_complex("book_3")
    with pytest.raises(GeodesicError):
        exponential_map(P, Point(0, (0.2, 0.3, 0.5)), 0, 0.0, 0.1)


def test_broken_length_additivity():
    P = bundled_complex("interval")
    pts = [point_on_edge(P, 0, x) for x in (0.1, 0.4, 0.9)]
    assert broken_geodesic_length(P, pts) == pytest.approx(0.8, abs=1e-12)
    assert broken_geodesic_length(P, pts[:1]) == 0.0


def test_broken_length_planar_oracle():
    # across the square diagonal the broken length through the crossing
    # point equals the straight planar distance
    P = bundled_complex("square")
    maps = _planar_maps(P)
    atlas = get_atlas(P)
    p0 = Point(0, (0.25, 0.45, 0.30))
    d = np.array([math.cos(1.2), math.sin(1.2)])
    L = 0.8 * _straight_budget(maps[0], atlas.chart_position(p0), d)
    mid = geodesic_step(P, make_flow_state(P, p0, d), 0.6 * L)
    end = geodesic_step(P, make_flow_state(P, mid.point, mid.direction), 0.4 * L)
    length = broken_geodesic_length(P, [p0, mid.point, end.point])
    a = maps[0](atlas.chart_position(p0))
    b = maps[end.point.simplex](atlas.chart_position(end.point))
    assert length == pytest.approx(L, abs=1e-9)
    assert np.linalg.norm(b - a) == pytest.approx(length, abs=1e-9)


def test_broken_length_requires_shared_simplex():
    P = bundled_complex("star_3")
    with pytest.raises(GeodesicError):
        broken_geodesic_length(
            P, [point_on_edge(P, 0, 0.5), point_on_edge(P, 1, 0.5)])


def test_sample_link_direction_unit_and_inward():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p = point_on_face(P, spine, 0.5)
    link = link_at(P, p)
    atlas = get_atlas(P)
    rng = np.random.default_rng(12)
    seen = set()
    for _ in range(200):
        s, d = sample_link_direction(P, link, rng)
        seen.add(s)
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)
        i = atlas.facet_of_face[(s, spine)]
        assert d @ -atlas.charts[s].facet_normal[i] >= -1e-12
    assert seen == set(P.adjacency[spine])


def test_regions_contain_and_exit():
    P = bundled_complex("interval")
    reg = EdgeInterval(P, 0, 0.2, 0.8)
    assert reg.contains(P, point_on_edge(P, 0, 0.5))
    assert not reg.contains(P, point_on_edge(P, 0, 0.9))
    assert WholeComplex().contains(P, point_on_edge(P, 0, 0.9))

    B = bundled_complex("book_3")
    p0 = point_on_face(B, B.face_index([B.vertex_index["s0"], B.vertex_index["s1"]]), 0.5)
    star = StarRegion(B, p0)
    assert star.contains(B, p0)
    assert all(star.allows_simplex(s) for s in B.star_of_point(p0))


def test_tangential_interval_coordinates():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    reg = TangentialInterval(P, spine, 0.2, 0.8)
    branch = P.adjacency[spine][0]
    atlas = get_atlas(P)
    inside = exponential_map(P, point_on_face(P, spine, 0.75), branch, 0.0, 0.05)
    outside = exponential_map(P, point_on_face(P, spine, 0.9), branch, 0.0, 0.05)
    assert reg.contains(P, inside)
    assert not reg.contains(P, outside)
    # exit after one quarter of a tangential move of length 0.2 from y=0.75
    i = atlas.facet_of_face[(branch, spine)]
    tang = atlas.charts[branch].facet_tangent[i]
    pos = atlas.locate_in_simplex(inside, branch)[None, :]
    y0 = normal_coordinates(P, spine, inside).tangent
    sgn = 1.0 if y0 == pytest.approx(0.75, abs=1e-9) else -1.0
    frac = reg.exit_fraction(atlas, np.array([branch]), pos, 0.2 * sgn * tang[None, :])
    assert frac[0] == pytest.approx(0.25, abs=1e-9)
    assert reg.allows_simplex(branch)

    with pytest.raises(ValueError):
        TangentialInterval(P, spine, 0.8, 0.2)


def test_trace_displacements_seg_out_contract():
    P = bundled_complex("square")
    atlas = get_atlas(P)
    maps = _planar_maps(P)
    p0 = Point(0, (0.25, 0.45, 0.30))
    sim = np.array([0])
    pos = atlas.chart_position(p0)[None, :].copy()
    d = np.array([math.cos(1.2), math.sin(1.2)])
    L = 0.8 * _straight_budget(maps[0], pos[0], d)
    disp = L * d[None, :]
    seg = np.zeros_like(pos)
    start_plane = maps[0](pos[0])
    discarded, exited, _ = trace_displacements(
        atlas, sim, pos, disp.copy(), np.array([0]), None, seg_out=seg)
    assert len(discarded) == len(exited) == 0
    end_plane = maps[int(sim[0])](pos[0])
    assert np.linalg.norm(end_plane - start_plane) == pytest.approx(L, abs=1e-9)
    # the walk must agree with the scalar geodesic tracer step for step
    out = geodesic_step(P, make_flow_state(P, p0, d), L)
    assert int(sim[0]) == out.point.simplex
    assert np.allclose(pos[0], atlas.chart_position(out.point), atol=1e-9)


def test_trace_displacements_region_exit_fraction():
    P = bundled_complex("interval")
    atlas = get_atlas(P)
    reg = EdgeInterval(P, 0, 0.2, 0.8)
    sim = np.array([0])
    pos = np.array([[0.5]])
    disp = np.array([[0.6]])  # exits at 0.8 after half the move
    discarded, exited, frac = trace_displacements(
        atlas, sim, pos, disp, np.array([0]), None, region=reg)
    assert len(discarded) == 0
    assert list(exited) == [0]
    assert frac[0] == pytest.approx(0.5, abs=1e-12)
    assert pos[0, 0] == pytest.approx(0.8, abs=1e-12)


def test_chart_fields_on_constructed_points():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    yf = tangential_coordinate_field(P, spine)
    xn = normal_distance_field(P, spine)
    sq = normal_square_field(P, spine, (1.0, 1.0, 4.0))
    frames = branch_frames(P, spine)
    p = point_on_face(P, spine, 0.3)
    y_at_face = yf.at_point(exponential_map(P, p, P.adjacency[spine][0]))
    for branch in P.adjacency[spine]:
        coeff = (1.0, 1.0, 4.0)[frames[branch].branch]
        for v, w in ((0.05, 0.1), (0.2, 0.25), (0.3, 0.4)):
            q = exponential_map(P, p, branch, v, w)
            assert xn.at_point(q) == pytest.approx(abs(w), abs=1e-12)
            assert sq.at_point(q) == pytest.approx(coeff * w * w, abs=1e-12)
            assert yf.at_point(q) - y_at_face == pytest.approx(v, abs=1e-12)


def test_chart_field_vectorized_evaluate():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    xn = normal_distance_field(P, spine)
    atlas = get_atlas(P)
    pts = [exponential_map(P, point_on_face(P, spine, 0.5), P.adjacency[spine][i], 0.0, w)
           for i, w in ((0, 0.1), (1, 0.2), (2, 0.3))]
    sim = np.array([p.simplex for p in pts])
    pos = np.stack([atlas.locate_in_simplex(p, p.simplex) for p in pts])
    vals = xn.evaluate(sim, pos)
    assert np.allclose(vals, [0.1, 0.2, 0.3], atol=1e-12)


def test_classification_of_constructed_points():
    P = bundled_complex("square")
    diag = P.face_index([P.vertex_index["a"], P.vertex_index["c"]])
    kind, where = classify_point(P, point_on_face(P, diag, 0.5))
    assert where == diag
    assert len(P.adjacency[diag]) == 2
