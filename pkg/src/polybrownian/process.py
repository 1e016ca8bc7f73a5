"""Path samplers on piecewise-flat complexes.

Two process constructions share the geodesic tracing machinery: the
isotropic jump process (exponential holding times, link-uniform
directions, speed eta, time dilation eta^-2) and the Gaussian-step
random walk whose displacements are transported through faces.  On a
k-edge star both reproduce the same radial law |N(0, sqrt(t))| with a
uniform, independent branch label, which the exact star sampler draws
directly.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .complexes import Point, PointClass, Polyhedron, classify_point, link_at
from .geometry import (
    Atlas,
    Codim2HitError,
    EdgeInterval,
    FlowState,
    GeodesicError,
    Region,
    StarRegion,
    TraceCounters,
    WholeComplex,
    geodesic_step,
    get_atlas,
    sample_link_direction,
    trace_displacements,
)

__all__ = [
    "IsotropicConfig",
    "PathSample",
    "StoppedPath",
    "Estimate",
    "EnsembleResult",
    "simulate_isotropic",
    "simulate_brownian",
    "sample_walsh_star",
    "walsh_restricted_moments",
    "stop_at_exit",
    "estimate",
    "brownian_ensemble",
    "isotropic_ensemble",
    "substream",
    "Region",
    "StarRegion",
    "EdgeInterval",
    "WholeComplex",
    "point_on_face",
    "point_on_edge",
]

# purpose tags keeping independent substreams apart under one master seed
_STREAM_ENSEMBLE = 0
_STREAM_PATH = 1
_STREAM_WALSH = 2
_STREAM_MISC = 3


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for (master seed, purpose, index...)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Per-path stream derived by hashing (master seed, path index)."""
    return substream(seed, _STREAM_PATH, path_index)


@dataclass(frozen=True)
class IsotropicConfig:
    """Parameters of the isotropic approximation.

    ``rate`` is the exponential holding-time rate on the internal clock.
    The default 2/n makes the small-eta limit match the Gaussian-step
    walk (per-coordinate variance t); in two dimensions this is the unit
    rate.
    """

    eta: float
    horizon: float
    rate: float | None = None

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.rate is not None and self.rate <= 0.0:
            raise ValueError("rate must be positive")

    def effective_rate(self, dimension: int) -> float:
        return self.rate if self.rate is not None else 2.0 / dimension


@dataclass
class PathSample:
    """A recorded trajectory: times, points, and bookkeeping."""

    times: np.ndarray
    points: list[Point]
    discarded: bool
    seed: int | None
    kind: str
    config: dict = dc_field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class StoppedPath:
    """A path truncated at the first exit from a region."""

    path: PathSample
    tau: float
    exited: bool
    times: np.ndarray
    points: list[Point]


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with its standard error and normal CI."""

    mean: float
    stderr: float
    count: int
    confidence: float = 0.99

    @property
    def ci(self) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + self.confidence / 2.0)
        return (self.mean - z * self.stderr, self.mean + z * self.stderr)

    def covers(self, value: float) -> bool:
        lo, hi = self.ci
        return lo <= value <= hi


def estimate(values: np.ndarray, confidence: float = 0.99) -> Estimate:
    """Sample mean, standard error and CI of a batch of draws."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size < 2:
        raise ValueError("need at least two values")
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(v.size), confidence)


# ---------------------------------------------------------------------------
# helpers for constructing points


def point_on_edge(P: Polyhedron, simplex: int, x: float) -> Point:
    """Point at chart coordinate x on an edge of a 1-dimensional complex
    (the lower-indexed vertex sits at 0)."""
    atlas = get_atlas(P)
    return atlas.point_from_chart(simplex, np.array([float(x)]), clip=False)


def point_on_face(P: Polyhedron, face: int, s: float = 0.5) -> Point:
    """Point at parameter s along a codimension-one face, hosted in the
    first adjacent maximal simplex."""
    host = P.adjacency[face][0]
    verts = P.maximal[host].vertices
    fverts = P.faces[face].vertices
    bary = [0.0] * (P.dimension + 1)
    if P.dimension == 1:
        bary[verts.index(fverts[0])] = 1.0
    else:
        bary[verts.index(fverts[0])] = 1.0 - s
        bary[verts.index(fverts[1])] = s
    return Point(host, tuple(bary))


# ---------------------------------------------------------------------------
# exact star sampler


@dataclass(frozen=True)
class WalshSample:
    distance: np.ndarray
    branch: np.ndarray
    exceeded: int


def walsh_restricted_moments(k: int, t: float) -> tuple[float, float]:
    """Restricted moments of the k-star process at time t: the mean of
    d restricted to one branch and likewise for d^2."""
    return math.sqrt(2.0 * t / math.pi) / k, t / k


def sample_walsh_star(k: int, t: float, n: int, rng_or_seed, edge_length: float | None = None) -> WalshSample:
    """Exact draws of the star-process marginal at time t.

    Distance is |N(0, sqrt(t))| and the branch label is an independent
    uniform choice among the k edges.  Draws beyond ``edge_length`` are
    counted (the law is only meaningful while exits are negligible).
    """
    if k < 2:
        raise ValueError("a star sampler needs k >= 2 branches")
    if t <= 0.0:
        raise ValueError("t must be positive")
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else substream(
        int(rng_or_seed), _STREAM_WALSH
    )
    d = np.abs(rng.normal(0.0, math.sqrt(t), size=n))
    branch = rng.integers(k, size=n)
    exceeded = int((d > edge_length).sum()) if edge_length is not None else 0
    return WalshSample(d, branch, exceeded)


# ---------------------------------------------------------------------------
# single-path simulators


def _initial_direction_and_host(P: Polyhedron, p0: Point, rng) -> tuple[int, np.ndarray]:
    link = link_at(P, p0)
    return sample_link_direction(P, link, rng)


def simulate_brownian(
    P: Polyhedron,
    p0: Point,
    step: float,
    horizon: float,
    rng_or_seed,
    crossing_rule: str = "unfold",
) -> PathSample:
    """One Gaussian-step path, recorded at every step time.

    Each step draws an isotropic normal displacement with per-coordinate
    variance ``step`` in the current chart and transports it through
    faces with the geodesic crossing rules.
    """
    if step <= 0.0 or horizon <= 0.0:
        raise ValueError("step and horizon must be positive")
    seed = None
    if isinstance(rng_or_seed, np.random.Generator):
        rng = rng_or_seed
    else:
        seed = int(rng_or_seed)
        rng = path_rng(seed, 0)
    atlas = get_atlas(P)
    n = atlas.dim
    n_steps = max(1, int(round(horizon / step)))
    sim = np.array([p0.simplex], dtype=np.int64)
    pos = atlas.chart_position(p0)[None, :].copy()
    fold = _start_fold_data(P, atlas, p0, crossing_rule)
    times = [0.0]
    points = [p0]
    discarded = False
    idx = np.array([0], dtype=np.int64)
    sd = math.sqrt(step)
    for j in range(1, n_steps + 1):
        disp = rng.normal(0.0, sd, size=(1, n))
        if j == 1 and fold is not None:
            disp = _fold_out(disp, fold)
        disc, _, _ = trace_displacements(
            atlas, sim, pos, disp, idx, rng, crossing_rule=crossing_rule
        )
        if len(disc) > 0:
            discarded = True
            break
        times.append(j * step)
        points.append(atlas.point_from_chart(int(sim[0]), pos[0]))
    return PathSample(
        np.asarray(times),
        points,
        discarded,
        seed,
        "brownian",
        {"step": step, "horizon": horizon, "crossing_rule": crossing_rule},
    )


def simulate_isotropic(P: Polyhedron, p0: Point, cfg: IsotropicConfig, rng_or_seed) -> PathSample:
    """One isotropic-process path, recorded at direction renewals.

    Holding times are exponential on the internal clock; between renewals
    the path follows the geodesic flow at speed eta, and external time
    runs eta^2 times slower.
    """
    seed = None
    if isinstance(rng_or_seed, np.random.Generator):
        rng = rng_or_seed
    else:
        seed = int(rng_or_seed)
        rng = path_rng(seed, 0)
    atlas = get_atlas(P)
    rate = cfg.effective_rate(P.dimension)
    sim_id, direction = _initial_direction_and_host(P, p0, rng)
    sim = np.array([sim_id], dtype=np.int64)
    pos = atlas.locate_in_simplex(p0, sim_id)[None, :].copy()
    t_ext = 0.0
    times = [0.0]
    points = [p0]
    discarded = False
    idx = np.array([0], dtype=np.int64)
    dvec = direction[None, :].copy()
    while t_ext < cfg.horizon:
        hold = rng.exponential(1.0 / rate)
        dt_ext = cfg.eta**2 * hold
        truncated = t_ext + dt_ext >= cfg.horizon
        if truncated:
            hold = (cfg.horizon - t_ext) / cfg.eta**2
            dt_ext = cfg.horizon - t_ext
        disp = dvec * (cfg.eta * hold)
        disc, _, _ = trace_displacements(
            atlas, sim, pos, disp, idx, rng, crossing_rule="uniform"
        )
        if len(disc) > 0:
            discarded = True
            break
        # the crossing machinery rotated the displacement; recover the
        # current direction by re-tracing a unit vector is unnecessary:
        # renewals redraw it anyway
        t_ext += dt_ext
        times.append(t_ext)
        points.append(atlas.point_from_chart(int(sim[0]), pos[0]))
        if not truncated:
            theta = rng.random() * 2.0 * math.pi
            if atlas.dim == 2:
                dvec = np.array([[math.cos(theta), math.sin(theta)]])
            else:
                dvec = np.array([[1.0 if theta < math.pi else -1.0]])
    return PathSample(
        np.asarray(times),
        points,
        discarded,
        seed,
        "isotropic",
        {"eta": cfg.eta, "horizon": cfg.horizon, "rate": rate},
    )


def stop_at_exit(P: Polyhedron, path: PathSample, region: Region) -> StoppedPath:
    """Truncate a recorded path at its first exit from a region.

    The crossing time within the final step is linearly interpolated; a
    path that never leaves keeps its full horizon with exited=False.
    """
    atlas = get_atlas(P)
    inside = [region.contains(P, pt) for pt in path.points]
    if all(inside):
        return StoppedPath(path, float(path.times[-1]), False, path.times.copy(), list(path.points))
    first_out = inside.index(False)
    if first_out == 0:
        return StoppedPath(path, 0.0, True, path.times[:1].copy(), [path.points[0]])
    a, b = path.points[first_out - 1], path.points[first_out]
    ta, tb = float(path.times[first_out - 1]), float(path.times[first_out])
    frac, crossing = _interpolate_exit(P, atlas, a, b, region)
    tau = ta + frac * (tb - ta)
    times = np.append(path.times[:first_out], tau)
    points = list(path.points[:first_out]) + [crossing]
    return StoppedPath(path, float(tau), True, times, points)


def _interpolate_exit(P, atlas, a: Point, b: Point, region: Region) -> tuple[float, Point]:
    try:
        xa = atlas.locate_in_simplex(a, a.simplex)
        xb = atlas.locate_in_simplex(b, a.simplex)
    except GeodesicError:
        return 0.5, a
    seg = (xb - xa)[None, :]
    sims = np.array([a.simplex], dtype=np.int64)
    t_reg = float(region.exit_fraction(atlas, sims, xa[None, :], seg)[0])
    # face exit of the source simplex
    G = atlas.Gs[a.simplex]
    b0 = G @ xa + atlas.cs[a.simplex]
    db = G @ seg[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(db < -1e-300, -np.maximum(b0, 0.0) / db, np.inf)
    t_face = float(t.min())
    frac = min(t_reg, t_face, 1.0)
    frac = max(0.0, frac)
    x = xa + frac * (xb - xa)
    return frac, atlas.point_from_chart(a.simplex, x)


# ---------------------------------------------------------------------------
# vectorized ensembles


@dataclass
class EnsembleResult:
    """Chunk-merged output of an ensemble run."""

    record_times: np.ndarray
    values: np.ndarray  # (n_paths, n_times, n_fields)
    exited: np.ndarray
    exit_time: np.ndarray
    discarded: np.ndarray
    final_sim: np.ndarray
    final_pos: np.ndarray
    face_counts: dict[int, np.ndarray]
    occupation: dict[float, int]
    occupation_samples: int
    n_paths: int
    seed: int

    @property
    def n_discarded(self) -> int:
        return int(self.discarded.sum())

    def field_values(self, time_index: int, field_index: int = 0) -> np.ndarray:
        """Values of one field at one record time, discarded paths dropped."""
        v = self.values[:, time_index, field_index]
        return v[~self.discarded]


def _start_fold_data(P: Polyhedron, atlas: Atlas, p0: Point, crossing_rule: str):
    """Inward normal of the start face when the initial displacement must
    be folded outward so the first branch label is drawn by the crossing
    machinery (k >= 3, or k = 2 under the uniform rule)."""
    kind, where = classify_point(P, p0)
    if kind is not PointClass.FACE_INTERIOR:
        return None
    k = len(P.adjacency[where])
    if k < 3 and not (k == 2 and crossing_rule == "uniform"):
        return None
    i = atlas.facet_of_face[(p0.simplex, where)]
    return -atlas.charts[p0.simplex].facet_normal[i]  # inward normal

def _fold_out(disp: np.ndarray, nu_in: np.ndarray) -> np.ndarray:
    dn = disp @ nu_in
    return disp - 2.0 * np.maximum(dn, 0.0)[:, None] * nu_in[None, :]


def _resolve_record_steps(record_times, step: float, n_steps: int) -> list[int]:
    steps = []
    for t in record_times:
        j = int(round(t / step))
        if abs(j * step - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= j <= n_steps:
            raise ValueError(f"record time {t} does not align with step {step}")
        steps.append(j)
    if steps != sorted(steps):
        raise ValueError("record times must be increasing")
    return steps


def brownian_ensemble(
    P: Polyhedron,
    p0: Point,
    *,
    step: float,
    horizon: float,
    n_paths: int,
    seed: int,
    record_times: Sequence[float] | None = None,
    fields: Sequence = (),
    region: Region | None = None,
    crossing_rule: str = "unfold",
    threads: int = 1,
    chunk_size: int = 8192,
    tally_faces: Sequence[int] | None = None,
    branch_weights: Mapping[int, np.ndarray] | None = None,
    near_vertex_eps: Sequence[float] = (),
) -> EnsembleResult:
    """Gaussian-step ensemble with per-chunk deterministic streams.

    Identical (seed, n_paths, configuration) yield bit-identical results
    for any thread count: randomness is drawn per fixed-size chunk in
    path order and chunks are merged in index order.
    """
    atlas = get_atlas(P)
    n = atlas.dim
    n_steps = max(1, int(round(horizon / step)))
    if abs(n_steps * step - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a multiple of the step size")
    if record_times is None:
        record_times = [horizon]
    record_steps = _resolve_record_steps(record_times, step, n_steps)
    x0 = atlas.chart_position(p0)
    fold = _start_fold_data(P, atlas, p0, crossing_rule)
    eps = tuple(sorted(near_vertex_eps, reverse=True))
    tally = frozenset(tally_faces) if tally_faces is not None else None
    if region is not None and not region.contains(P, p0):
        raise ValueError("start point lies outside the region")
    sd = math.sqrt(step)

    def run_chunk(c: int, count: int):
        rng = substream(seed, _STREAM_ENSEMBLE, c)
        sim = np.full(count, p0.simplex, dtype=np.int64)
        pos = np.tile(x0, (count, 1))
        status = np.zeros(count, dtype=np.int8)  # 0 live, 1 exited, 2 discarded
        exit_time = np.full(count, float(horizon))
        counters = TraceCounters()
        vals = np.full((count, len(record_steps), max(1, len(fields))), np.nan)
        occ = {e: 0 for e in eps}
        occ_samples = 0
        rec_i = 0
        while rec_i < len(record_steps) and record_steps[rec_i] == 0:
            for fi, f in enumerate(fields):
                vals[:, rec_i, fi] = f.evaluate(sim, pos)
            rec_i += 1
        for j in range(1, n_steps + 1):
            live = np.nonzero(status == 0)[0]
            if len(live) > 0:
                disp = rng.normal(0.0, sd, size=(len(live), n))
                if j == 1 and fold is not None:
                    disp = _fold_out(disp, fold)
                disc, ex, ef = trace_displacements(
                    atlas,
                    sim,
                    pos,
                    disp,
                    live,
                    rng,
                    crossing_rule=crossing_rule,
                    region=region,
                    counters=counters,
                    tally_faces=tally,
                    branch_weights=branch_weights,
                )
                if len(disc) > 0:
                    status[disc] = 2
                if len(ex) > 0:
                    status[ex] = 1
                    exit_time[ex] = (j - 1 + ef) * step
            if eps:
                alive = status != 2
                occ_samples += int(alive.sum())
                corners = atlas.corners[sim[alive]]
                d2 = ((corners - pos[alive][:, None, :]) ** 2).sum(axis=2).min(axis=1)
                for e in eps:
                    occ[e] += int((d2 <= e * e).sum())
            while rec_i < len(record_steps) and record_steps[rec_i] == j:
                ok = status != 2
                for fi, f in enumerate(fields):
                    vals[ok, rec_i, fi] = f.evaluate(sim[ok], pos[ok])
                rec_i += 1
        return (
            vals,
            status == 1,
            exit_time,
            status == 2,
            sim,
            pos,
            counters.face_counts,
            occ,
            occ_samples,
        )

    return _merge_chunks(run_chunk, n_paths, chunk_size, threads, record_times, eps, seed)


def isotropic_ensemble(
    P: Polyhedron,
    p0: Point,
    cfg: IsotropicConfig,
    *,
    n_paths: int,
    seed: int,
    record_times: Sequence[float] | None = None,
    fields: Sequence = (),
    region: Region | None = None,
    threads: int = 1,
    chunk_size: int = 8192,
) -> EnsembleResult:
    """Isotropic-process ensemble; same determinism contract as the
    Gaussian-step ensemble."""
    atlas = get_atlas(P)
    n = atlas.dim
    rate = cfg.effective_rate(P.dimension)
    if record_times is None:
        record_times = [cfg.horizon]
    record_times = list(record_times)
    if any(t < 0 or t > cfg.horizon + 1e-12 for t in record_times):
        raise ValueError("record times must lie within the horizon")
    kind, where = classify_point(P, p0)
    eta = cfg.eta

    def run_chunk(c: int, count: int):
        rng = substream(seed, _STREAM_ENSEMBLE, c)
        # initial directions from the link (uniform branch, uniform angle)
        if kind is PointClass.FACE_INTERIOR:
            adj = P.adjacency[where]
            branch = rng.integers(len(adj), size=count)
            sim = np.asarray(adj, dtype=np.int64)[branch]
            theta = rng.random(count) * math.pi
            dvec = np.empty((count, n))
            for s in np.unique(sim):
                i = atlas.facet_of_face[(int(s), where)]
                ch = atlas.charts[int(s)]
                mask = sim == s
                if n == 2:
                    dvec[mask] = (
                        np.cos(theta[mask])[:, None] * ch.facet_tangent[i]
                        + np.sin(theta[mask])[:, None] * -ch.facet_normal[i]
                    )
                else:
                    dvec[mask] = -ch.facet_normal[i]
            pos = np.empty((count, n))
            for s in np.unique(sim):
                x = atlas.locate_in_simplex(p0, int(s))
                pos[sim == s] = x
        else:
            sim = np.full(count, p0.simplex, dtype=np.int64)
            pos = np.tile(atlas.chart_position(p0), (count, 1))
            theta = rng.random(count) * 2.0 * math.pi
            if n == 2:
                dvec = np.column_stack([np.cos(theta), np.sin(theta)])
            else:
                dvec = np.where(theta[:, None] < math.pi, 1.0, -1.0)
        status = np.zeros(count, dtype=np.int8)
        exit_time = np.full(count, float(cfg.horizon))
        t_ext = np.zeros(count)
        hold_left = rng.exponential(1.0 / rate, size=count)  # internal clock
        vals = np.full((count, len(record_times), max(1, len(fields))), np.nan)
        counters = TraceCounters()
        segbuf = np.zeros((count, n))
        for rec_i, T in enumerate(record_times):
            while True:
                live = np.nonzero((status == 0) & (t_ext < T - 1e-15))[0]
                if len(live) == 0:
                    break
                dt_int = hold_left[live]
                dt_ext = eta * eta * dt_int
                over = t_ext[live] + dt_ext > T
                dt_ext = np.where(over, T - t_ext[live], dt_ext)
                dt_int = dt_ext / (eta * eta)
                disp = dvec[live] * (eta * dt_int)[:, None]
                disc, ex, ef = trace_displacements(
                    atlas,
                    sim,
                    pos,
                    disp,
                    live,
                    rng,
                    crossing_rule="uniform",
                    region=region,
                    counters=counters,
                    seg_out=segbuf,
                )
                if len(disc) > 0:
                    status[disc] = 2
                if len(ex) > 0:
                    status[ex] = 1
                    exit_time[ex] = t_ext[ex] + ef * (
                        dt_ext[np.searchsorted(live, ex)]
                    )
                t_ext[live] += dt_ext
                hold_left[live] -= dt_int
                # a flight split at a record time continues in whatever
                # direction the crossings rotated it into
                cont = live[status[live] == 0]
                norms = np.linalg.norm(segbuf[cont], axis=1)
                good = cont[norms > 0.0]
                dvec[good] = segbuf[good] / norms[norms > 0.0][:, None]
                renew = live[(hold_left[live] <= 1e-15) & (status[live] == 0)]
                if len(renew) > 0:
                    hold_left[renew] = rng.exponential(1.0 / rate, size=len(renew))
                    theta = rng.random(len(renew))
                    if n == 2:
                        ang = theta * 2.0 * math.pi
                        dvec[renew] = np.column_stack([np.cos(ang), np.sin(ang)])
                    else:
                        dvec[renew] = np.where(theta[:, None] < 0.5, 1.0, -1.0)
            ok = status != 2
            for fi, f in enumerate(fields):
                vals[ok, rec_i, fi] = f.evaluate(sim[ok], pos[ok])
        return (
            vals,
            status == 1,
            exit_time,
            status == 2,
            sim,
            pos,
            counters.face_counts,
            {},
            0,
        )

    return _merge_chunks(run_chunk, n_paths, chunk_size, threads, record_times, (), seed)


def _merge_chunks(run_chunk, n_paths, chunk_size, threads, record_times, eps, seed) -> EnsembleResult:
    counts = [min(chunk_size, n_paths - i) for i in range(0, n_paths, chunk_size)]
    if threads > 1 and len(counts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ci: run_chunk(*ci), enumerate(counts)))
    else:
        results = [run_chunk(c, cnt) for c, cnt in enumerate(counts)]
    vals = np.concatenate([r[0] for r in results])
    exited = np.concatenate([r[1] for r in results])
    exit_time = np.concatenate([r[2] for r in results])
    discarded = np.concatenate([r[3] for r in results])
    final_sim = np.concatenate([r[4] for r in results])
    final_pos = np.concatenate([r[5] for r in results])
    face_counts: dict[int, np.ndarray] = {}
    for r in results:
        for f, arr in r[6].items():
            if f in face_counts:
                face_counts[f] = face_counts[f] + arr
            else:
                face_counts[f] = arr.copy()
    occupation = {e: 0 for e in eps}
    occ_samples = 0
    for r in results:
        for e, cnt in r[7].items():
            occupation[e] += cnt
        occ_samples += r[8]
    return EnsembleResult(
        np.asarray(record_times, dtype=float),
        vals,
        exited,
        exit_time,
        discarded,
        final_sim,
        final_pos,
        face_counts,
        occupation,
        occ_samples,
        n_paths,
        seed,
    )


# ---------------------------------------------------------------------------
# CSV dumps


def write_paths_csv(P: Polyhedron, samples: Sequence[PathSample], fh) -> None:
    """Dump paths as (path_id, time, simplex_id, bary..., discarded) rows."""
    n = P.dimension
    cols = ",".join(f"bary_{i + 1}" for i in range(n + 1))
    fh.write(f"path_id,time,simplex_id,{cols},discarded\n")
    for pid, sample in enumerate(samples):
        flag = int(sample.discarded)
        for t, pt in zip(sample.times, sample.points):
            bary = ",".join(f"{b:.17g}" for b in pt.bary)
            fh.write(f"{pid},{t:.17g},{pt.simplex},{bary},{flag}\n")
