"""Hypothesis tests for the simulated processes.

Each test separates the decision rule (a pure function of summary
statistics) from the sampling machinery, so the calibration harness can
drive the identical rule with synthetic null data.  Reports are plain
dataclasses that serialize deterministically; rerunning with the same
seed and configuration reproduces them bit for bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .complexes import Polyhedron, Point, make_star
from .geometry import (
    ChartField,
    Region,
    StarRegion,
    TangentialInterval,
    get_atlas,
    normal_distance_field,
    normal_square_field,
    tangential_coordinate_field,
)
from .operators import (
    DiscreteField,
    GeneratorDomainError,
    build_mesh,
    estimate_generator_mc,
    normal_trace_sum,
    tilde_laplacian,
)
from .process import (
    IsotropicConfig,
    brownian_ensemble,
    isotropic_ensemble,
    point_on_edge,
    point_on_face,
    sample_walsh_star,
    substream,
    walsh_restricted_moments,
)

__all__ = [
    "TestReport",
    "MartingaleGrid",
    "martingale_test",
    "generator_consistency_test",
    "branch_probability_test",
    "skeleton_avoidance_test",
    "walsh_moment_test",
    "morphism_test",
    "sampler_agreement_test",
    "calibration_counts",
    "calibration_report",
    "run_suite",
    "SUITES",
]

_MISC = 3  # substream purpose tag, shared layout with the process module


def _derive_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_MISC, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)!r}")


@dataclass
class TestReport:
    """Outcome of one statistical check, reproducible from (seed, config)."""

    name: str
    statistic: float
    p_value: float | None
    ci_low: float | None
    ci_high: float | None
    decision: bool
    n: int
    seed: int
    level: float
    config: dict = dc_field(default_factory=dict)
    extras: dict = dc_field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "decision": bool(self.decision),
            "n": self.n,
            "seed": self.seed,
            "level": self.level,
            "config": self.config,
            "extras": self.extras,
        }
        return json.dumps(payload, sort_keys=True, default=_json_default)

    def summary(self) -> str:
        tag = "PASS" if self.decision else "FAIL"
        p = "-" if self.p_value is None else f"{self.p_value:.4g}"
        return f"[{tag}] {self.name}: statistic={self.statistic:.6g} p={p} n={self.n}"


@dataclass
class MartingaleGrid:
    """Stopped expectations on a time grid with paired-difference z scores
    against the first grid point."""

    times: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    z_scores: np.ndarray

    def __post_init__(self):
        if not (np.diff(self.times) > 0).all():
            raise ValueError("grid times must increase")


# ---------------------------------------------------------------------------
# decision cores (pure functions of summary statistics)


def _bonferroni_z(level: float, m: int, two_sided: bool = True) -> float:
    a = level / m
    return float(stats.norm.ppf(1.0 - (a / 2.0 if two_sided else a)))


def _decide_constant(diff_means: np.ndarray, diff_ses: np.ndarray, level: float):
    """Joint test that all paired differences vanish."""
    z = diff_means / diff_ses
    stat = float(np.abs(z).max())
    m = len(z)
    p = float(min(1.0, m * 2.0 * stats.norm.sf(stat)))
    return stat, p, p > level, z


def _decide_nondecreasing(inc_means: np.ndarray, inc_ses: np.ndarray, level: float):
    """One-sided test against any significantly negative increment."""
    z = inc_means / inc_ses
    stat = float(z.min())
    m = len(z)
    p = float(min(1.0, m * stats.norm.cdf(stat)))
    return stat, p, p > level, z


def _decide_uniform_counts(counts: np.ndarray, level: float):
    total = counts.sum()
    k = len(counts)
    expected = total / k
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p = float(stats.chi2.sf(chi2, k - 1))
    return chi2, p, p > level


def _decide_three_sigma(z_values: np.ndarray, bound: float = 3.0):
    stat = float(np.abs(z_values).max())
    return stat, stat <= bound


def _decide_ci_cover(mean: float, se: float, target: float, level: float):
    z = (mean - target) / se
    q = float(stats.norm.ppf(1.0 - level / 2.0))
    p = float(2.0 * stats.norm.sf(abs(z)))
    return float(z), p, abs(z) <= q, (mean - q * se, mean + q * se)


def _decide_gaussian_increments(z_pool: np.ndarray, level: float):
    """KS against the standard normal plus a zero-drift z test, each at
    half the level."""
    ks = stats.kstest(z_pool, "norm")
    drift = float(z_pool.mean() * math.sqrt(len(z_pool)))
    q = float(stats.norm.ppf(1.0 - level / 4.0))
    ok = ks.pvalue > level / 2.0 and abs(drift) <= q
    return float(ks.statistic), float(ks.pvalue), drift, ok


def _decide_occupation(eps: np.ndarray, occ: np.ndarray, discard_frac: float,
                       min_slope: float = 1.5, max_discard: float = 1e-3):
    if (occ <= 0).any():
        return 0.0, False
    slope = float(np.polyfit(np.log(eps), np.log(occ), 1)[0])
    return slope, slope >= min_slope and discard_frac < max_discard


# ---------------------------------------------------------------------------
# tests


def martingale_test(
    P: Polyhedron,
    field,
    p0: Point,
    region: Region,
    grid: Sequence[float],
    n_paths: int,
    seed: int,
    *,
    mode: str = "martingale",
    level: float = 0.01,
    step: float = 1e-3,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """Constancy (or monotonicity) of stopped expectations on a grid.

    The paired differences f(B_{t_j ^ tau}) - f(B_{t_0 ^ tau}) have their
    per-path variance two orders below the marginal one, which is what
    makes a 1e5-path joint z test sharp enough at the bundled scales.
    """
    grid = [float(t) for t in grid]
    if grid[0] != 0.0:
        grid = [0.0] + grid
    if mode not in ("martingale", "submartingale"):
        raise ValueError(f"unknown mode {mode!r}")
    res = brownian_ensemble(
        P,
        p0,
        step=step,
        horizon=grid[-1],
        n_paths=n_paths,
        seed=seed,
        record_times=grid,
        fields=[field],
        region=region,
        threads=threads,
    )
    ok_rows = ~res.discarded
    vals = res.values[ok_rows, :, 0]
    n_eff = int(ok_rows.sum())
    times = np.asarray(grid)
    est = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / math.sqrt(n_eff)
    diffs = vals[:, 1:] - vals[:, :1]
    dmean = diffs.mean(axis=0)
    dse = diffs.std(axis=0, ddof=1) / math.sqrt(n_eff)
    dse = np.where(dse > 0, dse, 1e-300)
    if mode == "martingale":
        stat, p, ok, z = _decide_constant(dmean, dse, level)
    else:
        inc = vals[:, 1:] - vals[:, :-1]
        imean = inc.mean(axis=0)
        ise = inc.std(axis=0, ddof=1) / math.sqrt(n_eff)
        ise = np.where(ise > 0, ise, 1e-300)
        stat, p, ok, z = _decide_nondecreasing(imean, ise, level)
    slope = float(dmean[-1] / times[-1])
    slope_se = float(dse[-1] / times[-1])
    q = float(stats.norm.ppf(1.0 - level / 2.0))
    mg = MartingaleGrid(times, est, ses, np.concatenate([[0.0], dmean / dse]))
    return TestReport(
        name or f"{mode}_test",
        stat,
        p,
        slope - q * slope_se,
        slope + q * slope_se,
        ok,
        n_eff,
        seed,
        level,
        config={
            "grid": grid,
            "step": step,
            "n_paths": n_paths,
            "mode": mode,
            "p0": {"simplex": p0.simplex, "bary": list(p0.bary)},
        },
        extras={
            "estimates": est.tolist(),
            "stderrs": ses.tolist(),
            "z_scores": mg.z_scores.tolist(),
            "drift_slope": slope,
            "drift_slope_se": slope_se,
            "exited": int(res.exited.sum()),
            "discarded": res.n_discarded,
        },
    )


def generator_consistency_test(
    P: Polyhedron,
    field,
    p0: Point,
    *,
    t: float,
    n_paths: int = 100_000,
    seed: int = 0,
    step: float = 1e-4,
    level: float = 0.01,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """MC generator action against one half of the branch-averaged
    Laplacian at the point."""
    target = 0.5 * tilde_laplacian(P, field, p0)
    est, info = estimate_generator_mc(
        P, field, p0, t=t, step=step, n_paths=n_paths, seed=seed,
        threads=threads, confidence=1.0 - level,
    )
    z, p, ok, ci = _decide_ci_cover(est.mean, est.stderr, target, level)
    return TestReport(
        name or "generator_consistency",
        z,
        p,
        ci[0],
        ci[1],
        ok,
        est.count,
        seed,
        level,
        config={"t": t, "step": step, "n_paths": n_paths,
                "p0": {"simplex": p0.simplex, "bary": list(p0.bary)}},
        extras={"mc_mean": est.mean, "mc_stderr": est.stderr,
                "half_tilde_laplacian": target, **info},
    )


def branch_probability_test(
    P: Polyhedron,
    face: int,
    n_crossings: int,
    seed: int,
    *,
    step: float = 1e-3,
    horizon: float = 0.05,
    batch_paths: int = 8192,
    level: float = 0.01,
    crossing_rule: str = "unfold",
    branch_weights: Mapping[int, np.ndarray] | None = None,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """Chi-square uniformity of branch choices recorded at one face."""
    k = len(P.adjacency[face])
    if n_crossings < 100 * k:
        raise ValueError(f"need at least {100 * k} crossings for k={k}")
    p0 = point_on_face(P, face, 0.5)
    tally = np.zeros(k, dtype=np.int64)
    batches = 0
    while tally.sum() < n_crossings:
        if batches >= 200:
            raise RuntimeError("crossing quota not reached; increase horizon")
        res = brownian_ensemble(
            P,
            p0,
            step=step,
            horizon=horizon,
            n_paths=batch_paths,
            seed=_derive_seed(seed, batches),
            tally_faces=[face],
            crossing_rule=crossing_rule,
            branch_weights=branch_weights,
            threads=threads,
        )
        tally += res.face_counts.get(face, np.zeros(k, dtype=np.int64))
        batches += 1
    chi2, p, ok = _decide_uniform_counts(tally, level)
    return TestReport(
        name or "branch_probability",
        chi2,
        p,
        None,
        None,
        ok,
        int(tally.sum()),
        seed,
        level,
        config={"face": face, "k": k, "n_crossings": n_crossings, "step": step,
                "horizon": horizon, "crossing_rule": crossing_rule,
                "weights": None if branch_weights is None else
                np.asarray(branch_weights[face], dtype=float).tolist()},
        extras={"counts": tally.tolist(), "batches": batches},
    )


def skeleton_avoidance_test(
    P: Polyhedron,
    *,
    start: Point,
    n_paths: int = 8192,
    seed: int = 0,
    horizon: float = 0.25,
    step: float = 1e-3,
    eps: Sequence[float] = (0.1, 0.05, 0.025),
    level: float = 0.01,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """Exact-hit discard fraction and vertex-neighborhood occupation decay.

    Occupation of the eps-ball around codimension-2 points must fall with
    log-log slope at least 1.5 across the given radii (two-dimensional
    scaling), and exact hits must stay below one path in a thousand.
    """
    if P.dimension != 2:
        raise ValueError("the codimension-2 skeleton is empty in dimension one")
    res = brownian_ensemble(
        P,
        start,
        step=step,
        horizon=horizon,
        n_paths=n_paths,
        seed=seed,
        near_vertex_eps=tuple(eps),
        threads=threads,
    )
    ee = np.asarray(sorted(eps, reverse=True))
    occ = np.array([res.occupation[e] / res.occupation_samples for e in ee])
    discard_frac = res.n_discarded / n_paths
    slope, ok = _decide_occupation(ee, occ, discard_frac)
    return TestReport(
        name or "skeleton_avoidance",
        slope,
        None,
        None,
        None,
        ok,
        n_paths,
        seed,
        level,
        config={"horizon": horizon, "step": step, "eps": ee.tolist(),
                "start": {"simplex": start.simplex, "bary": list(start.bary)}},
        extras={"occupation": dict(zip(map(float, ee), occ.tolist())),
                "discard_fraction": discard_frac,
                "samples": res.occupation_samples},
    )


def _branch_moment_zs(d: np.ndarray, lab: np.ndarray, k: int, t: float):
    """Per-branch restricted-moment z scores against the closed forms."""
    m1, m2 = walsh_restricted_moments(k, t)
    n = len(d)
    zs, table = [], []
    for l in range(k):
        r1 = d * (lab == l)
        r2 = d * d * (lab == l)
        e1, e2 = r1.mean(), r2.mean()
        s1 = r1.std(ddof=1) / math.sqrt(n)
        s2 = r2.std(ddof=1) / math.sqrt(n)
        zs += [(e1 - m1) / s1, (e2 - m2) / s2]
        frac = (lab == l).mean()
        table.append({
            "branch": l,
            "restricted_mean": float(e1),
            "restricted_square": float(e2),
            "conditional_mean": float(e1 / frac) if frac > 0 else None,
            "conditional_square": float(e2 / frac) if frac > 0 else None,
            "fraction": float(frac),
        })
    return np.asarray(zs), table, (m1, m2)


def walsh_moment_test(
    k: int,
    t: float,
    n: int,
    seed: int,
    *,
    step: float = 1e-4,
    level: float = 0.01,
    bound: float = 3.0,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """Restricted branch moments of the star process, from the exact
    sampler and from the Gaussian-step walk, against the closed forms."""
    if k < 2:
        raise ValueError("need k >= 2 branches")
    if n < 10_000:
        raise ValueError("need at least 10^4 paths for the 3-sigma bands")
    exact = sample_walsh_star(k, t, n, seed, edge_length=1.0)
    z_exact, table_exact, targets = _branch_moment_zs(exact.distance, exact.branch, k, t)
    P = make_star(k)
    center = next(f.index for f in P.faces if len(P.adjacency[f.index]) == k)
    p0 = point_on_face(P, center)
    res = brownian_ensemble(
        P, p0, step=step, horizon=t, n_paths=n, seed=seed,
        crossing_rule="uniform", threads=threads,
    )
    d = np.abs(res.final_pos[:, 0])
    z_walk, table_walk, _ = _branch_moment_zs(d, res.final_sim, k, t)
    z_all = np.concatenate([z_exact, z_walk])
    stat, ok = _decide_three_sigma(z_all, bound)
    return TestReport(
        name or f"walsh_moments_k{k}",
        stat,
        None,
        None,
        None,
        ok,
        n,
        seed,
        level,
        config={"k": k, "t": t, "n": n, "step": step, "bound": bound},
        extras={
            "targets": {"restricted_mean": targets[0], "restricted_square": targets[1]},
            "exact_sampler": table_exact,
            "step_walk": table_walk,
            "z_exact": z_exact.tolist(),
            "z_walk": z_walk.tolist(),
            "beyond_edge": exact.exceeded,
            "walk_discarded": res.n_discarded,
        },
    )


def morphism_test(
    P: Polyhedron,
    phi,
    lam,
    p0: Point,
    *,
    n_paths: int = 10_000,
    seed: int = 0,
    horizon: float = 0.01,
    step: float = 1e-3,
    n_windows: int = 8,
    level: float = 0.01,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """Path-preservation check for a real-valued map.

    Along each path, Y = phi(B) and the clock A = integral of lam(B) are
    recorded; increments of Y over equal-clock windows, normalized by the
    realized clock increments, must pool to a standard normal (KS) with
    zero drift.

    Keep the horizon short relative to the distance from the start to any
    reflecting boundary of the image: reflections there distort the
    pooled increments, which is exactly what flags non-preserving maps.
    """
    if isinstance(lam, DiscreteField) and lam.values.min() <= 0.0:
        raise ValueError("the dilation must stay positive along paths")
    n_steps = int(round(horizon / step))
    times = [i * step for i in range(n_steps + 1)]
    res = brownian_ensemble(
        P, p0, step=step, horizon=horizon, n_paths=n_paths, seed=seed,
        record_times=times, fields=[phi, lam], threads=threads,
    )
    keep = ~res.discarded
    Y = res.values[keep, :, 0]
    L = res.values[keep, :, 1]
    if np.nanmin(L) <= 0.0:
        raise ValueError("the dilation must stay positive along paths")
    A = np.zeros_like(L)
    A[:, 1:] = np.cumsum((L[:, 1:] + L[:, :-1]) * 0.5 * step, axis=1)
    total = float(np.median(A[:, -1]))
    edges = np.linspace(0.0, total, n_windows + 1)
    z_pool = []
    for i in range(Y.shape[0]):
        idx = np.searchsorted(A[i], edges, side="left")
        idx = idx[idx <= n_steps]
        if len(idx) < 2:
            continue
        da = np.diff(A[i][idx])
        dy = np.diff(Y[i][idx])
        good = da > 0
        z_pool.append(dy[good] / np.sqrt(da[good]))
    z_pool = np.concatenate(z_pool)
    ks_stat, ks_p, drift, ok = _decide_gaussian_increments(z_pool, level)
    raw_var = float(np.var(np.diff(Y, axis=1)) / step)
    return TestReport(
        name or "morphism",
        ks_stat,
        ks_p,
        None,
        None,
        ok,
        int(keep.sum()),
        seed,
        level,
        config={"horizon": horizon, "step": step, "n_paths": n_paths,
                "n_windows": n_windows,
                "p0": {"simplex": p0.simplex, "bary": list(p0.bary)}},
        extras={"drift_z": drift, "n_increments": int(len(z_pool)),
                "raw_increment_variance_rate": raw_var,
                "median_clock_total": total,
                "discarded": res.n_discarded},
    )


def sampler_agreement_test(
    k: int = 3,
    *,
    t: float = 0.01,
    eta: float = 0.01,
    step: float = 1e-4,
    n: int = 10_000,
    seed: int = 0,
    level: float = 0.01,
    threads: int = 1,
    name: str | None = None,
) -> TestReport:
    """Two-sample KS between the isotropic process (speed eta) and the
    Gaussian-step walk, on the edge distance of a k-star at time t."""
    P = make_star(k)
    center = next(f.index for f in P.faces if len(P.adjacency[f.index]) == k)
    p0 = point_on_face(P, center)
    res_w = brownian_ensemble(
        P, p0, step=step, horizon=t, n_paths=n, seed=seed,
        crossing_rule="uniform", threads=threads,
    )
    res_i = isotropic_ensemble(
        P, p0, IsotropicConfig(eta=eta, horizon=t), n_paths=n,
        seed=_derive_seed(seed, 1), threads=threads,
    )
    dw = np.abs(res_w.final_pos[~res_w.discarded, 0])
    di = np.abs(res_i.final_pos[~res_i.discarded, 0])
    ks = stats.ks_2samp(dw, di)
    ok = ks.pvalue > level
    return TestReport(
        name or "sampler_agreement",
        float(ks.statistic),
        float(ks.pvalue),
        None,
        None,
        ok,
        n,
        seed,
        level,
        config={"k": k, "t": t, "eta": eta, "step": step, "n": n},
        extras={"walk_mean": float(dw.mean()), "isotropic_mean": float(di.mean()),
                "walk_var": float(dw.var(ddof=1)), "isotropic_var": float(di.var(ddof=1))},
    )


# ---------------------------------------------------------------------------
# calibration on synthetic null data


def _null_martingale(rng, n=400, g=4, level=0.01) -> bool:
    inc = rng.normal(0.0, 0.1, size=(n, g))
    vals = np.cumsum(inc, axis=1)
    diffs = vals - vals[:, :1]
    dm = diffs[:, 1:].mean(axis=0)
    ds = diffs[:, 1:].std(axis=0, ddof=1) / math.sqrt(n)
    return _decide_constant(dm, ds, level)[2]

def _null_submartingale(rng, n=400, g=4, level=0.01) -> bool:
    inc = rng.normal(0.0, 0.1, size=(n, g))
    im = inc.mean(axis=0)
    ise = inc.std(axis=0, ddof=1) / math.sqrt(n)
    return _decide_nondecreasing(im, ise, level)[2]

def _null_branch(rng, k=3, total=30_000, level=0.01) -> bool:
    counts = rng.multinomial(total, [1.0 / k] * k)
    return _decide_uniform_counts(counts, level)[2]

def _null_walsh(rng, k=3, t=0.01, n=10_000, level=0.01) -> bool:
    d = np.abs(rng.normal(0.0, math.sqrt(t), size=n))
    lab = rng.integers(k, size=n)
    z, _, _ = _branch_moment_zs(d, lab, k, t)
    return _decide_three_sigma(z)[1]

def _null_generator(rng, target=1.0, n=10_000, level=0.01) -> bool:
    draws = rng.normal(target, 5.0, size=n)
    mean = draws.mean()
    se = draws.std(ddof=1) / math.sqrt(n)
    return _decide_ci_cover(mean, se, target, level)[2]

def _null_skeleton(rng, level=0.01) -> bool:
    eps = np.array([0.1, 0.05, 0.025])
    lam = 2_000_000 * 2.5 * eps**2
    occ = rng.poisson(lam) / 2_000_000
    return _decide_occupation(eps, occ, 0.0)[1]

def _null_morphism(rng, n=60_000, level=0.01) -> bool:
    z = rng.normal(0.0, 1.0, size=n)
    return _decide_gaussian_increments(z, level)[3]


_NULL_CORES: dict[str, Callable] = {
    "martingale": _null_martingale,
    "submartingale": _null_submartingale,
    "branch": _null_branch,
    "walsh": _null_walsh,
    "generator": _null_generator,
    "skeleton": _null_skeleton,
    "morphism": _null_morphism,
}


def calibration_counts(seed: int = 0, reps: int = 200, level: float = 0.01) -> dict[str, int]:
    """Rejections of each decision core over null-true synthetic data."""
    out = {}
    for i, (name, core) in enumerate(sorted(_NULL_CORES.items())):
        rejections = 0
        for r in range(reps):
            rng = substream(seed, _MISC, 1000 + i, r)
            if not core(rng, level=level):
                rejections += 1
        out[name] = rejections
    return out


def calibration_report(seed: int = 0, reps: int = 200, level: float = 0.01,
                       lo: int = 0, hi: int = 7) -> TestReport:
    counts = calibration_counts(seed, reps, level)
    worst = max(counts.values())
    ok = all(lo <= c <= hi for c in counts.values())
    return TestReport(
        "calibration",
        float(worst),
        None,
        float(lo),
        float(hi),
        ok,
        reps,
        seed,
        level,
        config={"reps": reps, "band": [lo, hi]},
        extras={"rejections": counts},
    )


# ---------------------------------------------------------------------------
# bundled suite


def _book3_setup():
    from .complexes import bundled_complex

    P = bundled_complex("book_3")
    spine = next(
        f.index
        for f in P.faces
        if len(f.vertices) == 2
        and {P.vertex_ids[v] for v in f.vertices} == {"s0", "s1"}
    )
    return P, spine


def _star_center(P: Polyhedron) -> int:
    return next(f.index for f in P.faces if len(P.adjacency[f.index]) >= 3)


def _compose(field: ChartField, g) -> ChartField:
    return ChartField(field.poly, {s: (lambda fn: (lambda x: g(fn(x))))(fn)
                                   for s, fn in field.fns.items()})


def _suite_walsh(seed: int, level: float, threads: int) -> list[TestReport]:
    reports = []
    for i, (k, t) in enumerate(((2, 0.04), (3, 0.01), (5, 0.01))):
        reports.append(walsh_moment_test(
            k, t, 100_000, _derive_seed(seed, 10 + i), level=level,
            threads=threads, name=f"walsh_moments_k{k}_t{t}",
        ))
    reports.append(sampler_agreement_test(
        3, t=0.01, eta=0.01, n=10_000, seed=_derive_seed(seed, 19),
        level=level, threads=threads,
    ))
    return reports


def _suite_branch(seed: int, level: float, threads: int) -> list[TestReport]:
    from .complexes import bundled_complex

    reports = []
    P3 = bundled_complex("star_3")
    reports.append(branch_probability_test(
        P3, _star_center(P3), 30_000, _derive_seed(seed, 20), horizon=0.02,
        level=level, threads=threads, name="branch_star_3",
    ))
    P5 = bundled_complex("star_5")
    reports.append(branch_probability_test(
        P5, _star_center(P5), 50_000, _derive_seed(seed, 21), horizon=0.02,
        level=level, threads=threads, name="branch_star_5",
    ))
    Pb, spine = _book3_setup()
    reports.append(branch_probability_test(
        Pb, spine, 30_000, _derive_seed(seed, 22), horizon=0.05,
        level=level, threads=threads, name="branch_book_3",
    ))
    adv = branch_probability_test(
        Pb, spine, 30_000, _derive_seed(seed, 23), horizon=0.05, level=level,
        branch_weights={spine: np.array([0.5, 0.25, 0.25])}, threads=threads,
        name="branch_power_adversarial",
    )
    # power check: the loaded sampler must be caught decisively
    adv.decision = adv.p_value < 1e-6
    adv.extras["expected"] = "rejection with p < 1e-6"
    reports.append(adv)
    return reports


def _suite_skeleton(seed: int, level: float, threads: int) -> list[TestReport]:
    P, spine = _book3_setup()
    return [skeleton_avoidance_test(
        P, start=point_on_face(P, spine, 0.5), seed=_derive_seed(seed, 30),
        level=level, threads=threads,
    )]


def _suite_generator(seed: int, level: float, threads: int) -> list[TestReport]:
    from .complexes import bundled_complex

    reports = []
    Pi = bundled_complex("interval")
    quad = ChartField(Pi, {0: lambda x: x[:, 0] ** 2})
    reports.append(generator_consistency_test(
        Pi, quad, point_on_edge(Pi, 0, 0.5), t=0.005,
        seed=_derive_seed(seed, 40), level=level, threads=threads,
        name="generator_edge_quadratic",
    ))
    P, spine = _book3_setup()
    p0 = point_on_face(P, spine, 0.5)
    xn2 = normal_square_field(P, spine)
    reports.append(generator_consistency_test(
        P, xn2, p0, t=0.005, seed=_derive_seed(seed, 41), level=level,
        threads=threads, name="generator_book3_xn2",
    ))
    mixed = normal_square_field(P, spine, (1.0, 1.0, 4.0))
    reports.append(generator_consistency_test(
        P, mixed, p0, t=0.0025, seed=_derive_seed(seed, 42), level=level,
        threads=threads, name="generator_book3_mixed",
    ))
    # the distance function has a surviving normal-trace sum: it must be
    # rejected before any simulation happens
    xn = normal_distance_field(P, spine)
    try:
        estimate_generator_mc(P, xn, p0, t=0.005, n_paths=100,
                              seed=_derive_seed(seed, 43))
        rejected, trace = False, float("nan")
    except GeneratorDomainError:
        rejected = True
        trace = normal_trace_sum(P, xn, p0)
    reports.append(TestReport(
        "generator_domain_rejection", trace, None, None, None, rejected,
        0, seed, level,
        config={"field": "normal distance", "t": 0.005},
        extras={"expected": "GeneratorDomainError before sampling"},
    ))
    return reports


def _suite_martingale(seed: int, level: float, threads: int) -> list[TestReport]:
    from .harmonic import BoundaryCondition, solve_dirichlet

    P, spine = _book3_setup()
    yf = tangential_coordinate_field(P, spine)
    mesh = build_mesh(P, 0.05)
    sol = solve_dirichlet(mesh, BoundaryCondition.from_boundary_function(
        lambda pt: yf.at_point(pt)))
    p0 = point_on_face(P, spine, 0.5)
    grid = (0.0, 0.005, 0.01, 0.02)
    reports = [martingale_test(
        P, sol, p0, StarRegion(P, p0), grid, 100_000,
        _derive_seed(seed, 50), level=level, threads=threads,
        name="martingale_harmonic_book3",
    )]
    # power: bump one interior node by 0.2 and start underneath it
    bumped = DiscreteField(mesh, sol.values.copy())
    spine_tri = P.adjacency[spine][0]
    atlas = get_atlas(P)
    x0 = atlas.locate_in_simplex(p0, spine_tri)
    i = atlas.facet_of_face[(spine_tri, spine)]
    inward = -atlas.charts[spine_tri].facet_normal[i]
    probe = atlas.point_from_chart(spine_tri, x0 + 0.15 * inward)
    node = mesh.nearest_node(probe)
    bumped.values[node] += 0.2
    p_bump = mesh.node_point(node)
    raw = martingale_test(
        P, bumped, p_bump, StarRegion(P, p_bump), grid, 100_000,
        _derive_seed(seed, 51), level=level, threads=threads,
        name="martingale_power_bump",
    )
    raw.decision = not raw.decision
    raw.extras["expected"] = "drift detected (rejection)"
    reports.append(raw)
    # convex tester composed with the harmonic map: submartingale with
    # drift slope one while the map stays within the middle window
    from .harmonic import ConvexTester

    tester = ConvexTester((0.35, 0.65), (0.2, 0.8), (0.05, 0.95), lambda y: y * y)
    if not tester.certificate(seed=_derive_seed(seed, 52) % (2**32)):
        raise RuntimeError("convexity certificate failed for y^2")
    y2 = _compose(yf, lambda v: v * v)
    sub = martingale_test(
        P, y2, p0, TangentialInterval(P, spine, *tester.U2), grid, 100_000,
        _derive_seed(seed, 53), level=level, mode="submartingale",
        threads=threads, name="submartingale_convex_tester",
    )
    covers = sub.ci_low <= 1.0 <= sub.ci_high
    sub.decision = sub.decision and covers
    sub.extras["drift_target"] = 1.0
    sub.extras["drift_covered"] = bool(covers)
    reports.append(sub)
    return reports


def _suite_morphism(seed: int, level: float, threads: int) -> list[TestReport]:
    P, spine = _book3_setup()
    p0 = point_on_face(P, spine, 0.5)
    yf = tangential_coordinate_field(P, spine)
    one = ChartField(P, {s.index: (lambda x: np.ones(len(x))) for s in P.maximal})
    four = ChartField(P, {s.index: (lambda x: np.full(len(x), 4.0)) for s in P.maximal})
    reports = [morphism_test(
        P, yf, one, p0, seed=_derive_seed(seed, 60), level=level,
        threads=threads, name="morphism_tangential",
    )]
    y2 = _compose(yf, lambda v: 2.0 * v)
    reports.append(morphism_test(
        P, y2, four, p0, seed=_derive_seed(seed, 61), level=level,
        threads=threads, name="morphism_scaled_tangential",
    ))
    xn = normal_distance_field(P, spine)
    raw = morphism_test(
        P, xn, one, p0, seed=_derive_seed(seed, 62), level=level,
        threads=threads, name="morphism_power_distance",
    )
    raw.decision = raw.p_value < 1e-4
    raw.extras["expected"] = "rejection with KS p < 1e-4"
    reports.append(raw)
    # dilation scaling is deterministic: lambda(c phi) = c^2 lambda(phi)
    from .harmonic import BoundaryCondition, compute_dilation, solve_dirichlet

    mesh = build_mesh(P, 0.05)
    sol = solve_dirichlet(mesh, BoundaryCondition.from_boundary_function(
        lambda pt: yf.at_point(pt)))
    rep1 = compute_dilation(mesh, sol)
    rep2 = compute_dilation(mesh, DiscreteField(mesh, 2.0 * sol.values))
    rel = float(np.abs(rep2.element_dilation - 4.0 * rep1.element_dilation).max()
                / max(rep2.element_dilation.max(), 1e-300))
    reports.append(TestReport(
        "dilation_scaling", rel, None, None, None, rel <= 1e-12, mesh.n_elements,
        seed, level, config={"mesh_h": 0.05, "factor": 2.0},
        extras={"morphism_candidate": rep1.morphism_candidate,
                "residuals": rep1.residuals},
    ))
    return reports


SUITES = ("walsh", "branch", "skeleton", "generator", "martingale", "morphism", "all")


def run_suite(
    suite: str,
    seed: int = 0,
    *,
    level: float = 0.01,
    threads: int = 1,
) -> list[TestReport]:
    """Run one named suite (or all of them plus calibration)."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    runners = {
        "walsh": _suite_walsh,
        "branch": _suite_branch,
        "skeleton": _suite_skeleton,
        "generator": _suite_generator,
        "martingale": _suite_martingale,
        "morphism": _suite_morphism,
    }
    reports: list[TestReport] = []
    names = list(runners) if suite == "all" else [suite]
    for nm in names:
        reports.extend(runners[nm](seed, level, threads))
    if suite == "all":
        reports.append(calibration_report(seed=_derive_seed(seed, 90), level=level))
    return reports
