"""Path samplers: exact star draws, Gaussian-step walks, the isotropic
flight process, ensembles, and their reproducibility guarantees.

Oracles used here:
  - star moment closed forms sqrt(2t/pi)/k and t/k;
  - the exact finite-speed variance of the flight process on a line,
    Var = t - eta^2 (1 - exp(-2t/eta^2)) / 2, from the telegraph process
    with renewal rate 2/eta^2 on the external clock;
  - E[exit time] = (x-lo)(hi-x) for Brownian motion on an interval, with
    the discrete-monitoring bracket tau_discrete >= tau and the standard
    sqrt(step) barrier-shift upper correction.
"""
import io
import math

import numpy as np
import pytest
from scipy import stats

from polybrownian import (
    EdgeInterval,
    IsotropicConfig,
    StarRegion,
    bundled_complex,
    brownian_ensemble,
    estimate,
    isotropic_ensemble,
    make_star,
    normal_distance_field,
    point_on_edge,
    point_on_face,
    sample_walsh_star,
    simulate_brownian,
    simulate_isotropic,
    stop_at_exit,
    walsh_restricted_moments,
    write_paths_csv,
)
from polybrownian.process import path_rng, substream


def _star_center(P):
    return next(f.index for f in P.faces if len(P.adjacency[f.index]) >= 3)


# ---------------------------------------------------------------------------
# closed forms


@pytest.mark.parametrize("k,t,m1,m2", [
    (3, 0.01, 0.026596, 0.0033333),
    (2, 0.04, 0.0797885, 0.02),
    (5, 0.01, 0.0159576, 0.002),
])
def test_restricted_moment_closed_forms(k, t, m1, m2):
    got1, got2 = walsh_restricted_moments(k, t)
    assert got1 == pytest.approx(m1, rel=1e-4)
    assert got2 == pytest.approx(m2, rel=1e-4)
    assert got1 == pytest.approx(math.sqrt(2.0 * t / math.pi) / k, abs=1e-15)
    assert got2 == pytest.approx(t / k, abs=1e-15)


def test_walsh_sampler_moments_and_labels():
    k, t, n = 3, 0.01, 200_000
    s = sample_walsh_star(k, t, n, 42)
    m1, m2 = walsh_restricted_moments(k, t)
    for l in range(k):
        r1 = s.distance * (s.branch == l)
        r2 = s.distance**2 * (s.branch == l)
        z1 = (r1.mean() - m1) / (r1.std(ddof=1) / math.sqrt(n))
        z2 = (r2.mean() - m2) / (r2.std(ddof=1) / math.sqrt(n))
        assert abs(z1) < 4.0 and abs(z2) < 4.0
    counts = np.bincount(s.branch, minlength=k)
    assert stats.chisquare(counts).pvalue > 1e-6
    assert s.exceeded == 0


def test_walsh_sampler_validation():
    with pytest.raises(ValueError):
        sample_walsh_star(1, 0.01, 100, 0)
    with pytest.raises(ValueError):
        sample_walsh_star(3, 0.0, 100, 0)
    short = sample_walsh_star(3, 0.04, 50_000, 0, edge_length=0.05)
    assert short.exceeded > 0  # draws beyond a 0.05 edge are counted


def test_walsh_sampler_reproducible():
    a = sample_walsh_star(4, 0.02, 1000, 9)
    b = sample_walsh_star(4, 0.02, 1000, 9)
    assert np.array_equal(a.distance, b.distance)
    assert np.array_equal(a.branch, b.branch)


# ---------------------------------------------------------------------------
# marginal laws


def test_walk_variance_matches_time():
    P = bundled_complex("interval")
    p0 = point_on_edge(P, 0, 0.5)
    t, n = 0.01, 150_000
    res = brownian_ensemble(P, p0, step=1e-3, horizon=t, n_paths=n, seed=21)
    d = res.final_pos[:, 0] - 0.5
    se_mean = d.std(ddof=1) / math.sqrt(n)
    assert abs(d.mean()) < 4.5 * se_mean
    v = d**2
    se_var = v.std(ddof=1) / math.sqrt(n)
    assert abs(v.mean() - t) < 4.5 * se_var


def test_isotropic_variance_telegraph_oracle():
    # finite-speed correction: Var = t - eta^2 (1 - e^{-2t/eta^2}) / 2
    P = bundled_complex("interval")
    p0 = point_on_edge(P, 0, 0.5)
    t, eta, n = 0.01, 0.05, 150_000
    oracle = t - eta**2 * 0.5 * (1.0 - math.exp(-2.0 * t / eta**2))
    res = isotropic_ensemble(P, p0, IsotropicConfig(eta=eta, horizon=t),
                             n_paths=n, seed=33)
    d = res.final_pos[:, 0] - 0.5
    se_mean = d.std(ddof=1) / math.sqrt(n)
    assert abs(d.mean()) < 4.5 * se_mean
    v = d**2
    se_var = v.std(ddof=1) / math.sqrt(n)
    assert abs(v.mean() - oracle) < 4.5 * se_var
    # and the correction matters: the uncorrected value t sits far outside
    assert abs(v.mean() - t) > 10.0 * se_var


def test_isotropic_external_clock():
    P = bundled_complex("interval")
    path = simulate_isotropic(P, point_on_edge(P, 0, 0.5),
                              IsotropicConfig(eta=0.1, horizon=0.02), 5)
    assert path.times[0] == 0.0
    assert path.times[-1] == pytest.approx(0.02, abs=1e-12)
    assert all(b >= -1e-12 for p in path.points for b in p.bary)


def test_isotropic_config_validation():
    with pytest.raises(ValueError):
        IsotropicConfig(eta=0.0, horizon=1.0)
    with pytest.raises(ValueError):
        IsotropicConfig(eta=0.1, horizon=-1.0)
    cfg = IsotropicConfig(eta=0.1, horizon=1.0)
    assert cfg.effective_rate(1) == pytest.approx(2.0)
    assert cfg.effective_rate(2) == pytest.approx(1.0)
    assert IsotropicConfig(eta=0.1, horizon=1.0, rate=3.0).effective_rate(2) == 3.0


def test_samplers_agree_on_star_distance():
    P = make_star(3)
    p0 = point_on_face(P, _star_center(P))
    n, t = 4000, 0.01
    walk = brownian_ensemble(P, p0, step=1e-4, horizon=t, n_paths=n, seed=7,
                             crossing_rule="uniform")
    iso = isotropic_ensemble(P, p0, IsotropicConfig(eta=0.01, horizon=t),
                             n_paths=n, seed=8)
    ks = stats.ks_2samp(np.abs(walk.final_pos[:, 0]), np.abs(iso.final_pos[:, 0]))
    assert ks.pvalue > 1e-3


def test_start_fold_gives_uniform_branches():
    P = make_star(3)
    p0 = point_on_face(P, _star_center(P))
    res = brownian_ensemble(P, p0, step=1e-3, horizon=0.005, n_paths=30_000,
                            seed=17, crossing_rule="uniform")
    counts = np.bincount(res.final_sim, minlength=3)
    # a host-branch preference of 1/2 + 1/(2k) would overfill one label by
    # ~5000 paths; uniformity must survive a chi-square at any sane level
    assert stats.chisquare(counts).pvalue > 1e-4


# ---------------------------------------------------------------------------
# stopping


def test_exit_time_oracle_bracket():
    P = bundled_complex("interval")
    p0 = point_on_edge(P, 0, 0.5)
    step, n = 2e-4, 20_000
    res = brownian_ensemble(P, p0, step=step, horizon=0.5, n_paths=n, seed=3,
                            region=EdgeInterval(P, 0, 0.2, 0.8))
    assert res.exited.mean() > 0.99
    tau = res.exit_time[res.exited]
    se = tau.std(ddof=1) / math.sqrt(len(tau))
    lo = 0.09 - 4.0 * se
    hi = (0.3 + 0.5826 * math.sqrt(step)) ** 2 + 4.0 * se
    assert lo <= tau.mean() <= hi
    # exits land on the interval boundary
    x = res.final_pos[res.exited, 0]
    assert np.all((np.abs(x - 0.2) < 1e-9) | (np.abs(x - 0.8) < 1e-9))


def test_stop_at_exit_interpolates():
    P = bundled_complex("interval")
    path = simulate_brownian(P, point_on_edge(P, 0, 0.5), 1e-3, 0.5, 11)
    reg = EdgeInterval(P, 0, 0.35, 0.65)
    stopped = stop_at_exit(P, path, reg)
    assert stopped.exited  # from 0.5 over 0.5 time units this is near-certain
    x = stopped.points[-1].bary[1]  # chart coordinate equals bary weight
    assert min(abs(x - 0.35), abs(x - 0.65)) < 1e-9
    assert 0.0 < stopped.tau <= 0.5
    assert stopped.times[-1] == pytest.approx(stopped.tau)


def test_star_region_freezes_paths():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p0 = point_on_face(P, spine, 0.5)
    res = brownian_ensemble(P, p0, step=1e-3, horizon=0.05, n_paths=2000,
                            seed=5, region=StarRegion(P, p0))
    allowed = set(P.star_of_point(p0))
    assert set(np.unique(res.final_sim)) <= allowed


# ---------------------------------------------------------------------------
# reproducibility


def test_ensemble_deterministic_and_thread_invariant():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p0 = point_on_face(P, spine, 0.5)
    xn = normal_distance_field(P, spine)
    kw = dict(step=1e-3, horizon=0.01, n_paths=5000,
              record_times=[0.0, 0.005, 0.01], fields=[xn],
              tally_faces=[spine], chunk_size=1024)
    a = brownian_ensemble(P, p0, seed=99, threads=1, **kw)
    b = brownian_ensemble(P, p0, seed=99, threads=3, **kw)
    c = brownian_ensemble(P, p0, seed=100, threads=1, **kw)
    assert np.array_equal(a.final_pos, b.final_pos)
    assert np.array_equal(a.values, b.values, equal_nan=True)
    assert np.array_equal(a.face_counts[spine], b.face_counts[spine])
    assert not np.array_equal(a.final_pos, c.final_pos)


def test_isotropic_ensemble_thread_invariant():
    P = make_star(3)
    p0 = point_on_face(P, _star_center(P))
    kw = dict(n_paths=3000, chunk_size=512)
    cfg = IsotropicConfig(eta=0.05, horizon=0.01)
    a = isotropic_ensemble(P, p0, cfg, seed=12, threads=1, **kw)
    b = isotropic_ensemble(P, p0, cfg, seed=12, threads=4, **kw)
    assert np.array_equal(a.final_pos, b.final_pos)
    assert np.array_equal(a.final_sim, b.final_sim)


def test_scalar_path_reproducible():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p0 = point_on_face(P, spine, 0.5)
    a = simulate_brownian(P, p0, 1e-3, 0.02, 44, crossing_rule="uniform")
    b = simulate_brownian(P, p0, 1e-3, 0.02, 44, crossing_rule="uniform")
    assert a.points == b.points
    assert np.array_equal(a.times, b.times)


def test_substreams_are_disjoint():
    x = substream(5, 0, 1).normal(size=4)
    y = substream(5, 0, 2).normal(size=4)
    z = substream(6, 0, 1).normal(size=4)
    assert not np.allclose(x, y)
    assert not np.allclose(x, z)
    assert np.allclose(x, substream(5, 0, 1).normal(size=4))
    assert np.allclose(path_rng(5, 3).normal(size=2), path_rng(5, 3).normal(size=2))


# ---------------------------------------------------------------------------
# plumbing


def test_estimate_basics():
    e = estimate(np.array([1.0, 2.0, 3.0, 4.0]), confidence=0.95)
    assert e.mean == pytest.approx(2.5)
    assert e.count == 4
    assert e.covers(2.5)
    lo, hi = e.ci
    assert lo < 2.5 < hi
    with_nan = estimate(np.array([1.0, np.nan, 3.0]))
    assert with_nan.count == 2
    with pytest.raises(ValueError):
        estimate(np.array([1.0]))


def test_estimate_coverage_calibration():
    rng = np.random.default_rng(2024)
    hits = sum(
        estimate(rng.normal(0.0, 1.0, size=400), confidence=0.99).covers(0.0)
        for _ in range(300)
    )
    assert hits >= 290  # 99% nominal; binomial floor with margin


def test_record_times_must_align():
    P = bundled_complex("interval")
    p0 = point_on_edge(P, 0, 0.5)
    with pytest.raises(ValueError):
        brownian_ensemble(P, p0, step=1e-3, horizon=0.01, n_paths=10, seed=0,
                          record_times=[0.00037])


def test_field_values_drop_discarded():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    p0 = point_on_face(P, spine, 0.5)
    xn = normal_distance_field(P, spine)
    res = brownian_ensemble(P, p0, step=1e-3, horizon=0.01, n_paths=500,
                            seed=1, record_times=[0.0, 0.01], fields=[xn])
    v0 = res.field_values(0)
    assert np.allclose(v0, 0.0, atol=1e-12)  # starts on the face
    assert len(v0) == 500 - res.n_discarded


def test_paths_csv_roundtrip():
    P = make_star(3)
    p0 = point_on_face(P, _star_center(P))
    samples = [simulate_brownian(P, p0, 1e-3, 0.01, path_rng(7, i)) for i in range(3)]
    buf = io.StringIO()
    write_paths_csv(P, samples, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "path_id,time,simplex_id,bary_1,bary_2,discarded"
    rows = [ln.split(",") for ln in lines[1:]]
    assert {r[0] for r in rows} == {"0", "1", "2"}
    for r in rows:
        assert float(r[3]) + float(r[4]) == pytest.approx(1.0, abs=1e-12)
    times = [float(r[1]) for r in rows if r[0] == "0"]
    assert times == sorted(times)
