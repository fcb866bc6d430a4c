import itertools

import numpy as np
import pytest

from deu.analysis import (
    DtwResult,
    MetricsSeries,
    correlation_report,
    dtw,
    pearson,
    relative_l2_error_acdm,
    relative_l2_error_refiner,
    residual_loss,
    write_report,
)
from deu.ensemble import EnsembleBatch
from deu.field import RngStream
from deu.spectral import NsConfig, taylor_green_vorticity


def brute_force_dtw(x, y):
    """Minimum cost over every monotone path; exponential, small inputs only."""
    n, m = len(x), len(y)
    best = [np.inf]

    def rec(i, j, acc):
        acc += abs(x[i] - y[j])
        if acc >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = acc
            return
        if i + 1 < n and j + 1 < m:
            rec(i + 1, j + 1, acc)
        if j + 1 < m:
            rec(i, j + 1, acc)
        if i + 1 < n:
            rec(i + 1, j, acc)

    rec(0, 0, 0.0)
    return best[0]


# -- relative errors -----------------------------------------------------------

def test_refiner_error_zero_for_exact_prediction():
    p = RngStream(1).normal((2, 3, 8))
    assert relative_l2_error_refiner(p, p).max() == 0.0


def test_refiner_error_for_doubled_prediction():
    u = RngStream(2).normal((2, 3, 8))
    assert np.allclose(relative_l2_error_refiner(2.0 * u, u), 1.0, atol=1e-14)


def test_refiner_error_matches_loop_oracle():
    rng = RngStream(3)
    p, u = rng.normal((2, 3, 8)), rng.normal((2, 3, 8))
    oracle = np.zeros(3)
    for t in range(3):
        acc = 0.0
        for b in range(2):
            num = np.sqrt(np.sum((p[b, t] - u[b, t]) ** 2))
            den = np.sqrt(np.sum(u[b, t] ** 2))
            acc += num / den
        oracle[t] = acc / 2.0
    assert np.abs(relative_l2_error_refiner(p, u) - oracle).max() < 1e-12


def test_refiner_error_rejects_zero_norm_frame():
    u = np.zeros((1, 2, 4))
    with pytest.raises(ZeroDivisionError):
        relative_l2_error_refiner(np.ones_like(u), u)


def test_refiner_error_scale_invariant():
    rng = RngStream(4)
    p, u = rng.normal((2, 3, 8)), rng.normal((2, 3, 8))
    a = relative_l2_error_refiner(p, u)
    b = relative_l2_error_refiner(-7.0 * p, -7.0 * u)
    assert np.allclose(a, b, rtol=1e-12)


def test_acdm_error_zero_and_homogeneous_both_modes():
    u = RngStream(5).normal((2, 3, 8, 2))
    for mode in ("spatial_norm", "literal"):
        e0, fl0 = relative_l2_error_acdm(u, u, mode=mode)
        assert e0.max() == 0.0 and fl0 == 0
        e, fl = relative_l2_error_acdm(1.5 * u, u, mode=mode)
        assert np.allclose(e, 0.5, atol=1e-12)


def test_acdm_literal_mode_counts_floored_entries():
    u = RngStream(6).normal((1, 2, 4, 1))
    u = np.where(np.abs(u) < 0.3, 0.0, u)  # plant exact zeros
    n_zero = int(np.count_nonzero(u == 0.0))
    assert n_zero > 0
    _, floored = relative_l2_error_acdm(u + 1.0, u, mode="literal")
    assert floored == n_zero


# -- residual loss ----------------------------------------------------------------

def test_residual_loss_exact_solution_tiny():
    n, nu, dtf = 32, 1e-2, 1e-3
    cfg = NsConfig(grid_size=n, viscosity=nu, dt_frames=dtf)
    frames = np.stack([taylor_green_vorticity(n, 2, t * dtf, nu) for t in range(4)])
    r = residual_loss(frames[None], frames[None], cfg)
    assert r.shape == (1, 2)
    assert r.max() < 1e-6


def test_residual_loss_noise_is_loud():
    n, nu, dtf = 32, 1e-2, 1e-3
    cfg = NsConfig(grid_size=n, viscosity=nu, dt_frames=dtf)
    frames = np.stack([taylor_green_vorticity(n, 2, t * dtf, nu) for t in range(4)])
    clean = residual_loss(frames[None], frames[None], cfg).mean()
    noisy = frames + 0.2 * np.abs(frames).max() * RngStream(7).normal(frames.shape)
    loud = residual_loss(noisy[None], frames[None], cfg).mean()
    assert loud > 100 * max(clean, 1e-300)


# -- pearson ----------------------------------------------------------------------

def test_pearson_affine():
    x = np.arange(10.0)
    assert pearson(x, 2.0 * x + 1.0) == 1.0
    assert pearson(x, -x) == -1.0


def test_pearson_sign_of_slope():
    x = RngStream(8).normal(50)
    for a in (-3.0, 0.5):
        assert pearson(x, a * x + 2.0) == pytest.approx(np.sign(a), abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ZeroDivisionError):
        pearson(np.ones(5), np.arange(5.0))
    with pytest.raises(ValueError):
        pearson(np.arange(3.0), np.arange(4.0))
    with pytest.raises(ValueError):
        pearson(np.array([1.0]), np.array([2.0]))


# -- dtw --------------------------------------------------------------------------

def test_dtw_identical_series():
    x = RngStream(9).normal(12)
    r = dtw(x, x)
    assert r.distance == 0.0
    assert r.path == tuple((i, i) for i in range(12))


def test_dtw_prefix_alignment():
    r = dtw(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0]))
    assert r.distance == 0.0
    assert r.path == ((0, 0), (1, 0), (2, 1))


def test_dtw_single_vs_pair():
    r = dtw(np.array([2.0]), np.array([1.0, 3.0]))
    assert r.distance == pytest.approx(2.0)
    assert r.path == ((0, 0), (0, 1))


def test_dtw_symmetry():
    rng = RngStream(10)
    x, y = rng.normal(7), rng.normal(5)
    assert dtw(x, y).distance == pytest.approx(dtw(y, x).distance, abs=1e-12)


def test_dtw_matches_brute_force_small_instances():
    rng = RngStream(11)
    for _ in range(100):
        n = int(rng.integers(1, 9, 1)[0])
        m = int(rng.integers(1, 9, 1)[0])
        if n * m > 64:
            m = 64 // n
        x, y = rng.normal(n), rng.normal(m)
        r = dtw(x, y)
        assert r.distance == pytest.approx(brute_force_dtw(x, y), abs=1e-12)
        path_cost = sum(abs(x[i] - y[j]) for i, j in r.path)
        assert path_cost == pytest.approx(r.distance, abs=1e-12)


def test_dtw_path_steps_are_monotone():
    rng = RngStream(12)
    r = dtw(rng.normal(6), rng.normal(9))
    assert r.path[0] == (0, 0) and r.path[-1] == (5, 8)
    for (i0, j0), (i1, j1) in zip(r.path, r.path[1:]):
        assert (i1 - i0, j1 - j0) in ((1, 0), (0, 1), (1, 1))


def test_dtw_rejects_empty():
    with pytest.raises(ValueError):
        dtw(np.array([]), np.array([1.0]))


# -- reports ----------------------------------------------------------------------

def test_metrics_series_validation():
    with pytest.raises(ValueError):
        MetricsSeries(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        MetricsSeries(np.zeros(3), np.array([0.0, -1.0, 0.0]))


def test_report_degenerate_batch_flagged():
    truth = RngStream(13).normal((2, 4, 8))
    batch = EnsembleBatch(np.stack([truth] * 3), ("batch", "time", "space"), (1, 2, 3))
    rep = correlation_report(batch, truth, "refiner")
    assert rep["degenerate"] is True
    assert rep["pearson_rho"] is None
    assert rep["final_step_error"]["ensemble"] == 0.0


def test_report_positive_control_high_correlation():
    # samples = truth + noise whose scale grows with t
    b, t, d, j = 2, 50, 64, 8
    truth = RngStream(20).normal((b, t, d))
    rng = RngStream(21)
    scale = (0.02 + 0.1 * np.arange(t) / t)[None, :, None]
    samples = np.stack([truth + scale * rng.normal(truth.shape) for _ in range(j)])
    batch = EnsembleBatch(samples, ("batch", "time", "space"), tuple(range(j)))
    rep = correlation_report(batch, truth, "refiner")
    assert rep["pearson_rho"] > 0.95
    assert rep["final_step_error"]["ensemble"] < rep["final_step_error"]["sample_mean"]


def test_report_written_files(tmp_path):
    b, t, d, j = 1, 12, 16, 4
    truth = RngStream(22).normal((b, t, d))
    rng = RngStream(23)
    scale = (0.05 + 0.2 * np.arange(t) / t)[None, :, None]
    samples = np.stack([truth + scale * rng.normal(truth.shape) for _ in range(j)])
    batch = EnsembleBatch(samples, ("batch", "time", "space"), tuple(range(j)))
    rep = correlation_report(batch, truth, "refiner")
    write_report(rep, tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "series.csv").exists()
    assert (tmp_path / "dtw_path.csv").exists()
    assert (tmp_path / "dtw_pairwise.csv").exists()
    assert (tmp_path / "dtw_accumulated.csv").exists()
    import json

    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["task"] == "refiner"
    assert "series" not in doc
    lines = (tmp_path / "series.csv").read_text().strip().splitlines()
    assert lines[0] == "t,e,sigma2"
    assert len(lines) == t + 1


def test_report_rejects_shape_mismatch():
    truth = RngStream(24).normal((2, 4, 8))
    batch = EnsembleBatch(np.stack([truth] * 2), ("batch", "time", "space"), (0, 1))
    with pytest.raises(ValueError):
        correlation_report(batch, truth[:, :3], "refiner")
    with pytest.raises(ValueError):
        correlation_report(batch, truth, "nope")
