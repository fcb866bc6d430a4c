"""Error metrics, residual losses, and error-variance correlation analysis.

The central object is a pair of time series: the relative L2 prediction
error e(t) of an ensemble (or a single sample) against ground truth, and the
spatially averaged point-wise ensemble variance sigma2(t). Their agreement is
quantified with the Pearson coefficient and a dynamic-time-warping alignment,
and packaged into a JSON/CSV report.

Two readings of the multi-channel error metric are kept side by side: the
default takes the L2 norm over the space axis before averaging, the literal
variant divides per-entry magnitudes (with a floor on the denominator, and a
count of floored entries reported).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleBatch, ensemble_mean, mean_variance_scalar, pointwise_variance
from .field import as_array, reduce_mean, Field
from .spectral import NsConfig, ns_vorticity_residual, write_series_csv


@dataclass(frozen=True)
class MetricsSeries:
    """Paired error / variance series over rollout steps."""

    error: np.ndarray
    sigma2: np.ndarray
    labels: tuple = ("e", "sigma2")

    def __post_init__(self):
        e = np.asarray(self.error, dtype=np.float64)
        s = np.asarray(self.sigma2, dtype=np.float64)
        if e.shape != s.shape or e.ndim != 1:
            raise ValueError("error and sigma2 must be 1-d series of equal length")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite metric values")
        if np.any(s < 0):
            raise ValueError("sigma2 must be nonnegative")
        object.__setattr__(self, "error", e)
        object.__setattr__(self, "sigma2", s)


# ---------------------------------------------------------------------------
# Relative L2 errors
# ---------------------------------------------------------------------------

def relative_l2_error_refiner(pred, truth) -> np.ndarray:
    """e(t) = mean over trajectories of |pred - truth|_2 / |truth|_2, with
    the norm over the space axis. Inputs are [B, T, D]."""
    p, u = as_array(pred), as_array(truth)
    if p.shape != u.shape or p.ndim != 3:
        raise ValueError(f"expected matching [B, T, D] arrays, got {p.shape} vs {u.shape}")
    norms = np.linalg.norm(u, axis=-1)
    if np.any(norms == 0):
        raise ZeroDivisionError("ground-truth frame with zero norm")
    return (np.linalg.norm(p - u, axis=-1) / norms).mean(axis=0)


def relative_l2_error_acdm(pred, truth, mode: str = "spatial_norm",
                           eps_floor: float = 1e-12):
    """Per-step relative error of [B, T, D, C] predictions.

    spatial_norm (default): L2 norms over the space axis, averaged over
    trajectories and channels. literal: per-entry |diff| / max(|truth|, floor).
    Returns (series, n_floored).
    """
    p, u = as_array(pred), as_array(truth)
    if p.shape != u.shape or p.ndim != 4:
        raise ValueError(f"expected matching [B, T, D, C] arrays, got {p.shape} vs {u.shape}")
    if mode == "spatial_norm":
        norms = np.linalg.norm(u, axis=2)           # [B, T, C]
        floored = int(np.count_nonzero(norms < eps_floor))
        denom = np.maximum(norms, eps_floor)
        e = (np.linalg.norm(p - u, axis=2) / denom).mean(axis=(0, 2))
        return e, floored
    if mode == "literal":
        mags = np.abs(u)
        floored = int(np.count_nonzero(mags < eps_floor))
        denom = np.maximum(mags, eps_floor)
        e = (np.abs(p - u) / denom).mean(axis=(0, 2, 3))
        return e, floored
    raise ValueError(f"unknown mode {mode!r}")


def residual_loss(pred_traj, truth_traj, cfg: NsConfig) -> np.ndarray:
    """Per-(trajectory, interior frame) relative flow residual of predictions:
    mean_d G(pred)^2 / |truth frame|_2^2. Inputs are [B, T, N, N]; the output
    [B, T-2] aligns with truth frames 1..T-2."""
    p, u = as_array(pred_traj), as_array(truth_traj)
    if p.ndim == 3:
        p, u = p[None], u[None]
    if p.shape != u.shape or p.ndim != 4:
        raise ValueError(f"expected matching [B, T, N, N] arrays, got {p.shape} vs {u.shape}")
    b, t = p.shape[:2]
    out = np.empty((b, t - 2))
    for bi in range(b):
        g = ns_vorticity_residual(p[bi], cfg).data           # [T-2, N, N]
        norms = np.sum(u[bi, 1:-1] ** 2, axis=(1, 2))        # interior truth frames
        if np.any(norms == 0):
            raise ZeroDivisionError("ground-truth frame with zero norm")
        out[bi] = (g**2).mean(axis=(1, 2)) / norms
    return out


# ---------------------------------------------------------------------------
# Correlation measures
# ---------------------------------------------------------------------------

def pearson(x, y) -> float:
    """Sample correlation coefficient of two equal-length series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length 1-d series with >= 2 points")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(xc**2)), np.sqrt(np.sum(yc**2))
    if sx == 0 or sy == 0:
        raise ZeroDivisionError("undefined correlation for a constant series")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class DtwResult:
    """Minimum-cost monotone alignment of two series.

    `path` runs from (0, 0) to (len(x)-1, len(y)-1) in steps {(1,0),(0,1),(1,1)};
    `distance` is the summed point cost along it. The pairwise-cost and
    accumulated-cost matrices are kept for plotting either background.
    """

    distance: float
    path: tuple
    pairwise: np.ndarray
    accumulated: np.ndarray


def dtw(x, y) -> DtwResult:
    """Dynamic-programming alignment with point cost |x_i - y_j|, no window,
    no normalization. Backtracking tie-break: diagonal, then (0,1), then (1,0)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) == 0 or len(y) == 0:
        raise ValueError("both series must be nonempty and 1-d")
    n, m = len(x), len(y)
    cost = np.abs(x[:, None] - y[None, :])
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if j > 0:
                best = min(best, acc[i, j - 1])
            if i > 0:
                best = min(best, acc[i - 1, j])
            acc[i, j] = cost[i, j] + best
    # backtrack, preferring diagonal, then advancing j, then advancing i
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], 0, (i - 1, j - 1)))
        if j > 0:
            candidates.append((acc[i, j - 1], 1, (i, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], 2, (i - 1, j)))
        _, _, (i, j) = min(candidates, key=lambda c: (c[0], c[1]))
        path.append((i, j))
    path.reverse()
    return DtwResult(float(acc[-1, -1]), tuple(path), cost, acc)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

TASK_KINDS = ("refiner", "acdm", "pidfs")


def _task_error_series(pred, truth, task_kind: str):
    if task_kind == "refiner":
        return relative_l2_error_refiner(pred, truth), 0
    if task_kind == "acdm":
        return relative_l2_error_acdm(pred, truth)
    if task_kind == "pidfs":
        # flatten trailing space axes and reuse the norm-over-space metric
        p, u = as_array(pred), as_array(truth)
        b, t = p.shape[:2]
        return relative_l2_error_refiner(p.reshape(b, t, -1), u.reshape(b, t, -1)), 0
    raise ValueError(f"unknown task kind {task_kind!r}; expected one of {TASK_KINDS}")


def correlation_report(batch: EnsembleBatch, truth, task_kind: str,
                       ns_cfg: NsConfig | None = None) -> dict:
    """Ensemble error/variance series, their correlation and alignment, and
    final-step error comparisons, as one JSON-ready document.

    Sample layout must be [B, T, ...] (tags batch, time, then data axes).
    """
    truth_arr = as_array(truth)
    if truth_arr.shape != batch.samples.shape[1:]:
        raise ValueError(f"truth shape {truth_arr.shape} != sample shape "
                         f"{batch.samples.shape[1:]}")
    if batch.sample_axes[:2] != ("batch", "time"):
        raise ValueError("samples must carry (batch, time, ...) axes")

    mean_pred = ensemble_mean(batch).data
    e_series, floored = _task_error_series(mean_pred, truth_arr, task_kind)
    var_field = pointwise_variance(batch, center=None, ddof=0)
    sigma2 = mean_variance_scalar(var_field, set(batch.sample_axes) - {"time"}).data

    per_sample_final = []
    for j in range(batch.n_samples):
        ej, _ = _task_error_series(batch.samples[j], truth_arr, task_kind)
        per_sample_final.append(float(ej[-1]))
    ensemble_final = float(e_series[-1])

    degenerate = False
    rho = None
    alignment = None
    try:
        rho = pearson(e_series, sigma2)
    except ZeroDivisionError:
        degenerate = True
    if not degenerate:
        alignment = dtw(e_series, sigma2)

    report = {
        "task": task_kind,
        "n_samples": batch.n_samples,
        "series_length": int(len(e_series)),
        "degenerate": degenerate,
        "pearson_rho": rho,
        "dtw_distance": None if alignment is None else alignment.distance,
        "final_step_error": {
            "per_sample": per_sample_final,
            "sample_mean": float(np.mean(per_sample_final)),
            "ensemble": ensemble_final,
        },
        "floored_entries": int(floored),
        "variance_centering": "sample_mean",
        "variance_divisor": "n_samples",
        "residual_denominator": "ground_truth_frame",
        "series": MetricsSeries(e_series, sigma2),
        "dtw": alignment,
    }
    if task_kind == "pidfs" and ns_cfg is not None:
        r = residual_loss(mean_pred, truth_arr, ns_cfg)
        report["residual_loss_mean"] = float(r.mean())
    return report


def write_report(report: dict, out_dir) -> None:
    """Persist a correlation report: JSON summary plus plot-ready CSVs."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    series: MetricsSeries = report["series"]
    write_series_csv(os.path.join(out_dir, "series.csv"), ("t", "e", "sigma2"),
                     zip(range(len(series.error)), series.error, series.sigma2))
    alignment: DtwResult | None = report.get("dtw")
    if alignment is not None:
        write_series_csv(os.path.join(out_dir, "dtw_path.csv"), ("i", "j"),
                         alignment.path)
        np.savetxt(os.path.join(out_dir, "dtw_pairwise.csv"),
                   alignment.pairwise, delimiter=",")
        np.savetxt(os.path.join(out_dir, "dtw_accumulated.csv"),
                   alignment.accumulated, delimiter=",")
    summary = {k: v for k, v in report.items() if k not in ("series", "dtw")}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
