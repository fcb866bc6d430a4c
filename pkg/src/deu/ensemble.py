"""Monte-Carlo ensembles of sampler predictions and their variance metrics.

An ensemble is J independent predictions drawn with per-sample derived seeds.
Two variance conventions are exposed side by side because both are in use:

- error-moment form: centered on a known reference y with divisor J - 1,
- spread form (the default for uncertainty reports): centered on the sample
  mean with divisor J.

`size_sweep` measures how the averaged point-wise standard deviation changes
with ensemble size k by evaluating every k-subset of the J samples (or a
seeded uniform subsample of subsets when there are too many), and
`recommend_size` picks the smallest k whose mean is within tolerance of the
full-ensemble value.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .field import Field, RngStream, as_array, derive_seed, field_read, field_write, reduce_mean
from .spectral import write_series_csv


@dataclass(frozen=True)
class EnsembleBatch:
    """J same-shape prediction samples plus the seeds that produced them."""

    samples: np.ndarray        # [J, *sample_dims]
    sample_axes: tuple         # axis tags of one sample
    seeds: tuple

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim < 2:
            raise ValueError("samples must be [J, ...] with at least one data axis")
        if len(self.seeds) != s.shape[0]:
            raise ValueError("one seed per sample required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("sample seeds must be distinct")
        if len(self.sample_axes) != s.ndim - 1:
            raise ValueError("sample_axes must tag every data axis")
        if not np.all(np.isfinite(s)):
            raise ValueError("non-finite sample values")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_axes", tuple(self.sample_axes))
        object.__setattr__(self, "seeds", tuple(int(x) for x in self.seeds))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def sample_ensemble(predict, n_samples: int, base_seed: int,
                    sample_axes=None, jobs: int = 1) -> EnsembleBatch:
    """Draw J predictions; sample j uses the stream derived from
    (base_seed, j), so the batch is reproducible and order-independent."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    seeds = [derive_seed(base_seed, j) for j in range(n_samples)]

    def run(j):
        out = predict(RngStream(seeds[j]))
        if isinstance(out, Field):
            return out.data, out.axes
        return np.asarray(out, dtype=np.float64), None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(n_samples)))
    else:
        results = [run(j) for j in range(n_samples)]
    arrays = [r[0] for r in results]
    axes = sample_axes
    if axes is None:
        axes = results[0][1] or ("space",) * arrays[0].ndim
    return EnsembleBatch(np.stack(arrays), tuple(axes), tuple(seeds))


def ensemble_mean(batch: EnsembleBatch) -> Field:
    """Element-wise mean prediction across samples.

    Entries where all samples agree return that value exactly (no rounding
    from the division), so a batch of identical predictions is its own mean.
    """
    mean = batch.samples.mean(axis=0)
    agree = np.all(batch.samples == batch.samples[0:1], axis=0)
    mean[agree] = batch.samples[0][agree]
    return Field(mean, batch.sample_axes)


def pointwise_variance(batch: EnsembleBatch, center=None, ddof: int = 0) -> Field:
    """Per-entry variance across samples.

    center=None centers on the sample mean (spread form; default pairs with
    ddof=0). Passing a reference array centers on it instead (error-moment
    form; pair with ddof=1).
    """
    j = batch.n_samples
    if ddof not in (0, 1):
        raise ValueError("ddof must be 0 or 1")
    if ddof == 1 and j < 2:
        raise ValueError("divisor J-1 needs at least two samples")
    if center is None:
        mu = batch.samples.mean(axis=0)
    else:
        mu = as_array(center)
        if mu.shape != batch.samples.shape[1:]:
            raise ValueError(f"center shape {mu.shape} != sample shape "
                             f"{batch.samples.shape[1:]}")
    dev = batch.samples - mu[None, ...]
    var = (dev**2).sum(axis=0) / (j - ddof)
    if center is None:
        # exact zero wherever every sample agrees, not an epsilon of rounding
        var[np.all(batch.samples == batch.samples[0:1], axis=0)] = 0.0
    return Field(var, batch.sample_axes)


def mean_variance_scalar(variance: Field, axes=None):
    """Average a variance field over the named axes (all axes when None).

    Returns a float when everything is reduced, otherwise the reduced Field
    (e.g. keep "time" to get a per-step uncertainty series).
    """
    wanted = set(variance.axes) if axes is None else set(axes)
    out = reduce_mean(variance, wanted)
    return float(out.data) if out.data.ndim == 0 else out


# ---------------------------------------------------------------------------
# Ensemble-size sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeSweepResult:
    """Per size k: the averaged standard deviations of every evaluated
    k-subset, their mean, and whether the enumeration was exhaustive."""

    sizes: tuple
    values: dict      # k -> np.ndarray of sigma-bar values, one per subset
    means: dict       # k -> float
    exhaustive: dict  # k -> bool

    def write_csv(self, path) -> None:
        rows = []
        for k in self.sizes:
            for m_idx, v in enumerate(self.values[k]):
                rows.append((k, m_idx, float(v)))
        write_series_csv(path, ("k", "m", "sigma_bar"), rows)

    def summary(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "means": {str(k): self.means[k] for k in self.sizes},
            "counts": {str(k): int(len(self.values[k])) for k in self.sizes},
            "exhaustive": {str(k): bool(self.exhaustive[k]) for k in self.sizes},
        }


def subset_sigma_bar(samples: np.ndarray, subset) -> float:
    """Mean over all entries of the point-wise std of the chosen samples
    (divisor = subset size)."""
    sub = samples[list(subset)]
    mu = sub.mean(axis=0)
    sigma = np.sqrt(((sub - mu) ** 2).mean(axis=0))
    return float(sigma.mean())


def _random_subset(rng: RngStream, n: int, k: int) -> tuple:
    # partial Fisher-Yates: first k entries of a seeded permutation
    idx = list(range(n))
    for i in range(k):
        j = int(rng.integers(i, n, 1)[0])
        idx[i], idx[j] = idx[j], idx[i]
    return tuple(sorted(idx[:k]))


def size_sweep(batch: EnsembleBatch, sizes, max_subsets: int = 200,
               seed: int = 0) -> SizeSweepResult:
    """sigma-bar statistics for each ensemble size k in `sizes`.

    All C(J, k) subsets are evaluated when that count is <= max_subsets,
    otherwise max_subsets distinct subsets drawn uniformly (seeded).
    """
    if max_subsets < 1:
        raise ValueError("max_subsets must be >= 1")
    n = batch.n_samples
    sizes = tuple(int(k) for k in sizes)
    for k in sizes:
        if not 2 <= k <= n:
            raise ValueError(f"size {k} outside [2, {n}]")
    values, means, exhaustive = {}, {}, {}
    rng = RngStream(seed)
    for k in sizes:
        total = math.comb(n, k)
        if total <= max_subsets:
            subsets = list(itertools.combinations(range(n), k))
            exhaustive[k] = True
        else:
            chosen: set = set()
            guard = 0
            while len(chosen) < max_subsets:
                chosen.add(_random_subset(rng, n, k))
                guard += 1
                if guard > 200 * max_subsets:
                    raise RuntimeError("subset sampling failed to fill quota")
            subsets = sorted(chosen)
            exhaustive[k] = False
        vals = np.array([subset_sigma_bar(batch.samples, s) for s in subsets])
        values[k] = vals
        means[k] = float(vals.mean())
    return SizeSweepResult(sizes, values, means, exhaustive)


def recommend_size(result: SizeSweepResult, tol: float) -> int:
    """Smallest k whose mean sigma-bar is within tol (relative) of the
    full-ensemble value; the sweep must cover contiguous sizes up to J."""
    sizes = sorted(result.sizes)
    if sizes != list(range(sizes[0], sizes[-1] + 1)):
        raise ValueError("sweep sizes must be contiguous up to the maximum")
    full = sizes[-1]
    ref = result.means[full]
    if ref == 0.0:
        raise ZeroDivisionError(
            "degenerate sweep: all samples identical (zero reference variance)")
    for k in sizes:
        if abs(result.means[k] - ref) <= tol * ref:
            return k
    return full


# ---------------------------------------------------------------------------
# Persistence: directory of binary sample fields plus a JSON manifest
# ---------------------------------------------------------------------------

def ensemble_save(batch: EnsembleBatch, path, producing_config: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    width = max(3, len(str(batch.n_samples - 1)))
    names = []
    for j in range(batch.n_samples):
        name = f"sample_{j:0{width}d}.fld"
        field_write(Field(batch.samples[j], batch.sample_axes),
                    os.path.join(path, name))
        names.append(name)
    manifest = {
        "n_samples": batch.n_samples,
        "seeds": list(batch.seeds),
        "sample_axes": list(batch.sample_axes),
        "files": names,
        "config": producing_config or {},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def ensemble_load(path) -> EnsembleBatch:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    samples = [field_read(os.path.join(path, name)).data for name in manifest["files"]]
    return EnsembleBatch(np.stack(samples), tuple(manifest["sample_axes"]),
                         tuple(manifest["seeds"]))
