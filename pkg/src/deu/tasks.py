"""Desk-scale task pipelines: dataset building, model training, and ensemble
experiments for the three prediction settings.

- next-step prediction on 1D Kuramoto-Sivashinsky trajectories, sampled
  either with the full reverse chain ("acdm") or with iterative refinement
  ("refiner"), rolled out autoregressively;
- super-resolution of 2D decaying-vortex frame triples ("pidfs"), where the
  exact solution provides ground truth and the flow residual provides both a
  quality metric and a guidance signal.

Everything here is glue around the core modules; experiments are pure
functions of their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserModel, TrainConfig, model_init, train, train_refiner
from .ensemble import EnsembleBatch, sample_ensemble
from .field import Field, RngStream
from .samplers import (
    NoiseSchedule,
    RefinerConfig,
    RolloutConfig,
    pidfs_superresolve,
    rollout,
)
from .spectral import KsConfig, NsConfig, ks_dataset_generate, taylor_green_vorticity


# ---------------------------------------------------------------------------
# Next-step datasets from trajectories
# ---------------------------------------------------------------------------

def next_step_dataset(traj, history_len: int, coefficients=()):
    """(target, conditioning) pairs from [B, T, D] trajectories.

    The conditioning for target u(t) is [u(t-1), ..., u(t-history_len)]
    flattened, followed by the task coefficients.
    """
    data = traj.data if isinstance(traj, Field) else np.asarray(traj, dtype=np.float64)
    b, t, d = data.shape
    k = int(history_len)
    if t <= k:
        raise ValueError(f"trajectories of length {t} cannot provide history {k}")
    coeff = np.asarray(coefficients, dtype=np.float64)
    targets, conds = [], []
    for bi in range(b):
        for ti in range(k, t):
            targets.append(data[bi, ti])
            frames = [data[bi, ti - 1 - q] for q in range(k)]
            conds.append(np.concatenate(frames + ([coeff] if coeff.size else [])))
    return np.stack(targets), np.stack(conds)


# ---------------------------------------------------------------------------
# KS next-step task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KsTaskSpec:
    """One toy next-step setup: solver config, split, model and sampler sizes.

    Defaults are the calibrated desk-scale configuration: chaotic domain
    L = 64 at 64 points, frames 0.2 time units apart, rollouts launched from
    frame 80 (well onto the attractor).
    """

    ks: KsConfig = KsConfig(domain_length=64.0, resolution=64, dt=0.1,
                            horizon=160, record_every=2)
    n_train_traj: int = 10
    n_eval_traj: int = 2
    history_len: int = 1
    coefficients: tuple = ()
    hidden: tuple = (128, 128, 128)
    rollout_start: int = 80
    rollout_horizon: int = 30

    @property
    def n_traj(self) -> int:
        return self.n_train_traj + self.n_eval_traj


def default_ks_schedule() -> NoiseSchedule:
    """Reverse-chain schedule used by the toy next-step presets.

    Moderate per-step beta keeps the learned-model amplification
    1/sqrt(1-beta) small; a hard-clipped cosine tail would multiply model
    error ~30x at the first reverse step.
    """
    from .samplers import make_schedule

    return make_schedule(30, "linear", 0.015, 0.30)


def ks_split(spec: KsTaskSpec, seed: int):
    """Generate the dataset and split it into train/eval trajectories."""
    data = ks_dataset_generate(spec.ks, spec.n_traj, seed)
    train_part = data.data[: spec.n_train_traj]
    eval_part = data.data[spec.n_train_traj:]
    return train_part, eval_part


def train_ks_model(spec: KsTaskSpec, train_traj, kind: str, schedule: NoiseSchedule,
                   refiner_cfg: RefinerConfig, cfg: TrainConfig) -> DenoiserModel:
    d = spec.ks.resolution
    cond_dim = spec.history_len * d + len(spec.coefficients)
    model = model_init(d, cond_dim, hidden=spec.hidden, seed=cfg.seed)
    targets, conds = next_step_dataset(train_traj, spec.history_len, spec.coefficients)
    if kind == "acdm":
        trained, _ = train(model, (targets, conds), schedule, cfg)
    elif kind == "refiner":
        trained, _ = train_refiner(model, (targets, conds), refiner_cfg.sigmas, cfg)
    else:
        raise ValueError(f"unknown task kind {kind!r}")
    return trained


def ks_rollout_ensemble(model: DenoiserModel, spec: KsTaskSpec, eval_traj,
                        kind: str, schedule: NoiseSchedule,
                        refiner_cfg: RefinerConfig, n_samples: int,
                        base_seed: int, jobs: int = 1):
    """J rollout samples over every eval trajectory.

    Returns (batch, truth): samples shaped [B, horizon, D] with truth aligned
    to the predicted frames.
    """
    eval_traj = np.asarray(eval_traj, dtype=np.float64)
    k, start, horizon = spec.history_len, spec.rollout_start, spec.rollout_horizon
    if start < k:
        raise ValueError("rollout start leaves no room for the history")
    if start + horizon > eval_traj.shape[1]:
        raise ValueError("rollout horizon runs past the trajectory")
    roll_cfg = RolloutConfig(horizon=horizon, history_len=k,
                             coefficients=spec.coefficients,
                             kind="ddpm" if kind == "acdm" else "refiner")
    histories = [
        [eval_traj[bi, start - 1 - q] for q in range(k)]
        for bi in range(eval_traj.shape[0])
    ]

    def predict(rng: RngStream):
        preds = [
            rollout(model, roll_cfg, histories[bi], rng.child(bi),
                    schedule=schedule, refiner_cfg=refiner_cfg)
            for bi in range(eval_traj.shape[0])
        ]
        return Field(np.stack(preds), ("batch", "time", "space"))

    batch = sample_ensemble(predict, n_samples, base_seed, jobs=jobs)
    truth = eval_traj[:, start:start + horizon, :]
    return batch, truth


# ---------------------------------------------------------------------------
# Decaying-vortex super-resolution task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VortexTaskSpec:
    """Super-resolution of exact decaying-vortex frame triples.

    The hidden width must be at least the flattened state width (3 N^2);
    narrower layers rank-limit the output and the sampler never converges.
    """

    grid_size: int = 8
    coarse_factor: int = 2
    viscosity: float = 5e-2
    dt_frames: float = 0.1
    n_train: int = 240
    hidden: tuple = (256, 256)
    schedule_steps: int = 10
    schedule_kind: str = "cosine"
    start_step: int = 3

    def ns_config(self) -> NsConfig:
        return NsConfig(grid_size=self.grid_size, viscosity=self.viscosity,
                        dt_frames=self.dt_frames)


def pool_downsample(frame: np.ndarray, factor: int) -> np.ndarray:
    """Block-average a square frame by an integer factor."""
    n = frame.shape[-1]
    m = n // factor
    return frame.reshape(*frame.shape[:-2], m, factor, m, factor).mean(axis=(-3, -1))


def spectral_upsample(frame: np.ndarray, factor: int) -> np.ndarray:
    """Zero-padded Fourier interpolation of a square frame onto a grid
    `factor` times finer."""
    m = frame.shape[-1]
    n = m * factor
    coeffs = np.fft.fft2(frame)
    padded = np.zeros((n, n), dtype=complex)
    h = m // 2
    padded[:h, :h] = coeffs[:h, :h]
    padded[:h, -h:] = coeffs[:h, -h:]
    padded[-h:, :h] = coeffs[-h:, :h]
    padded[-h:, -h:] = coeffs[-h:, -h:]
    return np.fft.ifft2(padded).real * factor**2


def degrade_triple(triple: np.ndarray, factor: int) -> np.ndarray:
    """Low-fidelity conditioning for a fine triple: block-pooled, then
    interpolated back onto the fine grid."""
    return np.stack([spectral_upsample(pool_downsample(f, factor), factor)
                     for f in triple])


def vortex_triple(spec: VortexTaskSpec, rng: RngStream) -> np.ndarray:
    """Random exact-solution triple: amplitude, phase shift, and age."""
    amp = 0.2 + 0.4 * float(rng.uniform())
    shift = (2.0 * np.pi * float(rng.uniform()), 2.0 * np.pi * float(rng.uniform()))
    t0 = float(rng.uniform())
    return np.stack([
        taylor_green_vorticity(spec.grid_size, 1, t0 + q * spec.dt_frames,
                               spec.viscosity, amplitude=amp, shift=shift)
        for q in (-1, 0, 1)
    ])


def vortex_dataset(spec: VortexTaskSpec, n: int, seed: int):
    """(high triples [n, 3, N, N], degraded conditioning, same layout)."""
    base = RngStream(seed)
    high = np.stack([vortex_triple(spec, base.child(i)) for i in range(n)])
    low = np.stack([degrade_triple(h, spec.coarse_factor) for h in high])
    return high, low


def train_vortex_model(spec: VortexTaskSpec, schedule: NoiseSchedule,
                       cfg: TrainConfig, data_seed: int) -> DenoiserModel:
    high, low = vortex_dataset(spec, spec.n_train, data_seed)
    n = spec.grid_size
    flat_dim = 3 * n * n
    model = model_init(flat_dim, flat_dim, hidden=spec.hidden, seed=cfg.seed)
    trained, _ = train(model, (high.reshape(-1, flat_dim), low.reshape(-1, flat_dim)),
                       schedule, cfg)
    return trained


def vortex_superres_ensemble(model: DenoiserModel, spec: VortexTaskSpec,
                             low_triple: np.ndarray, schedule: NoiseSchedule,
                             guidance_scale: float, n_samples: int,
                             base_seed: int) -> EnsembleBatch:
    ns = spec.ns_config()

    def predict(rng: RngStream):
        out = pidfs_superresolve(model, low_triple, spec.start_step, schedule,
                                 guidance_scale, ns, rng)
        return Field(out, ("time", "space", "space"))

    return sample_ensemble(predict, n_samples, base_seed)
