"""Noise schedules and conditional generation procedures.

Four ways to produce a prediction from a trained noise model:

- `ddpm_sample`: ancestral reverse chain from pure noise, conditioning
  concatenated into every step. The update is the epsilon-parameterized rule
    x_{tau-1} = (x_tau - eps_coef(tau) * eps_hat) / sqrt(1 - beta_tau)
                + noise_coef(tau) * z,
  with the noise term omitted at the final step so the returned state is a
  mean estimate.
- `ddim_sample`: the deterministic (eta = 0) or reduced-noise update sharing
  the same marginals; supports starting mid-chain from a constructed state.
- `refiner_predict`: an initial one-shot prediction followed by K
  denoise-at-decreasing-noise-scale refinement updates.
- `pidfs_superresolve`: builds a mid-chain state from a low-fidelity input,
  then runs the implicit sampler with an optional gradient correction that
  descends the flow-residual norm of the running clean-state estimate.

`rollout` composes the first two into autoregressive trajectory prediction.
Everything is a pure function of (model, inputs, seed); ensembles are drawn
with per-sample derived streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .field import RngStream
from .spectral import NsConfig, ns_residual_triple_grad, write_series_csv


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention coefficients abar_1..abar_N and the
    per-step update coefficients derived from them.

    abar is strictly decreasing in (0, 1]. beta_tau = 1 - abar_tau/abar_{tau-1}
    (abar_0 := 1); an opening step with abar_1 = 1 (beta_1 = 0) is allowed so
    mid-chain constructions can start noise-free.
    """

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 1:
            raise ValueError("alpha_bar must be a nonempty 1-d sequence")
        if not (np.all(ab > 0) and np.all(ab <= 1)):
            raise ValueError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        beta = 1.0 - ab / self.alpha_bar_prev_of(ab)
        if np.any(beta < 0) or np.any(beta >= 1) or np.any(beta[1:] <= 0):
            raise ValueError("derived beta out of range")
        object.__setattr__(self, "alpha_bar", ab)

    @staticmethod
    def alpha_bar_prev_of(ab):
        return np.concatenate([[1.0], ab[:-1]])

    @property
    def n_steps(self) -> int:
        return len(self.alpha_bar)

    @property
    def alpha_bar_prev(self) -> np.ndarray:
        return self.alpha_bar_prev_of(self.alpha_bar)

    @property
    def beta(self) -> np.ndarray:
        return 1.0 - self.alpha_bar / self.alpha_bar_prev

    @property
    def posterior_variance(self) -> np.ndarray:
        denom = 1.0 - self.alpha_bar
        out = np.zeros_like(self.alpha_bar)
        nz = denom > 0
        out[nz] = (1.0 - self.alpha_bar_prev[nz]) / denom[nz] * self.beta[nz]
        return out

    @property
    def eps_coef(self) -> np.ndarray:
        """Multiplier of the predicted noise inside each ancestral step."""
        root = np.sqrt(1.0 - self.alpha_bar)
        out = np.zeros_like(self.alpha_bar)
        nz = root > 0
        out[nz] = self.beta[nz] / root[nz]
        return out

    @property
    def noise_coef(self) -> np.ndarray:
        """Multiplier of the fresh Gaussian draw inside each ancestral step."""
        return np.sqrt(self.posterior_variance)


def make_schedule(n_steps: int, kind: str = "cosine",
                  beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear-beta or squared-cosine schedule with N steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if kind == "linear":
        if not (0 < beta_min <= beta_max < 1):
            raise ValueError(f"invalid beta range ({beta_min}, {beta_max})")
        betas = np.linspace(beta_min, beta_max, n_steps)
        return NoiseSchedule(np.cumprod(1.0 - betas))
    if kind == "cosine":
        s = 0.008
        taus = np.arange(n_steps + 1, dtype=np.float64)
        f = np.cos((taus / n_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        ab = f[1:] / f[0]
        betas = np.clip(1.0 - ab / np.concatenate([[1.0], ab[:-1]]), 1e-8, 0.999)
        return NoiseSchedule(np.cumprod(1.0 - betas))
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_to_csv(schedule: NoiseSchedule, path) -> None:
    rows = zip(range(1, schedule.n_steps + 1), schedule.alpha_bar, schedule.beta,
               schedule.eps_coef, schedule.noise_coef)
    write_series_csv(path, ("tau", "alpha_bar", "beta", "eps_coef", "noise_coef"), rows)


# ---------------------------------------------------------------------------
# Model evaluation hook
# ---------------------------------------------------------------------------

def eval_noise_model(model, x, tau, cond) -> np.ndarray:
    """Evaluate a noise predictor: any object with .predict_eps, or a
    DenoiserModel run through its forward pass."""
    fn = getattr(model, "predict_eps", None)
    if fn is not None:
        return np.asarray(fn(x, tau, cond), dtype=np.float64)
    from .denoiser import forward

    return forward(model, x, tau, cond)


class GaussianOracle:
    """Closed-form optimal noise predictor for an independent Gaussian target.

    For data ~ N(mean, std^2 I) diffused with retention abar, the marginal is
    N(sqrt(abar) mean, abar std^2 + 1 - abar), so the optimal prediction of
    the injected noise at state x is
        sqrt(1 - abar) * (x - sqrt(abar) mean) / (abar std^2 + 1 - abar).
    """

    def __init__(self, mean, std: float, schedule: NoiseSchedule):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = float(std)
        self.schedule = schedule

    def predict_eps(self, x, tau, cond):
        ab = self.schedule.alpha_bar[int(tau) - 1]
        var = ab * self.std**2 + 1.0 - ab
        return np.sqrt(1.0 - ab) * (x - np.sqrt(ab) * self.mean) / var


def _state_dim(model, state_dim):
    if state_dim is not None:
        return int(state_dim)
    dim = getattr(model, "state_dim", None)
    if dim is None:
        raise ValueError("state_dim is required for models without one")
    return int(dim)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        from .spectral import NumericError

        raise NumericError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def ddpm_sample(model, cond, schedule: NoiseSchedule, rng: RngStream,
                state_dim: Optional[int] = None) -> np.ndarray:
    """Ancestral reverse chain from x_N ~ N(0, I) down to x_0."""
    dim = _state_dim(model, state_dim)
    cond = np.asarray(cond, dtype=np.float64)
    recip_sqrt_alpha = 1.0 / np.sqrt(1.0 - schedule.beta)
    eps_coef = schedule.eps_coef
    noise_coef = schedule.noise_coef
    x = rng.normal(dim)
    for tau in range(schedule.n_steps, 0, -1):
        eps_hat = eval_noise_model(model, x, tau, cond)
        x = recip_sqrt_alpha[tau - 1] * (x - eps_coef[tau - 1] * eps_hat)
        if tau > 1:
            x = x + noise_coef[tau - 1] * rng.normal(dim)
    return _check_finite(x, "ddpm sample")


def ddim_sample(model, cond, schedule: NoiseSchedule, eta: float = 0.0,
                start: Optional[tuple] = None, rng: Optional[RngStream] = None,
                state_dim: Optional[int] = None,
                guidance: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """Implicit sampler; deterministic when eta = 0 (consumes no draws after
    the start state). `start` is (x_tau, tau) to begin mid-chain.

    `guidance`, if given, maps the running clean-state estimate to a
    correction subtracted from it before the next step.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    cond = np.asarray(cond, dtype=np.float64)
    ab = schedule.alpha_bar
    ab_prev = schedule.alpha_bar_prev
    if start is not None:
        x, tau0 = np.asarray(start[0], dtype=np.float64).copy(), int(start[1])
        if not 1 <= tau0 <= schedule.n_steps:
            raise ValueError(f"start step {tau0} outside 1..{schedule.n_steps}")
    else:
        if rng is None:
            raise ValueError("rng is required when no start state is given")
        x, tau0 = rng.normal(_state_dim(model, state_dim)), schedule.n_steps
    for tau in range(tau0, 0, -1):
        a, ap = ab[tau - 1], ab_prev[tau - 1]
        eps_hat = eval_noise_model(model, x, tau, cond)
        root_one_minus = np.sqrt(1.0 - a)
        x0_hat = (x - root_one_minus * eps_hat) / np.sqrt(a)
        if guidance is not None:
            x0_hat = x0_hat - guidance(x0_hat)
            if root_one_minus > 0:
                eps_hat = (x - np.sqrt(a) * x0_hat) / root_one_minus
        sigma = 0.0
        if eta > 0 and a < ap:
            sigma = eta * np.sqrt((1.0 - ap) / (1.0 - a)) * np.sqrt(1.0 - a / ap)
        dir_coef = np.sqrt(max(1.0 - ap - sigma**2, 0.0))
        x = np.sqrt(ap) * x0_hat + dir_coef * eps_hat
        if sigma > 0:
            x = x + sigma * rng.normal(x.shape)
    return _check_finite(x, "ddim sample")


@dataclass(frozen=True)
class RefinerConfig:
    """Number of refinement passes and their decreasing noise scales."""

    sigmas: tuple = (0.5, 0.0630957344480193, 0.00796214341106994, 1e-3)

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if any(v <= 0 for v in s):
            raise ValueError("noise scales must be positive")
        if any(b >= a for a, b in zip(s, s[1:])):
            raise ValueError("noise scales must be strictly decreasing")
        object.__setattr__(self, "sigmas", s)

    @property
    def n_refine(self) -> int:
        return len(self.sigmas)


def geometric_refiner_config(n_refine: int = 4, sigma_max: float = 0.5,
                             sigma_min: float = 1e-3) -> RefinerConfig:
    if n_refine == 0:
        return RefinerConfig(sigmas=())
    if n_refine == 1:
        return RefinerConfig(sigmas=(sigma_max,))
    return RefinerConfig(tuple(np.geomspace(sigma_max, sigma_min, n_refine)))


def refiner_predict(model, cond, cfg: RefinerConfig, rng: RngStream,
                    state_dim: Optional[int] = None) -> np.ndarray:
    """One-shot prediction from a zero input, then K refinement updates:
    u <- u + sigma_k z - sigma_k model(u + sigma_k z, k, cond)."""
    dim = _state_dim(model, state_dim)
    cond = np.asarray(cond, dtype=np.float64)
    u = eval_noise_model(model, np.zeros(dim), 0, cond)
    for k, sigma in enumerate(cfg.sigmas, start=1):
        z = rng.normal(dim)
        z_hat = eval_noise_model(model, u + sigma * z, k, cond)
        u = u + sigma * z - sigma * z_hat
    return _check_finite(u, "refiner prediction")


def acdm_predict(model, history, coefficients, schedule: NoiseSchedule,
                 rng: RngStream, state_dim: Optional[int] = None) -> np.ndarray:
    """Full reverse chain conditioned on the last k states plus the task
    coefficients; `history` is ordered most recent first."""
    frames = [np.asarray(h, dtype=np.float64).ravel() for h in history]
    cond = np.concatenate(frames + [np.asarray(coefficients, dtype=np.float64).ravel()]) \
        if len(coefficients) else np.concatenate(frames)
    return ddpm_sample(model, cond, schedule, rng, state_dim=state_dim)


@dataclass(frozen=True)
class RolloutConfig:
    """Autoregressive prediction: history length, task coefficients, sampler."""

    horizon: int
    history_len: int = 1
    coefficients: tuple = ()
    kind: str = "ddpm"  # "ddpm" | "refiner"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.history_len < 1:
            raise ValueError("history length must be >= 1")
        if self.kind not in ("ddpm", "refiner"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        object.__setattr__(self, "coefficients",
                           tuple(float(c) for c in self.coefficients))


def rollout(model, cfg: RolloutConfig, initial_history, rng: RngStream,
            schedule: Optional[NoiseSchedule] = None,
            refiner_cfg: Optional[RefinerConfig] = None) -> np.ndarray:
    """Feed predictions back as history for `horizon` frames; returns [T, D]."""
    history = [np.asarray(h, dtype=np.float64).ravel() for h in initial_history]
    if len(history) != cfg.history_len:
        raise ValueError(f"initial history has {len(history)} frames, "
                         f"config wants {cfg.history_len}")
    coeff = np.asarray(cfg.coefficients, dtype=np.float64)
    frames = []
    for _ in range(cfg.horizon):
        if cfg.kind == "ddpm":
            if schedule is None:
                raise ValueError("ddpm rollout needs a schedule")
            nxt = acdm_predict(model, history, coeff, schedule, rng)
        else:
            if refiner_cfg is None:
                raise ValueError("refiner rollout needs a refiner config")
            cond = np.concatenate(history + [coeff]) if coeff.size else np.concatenate(history)
            nxt = refiner_predict(model, cond, refiner_cfg, rng)
        frames.append(nxt)
        history = [nxt] + history[:-1]
    return np.stack(frames)


def midchain_state(u_low, tau: int, schedule: NoiseSchedule, rng: RngStream) -> np.ndarray:
    """Noised start state sqrt(abar_tau) u + sqrt(1 - abar_tau) eps."""
    if not 1 <= tau <= schedule.n_steps:
        raise ValueError(f"start step {tau} outside 1..{schedule.n_steps}")
    u = np.asarray(u_low, dtype=np.float64)
    ab = schedule.alpha_bar[tau - 1]
    return np.sqrt(ab) * u + np.sqrt(1.0 - ab) * rng.normal(u.shape)


def pidfs_superresolve(model, u_low, tau: int, schedule: NoiseSchedule,
                       guidance_scale: float, ns_cfg: NsConfig,
                       rng: RngStream) -> np.ndarray:
    """Super-resolve a low-fidelity frame triple [3, N, N] (already upsampled
    to the target grid). Builds the mid-chain start from u_low, then runs the
    implicit sampler; when guidance_scale > 0 each step descends the relative
    flow-residual norm of the running clean-state estimate. The residual
    normalizer is fixed from the input triple so the correction is a plain
    gradient step."""
    if guidance_scale < 0:
        raise ValueError("guidance scale must be >= 0")
    u = np.asarray(u_low, dtype=np.float64)
    n = ns_cfg.grid_size
    if u.shape != (3, n, n):
        raise ValueError(f"expected a [3, {n}, {n}] frame triple, got {u.shape}")
    flat = u.reshape(-1)
    x_start = midchain_state(flat, tau, schedule, rng)

    guidance = None
    if guidance_scale > 0:
        d = float(n * n)
        norm_sq = max(float(np.sum(u[1] ** 2)), 1e-12)

        def guidance(x0_flat):
            w = x0_flat.reshape(3, n, n)
            gp, gm, gn = ns_residual_triple_grad(w[0], w[1], w[2], ns_cfg)
            grad = np.stack([gp, gm, gn]).reshape(-1) / (d * norm_sq)
            return guidance_scale * grad

    out = ddim_sample(model, flat, schedule, eta=0.0, start=(x_start, tau),
                      rng=rng, guidance=guidance)
    return out.reshape(3, n, n)


def residual_norm_of_triple(triple, ns_cfg: NsConfig, reference=None) -> float:
    """Relative squared-residual norm of a frame triple; the normalizer is the
    middle frame of `reference` (defaults to the triple itself)."""
    from .spectral import ns_residual_triple

    w = np.asarray(triple, dtype=np.float64)
    ref = w if reference is None else np.asarray(reference, dtype=np.float64)
    g = ns_residual_triple(w[0], w[1], w[2], ns_cfg)
    return float(np.mean(g**2) / max(np.sum(ref[1] ** 2), 1e-300))
