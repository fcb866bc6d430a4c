"""A small fully-connected noise-prediction network with hand-written
forward, backward, and Adam, plus its training objectives.

The network maps (state x, step index tau, conditioning c) to an output the
width of the state. Inputs are the concatenation [x, c, temb(tau)] where
temb is a 16-dim sinusoidal embedding of the step index. Hidden layers use
tanh (closed-form derivative keeps the backward pass short and exactly
checkable against finite differences); the output layer is linear.

Training provides two objectives sharing one backprop core:
- `ddpm_loss_and_grad`: predict the injected noise of a forward-diffused
  state, x_tau = sqrt(abar_tau) x0 + sqrt(1 - abar_tau) eps, target eps.
- `refiner_loss_and_grad`: step 0 predicts the next state from a zero input;
  steps k >= 1 predict the noise injected at scale sigma_k.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import Field, RngStream, field_read, field_write

TEMB_DIM = 16


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("bad batch size or step count")


@dataclass
class DenoiserModel:
    """Weights of the noise-prediction MLP. Treat as read-only after training."""

    weights: list  # W[i]: (fan_out, fan_in)
    biases: list
    state_dim: int
    cond_dim: int

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.cond_dim + TEMB_DIM

    def parameters(self):
        return self.weights + self.biases

    def copy(self) -> "DenoiserModel":
        return DenoiserModel([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases],
                             self.state_dim, self.cond_dim)


def model_init(state_dim: int, cond_dim: int, hidden=(128, 128, 128),
               seed: int = 0) -> DenoiserModel:
    """Random init: W ~ N(0, 1/fan_in), biases zero."""
    rng = RngStream(seed)
    sizes = [state_dim + cond_dim + TEMB_DIM, *hidden, state_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return DenoiserModel(weights, biases, state_dim, cond_dim)


def time_embedding(tau) -> np.ndarray:
    """Sinusoidal features of the step index; accepts a scalar or a vector."""
    tau = np.asarray(tau, dtype=np.float64)
    half = TEMB_DIM // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    angles = tau[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _assemble_input(m: DenoiserModel, x, tau, cond) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if x.shape[-1] != m.state_dim:
        raise ValueError(f"state width {x.shape[-1]} != model {m.state_dim}")
    if cond.shape[-1] != m.cond_dim:
        raise ValueError(f"cond width {cond.shape[-1]} != model {m.cond_dim}")
    temb = time_embedding(tau)
    if x.ndim == 2 and temb.ndim == 1:
        temb = np.broadcast_to(temb, (x.shape[0], TEMB_DIM))
    if x.ndim == 2 and cond.ndim == 1:
        cond = np.broadcast_to(cond, (x.shape[0], m.cond_dim))
    return np.concatenate([x, cond, temb], axis=-1)


def _forward_cached(m: DenoiserModel, inp: np.ndarray):
    acts = [inp]
    h = inp
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ W.T + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return h, acts


def forward(m: DenoiserModel, x, tau, cond) -> np.ndarray:
    """Network output; pure function of (m, x, tau, cond). tau must be >= 0."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("step index must be >= 0")
    out, _ = _forward_cached(m, _assemble_input(m, x, tau, cond))
    return out


def mse_loss_and_grad(m: DenoiserModel, x, tau, cond, target):
    """Mean-squared-error loss over all output entries and its gradients.

    Returns (loss, (dweights, dbiases)). This is the single backprop core
    shared by every training objective.
    """
    inp = _assemble_input(m, x, tau, cond)
    if inp.ndim == 1:
        inp = inp[None, :]
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        target = target[None, :]
    out, acts = _forward_cached(m, inp)
    diff = out - target
    loss = float(np.mean(diff**2))

    dweights = [None] * len(m.weights)
    dbiases = [None] * len(m.biases)
    delta = (2.0 / diff.size) * diff
    for i in range(len(m.weights) - 1, -1, -1):
        dweights[i] = delta.T @ acts[i]
        dbiases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i]) * (1.0 - acts[i] ** 2)
    return loss, (dweights, dbiases)


def ddpm_loss_and_grad(m: DenoiserModel, x0_batch, cond_batch, schedule, rng: RngStream):
    """Noise-prediction objective on forward-diffused states."""
    x0 = np.atleast_2d(np.asarray(x0_batch, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond_batch, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    n = schedule.n_steps
    tau = rng.integers(1, n + 1, x0.shape[0])
    eps = rng.normal(x0.shape)
    abar = schedule.alpha_bar[tau - 1][:, None]
    x_tau = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    return mse_loss_and_grad(m, x_tau, tau, cond, eps)


def refiner_loss_and_grad(m: DenoiserModel, target_batch, cond_batch, sigmas,
                          rng: RngStream):
    """Refinement objective: k = 0 predicts the state, k >= 1 predicts noise."""
    y = np.atleast_2d(np.asarray(target_batch, dtype=np.float64))
    cond = np.atleast_2d(np.asarray(cond_batch, dtype=np.float64))
    if y.shape[0] == 0:
        raise ValueError("empty batch")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    k = rng.integers(0, len(sigmas) + 1, y.shape[0])
    z = rng.normal(y.shape)
    x = np.zeros_like(y)
    target = y.copy()
    noised = k > 0
    if np.any(noised):
        sig = sigmas[k[noised] - 1][:, None]
        x[noised] = y[noised] + sig * z[noised]
        target[noised] = z[noised]
    return mse_loss_and_grad(m, x, k, cond, target)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list = dc_field(default_factory=list)
    v: list = dc_field(default_factory=list)


def adam_step(model: DenoiserModel, grads, cfg: TrainConfig, t: int,
              state: AdamState | None = None):
    """One bias-corrected Adam update (t is 1-based). Returns (model, state)."""
    dweights, dbiases = grads
    params = model.parameters()
    gs = list(dweights) + list(dbiases)
    for p, g in zip(params, gs):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.shape}")
    if state is None or not state.m:
        state = AdamState([np.zeros_like(p) for p in params],
                          [np.zeros_like(p) for p in params])
    new_params = []
    for i, (p, g) in enumerate(zip(params, gs)):
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g**2
        m_hat = state.m[i] / (1.0 - cfg.beta1**t)
        v_hat = state.v[i] / (1.0 - cfg.beta2**t)
        new_params.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
    n_w = len(model.weights)
    out = DenoiserModel(new_params[:n_w], new_params[n_w:],
                        model.state_dim, model.cond_dim)
    for p in out.parameters():
        if not np.all(np.isfinite(p)):
            raise FloatingPointError("non-finite parameter after Adam step")
    return out, state


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _run_training(model, n_examples, cfg, step_fn):
    rng = RngStream(cfg.seed)
    state = None
    history = []
    for t in range(1, cfg.steps + 1):
        idx = rng.integers(0, n_examples, cfg.batch_size)
        loss, grads = step_fn(model, idx, rng)
        model, state = adam_step(model, grads, cfg, t, state)
        history.append(loss)
    return model, history


def train(model: DenoiserModel, dataset, schedule, cfg: TrainConfig):
    """Train on the noise-prediction objective.

    `dataset` is a pair (targets [n, state_dim], conds [n, cond_dim]).
    Returns (trained model, per-step loss history). Deterministic in cfg.seed.
    """
    x0, cond = (np.asarray(a, dtype=np.float64) for a in dataset)
    if x0.shape[0] == 0:
        raise ValueError("empty dataset")

    def step(m, idx, rng):
        return ddpm_loss_and_grad(m, x0[idx], cond[idx], schedule, rng)

    return _run_training(model, x0.shape[0], cfg, step)


def train_refiner(model: DenoiserModel, dataset, sigmas, cfg: TrainConfig):
    """Train on the refinement objective; dataset as in `train`."""
    y, cond = (np.asarray(a, dtype=np.float64) for a in dataset)
    if y.shape[0] == 0:
        raise ValueError("empty dataset")

    def step(m, idx, rng):
        return refiner_loss_and_grad(m, y[idx], cond[idx], sigmas, rng)

    return _run_training(model, y.shape[0], cfg, step)


# ---------------------------------------------------------------------------
# Checkpoints: directory with an architecture sidecar and one record per
# parameter (binary field files).
# ---------------------------------------------------------------------------

def checkpoint_save(model: DenoiserModel, path, extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    arch = {
        "state_dim": model.state_dim,
        "cond_dim": model.cond_dim,
        "hidden": [int(w.shape[0]) for w in model.weights[:-1]],
        "temb_dim": TEMB_DIM,
        "records": [],
    }
    if extra:
        arch["extra"] = extra
    params_dir = os.path.join(path, "params")
    os.makedirs(params_dir, exist_ok=True)
    for i, w in enumerate(model.weights):
        name = f"w{i}"
        field_write(Field(w, ("space", "space")), os.path.join(params_dir, name + ".fld"))
        arch["records"].append(name)
    for i, b in enumerate(model.biases):
        name = f"b{i}"
        field_write(Field(b[None, :], ("space", "space")),
                    os.path.join(params_dir, name + ".fld"))
        arch["records"].append(name)
    with open(os.path.join(path, "arch.json"), "w") as fh:
        json.dump(arch, fh, sort_keys=True, indent=2)
        fh.write("\n")


def checkpoint_load(path) -> DenoiserModel:
    with open(os.path.join(path, "arch.json")) as fh:
        arch = json.load(fh)
    n_layers = len(arch["hidden"]) + 1
    weights, biases = [], []
    for i in range(n_layers):
        w = field_read(os.path.join(path, "params", f"w{i}.fld")).data
        b = field_read(os.path.join(path, "params", f"b{i}.fld")).data[0]
        weights.append(np.array(w))
        biases.append(np.array(b))
    return DenoiserModel(weights, biases, arch["state_dim"], arch["cond_dim"])


def checkpoint_extra(path) -> dict:
    with open(os.path.join(path, "arch.json")) as fh:
        return json.load(fh).get("extra", {})
