"""Pseudo-spectral PDE machinery on periodic grids.

Provides the ground-truth generators and physics metrics used throughout:

- FFT wrappers with a power-of-two contract (1D and 2D),
- a 1D Kuramoto-Sivashinsky solver, u_t = -u u_x - u_xx - u_xxxx, integrated
  with exponential time differencing RK4 on Fourier coefficients and 2/3-rule
  dealiasing,
- the 2D vorticity-form Navier-Stokes residual G(w) = dw/dt + u.grad(w)
  - nu*lap(w) - f, with velocity recovered from the streamfunction and an
  analytic gradient of the squared residual norm (used for guided sampling),
- radially binned kinetic energy spectra and value histograms.

2D fields live on the square domain [0, 2pi)^2 so wavenumbers are integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .field import Field, as_array


class NumericError(RuntimeError):
    """Raised when a computation leaves the finite regime (blow-up, NaN)."""


def _require_pow2(n: int, what: str = "extent"):
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"{what} must be a power of two, got {n}")


# ---------------------------------------------------------------------------
# FFT contracts
# ---------------------------------------------------------------------------

def fft_1d(f) -> np.ndarray:
    x = as_array(f)
    _require_pow2(x.shape[-1])
    return np.fft.fft(x)


def ifft_1d(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.complex128)
    _require_pow2(c.shape[-1])
    return np.fft.ifft(c).real


def fft_2d(f) -> np.ndarray:
    x = as_array(f)
    _require_pow2(x.shape[-2])
    _require_pow2(x.shape[-1])
    return np.fft.fft2(x)


def ifft_2d(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.complex128)
    _require_pow2(c.shape[-2])
    _require_pow2(c.shape[-1])
    return np.fft.ifft2(c).real


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky, 1D periodic
# ---------------------------------------------------------------------------

# Configs must keep dt * kmax^4 below this bound. The linear (stiff) part is
# integrated exactly, so the practical limit is the nonlinear stage; this cap
# rejects configurations far outside the regime validated by the resolution
# study in the tests.
KS_STIFFNESS_CAP = 1000.0

BLOWUP_LIMIT = 1.0e6


@dataclass(frozen=True)
class KsConfig:
    """1D Kuramoto-Sivashinsky run: periodic domain [0, L), D grid points."""

    domain_length: float = 64.0
    resolution: int = 64
    dt: float = 0.1
    horizon: int = 140
    record_every: int = 4

    def __post_init__(self):
        if self.domain_length <= 0 or self.dt <= 0:
            raise ValueError("domain_length and dt must be positive")
        _require_pow2(self.resolution, "resolution")
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")
        if self.horizon < 1 or self.record_every < 1:
            raise ValueError("horizon and record_every must be >= 1")
        kmax = 2.0 * np.pi * (self.resolution // 2) / self.domain_length
        if self.dt * kmax**4 > KS_STIFFNESS_CAP:
            raise ValueError(
                f"dt*kmax^4 = {self.dt * kmax**4:.1f} exceeds stability cap "
                f"{KS_STIFFNESS_CAP}"
            )

    def grid(self) -> np.ndarray:
        return np.arange(self.resolution) * (self.domain_length / self.resolution)


def _ks_etdrk4_tables(cfg: KsConfig):
    D, L, dt = cfg.resolution, cfg.domain_length, cfg.dt
    k = 2.0 * np.pi * np.fft.fftfreq(D, d=L / D)
    lam = k**2 - k**4  # linear growth rate per mode
    E = np.exp(dt * lam)
    E2 = np.exp(dt * lam / 2.0)
    # ETDRK4 phi-coefficients via contour integral (stable near lam = 0)
    M = 32
    r = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
    LR = dt * lam[:, None] + r[None, :]
    Q = dt * np.real(np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1))
    f1 = dt * np.real(np.mean(
        (-4.0 - LR + np.exp(LR) * (4.0 - 3.0 * LR + LR**2)) / LR**3, axis=1))
    f2 = dt * np.real(np.mean(
        (2.0 + LR + np.exp(LR) * (-2.0 + LR)) / LR**3, axis=1))
    f3 = dt * np.real(np.mean(
        (-4.0 - 3.0 * LR - LR**2 + np.exp(LR) * (4.0 - LR)) / LR**3, axis=1))
    # nonlinear term -u u_x = -(1/2) d(u^2)/dx, with 2/3-rule dealiasing
    kmax = np.max(np.abs(k))
    dealias = np.abs(k) < (2.0 / 3.0) * kmax
    g = -0.5j * k * dealias
    return E, E2, Q, f1, f2, f3, g


def ks_simulate(cfg: KsConfig, u0) -> Field:
    """Integrate from u0 and record `horizon` snapshots (row 0 is u0).

    Snapshot i is the state after i * record_every time steps.
    """
    u0 = as_array(u0)
    if u0.shape != (cfg.resolution,):
        raise ValueError(f"u0 must have shape ({cfg.resolution},), got {u0.shape}")
    E, E2, Q, f1, f2, f3, g = _ks_etdrk4_tables(cfg)

    def nonlin(v_hat):
        u = np.fft.ifft(v_hat).real
        return g * np.fft.fft(u * u)

    v = np.fft.fft(u0)
    out = np.empty((cfg.horizon, cfg.resolution))
    out[0] = u0
    # divergence shows up as overflow first; the snapshot check turns it into
    # a diagnostic instead of a warning storm
    with np.errstate(over="ignore", invalid="ignore"):
        for snap in range(1, cfg.horizon):
            for _ in range(cfg.record_every):
                Nv = nonlin(v)
                a = E2 * v + Q * Nv
                Na = nonlin(a)
                b = E2 * v + Q * Na
                Nb = nonlin(b)
                c = E2 * a + Q * (2.0 * Nb - Nv)
                Nc = nonlin(c)
                v = E * v + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3
            u = np.fft.ifft(v).real
            peak = np.max(np.abs(u))
            if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
                raise NumericError(
                    f"blow-up at snapshot {snap} (step {snap * cfg.record_every}): "
                    f"max|u| = {peak:.3e}"
                )
            out[snap] = u
    return Field(out, ("time", "space"))


def ks_random_initial(cfg: KsConfig, rng) -> np.ndarray:
    """Band-limited random initial condition (modes 1..D/8, zero mean)."""
    D, L = cfg.resolution, cfg.domain_length
    x = cfg.grid()
    n_modes = max(1, D // 8)
    amps = rng.normal((2, n_modes))
    u0 = np.zeros(D)
    for m in range(1, n_modes + 1):
        phase = 2.0 * np.pi * m * x / L
        u0 += amps[0, m - 1] * np.cos(phase) + amps[1, m - 1] * np.sin(phase)
    rms = np.sqrt(np.mean(u0**2))
    return u0 * (1.5 / rms) if rms > 0 else u0


def ks_dataset_generate(cfg: KsConfig, n_traj: int, seed: int) -> Field:
    """B independent trajectories from seeded random smooth initial states."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    from .field import RngStream

    base = RngStream(seed)
    trajs = []
    for j in range(n_traj):
        u0 = ks_random_initial(cfg, base.child(j))
        trajs.append(ks_simulate(cfg, u0).data)
    return Field(np.stack(trajs), ("batch", "time", "space"))


# ---------------------------------------------------------------------------
# 2D Navier-Stokes vorticity residual (domain [0, 2pi)^2)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NsConfig:
    """Vorticity-form residual evaluation on an N x N periodic grid."""

    grid_size: int = 64
    viscosity: float = 1e-2
    forcing: Optional[np.ndarray] = None
    dt_frames: float = 1e-3

    def __post_init__(self):
        _require_pow2(self.grid_size, "grid_size")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.dt_frames <= 0:
            raise ValueError("dt_frames must be positive")
        if self.forcing is not None:
            fr = np.asarray(self.forcing, dtype=np.float64)
            if fr.shape != (self.grid_size, self.grid_size):
                raise ValueError("forcing must match the grid")
            object.__setattr__(self, "forcing", fr)


def _ns_wavenumbers(n: int):
    k = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers
    kx = k[None, :] * np.ones((n, 1))
    ky = k[:, None] * np.ones((1, n))
    k2 = kx**2 + ky**2
    inv_k2 = np.zeros_like(k2)
    nz = k2 > 0
    inv_k2[nz] = 1.0 / k2[nz]
    return kx, ky, k2, inv_k2


def velocity_from_vorticity(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) with u = d(psi)/dy, v = -d(psi)/dx and lap(psi) = -w."""
    n = w.shape[-1]
    kx, ky, _, inv_k2 = _ns_wavenumbers(n)
    psi_hat = np.fft.fft2(w) * inv_k2
    u = np.fft.ifft2(1j * ky * psi_hat).real
    v = np.fft.ifft2(-1j * kx * psi_hat).real
    return u, v


def _residual_spatial(w: np.ndarray, cfg: NsConfig):
    """Advection and diffusion terms of a single vorticity frame."""
    kx, ky, k2, inv_k2 = _ns_wavenumbers(cfg.grid_size)
    w_hat = np.fft.fft2(w)
    psi_hat = w_hat * inv_k2
    u = np.fft.ifft2(1j * ky * psi_hat).real
    v = np.fft.ifft2(-1j * kx * psi_hat).real
    wx = np.fft.ifft2(1j * kx * w_hat).real
    wy = np.fft.ifft2(1j * ky * w_hat).real
    lap = np.fft.ifft2(-k2 * w_hat).real
    return u * wx + v * wy, lap


def ns_residual_triple(w_prev, w_mid, w_next, cfg: NsConfig) -> np.ndarray:
    """G evaluated at the middle frame of three consecutive frames."""
    w_prev, w_mid, w_next = (np.asarray(a, dtype=np.float64) for a in (w_prev, w_mid, w_next))
    adv, lap = _residual_spatial(w_mid, cfg)
    dwdt = (w_next - w_prev) / (2.0 * cfg.dt_frames)
    res = dwdt + adv - cfg.viscosity * lap
    if cfg.forcing is not None:
        res = res - cfg.forcing
    return res


def ns_vorticity_residual(traj, cfg: NsConfig) -> Field:
    """Point-wise residual at every interior frame of a [T, N, N] trajectory."""
    w = as_array(traj)
    if w.ndim != 3 or w.shape[1] != cfg.grid_size or w.shape[2] != cfg.grid_size:
        raise ValueError(
            f"trajectory must be [T, {cfg.grid_size}, {cfg.grid_size}], got {w.shape}"
        )
    T = w.shape[0]
    if T < 3:
        raise ValueError("need at least 3 frames for the central time difference")
    out = np.empty((T - 2, cfg.grid_size, cfg.grid_size))
    for t in range(1, T - 1):
        out[t - 1] = ns_residual_triple(w[t - 1], w[t], w[t + 1], cfg)
    return Field(out, ("time", "space", "space"))


def _apply_multiplier(field: np.ndarray, mult: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(mult * np.fft.fft2(field)).real


def ns_residual_triple_grad(w_prev, w_mid, w_next, cfg: NsConfig):
    """Gradient of J = sum(G^2) w.r.t. the three frames.

    All operators entering G are Fourier multipliers except the advection
    term, which is bilinear; the adjoint of a multiplier M is conj(M).
    Verified against finite differences in the test suite.
    """
    w_prev, w_mid, w_next = (np.asarray(a, dtype=np.float64) for a in (w_prev, w_mid, w_next))
    n = cfg.grid_size
    kx, ky, k2, inv_k2 = _ns_wavenumbers(n)
    G = ns_residual_triple(w_prev, w_mid, w_next, cfg)
    r = 2.0 * G

    coeff = 1.0 / (2.0 * cfg.dt_frames)
    g_prev = -coeff * r
    g_next = coeff * r

    w_hat = np.fft.fft2(w_mid)
    psi_hat = w_hat * inv_k2
    u = np.fft.ifft2(1j * ky * psi_hat).real
    v = np.fft.ifft2(-1j * kx * psi_hat).real
    wx = np.fft.ifft2(1j * kx * w_hat).real
    wy = np.fft.ifft2(1j * ky * w_hat).real

    # advection through the velocity: adjoint of dw -> vel(dw) . grad(w)
    g_mid = _apply_multiplier(r * wx, np.conj(1j * ky * inv_k2))
    g_mid += _apply_multiplier(r * wy, np.conj(-1j * kx * inv_k2))
    # advection through the gradient of w: adjoint of dw -> u . grad(dw)
    g_mid += _apply_multiplier(r * u, np.conj(1j * kx))
    g_mid += _apply_multiplier(r * v, np.conj(1j * ky))
    # diffusion (multiplier -k2 is real and symmetric)
    g_mid -= cfg.viscosity * _apply_multiplier(r, -k2)
    return g_prev, g_mid, g_next


def taylor_green_vorticity(n: int, kappa: int, t: float, viscosity: float,
                           amplitude: float = 1.0,
                           shift: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Exact decaying-vortex solution w = 2 A k^2 cos(kx) cos(ky) e^(-2 nu k^2 t)."""
    xs = np.arange(n) * (2.0 * np.pi / n)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    decay = np.exp(-2.0 * viscosity * kappa**2 * t)
    return (2.0 * amplitude * kappa**2
            * np.cos(kappa * (X - shift[0])) * np.cos(kappa * (Y - shift[1])) * decay)


# ---------------------------------------------------------------------------
# Spectral statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    """Radially binned energy: bin k holds modes with |kappa| in [k-1/2, k+1/2)."""

    bins: np.ndarray
    energy: np.ndarray

    def total(self) -> float:
        return float(self.energy.sum())


def energy_spectrum(f) -> Spectrum:
    """Binned spectral energy of a square field; sums to the grid-mean of f^2."""
    w = as_array(f)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square 2D field, got shape {w.shape}")
    n = w.shape[0]
    _require_pow2(n)
    power = np.abs(np.fft.fft2(w)) ** 2 / float(n) ** 4
    kx, ky, _, _ = _ns_wavenumbers(n)
    kmag = np.sqrt(kx**2 + ky**2)
    idx = np.rint(kmag).astype(np.int64)
    n_bins = int(idx.max()) + 1
    energy = np.bincount(idx.ravel(), weights=power.ravel(), minlength=n_bins)
    return Spectrum(np.arange(n_bins), energy)


def vorticity_histogram(f, n_bins: int, value_range: tuple[float, float]):
    """Normalized histogram; out-of-range values are clamped into the end bins.

    Returns (edges, fractions) with fractions summing to 1.
    """
    lo, hi = float(value_range[0]), float(value_range[1])
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if not lo < hi:
        raise ValueError(f"degenerate range ({lo}, {hi})")
    vals = np.clip(as_array(f).ravel(), lo, hi)
    counts, edges = np.histogram(vals, bins=n_bins, range=(lo, hi))
    return edges, counts / counts.sum()


def _csv_cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_series_csv(path, header, rows) -> None:
    """Small CSV writer with deterministic float formatting (shortest repr)."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
