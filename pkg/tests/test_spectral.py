import numpy as np
import pytest

from deu.field import Field, RngStream
from deu.spectral import (
    KsConfig,
    NsConfig,
    NumericError,
    energy_spectrum,
    fft_1d,
    fft_2d,
    ifft_1d,
    ifft_2d,
    ks_dataset_generate,
    ks_random_initial,
    ks_simulate,
    ns_residual_triple,
    ns_residual_triple_grad,
    ns_vorticity_residual,
    taylor_green_vorticity,
    vorticity_histogram,
)


def naive_dft(x):
    """O(N^2) oracle for the forward transform."""
    n = len(x)
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        for j in range(n):
            out[k] += x[j] * np.exp(-2j * np.pi * k * j / n)
    return out


# -- FFT contracts -----------------------------------------------------------

def test_fft_delta_impulse_flat():
    x = np.zeros(16)
    x[0] = 1.0
    c = fft_1d(x)
    assert np.allclose(np.abs(c), 1.0, atol=1e-14)


def test_fft_pure_cosine_mode3():
    n = 64
    t = np.arange(n) / n
    c = fft_1d(np.cos(2 * np.pi * 3 * t))
    mags = np.abs(c)
    assert mags[3] == pytest.approx(n / 2, rel=1e-12)
    assert mags[n - 3] == pytest.approx(n / 2, rel=1e-12)
    others = np.delete(mags, [3, n - 3])
    assert others.max() < 1e-10


def test_fft_matches_naive_dft():
    x = RngStream(1).normal(64)
    got = fft_1d(x)
    want = naive_dft(x)
    assert np.max(np.abs(got - want)) < 1e-10


def test_fft_roundtrip_and_parseval():
    x = RngStream(2).normal(128)
    c = fft_1d(x)
    back = ifft_1d(c)
    assert np.max(np.abs(back - x)) < 1e-12 * np.max(np.abs(x))
    grid_energy = np.sum(x**2)
    spec_energy = np.sum(np.abs(c) ** 2) / len(x)
    assert spec_energy == pytest.approx(grid_energy, rel=1e-12)


def test_fft2_roundtrip_and_parseval():
    x = RngStream(3).normal((32, 32))
    c = fft_2d(x)
    assert np.max(np.abs(ifft_2d(c) - x)) < 1e-12
    assert np.sum(np.abs(c) ** 2) / x.size == pytest.approx(np.sum(x**2), rel=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        fft_1d(np.zeros(12))
    with pytest.raises(ValueError, match="power of two"):
        fft_2d(np.zeros((16, 12)))


# -- Kuramoto-Sivashinsky ----------------------------------------------------

def test_ks_zero_is_fixed_point():
    cfg = KsConfig(domain_length=64.0, resolution=64, dt=0.1, horizon=10, record_every=4)
    traj = ks_simulate(cfg, np.zeros(64))
    assert np.abs(traj.data).max() == 0.0


@pytest.mark.parametrize("wavenumber,dt,steps_per,snaps", [
    (0.5, 0.05, 4, 41),    # growing mode: k^2 - k^4 = 0.1875
    (1.25, 0.02, 5, 21),   # decaying mode: k^2 - k^4 = -0.8789
])
def test_ks_linear_dispersion_relation(wavenumber, dt, steps_per, snaps):
    L = 2 * np.pi / wavenumber
    cfg = KsConfig(domain_length=L, resolution=16, dt=dt,
                   horizon=snaps, record_every=steps_per)
    u0 = 1e-6 * np.cos(2 * np.pi * cfg.grid() / L)
    traj = ks_simulate(cfg, u0)
    growth = wavenumber**2 - wavenumber**4
    t_end = (snaps - 1) * steps_per * dt
    ratio = np.abs(traj.data[-1]).max() / np.abs(traj.data[0]).max()
    assert ratio == pytest.approx(np.exp(growth * t_end), rel=0.01)


def test_ks_chaotic_bounded_by_fine_reference():
    cfg = KsConfig(domain_length=64.0, resolution=64, dt=0.1, horizon=80, record_every=4)
    u0 = ks_random_initial(cfg, RngStream(5))
    coarse = ks_simulate(cfg, u0)
    # independent reference at double resolution and quarter step
    fine_cfg = KsConfig(domain_length=64.0, resolution=128, dt=0.025,
                        horizon=80, record_every=16)
    u0_hat = np.fft.fft(u0)
    fine_hat = np.zeros(128, dtype=complex)
    fine_hat[:32] = u0_hat[:32] * 2.0
    fine_hat[-32:] = u0_hat[-32:] * 2.0
    fine = ks_simulate(fine_cfg, np.fft.ifft(fine_hat).real)
    bound = 1.5 * np.abs(fine.data).max()
    assert np.abs(coarse.data).max() < bound


def test_ks_blowup_detection():
    cfg = KsConfig(domain_length=64.0, resolution=64, dt=0.1, horizon=50, record_every=4)
    with pytest.raises(NumericError, match="blow-up"):
        ks_simulate(cfg, 1e5 * ks_random_initial(cfg, RngStream(1)))


def test_ks_dataset_determinism_and_shape():
    cfg = KsConfig(horizon=12, record_every=2)
    a = ks_dataset_generate(cfg, 2, seed=7)
    b = ks_dataset_generate(cfg, 2, seed=7)
    assert a.equals(b)
    c = ks_dataset_generate(cfg, 4, seed=7)
    assert c.dims == (4, 12, 64)
    assert c.axes == ("batch", "time", "space")


def test_ks_spatial_mean_conserved():
    cfg = KsConfig(domain_length=64.0, resolution=64, dt=0.1, horizon=140, record_every=4)
    ds = ks_dataset_generate(cfg, 2, seed=3)
    start = ds.data[:, 0, :].mean(axis=-1)
    end = ds.data[:, -1, :].mean(axis=-1)
    assert np.abs(end - start).max() < 1e-8


def test_ks_config_validation():
    with pytest.raises(ValueError):
        KsConfig(resolution=48)
    with pytest.raises(ValueError):
        KsConfig(resolution=4)
    with pytest.raises(ValueError, match="stability cap"):
        KsConfig(domain_length=2.0, resolution=256, dt=0.5)


# -- Navier-Stokes residual ---------------------------------------------------

def test_ns_residual_zero_solution():
    cfg = NsConfig(grid_size=32, viscosity=1e-2, dt_frames=1e-3)
    res = ns_vorticity_residual(np.zeros((3, 32, 32)), cfg)
    assert np.abs(res.data).max() == 0.0
    assert res.dims == (1, 32, 32)


def test_ns_residual_taylor_green():
    n, kappa, nu, dtf = 64, 2, 1e-2, 1e-3
    cfg = NsConfig(grid_size=n, viscosity=nu, dt_frames=dtf)
    frames = np.stack([taylor_green_vorticity(n, kappa, t * dtf, nu) for t in range(3)])
    res = ns_vorticity_residual(frames, cfg)
    assert np.abs(res.data).max() < 1e-4 * np.abs(frames).max()


def test_ns_residual_detects_perturbation():
    n, nu, dtf = 32, 1e-2, 1e-3
    cfg = NsConfig(grid_size=n, viscosity=nu, dt_frames=dtf)
    frames = np.stack([taylor_green_vorticity(n, 2, t * dtf, nu) for t in range(3)])
    clean = np.abs(ns_vorticity_residual(frames, cfg).data).mean()
    noisy = frames.copy()
    noisy[1] += 0.1 * np.abs(frames).max() * RngStream(4).normal((n, n))
    loud = np.abs(ns_vorticity_residual(noisy, cfg).data).mean()
    assert loud > 10 * max(clean, 1e-300)


def test_ns_residual_linear_in_forcing():
    n = 16
    rng = RngStream(9)
    f1 = rng.normal((n, n))
    f2 = rng.normal((n, n))
    w = rng.normal((3, n, n))
    cfg_a = NsConfig(grid_size=n, viscosity=0.05, dt_frames=0.1, forcing=f1 + f2)
    cfg_b = NsConfig(grid_size=n, viscosity=0.05, dt_frames=0.1, forcing=f1)
    ga = ns_vorticity_residual(w, cfg_a).data
    gb = ns_vorticity_residual(w, cfg_b).data
    assert np.allclose(ga, gb - f2, atol=1e-12)


def test_ns_residual_requires_three_frames():
    cfg = NsConfig(grid_size=16)
    with pytest.raises(ValueError, match="3 frames"):
        ns_vorticity_residual(np.zeros((2, 16, 16)), cfg)
    with pytest.raises(ValueError):
        ns_vorticity_residual(np.zeros((3, 16, 8)), cfg)


def test_ns_residual_gradient_matches_finite_difference():
    n = 16
    rng = RngStream(12)
    forcing = 0.3 * np.cos(2 * np.arange(n) * (2 * np.pi / n))[:, None] * np.ones((1, n))
    cfg = NsConfig(grid_size=n, viscosity=5e-2, dt_frames=0.05, forcing=forcing)
    wp, wm, wn = rng.normal((3, n, n))
    grads = ns_residual_triple_grad(wp, wm, wn, cfg)

    def j(a, b, c):
        return float(np.sum(ns_residual_triple(a, b, c, cfg) ** 2))

    h = 1e-6
    picks = RngStream(13).integers(0, n, 24).reshape(12, 2)
    frames = [wp.copy(), wm.copy(), wn.copy()]
    for which in range(3):
        for i, jj in picks[:4]:
            bump = np.zeros((n, n))
            bump[i, jj] = h
            plus = [f + (bump if q == which else 0) for q, f in enumerate(frames)]
            minus = [f - (bump if q == which else 0) for q, f in enumerate(frames)]
            fd = (j(*plus) - j(*minus)) / (2 * h)
            assert grads[which][i, jj] == pytest.approx(fd, rel=1e-5, abs=1e-8)


# -- Spectral statistics -------------------------------------------------------

def test_energy_spectrum_zero_field():
    sp = energy_spectrum(np.zeros((16, 16)))
    assert sp.energy.sum() == 0.0


def test_energy_spectrum_single_mode_radial_bin():
    xs = np.arange(32) * (2 * np.pi / 32)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    sp = energy_spectrum(np.cos(3 * X + 4 * Y))
    assert sp.energy[5] == pytest.approx(sp.total(), rel=1e-12)
    assert np.delete(sp.energy, 5).max() < 1e-20


def test_energy_spectrum_parseval_white_noise():
    w = RngStream(6).normal((64, 64))
    sp = energy_spectrum(w)
    assert sp.total() == pytest.approx((w**2).mean(), rel=1e-10)


def test_energy_spectrum_quadratic_scaling():
    w = RngStream(8).normal((32, 32))
    a, b = energy_spectrum(w), energy_spectrum(3.0 * w)
    assert np.allclose(b.energy, 9.0 * a.energy, rtol=1e-12)


def test_energy_spectrum_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        energy_spectrum(np.zeros((16, 32)))


def test_histogram_constant_field():
    edges, frac = vorticity_histogram(np.full((8, 8), 0.3), 10, (-1.0, 1.0))
    assert frac.sum() == pytest.approx(1.0)
    assert frac.max() == pytest.approx(1.0)


def test_histogram_symmetric_two_values():
    f = np.array([-1.0, 1.0, -1.0, 1.0])
    _, frac = vorticity_histogram(f, 2, (-2.0, 2.0))
    assert frac.tolist() == [0.5, 0.5]


def test_histogram_clamps_outliers():
    f = np.array([-100.0, 100.0])
    _, frac = vorticity_histogram(f, 4, (-1.0, 1.0))
    assert frac[0] == 0.5 and frac[-1] == 0.5


def test_histogram_gaussian_against_analytic_cdf():
    from math import erf, sqrt

    z = RngStream(21).normal(100_000)
    edges, frac = vorticity_histogram(z, 50, (-4.0, 4.0))

    def cdf(x):
        return 0.5 * (1.0 + erf(x / sqrt(2.0)))

    expected = np.array([cdf(edges[i + 1]) - cdf(edges[i]) for i in range(50)])
    expected[0] += cdf(edges[0])          # clamped left tail
    expected[-1] += 1.0 - cdf(edges[-1])  # clamped right tail
    assert np.abs(frac - expected).max() < 0.01


def test_histogram_rejects_degenerate_range():
    with pytest.raises(ValueError, match="degenerate"):
        vorticity_histogram(np.zeros(4), 4, (1.0, 1.0))
