import numpy as np
import pytest
import scipy.constants as const
from hypothesis import given, settings
from hypothesis import strategies as st

from qcmqam.channel import (
    FIBER_PRESETS, MANAKOV_FACTOR, FiberSpec, LinkConfig, StepSizeError, ase_psd, beta2,
    effective_length, make_link, propagate, propagate_span,
)
from qcmqam.txrx import WaveformGrid

SSMF = FIBER_PRESETS["SSMF"]


def random_wave(n=4096, fs=100e9, power=1e-3, seed=0):
    rng = np.random.default_rng(seed)
    x = (rng.normal(size=n) + 1j * rng.normal(size=n)) * np.sqrt(power / 4)
    y = (rng.normal(size=n) + 1j * rng.normal(size=n)) * np.sqrt(power / 4)
    return WaveformGrid(x, y, fs)


def test_beta2_ssmf():
    # ps^2/km from D [ps/(nm km)], lambda [nm] and c [nm/ps]
    c_nm_ps = const.c * 1e9 / 1e12
    expected = -16.9 * 1550.0**2 / (2 * np.pi * c_nm_ps) * 1e-24
    assert np.isclose(beta2(SSMF), expected, rtol=1e-12)
    assert np.isclose(beta2(SSMF), -2.1555e-23, rtol=1e-3)


def test_effective_length():
    a = SSMF.alpha
    assert np.isclose(effective_length(a, 80.0), (1 - np.exp(-a * 80)) / a)
    assert effective_length(0.0, 80.0) == 80.0
    assert np.isclose(effective_length(1e-12, 80.0), 80.0, rtol=1e-9)


def test_presets_and_overrides():
    link = make_link("nzdsf", 183, gamma=2.0, noise_figure=5.0)
    assert link.fiber.dispersion == 3.9 and link.fiber.gamma == 2.0
    assert link.noise_figure == 5.0
    with pytest.raises(KeyError):
        make_link("DSF", 10)


def test_link_validation():
    with pytest.raises(ValueError):
        LinkConfig(SSMF, 0.0)
    with pytest.raises(ValueError):
        LinkConfig(SSMF, 10.0, noise_figure=2.0)
    with pytest.raises(ValueError):
        LinkConfig(SSMF, 10.0, n_spans=0)
    assert LinkConfig(SSMF, 160.0, n_spans=2).span_length == 80.0


def test_linear_lossless_is_all_pass():
    fib = FiberSpec(0.0, 16.9, 0.0)
    w = random_wave()
    out = propagate_span(w, fib, 50.0)
    assert np.isclose(out.mean_power, w.mean_power, rtol=1e-12)
    # undoing the dispersion recovers the input
    f = np.fft.fftfreq(w.n_samples, 1 / w.sample_rate)
    H = np.exp(-0.5j * beta2(fib) * (2 * np.pi * f) ** 2 * 50.0)
    back = np.fft.ifft(np.fft.fft(out.x) * H)
    assert np.max(np.abs(back - w.x)) < 1e-12


def test_energy_conserved_without_loss():
    fib = FiberSpec(0.0, 16.9, 1.31)
    w = random_wave(power=50e-3)
    link = LinkConfig(fib, 40.0, noise_figure=0.0)
    out = propagate(w, link)
    assert abs(out.mean_power / w.mean_power - 1) < 1e-6


def test_pure_spm_phase():
    fib = FiberSpec(0.0, 0.0, 1.31)
    w = random_wave(power=20e-3)
    L = 30.0
    out = propagate(w, LinkConfig(fib, L, noise_figure=0.0))
    phi = MANAKOV_FACTOR * fib.gamma * L * w.total_power
    err_x = np.angle(out.x * np.conj(w.x * np.exp(1j * phi)))
    err_y = np.angle(out.y * np.conj(w.y * np.exp(1j * phi)))
    assert max(np.abs(err_x).max(), np.abs(err_y).max()) < 1e-4
    assert np.allclose(np.abs(out.x), np.abs(w.x), rtol=1e-9)


def test_loss_in_db():
    fib = FiberSpec(0.21, 16.9, 0.0)
    w = random_wave()
    out = propagate(w, LinkConfig(fib, 80.0, amplify=False))
    loss_db = 10 * np.log10(w.mean_power / out.mean_power)
    assert np.isclose(loss_db, 0.21 * 80.0, rtol=1e-9)


def test_amplifier_restores_power_noiseless():
    w = random_wave()
    out = propagate(w, LinkConfig(FiberSpec(0.21, 16.9, 0.0), 80.0, noise_figure=0.0))
    assert np.isclose(out.mean_power, w.mean_power, rtol=1e-9)


def test_step_halving_converges():
    w = random_wave(n=8192, fs=560e9, power=30e-3, seed=4)
    a = propagate_span(w, SSMF, 20.0, max_nl_phase=1e-3)
    b = propagate_span(w, SSMF, 20.0, max_nl_phase=5e-4)
    rel = np.sqrt(np.sum(np.abs(a.x - b.x) ** 2 + np.abs(a.y - b.y) ** 2)
                  / np.sum(np.abs(b.x) ** 2 + np.abs(b.y) ** 2))
    assert rel < 1e-3


def test_fixed_step_limit():
    w = random_wave(power=0.1)
    with pytest.raises(StepSizeError):
        propagate_span(w, SSMF, 10.0, fixed_step=0.5)
    out = propagate_span(w, SSMF, 1.0, fixed_step=0.005)
    assert out.n_samples == w.n_samples


def test_ase_variance():
    n = 2**20
    fs = 560e9
    zero = WaveformGrid(np.zeros(n, complex), np.zeros(n, complex), fs)
    link = LinkConfig(SSMF, 80.0)
    gain = np.exp(SSMF.alpha * 80.0)
    expected = (gain - 1) * const.h * SSMF.frequency * 10 ** (4.5 / 10) / 2 * fs
    # no signal: propagate only attenuates zeros, then the EDFA adds noise
    out = propagate(zero, link, seed=11)
    for pol in (out.x, out.y):
        assert abs(np.var(pol) / expected - 1) < 0.01
    assert np.isclose(ase_psd(gain, 4.5, SSMF.frequency) * fs, expected)
    assert ase_psd(gain, 0.0, SSMF.frequency) == 0.0


def test_deterministic_noise():
    w = random_wave()
    link = LinkConfig(FiberSpec(0.21, 16.9, 0.0), 50.0)
    a, b = propagate(w, link, seed=3), propagate(w, link, seed=3)
    c = propagate(w, link, seed=4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.x, c.x)


@given(st.integers(0, 2**32 - 1), st.floats(1.0, 60.0))
@settings(max_examples=15, deadline=None)
def test_dispersion_keeps_energy(seed, length):
    w = random_wave(n=1024, seed=seed)
    out = propagate_span(w, FiberSpec(0.0, 3.9, 0.0), length)
    assert np.isclose(out.mean_power, w.mean_power, rtol=1e-10)
