import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcmqam.channel import FIBER_PRESETS, FiberSpec, beta2
from qcmqam.constellation import get_format
from qcmqam.nli_analysis import (
    NliFilter, band_average_gap, power_fluctuation_psd, predicted_phase_noise_power, spm_filter,
    xpm_filter,
)

SSMF = FIBER_PRESETS["SSMF"]
NZDSF = FIBER_PRESETS["NZDSF"]
F = np.fft.fftshift(np.fft.fftfreq(4096, 1 / 560e9))
BAND = 1.05 * 70e9 / 2


def test_spm_dc_is_effective_length():
    a = 0.21 * np.log(10) / 10
    oracle = (1 - np.exp(-a * 80)) / a
    h = spm_filter(SSMF, 80.0, F)
    assert abs(h.dc_gain - oracle) < 1e-9
    assert abs(h.dc_gain - 20.248608766492126) < 1e-9


def test_spm_flat_without_dispersion():
    h = spm_filter(FiberSpec(0.21, 0.0, 1.31), 80.0, F)
    assert np.allclose(h.magnitude, h.dc_gain, rtol=1e-12)
    assert h.bandwidth_3db() == float("inf")


@pytest.mark.parametrize("fiber", [SSMF, NZDSF])
def test_spm_monotone_in_signal_band(fiber):
    h = spm_filter(fiber, 80.0, F)
    pos = (F >= 0) & (F <= BAND)
    assert np.all(np.diff(h.magnitude[pos]) <= 1e-12)


def test_spm_even_in_frequency():
    h = spm_filter(SSMF, 80.0, F)
    inner = slice(1, None)  # drop the unpaired Nyquist bin
    assert np.allclose(h.response[inner], h.response[inner][::-1], rtol=1e-12)


def test_spm_lossless_sinc_limit():
    fib = FiberSpec(0.0, 16.9, 1.31)
    L = 80.0
    h = spm_filter(fib, L, F)
    b = beta2(fib) / 2 * (2 * np.pi * F) ** 2
    oracle = L * np.abs(np.sinc(b * L / (2 * np.pi)))
    assert np.allclose(h.magnitude, oracle, rtol=1e-9, atol=1e-9)


def test_xpm_lossless_sinc_limit_and_mirror():
    fib = FiberSpec(0.0, 16.9, 1.31)
    L, df = 80.0, 75e9
    h = xpm_filter(fib, L, df, F)
    d = 2 * np.pi * beta2(fib) * df
    oracle = L * np.abs(np.sinc(2 * np.pi * F * d * L / (2 * np.pi)))
    assert np.allclose(h.magnitude, oracle, rtol=1e-9, atol=1e-9)
    lossy = xpm_filter(SSMF, L, df, F)
    assert np.allclose(lossy.response[1:][::-1], np.conj(lossy.response[1:]), rtol=1e-12)


def test_xpm_narrower_than_spm():
    spm = spm_filter(SSMF, 80.0, F)
    xpm = xpm_filter(SSMF, 80.0, 75e9, F)
    assert np.isclose(xpm.dc_gain, spm.dc_gain, rtol=1e-12)
    assert xpm.bandwidth_3db() < spm.bandwidth_3db() / 5


def test_filter_validation():
    with pytest.raises(ValueError):
        xpm_filter(SSMF, 80.0, 0.0, F)
    with pytest.raises(ValueError):
        spm_filter(SSMF, 0.0, F)
    with pytest.raises(ValueError):
        spm_filter(SSMF, 80.0, np.linspace(0, 1e9, 11))
    with pytest.raises(ValueError):
        NliFilter(F, np.ones(3), "SPM")
    with pytest.raises(ValueError):
        NliFilter(F[:2], np.array([1.0, np.nan]), "SPM")


def test_constant_modulus_has_no_fluctuation():
    psd = power_fluctuation_psd(get_format("PM-QPSK"), rolloff=0.0, sps=1, n_symbols=2**14,
                                nperseg=1024)
    assert psd.psd.max() < 1e-25


@pytest.fixture(scope="module")
def psd_512():
    return {n: power_fluctuation_psd(get_format(n), n_symbols=2**15, seed=4)
            for n in ("512QCM-QAM", "512SP-QAM")}


def test_psd_relabel_and_rotation_invariant(psd_512):
    fmt = get_format("512QCM-QAM")
    ref = psd_512["512QCM-QAM"]
    lab = fmt.labels[np.random.default_rng(0).permutation(len(fmt))]
    a = power_fluctuation_psd(fmt.relabeled(lab), n_symbols=2**15, seed=4)
    b = power_fluctuation_psd(fmt.rotated(0.7), n_symbols=2**15, seed=4)
    assert np.array_equal(a.psd, ref.psd)
    assert np.allclose(b.psd, ref.psd, rtol=1e-9, atol=1e-12 * ref.psd.max())


def test_psd_converged_in_length(psd_512):
    ref = psd_512["512SP-QAM"]
    big = power_fluctuation_psd(get_format("512SP-QAM"), n_symbols=2**16, seed=4)
    assert abs(big.band_average_db - ref.band_average_db) < 0.1


def test_qcm_below_sp(psd_512):
    qcm, sp = psd_512["512QCM-QAM"], psd_512["512SP-QAM"]
    assert band_average_gap(sp, qcm) > 2.0
    h = spm_filter(SSMF, 80.0, qcm.freqs)
    assert predicted_phase_noise_power(qcm, h) < 0.5 * predicted_phase_noise_power(sp, h)


@given(st.floats(0.1, 10.0))
@settings(max_examples=10, deadline=None)
def test_phase_noise_quadratic_in_kappa(k):
    psd = power_fluctuation_psd(get_format("PM-16QAM"), n_symbols=2**12, nperseg=1024)
    p1 = predicted_phase_noise_power(psd, spm_filter(SSMF, 80.0, psd.freqs))
    pk = predicted_phase_noise_power(psd, spm_filter(SSMF, 80.0, psd.freqs, kappa=k))
    assert np.isclose(pk, k**2 * p1, rtol=1e-10)


def test_grid_mismatch_raises(psd_512):
    other = np.fft.fftshift(np.fft.fftfreq(2048, 1 / 560e9))
    with pytest.raises(ValueError):
        predicted_phase_noise_power(psd_512["512SP-QAM"], spm_filter(SSMF, 80.0, other))
