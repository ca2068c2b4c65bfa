"""Simplified SPM/XPM perturbation filters and total-power fluctuation spectra.

The phase noise a channel collects from the Kerr effect is modelled as the
fluctuation ``P(t) - <P>`` of a total power passed through a linear filter
whose response depends on the span (attenuation, dispersion, walk-off).
Formats are compared through the spectrum of that fluctuation alone, so only
relative quantities (dB gaps, ratios) are meaningful here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal as ss

from .channel import FiberSpec, beta2
from .constellation import LabeledConstellation4D
from .txrx import pulse_shape, symbol_rng


@dataclass(frozen=True, eq=False)
class NliFilter:
    """Frequency response of a nonlinear phase-noise filter.

    Attributes
    ----------
    freqs : ndarray
        Frequency grid in Hz.
    response : ndarray
        Complex response; ``|response|`` at DC is ``kappa * L_eff`` (km).
    kind : str
        ``"SPM"`` or ``"XPM"``.
    delta_f : float
        Carrier offset of the interfering channel in Hz (0 for SPM).
    kappa : float
        Nonlinear scale folded into the response.
    """

    freqs: np.ndarray
    response: np.ndarray
    kind: str
    delta_f: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if np.shape(self.freqs) != np.shape(self.response):
            raise ValueError("response and frequency grid differ in shape")
        if not np.all(np.isfinite(self.response)):
            raise ValueError("non-finite filter response")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.response)

    @property
    def dc_gain(self) -> float:
        return float(np.abs(np.interp(0.0, self.freqs, self.response.real)
                            + 1j * np.interp(0.0, self.freqs, self.response.imag)))

    def bandwidth_3db(self) -> float:
        """Smallest non-negative grid frequency where |H| drops below DC / sqrt(2)."""
        f = np.asarray(self.freqs)
        pos = f >= 0
        order = np.argsort(f[pos])
        fp, hp = f[pos][order], self.magnitude[pos][order]
        below = np.flatnonzero(hp < self.dc_gain / np.sqrt(2))
        if below.size == 0:
            return float("inf")
        return float(fp[below[0]])


@dataclass(frozen=True, eq=False)
class PowerFluctuationPsd:
    """Two-sided PSD of the total-power fluctuation of a pulse-shaped format.

    ``psd`` is per unit of frequency normalized to the symbol rate, for
    symbols at unit mean 4D energy. ``band_average_db`` is the mean of
    ``10 log10(psd)`` over ``|f| <= band``.
    """

    freqs: np.ndarray
    psd: np.ndarray
    band: float
    band_average_db: float
    format_name: str = ""
    symbol_rate: float = 70e9

    @property
    def in_band(self) -> np.ndarray:
        return np.abs(self.freqs) <= self.band * (1 + 1e-12)


def _check_grid(freqs):
    f = np.asarray(freqs, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("frequency grid must be a non-empty 1-D array")
    return f


def _symmetric(f: np.ndarray) -> bool:
    # FFT grids of even length carry one unpaired Nyquist bin; ignore it
    top = np.abs(f).max()
    inner = np.sort(f[np.abs(f) < top * (1 - 1e-12)])
    edge = np.sort(f[np.abs(f) >= top * (1 - 1e-12)])
    tol = 1e-9 * max(1.0, top)
    return bool(np.allclose(inner, -inner[::-1], rtol=0, atol=tol)
                and (edge.size == 1 or np.allclose(edge, -edge[::-1], rtol=0, atol=tol)))


def _span_integral(a: float, b, length: float) -> np.ndarray:
    # int_0^L exp((-a + 1j b) z) dz, with the b -> 0 and a -> 0 limits handled
    s = -a + 1j * np.asarray(b, dtype=float)
    out = np.empty(s.shape, dtype=complex)
    small = np.abs(s) * length < 1e-8
    out[small] = length * (1 + s[small] * length / 2)
    sl = s[~small]
    out[~small] = np.expm1(sl * length) / sl
    return out


def spm_filter(fiber: FiberSpec, length: float, freqs, kappa: float = 1.0) -> NliFilter:
    """Intra-channel phase-noise filter of one attenuating, dispersive span.

    The kernel is the first-order dispersion phase accumulated from the point
    of generation ``z``, ``G(f, z) = exp(1j * beta2 / 2 * (2 pi f)^2 * z)``,
    weighted by the power profile, so
    ``H(f) = kappa * int_0^L exp(-alpha z) G(f, z) dz``. ``|H(0)| = L_eff``
    and ``|H|`` is flat when the dispersion vanishes.
    """
    if length <= 0:
        raise ValueError("span length must be positive")
    f = _check_grid(freqs)
    if not _symmetric(f):
        raise ValueError("SPM grid must be symmetric about 0")
    alpha = max(fiber.alpha, 0.0)
    b = beta2(fiber) / 2 * (2 * np.pi * f) ** 2
    H = kappa * _span_integral(alpha, b, length)
    return NliFilter(f, H, "SPM", 0.0, kappa)


def xpm_filter(fiber: FiberSpec, length: float, delta_f: float, freqs,
               kappa: float = 1.0) -> NliFilter:
    """Walk-off filter of a channel ``delta_f`` Hz away.

    ``H(w) = kappa * (1 - exp((-alpha + 1j w d) L)) / (alpha - 1j w d)`` with
    ``d = 2 pi beta2 delta_f`` the walk-off per km.
    """
    if delta_f == 0:
        raise ValueError("delta_f = 0 is the SPM case; use spm_filter")
    if length <= 0:
        raise ValueError("span length must be positive")
    f = _check_grid(freqs)
    d = 2 * np.pi * beta2(fiber) * delta_f
    alpha = max(fiber.alpha, 0.0)
    H = kappa * _span_integral(alpha, 2 * np.pi * f * d, length)
    return NliFilter(f, H, "XPM", float(delta_f), kappa)


def power_fluctuation_psd(fmt: LabeledConstellation4D, rolloff: float = 0.05,
                          n_symbols: int = 2**16, seed=0, sps: int = 8,
                          nperseg: int = 4096, symbol_rate: float = 70e9,
                          band: float | None = None) -> PowerFluctuationPsd:
    """Welch PSD of ``|Ex|^2 + |Ey|^2 - mean`` for i.i.d. uniform symbols.

    Symbols are scaled to unit mean energy and RRC-shaped at ``sps`` samples
    per symbol (``rolloff=0`` with ``sps=1`` keeps the bare symbols). Welch
    uses a Hann window of ``nperseg`` samples with 50% overlap. The averaging
    band defaults to ``|f| <= (1 + rolloff) Rs / 2``.
    """
    if n_symbols < 2:
        raise ValueError("need at least two symbols")
    idx = symbol_rng(seed, 0).integers(0, len(fmt), n_symbols)
    pts = fmt.complex_points() / np.sqrt(np.mean(fmt.energies))
    wave = pulse_shape(pts[idx], sps, 1.0, rolloff)
    p = np.sum(np.abs(wave) ** 2, axis=1)
    p -= p.mean()
    seg = min(nperseg, p.size)
    fr, S = ss.welch(p, fs=sps, window="hann", nperseg=seg, noverlap=seg // 2,
                     detrend=False, return_onesided=False, scaling="density")
    order = np.argsort(fr)
    fr, S = fr[order] * symbol_rate, S[order]
    if band is None:
        band = (1 + rolloff) * symbol_rate / 2
    sel = np.abs(fr) <= band * (1 + 1e-12)
    with np.errstate(divide="ignore"):
        avg = float(np.mean(10 * np.log10(S[sel])))
    return PowerFluctuationPsd(fr, S, float(band), avg, fmt.name, symbol_rate)


def band_average_gap(reference: PowerFluctuationPsd, other: PowerFluctuationPsd) -> float:
    """``reference - other`` band-average in dB."""
    return reference.band_average_db - other.band_average_db


def predicted_phase_noise_power(psd: PowerFluctuationPsd, filt: NliFilter) -> float:
    """Relative phase-noise power: integral of PSD x |H|^2 over the averaging band."""
    if psd.freqs.shape != filt.freqs.shape or not np.allclose(psd.freqs, filt.freqs, rtol=1e-12):
        raise ValueError("PSD and filter are on different frequency grids")
    sel = psd.in_band
    df = (psd.freqs[1] - psd.freqs[0]) / psd.symbol_rate
    return float(np.sum(psd.psd[sel] * np.abs(filt.response[sel]) ** 2) * df)
