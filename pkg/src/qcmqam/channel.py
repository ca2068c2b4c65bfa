"""Dual-polarization fiber channel: Manakov split-step propagation and EDFA.

Conventions
-----------
Fields are complex envelopes in sqrt(W) sampled on a uniform grid. Spectra
use numpy's FFT convention; the linear operator of a fiber section of length
``h`` is ``exp(-alpha h / 2 + 1j * beta2 / 2 * w**2 * h)`` and the Kerr
operator is ``exp(+1j * 8/9 * gamma * (|Ex|^2 + |Ey|^2) * h)``, which is the
physics-convention NLSE written for numpy's transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numba
import numpy as np
import scipy.constants as const
import scipy.fft as sfft

log = logging.getLogger(__name__)

MANAKOV_FACTOR = 8.0 / 9.0


@dataclass(frozen=True)
class FiberSpec:
    """Physical fiber parameters.

    attenuation in dB/km, dispersion in ps/(nm km), gamma in 1/(W km),
    wavelength in nm.
    """

    attenuation: float
    dispersion: float
    gamma: float
    wavelength: float = 1550.0
    name: str = "custom"

    def __post_init__(self):
        if self.attenuation < 0:
            raise ValueError("attenuation must be non-negative")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")

    @property
    def alpha(self) -> float:
        """Power attenuation coefficient in 1/km."""
        return self.attenuation * np.log(10) / 10

    @property
    def frequency(self) -> float:
        return const.c / (self.wavelength * 1e-9)


FIBER_PRESETS = {
    "SSMF": FiberSpec(0.21, 16.9, 1.31, 1550.0, "SSMF"),
    "NZDSF": FiberSpec(0.2, 3.9, 1.6, 1550.0, "NZDSF"),
}


def beta2(fiber: FiberSpec) -> float:
    """Group-velocity dispersion in s^2/km from D via -D lambda^2 / (2 pi c)."""
    D = fiber.dispersion * 1e-12 / 1e-9  # s/(m km)
    lam = fiber.wavelength * 1e-9
    return -D * lam**2 / (2 * np.pi * const.c)


def effective_length(alpha: float, length: float) -> float:
    """(1 - exp(-alpha L)) / alpha, falling back to L when alpha <= 0."""
    if alpha <= 0:
        return float(length)
    return float(-np.expm1(-alpha * length) / alpha)


@dataclass(frozen=True)
class LinkConfig:
    """A fiber link terminated by EDFAs.

    ``n_spans`` equal spans of ``length / n_spans`` km each, every span
    followed by an amplifier whose gain equals the span loss. A noise figure
    of 0 disables ASE (noiseless test mode). Steps are adaptive (bounded by
    ``max_nl_phase`` rad and ``max_step`` km) unless ``fixed_step`` is set.
    """

    fiber: FiberSpec
    length: float
    noise_figure: float = 4.5
    n_spans: int = 1
    max_nl_phase: float = 1e-3
    max_step: float = 0.5
    fixed_step: float | None = None
    amplify: bool = True

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("link length must be positive")
        if self.noise_figure != 0 and self.noise_figure < 3:
            raise ValueError("noise figure below 3 dB is unphysical (use 0 for noiseless)")
        if self.n_spans < 1:
            raise ValueError("need at least one span")

    @property
    def span_length(self) -> float:
        return self.length / self.n_spans


def make_link(preset: str, length: float, **overrides) -> LinkConfig:
    """Link with the SSMF/NZDSF fiber preset and 4.5 dB EDFA noise figure."""
    try:
        fiber = FIBER_PRESETS[preset.upper()]
    except KeyError:
        raise KeyError(f"unknown fiber preset {preset!r}") from None
    fiber_keys = {"attenuation", "dispersion", "gamma", "wavelength"}
    fo = {k: v for k, v in overrides.items() if k in fiber_keys}
    lo = {k: v for k, v in overrides.items() if k not in fiber_keys}
    if fo:
        fiber = replace(fiber, **fo)
    return LinkConfig(fiber, float(length), **lo)


class StepSizeError(RuntimeError):
    pass


@numba.njit(cache=True)
def _kerr_step(x, y, coeff):
    for i in range(x.size):
        xr, xi, yr, yi = x[i].real, x[i].imag, y[i].real, y[i].imag
        phi = coeff * (xr * xr + xi * xi + yr * yr + yi * yi)
        c, s = np.cos(phi), np.sin(phi)
        x[i] = complex(xr * c - xi * s, xr * s + xi * c)
        y[i] = complex(yr * c - yi * s, yr * s + yi * c)


@numba.njit(cache=True)
def _apply_linear(X, Y, w2, half_b2, half_alpha, h):
    for i in range(X.size):
        ph = half_b2 * w2[i] * h
        a = np.exp(-half_alpha * h)
        r = complex(a * np.cos(ph), a * np.sin(ph))
        X[i] *= r
        Y[i] *= r


def _step_sizes(p_mean: float, fiber: FiberSpec, length: float, max_phase: float,
                max_step: float, fixed_step: float | None = None) -> list:
    # nonlinear phase per step is measured with the mean power at the step start
    g = MANAKOV_FACTOR * fiber.gamma
    if fixed_step is not None:
        n = int(np.ceil(length / fixed_step - 1e-9))
        steps = [length / n] * n
        worst = g * p_mean * steps[0]
        if worst > max_phase * (1 + 1e-9):
            raise StepSizeError(
                f"fixed step {steps[0]:.4g} km gives {worst:.3g} rad nonlinear phase "
                f"per step (limit {max_phase:.3g} rad)"
            )
        return steps
    alpha = fiber.alpha
    steps, z = [], 0.0
    while z < length - 1e-12:
        p = p_mean * np.exp(-alpha * z)
        h = max_step if g * p == 0 else min(max_step, max_phase / (g * p))
        h = min(h, length - z)
        steps.append(h)
        z += h
    return steps


def propagate_span(wave, fiber: FiberSpec, length: float,
                   max_nl_phase: float = 1e-3, max_step: float = 0.5,
                   fixed_step: float | None = None):
    """Symmetric split-step solution of the Manakov equation over one span."""
    n = wave.n_samples
    w = 2 * np.pi * sfft.fftfreq(n, 1 / wave.sample_rate)
    w2 = w**2
    half_b2 = beta2(fiber) / 2
    half_alpha = fiber.alpha / 2
    g = MANAKOV_FACTOR * fiber.gamma

    x = np.array(wave.x, dtype=np.complex128)
    y = np.array(wave.y, dtype=np.complex128)
    p_mean = float(np.mean(np.abs(x) ** 2 + np.abs(y) ** 2))
    steps = _step_sizes(p_mean, fiber, length, max_nl_phase, max_step, fixed_step)

    X, Y = sfft.fft(x), sfft.fft(y)
    pending = steps[0] / 2
    for k, h in enumerate(steps):
        _apply_linear(X, Y, w2, half_b2, half_alpha, pending)
        if g != 0:
            x, y = sfft.ifft(X), sfft.ifft(Y)
            _kerr_step(x, y, g * h)
            X, Y = sfft.fft(x), sfft.fft(y)
        nxt = steps[k + 1] / 2 if k + 1 < len(steps) else 0.0
        pending = h / 2 + nxt
    _apply_linear(X, Y, w2, half_b2, half_alpha, pending)
    log.debug("span of %.1f km in %d steps", length, len(steps))
    return replace(wave, x=sfft.ifft(X), y=sfft.ifft(Y))


def ase_psd(gain_lin: float, noise_figure: float, frequency: float) -> float:
    """ASE power spectral density per polarization, (G - 1) h nu n_sp, in W/Hz."""
    if noise_figure == 0:
        return 0.0
    n_sp = 10 ** (noise_figure / 10) / 2
    return (gain_lin - 1) * const.h * frequency * n_sp


def amplify(wave, gain_lin: float, noise_figure: float, frequency: float,
            rng: np.random.Generator):
    """Flat gain plus circular complex Gaussian ASE on each polarization."""
    s = np.sqrt(gain_lin)
    x, y = wave.x * s, wave.y * s
    var = ase_psd(gain_lin, noise_figure, frequency) * wave.sample_rate
    if var > 0:
        sd = np.sqrt(var / 2)
        n = rng.standard_normal((4, wave.n_samples)) * sd
        x = x + (n[0] + 1j * n[1])
        y = y + (n[2] + 1j * n[3])
    return replace(wave, x=x, y=y)


def propagate(wave, link: LinkConfig, seed=0):
    """Propagate through every span of ``link`` and its amplifiers.

    Amplifier gain equals the span loss, so the launch power is restored at
    each amplifier output. The ASE realization depends only on ``seed``.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(1,))))
    fiber = link.fiber
    out = wave
    for _ in range(link.n_spans):
        out = propagate_span(out, fiber, link.span_length, link.max_nl_phase,
                             link.max_step, link.fixed_step)
        if link.amplify:
            gain = float(np.exp(fiber.alpha * link.span_length))
            out = amplify(out, gain, link.noise_figure, fiber.frequency, rng)
    return out
