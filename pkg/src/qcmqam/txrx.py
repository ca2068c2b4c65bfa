"""WDM transmitter and ideal coherent receiver DSP.

Pulse shaping and matched filtering are done in the frequency domain over the
whole (circular) block, so the RRC filter is never truncated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .channel import FiberSpec, beta2
from .constellation import LabeledConstellation4D, bits_to_indices


@dataclass(frozen=True, eq=False)
class WaveformGrid:
    """Dual-polarization complex baseband field on a uniform time grid (sqrt(W))."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float
    center_offset: float = 0.0
    n_channels: int = 1

    def __post_init__(self):
        if np.shape(self.x) != np.shape(self.y):
            raise ValueError("polarizations differ in length")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def n_samples(self) -> int:
        return len(self.x)

    @property
    def total_power(self) -> np.ndarray:
        """Instantaneous power |Ex|^2 + |Ey|^2."""
        return np.abs(self.x) ** 2 + np.abs(self.y) ** 2

    @property
    def mean_power(self) -> float:
        return float(np.mean(self.total_power))

    @property
    def power_per_channel(self) -> float:
        return self.mean_power / self.n_channels


@dataclass(frozen=True)
class ChannelPlan:
    n_channels: int = 5
    spacing: float = 75e9
    symbol_rate: float = 70e9
    rolloff: float = 0.05

    @property
    def occupied_band(self) -> float:
        return (self.n_channels - 1) * self.spacing + self.symbol_rate * (1 + self.rolloff)

    @property
    def center_index(self) -> int:
        return self.n_channels // 2

    def offsets(self) -> np.ndarray:
        """Nominal carrier offsets from the grid center in Hz."""
        return (np.arange(self.n_channels) - (self.n_channels - 1) / 2) * self.spacing


@dataclass(frozen=True, eq=False)
class TxFrame:
    format_name: str
    indices: np.ndarray  # (n_channels, n_symbols) point indices
    bits: np.ndarray  # (n_channels, n_symbols * bits_per_symbol)
    symbols: np.ndarray  # (n_channels, n_symbols, 4)
    plan: ChannelPlan
    sps: int
    seed: int
    bin_offsets: np.ndarray  # integer FFT-bin shift of every channel

    @property
    def n_symbols(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True, eq=False)
class DspOutput:
    """Aligned transmitted/received 4D symbols of one channel."""

    tx: np.ndarray  # (n, 4)
    rx: np.ndarray  # (n, 4)
    tx_indices: np.ndarray
    scale: np.ndarray = field(default_factory=lambda: np.ones(2, complex))
    channel: int = 0
    timing: tuple = (0, 0)

    def __post_init__(self):
        if self.tx.shape != self.rx.shape:
            raise ValueError("tx and rx symbol arrays differ in shape")


class AlignmentError(RuntimeError):
    pass


def rrc_response(freqs, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Root-raised-cosine magnitude response (peak 1) at ``freqs`` in Hz."""
    af = np.abs(np.asarray(freqs, dtype=float))
    f1 = (1 - rolloff) * symbol_rate / 2
    f2 = (1 + rolloff) * symbol_rate / 2
    H = np.zeros_like(af)
    H[af <= f1] = 1.0
    if rolloff > 0:
        tr = (af > f1) & (af < f2)
        H[tr] = np.sqrt(0.5 * (1 + np.cos(np.pi / (rolloff * symbol_rate) * (af[tr] - f1))))
    return H


def symbol_rng(seed, channel: int) -> np.random.Generator:
    """Counter-based bit source for one WDM channel."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0, channel))))


def pulse_shape(symbols: np.ndarray, sps: int, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Upsample ``(n, 2)`` complex symbols by ``sps`` and apply RRC shaping.

    The output has the symbols' mean power.
    """
    n = symbols.shape[0]
    up = np.zeros((n * sps, symbols.shape[1]), dtype=complex)
    up[::sps] = symbols
    f = sfft.fftfreq(n * sps, 1 / (sps * symbol_rate))
    H = rrc_response(f, symbol_rate, rolloff) * sps
    return sfft.ifft(sfft.fft(up, axis=0) * H[:, None], axis=0)


def transmit(fmt: LabeledConstellation4D, plan: ChannelPlan, n_symbols: int, sps: int = 8,
             seed=0) -> tuple[TxFrame, WaveformGrid]:
    """Generate the WDM field; every channel has unit mean power (1 W) at this point."""
    if n_symbols < 2 or n_symbols & (n_symbols - 1):
        raise ValueError("n_symbols must be a power of two")
    fs = sps * plan.symbol_rate
    if plan.occupied_band >= fs:
        raise ValueError(
            f"WDM band {plan.occupied_band / 1e9:.1f} GHz exceeds the sample rate {fs / 1e9:.1f} GHz"
        )
    n = n_symbols * sps
    df = fs / n
    bins = np.rint(plan.offsets() / df).astype(int)
    f = sfft.fftfreq(n, 1 / fs)
    H = rrc_response(f, plan.symbol_rate, plan.rolloff) * sps
    k = fmt.bits_per_symbol
    scale = 1 / np.sqrt(np.mean(fmt.energies))

    all_bits, all_idx, all_sym = [], [], []
    spec = np.zeros((2, n), dtype=complex)
    for ch in range(plan.n_channels):
        bits = symbol_rng(seed, ch).integers(0, 2, n_symbols * k, dtype=np.uint8)
        idx = bits_to_indices(fmt, bits)
        sym = fmt.points[idx] * scale
        up = np.zeros((2, n), dtype=complex)
        up[0, ::sps] = sym[:, 0] + 1j * sym[:, 1]
        up[1, ::sps] = sym[:, 2] + 1j * sym[:, 3]
        spec += np.roll(sfft.fft(up, axis=1) * H, bins[ch], axis=1)
        all_bits.append(bits)
        all_idx.append(idx)
        all_sym.append(sym)
    field_xy = sfft.ifft(spec, axis=1)
    frame = TxFrame(fmt.name, np.array(all_idx), np.array(all_bits), np.array(all_sym), plan,
                    sps, seed, bins)
    wave = WaveformGrid(field_xy[0], field_xy[1], fs, 0.0, plan.n_channels)
    return frame, wave


def set_launch_power(wave: WaveformGrid, p_per_channel_dbm: float) -> WaveformGrid:
    """Rescale so the mean power per channel equals ``p_per_channel_dbm``."""
    target = 1e-3 * 10 ** (p_per_channel_dbm / 10)
    s = np.sqrt(target / wave.power_per_channel)
    return replace(wave, x=wave.x * s, y=wave.y * s)


def cd_compensate(wave: WaveformGrid, fiber: FiberSpec, length: float) -> WaveformGrid:
    """Undo the all-pass dispersion of ``length`` km of ``fiber`` exactly."""
    if length == 0:
        return wave
    w = 2 * np.pi * sfft.fftfreq(wave.n_samples, 1 / wave.sample_rate)
    H = np.exp(-0.5j * beta2(fiber) * w**2 * length)
    return replace(wave, x=sfft.ifft(sfft.fft(wave.x) * H), y=sfft.ifft(sfft.fft(wave.y) * H))


def _align(r: np.ndarray, ref: np.ndarray, sps: int):
    # r: matched-filtered samples at sps; ref: transmitted X symbols
    n = len(ref)
    R = np.conj(sfft.fft(ref))
    corr = np.empty((sps, n))
    for p in range(sps):
        corr[p] = np.abs(sfft.ifft(sfft.fft(r[p::sps][:n]) * R))
    full = corr.T.ravel()  # full-rate lag tau = p + sps * lag
    tau = int(np.argmax(full))
    peak = full[tau]
    dist = np.abs((np.arange(full.size) - tau + full.size // 2) % full.size - full.size // 2)
    second = full[dist >= sps].max() if full.size > 2 * sps else 0.0
    p, lag = tau % sps, tau // sps
    if not peak > 3 * second:
        raise AlignmentError(f"no unique correlation peak ({peak:.3g} vs {second:.3g})")
    return int(p), int(lag)


def receive(wave: WaveformGrid, frame: TxFrame, fiber: FiberSpec | None = None,
            length: float = 0.0, channel: int | None = None) -> DspOutput:
    """CD compensation, channel selection, matched RRC, downsampling and phase/scale removal."""
    plan = frame.plan
    if channel is None:
        channel = plan.center_index
    if not 0 <= channel < plan.n_channels:
        raise IndexError(f"channel {channel} outside 0..{plan.n_channels - 1}")
    if fiber is not None and length:
        wave = cd_compensate(wave, fiber, length)
    sps = frame.sps
    n = wave.n_samples
    f = sfft.fftfreq(n, 1 / wave.sample_rate)
    H = rrc_response(f, plan.symbol_rate, plan.rolloff)
    out = []
    for pol in (wave.x, wave.y):
        S = np.roll(sfft.fft(pol), -frame.bin_offsets[channel])
        out.append(sfft.ifft(S * H))
    zx, zy = out

    tx = frame.symbols[channel]
    tx_c = np.stack([tx[:, 0] + 1j * tx[:, 1], tx[:, 2] + 1j * tx[:, 3]], axis=1)
    p, lag = _align(zx, tx_c[:, 0], sps)
    n_sym = frame.n_symbols
    r = np.stack([np.roll(zx[p::sps][:n_sym], -lag), np.roll(zy[p::sps][:n_sym], -lag)], axis=1)

    # least-squares fit r ~ h * x per polarization
    h = np.sum(np.conj(tx_c) * r, axis=0) / np.sum(np.abs(tx_c) ** 2, axis=0)
    y = r / h
    rx = np.stack([y[:, 0].real, y[:, 0].imag, y[:, 1].real, y[:, 1].imag], axis=1)
    return DspOutput(tx.copy(), rx, frame.indices[channel].copy(), 1 / h, channel, (p, lag))


_WAVE_MAGIC = b"QCMW"


def dump_waveform(wave: WaveformGrid, path) -> None:
    """Little-endian complex64 samples interleaved X/Y after a 32-byte header."""
    hdr = struct.pack("<4sIddQ", _WAVE_MAGIC, 1, wave.sample_rate, wave.center_offset,
                      wave.n_samples)
    data = np.empty(2 * wave.n_samples, dtype="<c8")
    data[0::2] = wave.x
    data[1::2] = wave.y
    Path(path).write_bytes(hdr + data.tobytes())


def load_waveform(path) -> WaveformGrid:
    raw = Path(path).read_bytes()
    magic, _ver, rate, offset, n = struct.unpack_from("<4sIddQ", raw)
    if magic != _WAVE_MAGIC:
        raise ValueError("not a waveform dump")
    data = np.frombuffer(raw, dtype="<c8", offset=struct.calcsize("<4sIddQ"), count=2 * n)
    return WaveformGrid(data[0::2].astype(complex), data[1::2].astype(complex), rate, offset)
