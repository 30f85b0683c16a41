"""Microphone signals for a moving rigid-sphere array.

Each source is a far-field plane wave. Every ``filter_update_interval`` the
direction of each source in the array frame (and the array position) is
re-evaluated, a per-microphone FIR is built from the rigid-sphere
frequency response, and that block of output samples is produced by
overlap-save filtering. Filters switch hard at block boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import signal as sps

from .errors import AliasingError, ConfigurationError, UndefinedSNRError
from .motion import Trajectory
from .spectral import STFTParams, stft
from .steering import SPEED_OF_SOUND, ArrayGeometry, mode_strength, sph_to_cart

FIR_LENGTH = 512
FFT_LENGTH = 1024
TAPER = 64
SPEECH_BAND = (300.0, 3400.0)
SOURCE_KINDS = ("tone", "am_tone", "fm_tone", "wideband")


@dataclass(frozen=True)
class SourceSpec:
    kind: str = "tone"
    frequency: float = 3100.0
    am_level: float = 0.0  # dB, max/min envelope ratio
    fm_deviation: float = 0.0  # Hz
    mod_rate: float = 3.0  # Hz
    direction: tuple = (math.pi / 2, 0.0)  # (theta, phi) radians, reference frame
    amplitude: float = 1.0
    band: tuple = SPEECH_BAND
    seed: int = 0  # wideband waveform only

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigurationError(f"unknown source kind {self.kind!r}")
        if self.mod_rate < 0:
            raise ConfigurationError("modulation rate must be non-negative")
        if self.am_level < 0:
            raise ConfigurationError("AM level must be non-negative")
        theta = self.direction[0]
        if not 0 <= theta <= math.pi:
            raise ConfigurationError(f"source polar angle {theta} outside [0, pi]")


@dataclass(frozen=True)
class MotionSpec:
    """Array motion over time.

    ``rotate_z`` turns the array about +z at ``angular_velocity`` deg/s so
    that its orientation is the identity at ``reference_time``.
    ``trajectory`` holds the pose of the frame whose centre is nearest in
    time, using ``stft`` to locate frame centres.
    """

    mode: str = "static"
    angular_velocity: float = 0.0  # deg/s
    filter_update_interval: float = 1e-3  # s
    reference_time: float = 0.0  # s
    trajectory: Trajectory | None = None
    stft: STFTParams | None = None

    def __post_init__(self):
        if self.mode not in ("static", "rotate_z", "trajectory"):
            raise ConfigurationError(f"unknown motion mode {self.mode!r}")
        if not self.filter_update_interval > 0:
            raise ConfigurationError("filter update interval must be positive")
        if self.mode == "trajectory" and (self.trajectory is None or self.stft is None):
            raise ConfigurationError("trajectory motion needs a trajectory and STFT parameters")

    def poses(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Orientation matrices ``(n, 3, 3)`` and positions ``(n, 3)`` at ``times``."""
        times = np.asarray(times, dtype=float)
        n = times.size
        if self.mode == "static":
            return np.broadcast_to(np.eye(3), (n, 3, 3)), np.zeros((n, 3))
        if self.mode == "rotate_z":
            ang = np.radians(self.angular_velocity) * (times - self.reference_time)
            c, s = np.cos(ang), np.sin(ang)
            rot = np.zeros((n, 3, 3))
            rot[:, 0, 0], rot[:, 0, 1] = c, -s
            rot[:, 1, 0], rot[:, 1, 1] = s, c
            rot[:, 2, 2] = 1.0
            return rot, np.zeros((n, 3))
        p = self.stft
        frame = np.rint((times * p.fs - p.frame_length / 2) / p.hop).astype(int)
        frame = np.clip(frame, 0, len(self.trajectory) - 1)
        rots = np.array(self.trajectory.absolute_rotations())
        pos = np.array(self.trajectory.absolute_positions())
        return rots[frame], pos[frame]


@dataclass(frozen=True)
class NoiseSpec:
    snr: float = math.inf  # dB
    bandwidth: str = "wideband"  # or "narrowband"
    bin_hz: float | None = None
    seed: int = 0
    kind: str = "white_gaussian"

    def __post_init__(self):
        if self.kind != "white_gaussian":
            raise ConfigurationError(f"unsupported noise kind {self.kind!r}")
        if self.bandwidth not in ("wideband", "narrowband"):
            raise ConfigurationError(f"unknown noise bandwidth {self.bandwidth!r}")
        if math.isnan(self.snr):
            raise ConfigurationError("SNR must not be NaN")
        if self.bandwidth == "narrowband" and self.bin_hz is None:
            raise ConfigurationError("narrowband SNR needs the analysis frequency bin_hz")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for stream ``keys`` under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=keys)))


# ---------------------------------------------------------------------------
# sources

def make_source(spec: SourceSpec, duration: float | None = None, fs: float = 10000.0,
                times: np.ndarray | None = None) -> np.ndarray:
    """Source waveform on ``times`` (seconds), or on ``[0, duration)`` at ``fs``."""
    if times is None:
        if duration is None or not duration > 0:
            raise ConfigurationError("duration must be positive")
        times = np.arange(int(round(duration * fs))) / fs
    t = np.asarray(times, dtype=float)
    nyq = fs / 2
    a = spec.amplitude
    if spec.kind == "wideband":
        low, high = spec.band
        if high >= nyq:
            raise AliasingError(f"band edge {high} Hz is not below fs/2 = {nyq} Hz")
        return a * _bandlimited_noise(t.size, low, high, fs, spec.seed)
    if spec.frequency >= nyq:
        raise AliasingError(f"frequency {spec.frequency} Hz is not below fs/2 = {nyq} Hz")
    if spec.kind == "fm_tone" and spec.frequency + spec.fm_deviation >= nyq:
        raise AliasingError("FM peak frequency is not below fs/2")
    phase = 2 * np.pi * spec.frequency * t
    if spec.kind == "fm_tone" and spec.fm_deviation and spec.mod_rate:
        # instantaneous frequency f + dev * sin(2 pi fm t)
        phase = phase + spec.fm_deviation / spec.mod_rate * (1 - np.cos(2 * np.pi * spec.mod_rate * t))
    out = a * np.sin(phase)
    if spec.kind == "am_tone" and spec.am_level:
        ratio = 10 ** (spec.am_level / 20)
        depth = (ratio - 1) / (ratio + 1)
        out = out * (1 + depth * np.sin(2 * np.pi * spec.mod_rate * t))
    return out


def _bandlimited_noise(n: int, low: float, high: float, fs: float, seed: int) -> np.ndarray:
    margin = 2048
    raw = make_rng(seed, 0x5eed).standard_normal(n + 2 * margin)
    sos = sps.butter(8, [low, high], btype="bandpass", fs=fs, output="sos")
    out = sps.sosfiltfilt(sos, raw)[margin: margin + n]
    return out / np.sqrt(np.mean(out ** 2))


# ---------------------------------------------------------------------------
# synthesis

def _taper_window(length: int = FIR_LENGTH, taper: int = TAPER) -> np.ndarray:
    ham = np.hamming(2 * taper)
    win = np.ones(length)
    win[:taper] = ham[:taper]
    win[-taper:] = ham[taper:]
    return win


def _legendre_table(x: np.ndarray, order: int) -> np.ndarray:
    out = np.empty((order + 1,) + x.shape)
    out[0] = 1.0
    if order:
        out[1] = x
    for n in range(2, order + 1):
        out[n] = ((2 * n - 1) * x * out[n - 1] - (n - 1) * out[n - 2]) / n
    return out


def _series_weights(radius: float, fs: float, c: float):
    freqs = np.fft.rfftfreq(FIR_LENGTH, 1 / fs)
    k = 2 * np.pi * freqs / c
    order = int(math.ceil(k[-1] * radius)) + 25
    n = np.arange(order + 1)
    w = np.array([mode_strength(order, kk * radius) for kk in k]) * (2 * n + 1) / (4 * np.pi)
    return k, w


def synth_moving_array(geom: ArrayGeometry, motion: MotionSpec, sources, duration: float,
                       fs: float = 10000.0, c: float = SPEED_OF_SOUND,
                       chunk_blocks: int = 256) -> np.ndarray:
    """Synthesize ``(M, round(duration * fs))`` microphone signals.

    Output sample ``t`` carries the source waveform at time ``t / fs``; the
    FIR delay is compensated by running the source ahead. The pose used
    for a block is the one at the block's centre time.
    """
    if isinstance(sources, SourceSpec):
        sources = [sources]
    if not sources:
        raise ConfigurationError("at least one source is required")
    length = int(round(duration * fs))
    if length <= 0:
        raise ConfigurationError("duration must be positive")
    block = max(1, int(round(motion.filter_update_interval * fs)))
    pre = -(-FIR_LENGTH // block) * block
    total = pre + length
    src_times = (np.arange(total) - pre + FIR_LENGTH // 2) / fs

    nblocks = -(-length // block)
    first = pre // block
    centres = ((first + np.arange(nblocks)) * block + block / 2 - pre) / fs
    rots, pos = motion.poses(centres)
    mic_dirs = np.einsum("bij,mj->bmi", rots, geom.unit_vectors())  # world frame

    k, weights = _series_weights(geom.radius, fs, c)
    window = _taper_window()
    out = np.zeros((geom.num_mics, nblocks * block))
    for spec in sources:
        s = make_source(spec, fs=fs, times=src_times)
        padded = np.concatenate([np.zeros(FFT_LENGTH), s, np.zeros(block)])
        u = sph_to_cart(np.array([spec.direction[0]]), np.array([spec.direction[1]]))[0]
        cosang = mic_dirs @ u  # (nb, M)
        phase = np.exp(1j * np.outer(pos @ u, k))  # (nb, F)
        order = weights.shape[1] - 1
        for lo in range(0, nblocks, chunk_blocks):
            hi = min(nblocks, lo + chunk_blocks)
            leg = _legendre_table(cosang[lo:hi], order)  # (n+1, nbc, M)
            resp = np.einsum("fn,nbm->bmf", weights, leg) * phase[lo:hi, None, :]
            fir = np.roll(np.fft.irfft(resp, FIR_LENGTH, axis=-1), FIR_LENGTH // 2, axis=-1)
            spec_fir = np.fft.rfft(fir * window, FFT_LENGTH, axis=-1)
            ends = (first + np.arange(lo, hi) + 1) * block + FFT_LENGTH
            idx = ends[:, None] - FFT_LENGTH + np.arange(FFT_LENGTH)[None, :]
            seg = np.fft.rfft(padded[idx], axis=-1)
            y = np.fft.irfft(seg[:, None, :] * spec_fir, FFT_LENGTH, axis=-1)[..., -block:]
            out[:, lo * block: hi * block] += y.transpose(1, 0, 2).reshape(geom.num_mics, -1)
    return out[:, :length]


def apparent_direction(motion: MotionSpec, direction, time: float) -> tuple[float, float]:
    """Direction of a reference-frame source as seen in the array frame at ``time``."""
    rot, _ = motion.poses(np.array([time]))
    u = sph_to_cart(np.array([direction[0]]), np.array([direction[1]]))[0]
    x, y, z = rot[0].T @ u
    return math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)


# ---------------------------------------------------------------------------
# noise

def noise_scale(spec: NoiseSpec, reference: np.ndarray, stft_params: STFTParams | None = None) -> float:
    """Standard deviation of white noise giving the requested SNR against ``reference``."""
    if math.isinf(spec.snr) and spec.snr > 0:
        return 0.0
    reference = np.atleast_2d(reference)
    gain = 10 ** (spec.snr / 10)
    if spec.bandwidth == "wideband":
        power = float(np.mean(reference ** 2))
        if not power > 0:
            raise UndefinedSNRError("reference signal has zero power")
        return math.sqrt(power / gain)
    if stft_params is None:
        raise ConfigurationError("narrowband SNR needs STFT parameters")
    b = stft_params.nearest_bin(spec.bin_hz)
    bin_power = float(np.mean(np.abs(stft(reference, stft_params).bin(b)) ** 2))
    if not bin_power > 0:
        raise UndefinedSNRError("reference signal has zero power in the analysis bin")
    win_energy = float(np.sum(stft_params.window_values() ** 2))
    return math.sqrt(bin_power / (gain * win_energy))


def add_noise(signals, spec: NoiseSpec, reference=None, stft_params: STFTParams | None = None,
              rng: np.random.Generator | None = None, standard_noise=None) -> np.ndarray:
    """Add independent white Gaussian noise per microphone at ``spec.snr``.

    Power is averaged over all microphones. ``standard_noise`` (unit
    variance, same shape) may be supplied so that conditions share one
    noise realisation; otherwise it is drawn from ``rng`` or from a
    generator seeded with ``spec.seed``.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    ref = signals if reference is None else reference
    scale = noise_scale(spec, ref, stft_params)
    if scale == 0.0:
        return signals.copy()
    if standard_noise is None:
        rng = make_rng(spec.seed) if rng is None else rng
        standard_noise = rng.standard_normal(signals.shape)
    return signals + scale * standard_noise
