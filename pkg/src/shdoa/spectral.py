"""STFT analysis, frame time alignment and multichannel WAVE I/O."""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import FormatError, InsufficientDataError

log = logging.getLogger(__name__)

#: frames shorter than this break the multiplicative transfer approximation
MIN_FRAME_SECONDS = 0.010


@dataclass(frozen=True)
class STFTParams:
    frame_length: int = 256
    hop: int = 128
    window: str = "hamming"
    fs: float = 10000.0

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_length:
            raise ValueError(f"hop must satisfy 0 < hop <= frame_length, got {self.hop}")
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")

    def window_values(self) -> np.ndarray:
        if self.window in ("rect", "rectangular", "boxcar"):
            return np.ones(self.frame_length)
        # periodic=False gives the textbook symmetric Hamming of length T
        return get_window(self.window, self.frame_length, fftbins=False)

    def bin_frequency(self, bin_index) -> np.ndarray:
        return np.asarray(bin_index) * self.fs / self.frame_length

    def nearest_bin(self, freq: float) -> int:
        return int(round(freq * self.frame_length / self.fs))

    def bins_in_range(self, low: float, high: float) -> list[int]:
        centres = self.bin_frequency(np.arange(self.frame_length // 2 + 1))
        return [int(b) for b in np.flatnonzero((centres >= low) & (centres <= high))]

    def frame_centre_time(self, frame) -> np.ndarray:
        """Centre of frame ``i`` in seconds, where poses are sampled."""
        return (self.frame_length / 2 + np.asarray(frame) * self.hop) / self.fs

    def num_frames(self, length: int) -> int:
        return (length - self.frame_length) // self.hop + 1

    def samples_for(self, frames: int) -> int:
        return (frames - 1) * self.hop + self.frame_length

    def check_duration(self) -> list[str]:
        """Warnings for frame lengths below the 10 ms guard."""
        duration = self.frame_length / self.fs
        if duration < MIN_FRAME_SECONDS:
            return [f"frame duration {duration * 1e3:.2f} ms is below the 10 ms minimum"]
        return []


@dataclass
class STFTFrameSet:
    frames: np.ndarray  # complex (I, M, T)
    params: STFTParams

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_mics(self) -> int:
        return self.frames.shape[1]

    def bin(self, index: int) -> np.ndarray:
        """``(I, M)`` snapshots at one frequency bin."""
        return self.frames[:, :, index]

    def select(self, start: int, stop: int) -> "STFTFrameSet":
        return STFTFrameSet(self.frames[start:stop], self.params)


def stft(signals, params: STFTParams) -> STFTFrameSet:
    """``p(i, w) = sum_t w(t) p(t + iD) exp(-j 2 pi w t / T)``, no padding or scaling."""
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    length = signals.shape[1]
    if length < params.frame_length:
        raise InsufficientDataError(
            f"signal of {length} samples is shorter than one frame ({params.frame_length})")
    count = params.num_frames(length)
    view = np.lib.stride_tricks.sliding_window_view(signals, params.frame_length, axis=1)
    segs = view[:, ::params.hop][:, :count]  # (M, I, T)
    spec = np.fft.fft(segs * params.window_values(), axis=-1)
    return STFTFrameSet(np.ascontiguousarray(spec.transpose(1, 0, 2)), params)


def time_align(frames: STFTFrameSet, reference_frame: int, frequency: float | None = None,
               inverse: bool = False) -> STFTFrameSet:
    """Remove the hop-induced phase advance of a stationary signal.

    Frame ``i`` is multiplied by ``exp(-j 2 pi D w (i - ref) / T)`` at bin
    ``w``. If ``frequency`` (Hz) is given, the phase of that frequency,
    ``exp(-j 2 pi f D (i - ref) / fs)``, is applied to every bin instead,
    which aligns a tone lying between bin centres. ``inverse=True`` undoes
    the alignment.
    """
    n_frames = frames.num_frames
    if not 0 <= reference_frame < n_frames:
        raise IndexError(f"reference frame {reference_frame} outside 0..{n_frames - 1}")
    p = frames.params
    offset = np.arange(n_frames) - reference_frame
    if frequency is None:
        cycles = np.arange(p.frame_length) / p.frame_length
    else:
        cycles = np.full(p.frame_length, frequency / p.fs)
    phase = -2j * np.pi * p.hop * offset[:, None] * cycles[None, :]
    if inverse:
        phase = -phase
    return STFTFrameSet(frames.frames * np.exp(phase)[:, None, :], p)


# ---------------------------------------------------------------------------
# WAVE files

def read_wav(path, fs: float | None = None, channels: int | None = None) -> np.ndarray:
    """Read PCM16, PCM24/32 or float WAVE data as ``(channels, samples)`` floats."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise FormatError(f"{path}: cannot read WAVE data: {exc}") from None
    if fs is not None and rate != fs:
        raise FormatError(f"{path}: sample rate {rate} Hz does not match configured {fs:g} Hz")
    if data.dtype == np.int16:
        out = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit PCM is returned left-justified in int32
        out = data.astype(float) / 2147483648.0
    elif data.dtype == np.uint8:
        out = (data.astype(float) - 128.0) / 128.0
    else:
        out = data.astype(float)
    out = np.atleast_2d(out.T) if out.ndim == 2 else out[None, :]
    if channels is not None and out.shape[0] != channels:
        raise FormatError(f"{path}: {out.shape[0]} channels, expected {channels}")
    return out


def write_wav(path, signals, fs: float) -> None:
    """Write ``(channels, samples)`` as 32-bit float WAVE."""
    data = np.atleast_2d(np.asarray(signals, dtype=np.float32))
    wavfile.write(path, int(round(fs)), data.T.copy())
