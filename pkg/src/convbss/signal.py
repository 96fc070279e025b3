"""Multichannel signal containers, windows, STFT analysis/synthesis and WAV I/O.

Frames start at ``n * hop`` and the frame count is ``floor(T / hop)``; the last
frame is zero-padded past the end of the signal.  With a 2048-sample window at
16 kHz this yields 156 frames for a hop of 1024 and 78 frames for a hop of 2048
on a 10 s signal.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError, FormatError

WINDOW_KINDS = ("hamming", "hann", "rectangular")


@dataclass(frozen=True)
class MultichannelSignal:
    """``P`` real channels of equal length sampled at ``sample_rate`` Hz.

    ``samples`` has shape ``(P, T)``.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError("samples must have shape (channels, length)")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters.

    ``fft_length`` defaults to the next power of two >= ``window_length`` and
    must be a power of two.
    """

    window_kind: str = "hamming"
    window_length: int = 2048
    hop: int = 1024
    fft_length: int = None

    def __post_init__(self):
        if self.window_kind not in WINDOW_KINDS:
            raise ConfigError(f"unknown window kind {self.window_kind!r}")
        if self.window_length < 1:
            raise ConfigError("window_length must be >= 1")
        if not 1 <= self.hop <= self.window_length:
            raise ConfigError("hop must satisfy 1 <= hop <= window_length")
        if self.fft_length is None:
            object.__setattr__(self, "fft_length", _next_pow2(self.window_length))
        n = self.fft_length
        if n < self.window_length or n & (n - 1):
            raise ConfigError("fft_length must be a power of two >= window_length")

    @property
    def window(self) -> np.ndarray:
        return make_window(self.window_kind, self.window_length)

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop


@dataclass(frozen=True)
class TimeFrequencyTensor:
    """Complex STFT coefficients of shape ``(P, K, N)``.

    ``K`` is ``fft_length // 2 + 1`` for one-sided storage and ``fft_length``
    for two-sided storage.
    """

    coefficients: np.ndarray
    config: StftConfig
    signal_length: int
    sample_rate: float = 1.0
    onesided: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def n_channels(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[1]

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[2]


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def make_window(kind: str, length: int) -> np.ndarray:
    """Symmetric window of the given family.

    >>> make_window("hamming", 5)
    array([0.08, 0.54, 1.  , 0.54, 0.08])
    """
    if length < 1:
        raise ValueError("window length must be >= 1")
    if kind not in WINDOW_KINDS:
        raise ValueError(f"unknown window kind {kind!r}")
    if kind == "rectangular" or length == 1:
        return np.ones(length)
    phase = 2 * np.pi * np.arange(length) / (length - 1)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(phase)
    return 0.5 - 0.5 * np.cos(phase)


def _as_array(signal) -> np.ndarray:
    if isinstance(signal, MultichannelSignal):
        return signal.samples
    return np.atleast_2d(np.asarray(signal, dtype=float))


def stft(signal, config: StftConfig, onesided: bool = True) -> TimeFrequencyTensor:
    """Windowed DFT of ``floor(T / hop)`` frames starting at multiples of ``hop``.

    Parameters
    ----------
    signal : MultichannelSignal or array_like, shape (P, T)
    config : StftConfig
    onesided : bool
        Keep ``fft_length // 2 + 1`` bins (``True``) or all ``fft_length`` bins.
    """
    x = _as_array(signal)
    n_chan, n_samples = x.shape
    if n_samples < config.hop:
        raise ValueError("signal is shorter than one hop")
    n_frames = config.n_frames(n_samples)
    win_len = config.window_length
    needed = (n_frames - 1) * config.hop + win_len
    padded = np.zeros((n_chan, max(needed, n_samples)))
    padded[:, :n_samples] = x
    starts = np.arange(n_frames) * config.hop
    frames = padded[:, starts[:, None] + np.arange(win_len)]  # (P, N, W)
    frames = frames * config.window
    if onesided:
        spec = np.fft.rfft(frames, n=config.fft_length, axis=-1)
    else:
        spec = np.fft.fft(frames, n=config.fft_length, axis=-1)
    rate = signal.sample_rate if isinstance(signal, MultichannelSignal) else 1.0
    return TimeFrequencyTensor(
        coefficients=np.ascontiguousarray(spec.transpose(0, 2, 1)),
        config=config,
        signal_length=n_samples,
        sample_rate=rate,
        onesided=onesided,
    )


def synthesis_norm(config: StftConfig, n_frames: int) -> np.ndarray:
    """Overlap-added squared window, the weighted-overlap-add normalizer."""
    win2 = config.window**2
    total = (n_frames - 1) * config.hop + config.window_length
    norm = np.zeros(total)
    for n in range(n_frames):
        norm[n * config.hop : n * config.hop + config.window_length] += win2
    return norm


def istft(tensor: TimeFrequencyTensor, length: int = None, exact: bool = True) -> MultichannelSignal:
    """Weighted overlap-add synthesis ``sum_n w * frame_n / sum_n w**2``.

    The result covers ``min(T, (N - 1) * hop + window_length)`` samples unless
    ``length`` is given.  With ``exact=True`` a configuration whose squared
    window overlap vanishes anywhere on that support raises ``ConfigError``
    since those samples cannot be recovered.
    """
    cfg = tensor.config
    coeffs = tensor.coefficients
    n_chan, _, n_frames = coeffs.shape
    if tensor.onesided:
        frames = np.fft.irfft(coeffs.transpose(0, 2, 1), n=cfg.fft_length, axis=-1)
    else:
        frames = np.fft.ifft(coeffs.transpose(0, 2, 1), n=cfg.fft_length, axis=-1).real
    frames = frames[..., : cfg.window_length] * cfg.window
    covered = (n_frames - 1) * cfg.hop + cfg.window_length
    out = np.zeros((n_chan, covered))
    for n in range(n_frames):
        out[:, n * cfg.hop : n * cfg.hop + cfg.window_length] += frames[:, n]
    norm = synthesis_norm(cfg, n_frames)
    if length is None:
        length = min(tensor.signal_length, covered)
    length = min(length, covered)
    support = norm[:length]
    tiny = 1e-12 * cfg.window_length
    if exact and np.any(support <= tiny):
        raise ConfigError(
            f"{cfg.window_kind} window with hop {cfg.hop} does not overlap-add to a "
            "nonzero constant on the whole support; exact reconstruction impossible"
        )
    y = out[:, :length] / np.maximum(support, tiny)
    return MultichannelSignal(y, tensor.sample_rate)


def read_wav(path: Union[str, Path]) -> MultichannelSignal:
    """Read a 16-bit PCM RIFF/WAVE file; amplitudes are scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise FormatError("compressed WAV data is not supported")
            if fh.getsampwidth() != 2:
                raise FormatError(f"unsupported sample width {8 * fh.getsampwidth()} bit")
            n_chan = fh.getnchannels()
            n_frames = fh.getnframes()
            rate = fh.getframerate()
            raw = fh.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"malformed WAV file {path}: {exc}") from exc
    if len(raw) != n_frames * n_chan * 2:
        raise FormatError(f"truncated WAV file {path}")
    data = np.frombuffer(raw, dtype="<i2").reshape(-1, n_chan).T
    return MultichannelSignal(data.astype(float) / 32768.0, rate)


def write_wav(path: Union[str, Path], signal: MultichannelSignal) -> None:
    """Write 16-bit PCM; values are rounded to the nearest step and clipped."""
    q = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    rate = int(round(signal.sample_rate))
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(signal.n_channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(q.T.tobytes())
