"""Synthetic room impulse responses and convolutive mixtures.

The RIR model is a unit direct-path impulse followed by zero-mean Gaussian
noise whose energy decays by 60 dB over ``t60`` seconds.  Source signals are
Laplacian noise shaped by a low-order all-pole filter and modulated by a slowly
varying gain, so they are supergaussian, nonwhite and nonstationary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps

from .signal import MultichannelSignal

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class RirSet:
    """Impulse responses ``responses[q, p]`` from source ``q`` to microphone ``p``."""

    responses: np.ndarray
    sample_rate: float

    def __post_init__(self):
        h = np.asarray(self.responses, dtype=float)
        if h.ndim != 3 or h.shape[0] != h.shape[1]:
            raise ValueError("responses must have shape (P, P, length)")
        if not np.all(np.isfinite(h)):
            raise ValueError("responses must be finite")
        object.__setattr__(self, "responses", h)

    @property
    def n_sources(self) -> int:
        return self.responses.shape[0]

    @property
    def length(self) -> int:
        return self.responses.shape[2]


@dataclass(frozen=True)
class Scenario:
    """Determined two-microphone scene description.

    Geometry fields only set the direct-path delays; the reverberant tail is
    statistical.  ``rir_length`` defaults to ``t60 * sample_rate`` samples.
    """

    t60: float = 0.2
    sample_rate: float = 16000.0
    duration: float = 10.0
    n_sources: int = 2
    mic_spacing: float = 0.042
    source_angles: Sequence[float] = (45.0, -45.0)
    source_distance: float = 1.0
    rir_length: Optional[int] = None
    tail_level_db: float = -20.0
    seed: int = 0
    source_kind: str = "speechlike"
    source_files: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.t60 > 0:
            raise ValueError("t60 must be positive")
        if self.rir_length is not None and self.rir_length < 1:
            raise ValueError("rir_length must be >= 1")

    @property
    def n_rir(self) -> int:
        if self.rir_length is not None:
            return int(self.rir_length)
        return max(1, int(round(self.t60 * self.sample_rate)))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


def synth_rir(
    t60: float,
    sample_rate: float,
    length: int,
    direct_delay: int = 0,
    seed=None,
    tail_level_db: float = -20.0,
) -> np.ndarray:
    """Direct path plus exponentially decaying Gaussian tail.

    Parameters
    ----------
    t60 : float
        Time in seconds for the tail energy envelope to drop by 60 dB.
    length : int
        Number of taps.
    direct_delay : int
        Index of the unit direct-path tap.
    seed : int or numpy Generator
    tail_level_db : float
        Energy per sample of the tail right after the direct path, relative to
        the direct-path energy.

    Returns
    -------
    ndarray, shape (length,)
    """
    if not t60 > 0:
        raise ValueError("t60 must be positive")
    if not 0 <= direct_delay < length:
        raise ValueError("direct_delay must lie inside the response")
    rng = np.random.default_rng(seed)
    h = np.zeros(length)
    h[direct_delay] = 1.0
    n_tail = length - direct_delay - 1
    if n_tail > 0:
        t = np.arange(1, n_tail + 1) / sample_rate
        envelope = 10 ** (tail_level_db / 20) * 10 ** (-3.0 * t / t60)
        h[direct_delay + 1 :] = envelope * rng.standard_normal(n_tail)
    return h


def direct_path_delays(scenario: Scenario, base_delay: int = 8) -> np.ndarray:
    """Integer direct-path delays ``[q, p]`` from far-field geometry.

    Microphone ``p`` sits at ``p * spacing`` on a line; a source at angle
    ``theta`` from broadside reaches it ``p * spacing * sin(theta) / c`` seconds
    after microphone 0 (rounded to samples, at least one sample when nonzero).
    """
    n = scenario.n_sources
    angles = np.deg2rad(np.asarray(scenario.source_angles[:n], dtype=float))
    mic_pos = np.arange(n) * scenario.mic_spacing
    frac = np.sin(angles)[:, None] * mic_pos[None, :] / SPEED_OF_SOUND * scenario.sample_rate
    offsets = np.round(frac).astype(int)
    small = (offsets == 0) & (np.abs(frac) > 0.25)
    offsets[small] = np.sign(frac[small]).astype(int)
    return base_delay + offsets - offsets.min()


def synth_rirs(scenario: Scenario, rng=None) -> RirSet:
    """One RIR per source/microphone pair with geometric direct-path delays."""
    rng = np.random.default_rng(scenario.seed if rng is None else rng)
    delays = direct_path_delays(scenario)
    n = scenario.n_sources
    length = max(scenario.n_rir, int(delays.max()) + 1)
    h = np.empty((n, n, length))
    for q in range(n):
        for p in range(n):
            h[q, p] = synth_rir(
                scenario.t60, scenario.sample_rate, length, int(delays[q, p]), rng,
                tail_level_db=scenario.tail_level_db,
            )
    return RirSet(h, scenario.sample_rate)


def speechlike_source(n_samples: int, sample_rate: float, seed=None) -> np.ndarray:
    """Laplacian noise through a random 2nd-order all-pole filter, gated by a
    random syllable-rate envelope; unit variance."""
    rng = np.random.default_rng(seed)
    excitation = rng.laplace(size=n_samples)
    radius = rng.uniform(0.6, 0.95)
    angle = rng.uniform(0.05, 0.5) * np.pi
    a = [1.0, -2 * radius * np.cos(angle), radius**2]
    shaped = sps.lfilter([1.0], a, excitation)
    seg = max(1, int(0.15 * sample_rate))
    n_seg = n_samples // seg + 2
    gains = rng.lognormal(0.0, 1.0, n_seg) * (rng.uniform(size=n_seg) > 0.25)
    env = np.interp(np.arange(n_samples), np.arange(n_seg) * seg, gains)
    smooth = np.hanning(seg // 2 + 1)
    env = np.convolve(env, smooth / smooth.sum(), mode="same") + 1e-3
    out = shaped * env
    return out / np.std(out)


def make_sources(scenario: Scenario) -> MultichannelSignal:
    """Deterministic source signals for a scenario."""
    if scenario.source_kind == "wav":
        from .signal import read_wav

        chans = [read_wav(f).samples[0] for f in scenario.source_files[: scenario.n_sources]]
        if len(chans) != scenario.n_sources:
            raise ValueError("not enough source files for the scenario")
        n = min(min(len(c) for c in chans), scenario.n_samples)
        return MultichannelSignal(np.stack([c[:n] for c in chans]), scenario.sample_rate)
    ss = np.random.SeedSequence([scenario.seed, 7])
    seeds = ss.spawn(scenario.n_sources)
    data = np.stack(
        [speechlike_source(scenario.n_samples, scenario.sample_rate, np.random.default_rng(s)) for s in seeds]
    )
    return MultichannelSignal(0.1 * data, scenario.sample_rate)


def convolve_mix(sources, rirs: RirSet):
    """Linear convolutive mixing truncated to the source length.

    Returns
    -------
    microphones : MultichannelSignal, shape (P, T)
    images : ndarray, shape (P_src, P_mic, T)
        ``images[q, p]`` is source ``q`` as observed at microphone ``p``.
    """
    s = sources.samples if isinstance(sources, MultichannelSignal) else np.atleast_2d(sources)
    rate = sources.sample_rate if isinstance(sources, MultichannelSignal) else rirs.sample_rate
    if s.shape[0] != rirs.n_sources:
        raise ValueError("number of sources does not match the RIR set")
    n_src, n_samples = s.shape
    n_mic = rirs.responses.shape[1]
    images = np.empty((n_src, n_mic, n_samples))
    for q in range(n_src):
        for p in range(n_mic):
            images[q, p] = sps.oaconvolve(s[q], rirs.responses[q, p])[:n_samples]
    mics = images.sum(axis=0)
    return MultichannelSignal(mics, rate), images


def simulate(scenario: Scenario):
    """Sources, RIRs, microphone mixture and per-source images for a scenario."""
    sources = make_sources(scenario)
    rirs = synth_rirs(scenario, np.random.default_rng([scenario.seed, 11]))
    mics, images = convolve_mix(sources, rirs)
    return sources, rirs, mics, images
