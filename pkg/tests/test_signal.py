import wave

import numpy as np
import pytest

from convbss.errors import ConfigError, FormatError
from convbss.signal import (
    MultichannelSignal,
    StftConfig,
    TimeFrequencyTensor,
    istft,
    make_window,
    read_wav,
    stft,
    write_wav,
)


def test_windows():
    assert np.array_equal(make_window("rectangular", 4), np.ones(4))
    ham = make_window("hamming", 5)
    n = np.arange(5)
    assert np.allclose(ham, 0.54 - 0.46 * np.cos(2 * np.pi * n / 4), atol=1e-15)
    assert ham[2] == pytest.approx(1.0) and ham[0] == pytest.approx(0.08)
    assert np.allclose(make_window("hann", 2), [0.0, 0.0], atol=1e-15)
    for kind in ("hamming", "hann", "rectangular"):
        w = make_window(kind, 33)
        assert w.min() >= 0 and w.max() <= 1
    with pytest.raises(ValueError):
        make_window("hamming", 0)


@pytest.mark.parametrize("hop, expected", [(1024, 156), (2048, 78)])
def test_frame_counts(hop, expected):
    x = np.zeros((1, 160000))
    assert stft(x, StftConfig("hamming", 2048, hop)).n_frames == expected


def test_zero_signal_and_short_signal():
    cfg = StftConfig("hamming", 64, 32)
    X = stft(np.zeros((2, 500)), cfg)
    assert not np.any(X.coefficients)
    assert X.n_bins == 33
    assert not np.any(istft(X).samples)
    with pytest.raises(ValueError):
        stft(np.zeros((1, 31)), cfg)


def test_onesided_real_edges():
    rng = np.random.default_rng(0)
    X = stft(rng.standard_normal((1, 1000)), StftConfig("hamming", 64, 32)).coefficients
    assert np.allclose(X[:, 0].imag, 0) and np.allclose(X[:, -1].imag, 0)


@pytest.mark.parametrize(
    "cfg",
    [
        StftConfig("hamming", 2048, 1024),
        StftConfig("hamming", 256, 64),
        StftConfig("rectangular", 128, 128),
        StftConfig("rectangular", 100, 50, 128),
    ],
)
@pytest.mark.parametrize("onesided", [True, False])
def test_perfect_reconstruction(cfg, onesided):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 20000))
    y = istft(stft(x, cfg, onesided=onesided)).samples
    # frames stop at floor(T / hop), so hop == window drops the partial tail
    n = y.shape[1]
    assert n >= x.shape[1] - cfg.hop
    assert np.max(np.abs(y - x[:, :n])) < 1e-10


def test_impulse_round_trip():
    x = np.zeros((1, 4096))
    x[0, 1500] = 1.0
    y = istft(stft(x, StftConfig())).samples
    assert np.max(np.abs(y - x)) < 1e-10


def test_hann_edges_cannot_be_reconstructed():
    # the symmetric Hann window is zero at its first sample, so sample 0 is lost
    cfg = StftConfig("hann", 64, 32)
    X = stft(np.ones((1, 256)), cfg)
    with pytest.raises(ConfigError):
        istft(X)


def test_parseval_per_frame():
    rng = np.random.default_rng(2)
    cfg = StftConfig("hamming", 128, 64)
    x = rng.standard_normal((1, 2000))
    X = stft(x, cfg, onesided=False).coefficients[0]
    for n in range(X.shape[1]):
        frame = x[0, n * 64 : n * 64 + 128]
        frame = np.concatenate([frame, np.zeros(128 - len(frame))]) * cfg.window
        assert np.sum(np.abs(X[:, n]) ** 2) / 128 == pytest.approx(np.sum(frame**2), rel=1e-9)


def test_config_validation():
    with pytest.raises(ConfigError):
        StftConfig("hamming", 64, 128)
    with pytest.raises(ConfigError):
        StftConfig("hamming", 64, 32, 96)
    with pytest.raises(ConfigError):
        StftConfig("blackman", 64, 32)


def test_signal_invariants():
    with pytest.raises(ValueError):
        MultichannelSignal(np.zeros((2, 10)), 0.0)
    sig = MultichannelSignal(np.zeros((3, 160)), 16000)
    assert sig.n_channels == 3 and sig.n_samples == 160 and sig.duration == pytest.approx(0.01)


def test_wav_round_trip(tmp_path):
    ramp = (np.arange(-200, 200) * 80) / 32768.0
    sig = MultichannelSignal(np.stack([ramp, -ramp[::-1]]), 16000)
    path = tmp_path / "ramp.wav"
    write_wav(path, sig)
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.array_equal(back.samples, sig.samples)


def test_wav_mono_fixture(tmp_path):
    path = tmp_path / "mono.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(16000)
        fh.writeframes(np.zeros(160000, dtype="<i2").tobytes())
    sig = read_wav(path)
    assert sig.n_samples == 160000 and sig.n_channels == 1 and sig.sample_rate == 16000


def test_wav_truncated(tmp_path):
    path = tmp_path / "t.wav"
    write_wav(path, MultichannelSignal(np.full((2, 1000), 0.25), 8000))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 501])
    with pytest.raises(FormatError):
        read_wav(path)
    path.write_bytes(data[:20])
    with pytest.raises(FormatError):
        read_wav(path)


def test_wav_unsupported_depth(tmp_path):
    path = tmp_path / "u8.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(1)
        fh.setframerate(8000)
        fh.writeframes(bytes(100))
    with pytest.raises(FormatError):
        read_wav(path)
