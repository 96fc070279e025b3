import numpy as np
import pytest
from scipy import signal as sps

from convbss.metrics import RATIO_CAP_DB, bss_eval, decompose, ratio_db


def orthogonal_noise(rng, refs, proj_len, level_db):
    """White noise orthogonal to every delayed reference copy, scaled to ``level_db``."""
    n_src, T = refs.shape
    basis = np.zeros((T, n_src * proj_len))
    for q in range(n_src):
        for a in range(proj_len):
            basis[a:, q * proj_len + a] = refs[q, : T - a]
    n = rng.standard_normal(T)
    n -= basis @ np.linalg.lstsq(basis, n, rcond=None)[0]
    return n * np.sqrt(np.sum(refs[0] ** 2) / np.sum(n**2) * 10 ** (level_db / 10))


def test_ratio_cap():
    assert ratio_db(1.0, 0.0) == RATIO_CAP_DB
    assert ratio_db(0.0, 1.0) == -RATIO_CAP_DB
    assert ratio_db(10.0, 1.0) == pytest.approx(10.0)


def test_exact_match_is_capped():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((2, 4000))
    rep = bss_eval(s, s, proj_len=64)
    for v in (rep.sdr, rep.sir, rep.sar):
        assert np.all(v >= 150)
    assert np.all(rep.sdr <= RATIO_CAP_DB)


def test_orthogonal_noise_at_minus_20_db():
    rng = np.random.default_rng(1)
    s = rng.standard_normal((2, 8000))
    noise = orthogonal_noise(rng, s, 64, -20)
    rep = bss_eval(np.stack([s[0] + noise, s[1]]), s, proj_len=64)
    assert rep.sdr[0] == pytest.approx(20, abs=0.5)
    assert rep.sar[0] == pytest.approx(20, abs=0.5)
    assert rep.sir[0] >= 100


def test_pure_interferer():
    rng = np.random.default_rng(2)
    s = rng.standard_normal((2, 4000))
    e0, e1, e2 = decompose(s[1], s, 0, 32)
    sdr = ratio_db(np.sum(e0**2), np.sum((e1 + e2) ** 2))
    sir = ratio_db(np.sum(e0**2), np.sum(e1**2))
    assert sir < -20 and sdr < -20


def test_decomposition_additive_and_orthogonal():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((3, 3000))
    est = s[0] + 0.5 * np.roll(s[1], 3) + 0.2 * rng.standard_normal(3000)
    parts = decompose(est, s, 0, 16)
    padded = np.r_[est, np.zeros(15)]
    assert np.allclose(sum(parts), padded, atol=1e-12)
    scale = np.sum(padded**2)
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(parts[i] @ parts[j]) <= 1e-8 * scale


def test_projection_matches_dense_least_squares():
    rng = np.random.default_rng(4)
    s = rng.standard_normal((2, 300))
    est = rng.standard_normal(300)
    flen = 8
    T = 300 + flen - 1
    basis = np.zeros((T, 2 * flen))
    for q in range(2):
        for a in range(flen):
            basis[a : a + 300, q * flen + a] = s[q]
    padded = np.r_[est, np.zeros(flen - 1)]
    full = basis @ np.linalg.lstsq(basis, padded, rcond=None)[0]
    target = basis[:, :flen] @ np.linalg.lstsq(basis[:, :flen], padded, rcond=None)[0]
    parts = decompose(est, s, 0, flen)
    assert np.allclose(parts[0], target, atol=1e-10)
    assert np.allclose(parts[0] + parts[1], full, atol=1e-10)


@pytest.mark.slow
def test_filtering_invariance():
    rng = np.random.default_rng(5)
    T = 160000
    s = rng.standard_normal((2, T))
    for _ in range(2):
        est = np.stack(
            [s[0] + 0.3 * s[1] + 0.1 * rng.standard_normal(T), s[1] + 0.2 * s[0] + 0.1 * rng.standard_normal(T)]
        )
        h = rng.standard_normal(int(rng.integers(1, 513)))
        filtered = np.stack([sps.oaconvolve(e, h)[:T] for e in est])
        assert np.all(np.abs(bss_eval(est, s).sdr - bss_eval(filtered, s).sdr) < 0.1)


def test_swapped_estimates_give_same_report():
    rng = np.random.default_rng(6)
    s = rng.standard_normal((2, 3000))
    est = np.stack([s[0] + 0.1 * s[1], s[1] + 0.2 * rng.standard_normal(3000)])
    a = bss_eval(est, s, proj_len=32)
    b = bss_eval(est[::-1], s, proj_len=32)
    assert np.allclose(a.sdr, b.sdr) and np.allclose(a.sir, b.sir) and np.allclose(a.sar, b.sar)
    assert a.estimate_index.tolist() == [0, 1] and b.estimate_index.tolist() == [1, 0]


def test_per_estimate_references():
    rng = np.random.default_rng(7)
    imgs = rng.standard_normal((2, 2, 2000))  # [source, mic, t]
    rep = bss_eval(np.stack([imgs[0, 0], imgs[1, 1]]), imgs, proj_len=16)
    assert np.all(rep.sdr >= 150)


def test_input_validation():
    s = np.ones((2, 100))
    with pytest.raises(ValueError):
        bss_eval(s, np.stack([np.ones(100), np.zeros(100)]))
    with pytest.raises(ValueError):
        bss_eval(s[:, :50], s)
    with pytest.raises(ValueError):
        bss_eval(s, s, proj_len=0)
