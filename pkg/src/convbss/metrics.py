"""Signal-to-distortion, interference and artifact ratios.

An estimate is split by least squares into

* ``s_target``: its projection onto ``proj_len`` delayed copies of the true source,
* ``e_interf``: the extra part explained by delayed copies of all sources,
* ``e_artif``: the rest,

over the zero-padded support of length ``T + proj_len - 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import linalg as sla
from scipy import signal as sps

RATIO_CAP_DB = 200.0


@dataclass(frozen=True)
class SeparationReport:
    """Per-source scores, ordered by reference source.

    ``estimate_index[s]`` is the estimate assigned to source ``s``;
    ``energies[s]`` holds the energies of ``(s_target, e_interf, e_artif)``.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    estimate_index: np.ndarray
    energies: np.ndarray

    @property
    def n_sources(self) -> int:
        return len(self.sdr)


def ratio_db(num: float, den: float, cap: float = RATIO_CAP_DB) -> float:
    """``10 log10(num / den)`` clipped to ``[-cap, cap]``."""
    if den <= 0:
        return cap if num > 0 else 0.0
    if num <= 0:
        return -cap
    return float(np.clip(10 * np.log10(num / den), -cap, cap))


class _Projector:
    """Least-squares projection onto the delayed copies of a reference set."""

    def __init__(self, refs: np.ndarray, proj_len: int):
        self.refs = refs
        self.flen = proj_len
        n_src, T = refs.shape
        self.n_fft = sfft.next_fast_len(T + proj_len, real=True)
        self.spectra = np.fft.rfft(refs, self.n_fft)
        self.gram = self._gram()

    def _lags(self, spec_a, spec_b) -> np.ndarray:
        # c[l] = sum_u a(u) b(u + l), for l in [-(flen-1), flen-1]
        c = np.fft.irfft(np.conj(spec_a) * spec_b, self.n_fft)
        return np.concatenate([c[self.n_fft - self.flen + 1 :], c[: self.flen]])

    def _gram(self) -> np.ndarray:
        n_src, flen = self.refs.shape[0], self.flen
        G = np.empty((n_src * flen, n_src * flen))
        a = np.arange(flen)
        lag_index = a[:, None] - a[None, :] + flen - 1  # (a - b) shifted into [0, 2 flen - 2]
        for i in range(n_src):
            for k in range(i, n_src):
                # sum_t ref_i(t - a) ref_k(t - b) = sum_u ref_i(u) ref_k(u + a - b)
                block = self._lags(self.spectra[i], self.spectra[k])[lag_index]
                G[i * flen : (i + 1) * flen, k * flen : (k + 1) * flen] = block
                G[k * flen : (k + 1) * flen, i * flen : (i + 1) * flen] = block.T
        return G

    def project(self, estimate: np.ndarray, sources) -> np.ndarray:
        """Projection of ``estimate`` on the span of the listed sources (padded length)."""
        flen = self.flen
        idx = np.concatenate([np.arange(s * flen, (s + 1) * flen) for s in sources])
        G = self.gram[np.ix_(idx, idx)]
        est_spec = np.fft.rfft(estimate, self.n_fft)
        rhs = np.concatenate([self._lags(self.spectra[s], est_spec)[flen - 1 :] for s in sources])
        coeffs = _solve_psd(G, rhs)
        T = self.refs.shape[1]
        out = np.zeros(T + flen - 1)
        for n, s in enumerate(sources):
            out += sps.fftconvolve(self.refs[s], coeffs[n * flen : (n + 1) * flen])
        return out


def _solve_psd(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = sla.cho_factor(G)
        x = sla.cho_solve(factor, rhs)
        x += sla.cho_solve(factor, rhs - G @ x)  # one step of iterative refinement
        return x
    except sla.LinAlgError:
        return sla.lstsq(G, rhs)[0]


def decompose(estimate: np.ndarray, references: np.ndarray, target: int, proj_len: int = 512, projector=None):
    """``(s_target, e_interf, e_artif)`` of one estimate, each of length ``T + proj_len - 1``."""
    proj = projector or _Projector(np.asarray(references, dtype=float), proj_len)
    est = np.concatenate([estimate, np.zeros(proj.flen - 1)])
    s_target = proj.project(estimate, [target])
    all_src = proj.project(estimate, list(range(proj.refs.shape[0])))
    return s_target, all_src - s_target, est - all_src


def _scores(s_target, e_interf, e_artif):
    t, i, a = (float(np.sum(v**2)) for v in (s_target, e_interf, e_artif))
    sdr = ratio_db(t, float(np.sum((e_interf + e_artif) ** 2)))
    sir = ratio_db(t, i)
    sar = ratio_db(float(np.sum((s_target + e_interf) ** 2)), a)
    return sdr, sir, sar, (t, i, a)


def bss_eval(estimates, references, proj_len: int = 512) -> SeparationReport:
    """SDR, SIR and SAR with the estimate-to-source assignment maximizing mean SIR.

    Parameters
    ----------
    estimates : array_like, shape (J, T)
    references : array_like, shape (S, T) or (S, J, T)
        True source images.  The 3-D form gives a separate reference set for
        every estimate, e.g. the images at the microphone each output is scaled to.
    proj_len : int
        Number of delayed copies spanning each source's subspace.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    refs = np.asarray(references, dtype=float)
    if refs.ndim == 2:
        refs = np.repeat(refs[:, None, :], est.shape[0], axis=1)
    n_src, n_est, T = refs.shape
    if est.shape != (n_est, T):
        raise ValueError("estimates and references must have matching shapes and lengths")
    if n_est != n_src:
        raise ValueError("need as many estimates as sources")
    if proj_len < 1:
        raise ValueError("proj_len must be >= 1")
    if np.any(np.sum(refs**2, axis=-1) == 0):
        raise ValueError("a reference signal has zero energy")
    results = {}
    for j in range(n_est):
        proj = _Projector(refs[:, j], proj_len)
        for s in range(n_src):
            results[j, s] = _scores(*decompose(est[j], refs[:, j], s, proj_len, proj))
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(n_est), n_src):
        score = np.mean([results[perm[s], s][1] for s in range(n_src)])
        if score > best_score:
            best, best_score = perm, score
    picked = [results[best[s], s] for s in range(n_src)]
    return SeparationReport(
        sdr=np.array([p[0] for p in picked]),
        sir=np.array([p[1] for p in picked]),
        sar=np.array([p[2] for p in picked]),
        estimate_index=np.array(best),
        energies=np.array([p[3] for p in picked]),
    )
