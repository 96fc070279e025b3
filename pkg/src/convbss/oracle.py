"""Supervised reference demixers built from the true source images.

Both baselines cancel each interferer at the other microphone:

* ``"td"``: relative impulse responses fitted by time-domain least squares, so
  the cancellation is a linear convolution.
* ``"fd"``: one relative transfer function per STFT bin, i.e. a circular
  convolution per frame.

For two microphones, output 0 is ``x0 - g1 * x1`` where ``g1`` predicts
source 1's image at microphone 0 from its image at microphone 1, and output 1
is ``x1 - g0 * x0`` symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla
from scipy import signal as sps

from .errors import SingularMatrixError, UnsupportedScenarioError
from .signal import StftConfig, istft, stft
from .structured import TimeDomainDemixer


@dataclass(frozen=True)
class RelativeTransferModel:
    """Relation from a source's image at ``input_mic`` to its image at ``output_mic``.

    ``coefficients`` is a real FIR filter (``kind="td"``) or one complex gain
    per bin (``kind="fd"``); ``flagged`` marks floor-regularized bins.  A TD
    filter's tap ``i`` acts at lag ``i - lead``, so ``lead`` taps are noncausal.
    """

    kind: str
    source: int
    input_mic: int
    output_mic: int
    coefficients: np.ndarray
    flagged: np.ndarray = None
    lead: int = 0

    def __post_init__(self):
        if self.kind not in ("td", "fd"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        c = np.asarray(self.coefficients)
        if not np.all(np.isfinite(c)):
            raise ValueError("model coefficients must be finite")


def _cross_correlation(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """``c[l] = sum_t b(t) a(t - l)`` for ``0 <= l < max_lag``."""
    full = sps.correlate(b, a, mode="full", method="fft")
    zero = len(a) - 1
    return full[zero : zero + max_lag]


def normal_matrix(r: np.ndarray, n_taps: int) -> np.ndarray:
    """``A[i, j] = sum_{t<T} r(t - i) r(t - j)`` with ``r`` zero before 0.

    Built from the full autocorrelation minus the samples that shifted copies
    push past the end of the record.
    """
    acf = _cross_correlation(r, r, n_taps)
    A = sla.toeplitz(acf)
    tail = r[::-1][:n_taps]  # tail[m - 1] = r(T - m)
    if len(tail) < n_taps:
        tail = np.concatenate([tail, np.zeros(n_taps - len(tail))])
    corr = np.zeros((n_taps, n_taps))
    for i in range(1, n_taps):
        corr[i, 1:] = corr[i - 1, :-1] + tail[i - 1] * tail[: n_taps - 1]
    return A - corr


def fit_td_relative_ir(image_ref, image_other, n_taps: int, ridge: float = None, lead: int = 0) -> np.ndarray:
    """Least-squares FIR ``g`` minimizing ``||other - g * ref||^2 + ridge ||g||^2``.

    Convolution is truncated to the record length with zeros before the start.
    With ``lead > 0`` the target is ``other`` delayed by ``lead`` samples, so
    the first ``lead`` taps model the noncausal part of the relation.

    Parameters
    ----------
    image_ref, image_other : array_like, shape (T,)
    n_taps : int
        Filter length, at most ``T``.
    ridge : float, optional
        Tikhonov weight; defaults to ``1e-10 * sum(image_ref**2)``.
    lead : int
        Noncausal taps, ``0 <= lead < n_taps``.
    """
    r = np.asarray(image_ref, dtype=float)
    o = np.asarray(image_other, dtype=float)
    if r.shape != o.shape or r.ndim != 1:
        raise ValueError("images must be 1-D and equally long")
    if not 0 <= lead < max(n_taps, 1):
        raise ValueError("lead must satisfy 0 <= lead < n_taps")
    if lead:
        o = np.concatenate([np.zeros(lead), o[: len(o) - lead]])
    if not 1 <= n_taps <= len(r):
        raise ValueError("need 1 <= n_taps <= signal length")
    if ridge is None:
        ridge = 1e-10 * float(r @ r)
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    A = normal_matrix(r, n_taps) + ridge * np.eye(n_taps)
    b = _cross_correlation(r, o, n_taps)
    try:
        factor = sla.cho_factor(A)
    except sla.LinAlgError:
        raise SingularMatrixError("normal matrix is rank deficient; use a positive ridge") from None
    if np.min(np.abs(np.diag(factor[0]))) <= 1e-12 * np.sqrt(max(np.max(np.diag(A)), 1e-300)):
        raise SingularMatrixError("normal matrix is rank deficient; use a positive ridge")
    return sla.cho_solve(factor, b)


def fit_fd_rtf(ref_stft: np.ndarray, other_stft: np.ndarray, floor: float = None):
    """Per-bin least-squares gain ``a(k)`` with ``other(k, n) ~ a(k) ref(k, n)``.

    Parameters
    ----------
    ref_stft, other_stft : ndarray, shape (K, N)
    floor : float, optional
        Lower bound on the reference bin energy; defaults to ``1e-12`` times the
        largest bin energy (or 1e-300 when everything is zero).

    Returns
    -------
    gains : ndarray, shape (K,)
    flagged : ndarray of bool, shape (K,)
        Bins whose energy was below the floor.
    """
    ref = np.asarray(ref_stft)
    other = np.asarray(other_stft)
    if ref.shape != other.shape or ref.ndim != 2 or ref.shape[1] < 1:
        raise ValueError("expected two (K, N) arrays with N >= 1")
    energy = np.sum(np.abs(ref) ** 2, axis=1)
    if floor is None:
        floor = max(1e-12 * energy.max(), 1e-300)
    flagged = energy < floor
    gains = np.sum(other * ref.conj(), axis=1) / np.maximum(energy, floor)
    return gains, flagged


def fit_oracle_models(
    images: np.ndarray,
    kind: str,
    n_taps: int = None,
    ridge: float = None,
    stft_config: StftConfig = None,
    lead: int = None,
):
    """Relative models of every source toward the microphone it must be cancelled at.

    Parameters
    ----------
    images : ndarray, shape (2, 2, T)
        ``images[q, p]`` is source ``q`` at microphone ``p``.
    kind : {"td", "fd"}
    n_taps : int
        TD filter length (required for ``"td"``).
    lead : int, optional
        Noncausal TD taps; defaults to ``n_taps // 2``.  Relative responses
        between reverberant paths are generally two-sided.
    """
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[:2] != (2, 2):
        raise UnsupportedScenarioError("oracle demixers are defined for two sources and two microphones")
    models = []
    for q in range(2):
        # source q leaks into output 1 - q, which keeps microphone 1 - q
        src_mic, dst_mic = q, 1 - q
        ref, other = images[q, src_mic], images[q, dst_mic]
        if kind == "td":
            if n_taps is None:
                raise ValueError("n_taps is required for the time-domain oracle")
            lead_q = n_taps // 2 if lead is None else lead
            g = fit_td_relative_ir(ref, other, n_taps, ridge, lead_q)
            models.append(RelativeTransferModel("td", q, src_mic, dst_mic, g, lead=lead_q))
        elif kind == "fd":
            cfg = stft_config or StftConfig()
            spec = stft(np.stack([ref, other]), cfg).coefficients
            a, flagged = fit_fd_rtf(spec[0], spec[1])
            models.append(RelativeTransferModel("fd", q, src_mic, dst_mic, a, flagged))
        else:
            raise ValueError(f"unknown oracle kind {kind!r}")
    return models


def build_oracle_demixer(models: Sequence[RelativeTransferModel], kind: str = None):
    """Null-steering demixer from two relative models.

    Output ``d`` keeps microphone ``d`` and subtracts the model of the source
    whose relation ends at microphone ``d``: per bin the rows are
    ``[1, -a_1(k)]`` and ``[-a_0(k), 1]``; in time ``[delta, -g_1]`` and
    ``[-g_0, delta]`` where ``delta`` sits at tap ``lead``, so TD outputs are
    delayed by ``lead`` samples (see :func:`apply_td_oracle`).

    Returns
    -------
    TimeDomainDemixer (``"td"``) or ndarray of shape (K, 2, 2) (``"fd"``).
    """
    if len(models) != 2:
        raise UnsupportedScenarioError("oracle demixers are defined for two sources and two microphones")
    kind = kind or models[0].kind
    if any(m.kind != kind for m in models):
        raise ValueError("models must share the requested kind")
    by_output = {m.output_mic: m for m in models}
    if sorted(by_output) != [0, 1] or any(m.input_mic != 1 - m.output_mic for m in models):
        raise ValueError("need one model ending at each microphone")
    if kind == "td":
        L = max(len(m.coefficients) for m in models)
        if len({m.lead for m in models}) != 1:
            raise ValueError("TD models must share the same lead")
        filters = np.zeros((2, 2, L))
        for d in range(2):
            filters[d, d, models[0].lead] = 1.0
            g = by_output[d].coefficients
            filters[1 - d, d, : len(g)] = -g
        return TimeDomainDemixer(filters, block_length=1)
    K = len(models[0].coefficients)
    W = np.zeros((K, 2, 2), dtype=complex)
    for d in range(2):
        W[:, d, d] = 1.0
        W[:, d, 1 - d] = -by_output[d].coefficients
    return W


def apply_fd_demixer(W: np.ndarray, x, config: StftConfig) -> np.ndarray:
    """Demix in the STFT domain and resynthesize, shape (P, T)."""
    x = np.atleast_2d(getattr(x, "samples", x))
    X = stft(x, config)
    Y = np.einsum("kqp,pkn->qkn", W, X.coefficients)
    out = istft(type(X)(Y, config, X.signal_length, X.sample_rate, X.onesided), length=x.shape[1])
    y = np.zeros_like(x)
    y[:, : out.n_samples] = out.samples
    return y


def apply_td_oracle(demixer: TimeDomainDemixer, x, lead: int = 0) -> np.ndarray:
    """Filter with a TD oracle and undo its ``lead``-sample delay (tail zero-filled)."""
    x = np.atleast_2d(getattr(x, "samples", x))
    y = demixer.apply(x)
    out = np.zeros_like(y)
    out[:, : y.shape[1] - lead] = y[:, lead:]
    return out
