"""Toeplitz, circulant and block-permuted demixing matrices.

Conventions
-----------
Time-domain block vectors are stored most-recent sample first::

    x_p(t) = [x_p(t), x_p(t-1), ..., x_p(t-2L+1)]
    y_q(t) = [y_q(t), y_q(t-1), ..., y_q(t-D+1)]

so that ``y_q(t) = sum_p W_pq.T @ x_p(t)`` with ``W_pq`` the ``2L x D``
Toeplitz matrix of filter ``w_pq`` (input ``p`` to output ``q``).  The full
demixing matrix ``W`` stacks ``W_pq`` with input channels along rows and output
channels along columns.

Frequency-domain demixers store ``W(k)[q, p] = w_pq(k)``, i.e. row ``q`` of
``W(k)`` produces output ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import SingularMatrixError


def log_abs_det(a: np.ndarray) -> float:
    """``log|det a|`` through pivoted LU; raises on an exactly singular input."""
    sign, logdet = np.linalg.slogdet(a)
    if sign == 0 or not np.isfinite(logdet):
        raise SingularMatrixError("matrix is singular")
    return float(logdet)


@dataclass(frozen=True)
class TimeDomainDemixer:
    """Bank of ``P x P`` FIR filters, ``filters[p, q]`` = ``w_pq`` of length ``L``.

    ``block_length`` (D) is the number of output lags per block and
    ``block_shift`` the hop between blocks.
    """

    filters: np.ndarray
    block_length: int
    block_shift: int = 1

    def __post_init__(self):
        w = np.asarray(self.filters, dtype=float)
        if w.ndim != 3 or w.shape[0] != w.shape[1] or w.shape[2] < 1:
            raise ValueError("filters must have shape (P, P, L) with L >= 1")
        if not 1 <= self.block_length <= w.shape[2]:
            raise ValueError("block length D must satisfy 1 <= D <= L")
        object.__setattr__(self, "filters", w)

    @property
    def n_channels(self) -> int:
        return self.filters.shape[0]

    @property
    def filter_length(self) -> int:
        return self.filters.shape[2]

    @classmethod
    def identity(cls, n_channels: int, filter_length: int, block_length: int, block_shift: int = 1, delay: int = 0):
        w = np.zeros((n_channels, n_channels, filter_length))
        w[np.arange(n_channels), np.arange(n_channels), delay] = 1.0
        return cls(w, block_length, block_shift)

    def matrix(self) -> np.ndarray:
        """Dense ``2LP x PD`` matrix ``W``."""
        return demixing_matrix(self)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Linear convolution ``y_q = sum_p w_pq * x_p`` truncated to ``len(x)``."""
        from scipy.signal import oaconvolve

        x = np.atleast_2d(x)
        n = x.shape[1]
        y = np.zeros((self.n_channels, n))
        for q in range(self.n_channels):
            for p in range(self.n_channels):
                y[q] += oaconvolve(x[p], self.filters[p, q])[:n]
        return y


def toeplitz_matrix(w: np.ndarray, L: int, D: int) -> np.ndarray:
    """``2L x D`` convolution matrix whose column ``j`` is ``w`` shifted down by ``j``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (L,):
        raise ValueError("filter length does not match L")
    if not 1 <= D <= L:
        raise ValueError("D must satisfy 1 <= D <= L")
    out = np.zeros((2 * L, D))
    for j in range(D):
        out[j : j + L, j] = w
    return out


def demixing_matrix(W: TimeDomainDemixer) -> np.ndarray:
    P, L, D = W.n_channels, W.filter_length, W.block_length
    out = np.zeros((2 * L * P, D * P))
    for p in range(P):
        for q in range(P):
            out[2 * L * p : 2 * L * (p + 1), D * q : D * (q + 1)] = toeplitz_matrix(W.filters[p, q], L, D)
    return out


def extended_demixer(W: TimeDomainDemixer) -> np.ndarray:
    """Square ``2LP x 2LP`` matrix with ``[0; I_{2L-D}]`` appended per output block.

    ``extended.T @ x`` stacks ``[y_1, x~_1, ..., y_P, x~_P]`` where ``x~_q`` are
    the last ``2L - D`` entries of ``x_q``.
    """
    P, L, D = W.n_channels, W.filter_length, W.block_length
    n = 2 * L
    out = np.zeros((n * P, n * P))
    for p in range(P):
        for q in range(P):
            out[n * p : n * (p + 1), n * q : n * q + D] = toeplitz_matrix(W.filters[p, q], L, D)
        out[n * p + D : n * (p + 1), n * p + D : n * (p + 1)] = np.eye(n - D)
    return out


def permuted_extended(extended: np.ndarray, P: int, L: int, D: int):
    """Reorder rows and columns of the extended matrix into lower block-triangular form.

    Rows are ordered with the first ``D`` rows of every input block first;
    columns with the ``D`` output columns of every block first.

    Returns
    -------
    permuted : ndarray
        ``P1 @ extended @ P2``, with top-left block the truncated ``PD x PD``
        Toeplitz matrix, zero top-right block and identity bottom-right block.
    row_order, col_order : ndarray of int
        Index maps: ``permuted = extended[row_order][:, col_order]``.
    """
    n = 2 * L
    head = (np.arange(P)[:, None] * n + np.arange(D)[None, :]).ravel()
    tail = (np.arange(P)[:, None] * n + np.arange(D, n)[None, :]).ravel()
    order = np.concatenate([head, tail])
    return extended[np.ix_(order, order)], order, order.copy()


def permutation_matrix(order: np.ndarray, rows: bool = True) -> np.ndarray:
    """Dense permutation matrix for an index map (rows: ``M @ A == A[order]``)."""
    n = len(order)
    m = np.zeros((n, n))
    m[np.arange(n), order] = 1.0
    return m if rows else m.T


def truncated_toeplitz(W: TimeDomainDemixer) -> np.ndarray:
    """``PD x PD`` matrix of the top ``D x D`` parts of every ``W_pq``."""
    P, L, D = W.n_channels, W.filter_length, W.block_length
    rows = (np.arange(P)[:, None] * 2 * L + np.arange(D)[None, :]).ravel()
    return demixing_matrix(W)[rows]


def truncated_toeplitz_det(W: TimeDomainDemixer) -> float:
    """``log|det|`` of the truncated Toeplitz matrix (equals that of the extended matrix)."""
    try:
        return log_abs_det(truncated_toeplitz(W))
    except SingularMatrixError:
        raise SingularMatrixError("truncated Toeplitz demixing matrix is singular") from None


@dataclass(frozen=True)
class WindowSelector:
    """0/1 selection matrix of shape ``(n_rows, n_cols)`` with ones at
    ``(i, offset + i)`` for ``i < n_rows`` (the ``[0 I 0]`` family), kept as an
    index map.  ``transpose`` flips the role of rows and columns."""

    n_rows: int
    n_cols: int
    offset: int = 0
    transpose: bool = False

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_cols, self.n_rows) if self.transpose else (self.n_rows, self.n_cols)

    def apply(self, v: np.ndarray, axis: int = 0) -> np.ndarray:
        v = np.moveaxis(np.asarray(v), axis, 0)
        if not self.transpose:
            out = v[self.offset : self.offset + self.n_rows]
        else:
            out = np.zeros((self.n_cols,) + v.shape[1:], dtype=v.dtype)
            out[self.offset : self.offset + self.n_rows] = v
        return np.moveaxis(out, 0, axis)

    def T(self) -> "WindowSelector":
        return WindowSelector(self.n_rows, self.n_cols, self.offset, not self.transpose)

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n_rows, self.n_cols))
        m[np.arange(self.n_rows), self.offset + np.arange(self.n_rows)] = 1.0
        return m.T if self.transpose else m


def head_selector(n_keep: int, n_total: int) -> WindowSelector:
    """``[I_n 0]`` of shape ``(n_keep, n_total)``: keeps the leading entries."""
    if n_keep > n_total:
        raise ValueError("cannot select more entries than available")
    return WindowSelector(n_keep, n_total)


def zero_pad_selector(n_in: int, n_total: int) -> WindowSelector:
    """``[I; 0]`` of shape ``(n_total, n_in)``: appends zeros."""
    return head_selector(n_in, n_total).T()


def tail_selector(n_keep: int, n_total: int) -> WindowSelector:
    """``[0 I]`` of shape ``(n_keep, n_total)``: keeps the trailing entries."""
    return WindowSelector(n_keep, n_total, offset=n_total - n_keep)


class UnitaryDFT:
    """``F[k, n] = exp(-2j pi k n / R) / sqrt(R)`` applied via FFT."""

    def __init__(self, length: int):
        if length < 1:
            raise ValueError("DFT length must be >= 1")
        self.length = length

    def forward(self, v, axis: int = 0):
        return np.fft.fft(v, n=self.length, axis=axis, norm="ortho")

    def inverse(self, v, axis: int = 0):
        return np.fft.ifft(v, n=self.length, axis=axis, norm="ortho")

    def dense(self) -> np.ndarray:
        return self.forward(np.eye(self.length), axis=0)


@dataclass(frozen=True)
class Circulant:
    """Circulant matrix ``C[r, c] = first_column[(r - c) mod R]``."""

    first_column: np.ndarray

    @property
    def length(self) -> int:
        return len(self.first_column)

    def dense(self) -> np.ndarray:
        R = self.length
        idx = (np.arange(R)[:, None] - np.arange(R)[None, :]) % R
        return self.first_column[idx]

    def matvec(self, v: np.ndarray, axis: int = 0) -> np.ndarray:
        spec = np.fft.fft(self.first_column)
        shape = [1] * np.ndim(v)
        shape[axis] = self.length
        return np.fft.ifft(np.fft.fft(v, axis=axis) * spec.reshape(shape), axis=axis)


def circulant_embed(w: np.ndarray, L: int, D: int, R: int):
    """Embed ``W_pq.T`` into an ``R x R`` circulant.

    ``W_pq.T == head @ C @ pad`` with ``head = [I_D 0]`` (``D x R``) and
    ``pad = [I_2L; 0]`` (``R x 2L``).

    Returns
    -------
    circulant : Circulant
    head : WindowSelector
    pad : WindowSelector
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (L,):
        raise ValueError("filter length does not match L")
    if not 1 <= D <= L:
        raise ValueError("D must satisfy 1 <= D <= L")
    if R < 2 * L:
        raise ValueError("circulant size must be at least 2L")
    first_row = np.zeros(R)
    first_row[:L] = w
    first_col = first_row[(-np.arange(R)) % R]
    return Circulant(first_col), head_selector(D, R), zero_pad_selector(2 * L, R)


def dft_diagonalize(circulant: Circulant) -> np.ndarray:
    """Diagonal of ``F C F^-1``, i.e. the DFT of the first column."""
    return np.fft.fft(circulant.first_column)


def filter_response(w: np.ndarray, R: int) -> np.ndarray:
    """``sum_m w[m] exp(+2j pi k m / R)`` for ``k < R``.

    This is the per-bin value of an embedded filter under the most-recent-first
    block convention; for real ``w`` it is the complex conjugate of ``fft(w, R)``.
    """
    w = np.asarray(w)
    if len(w) > R:
        raise ValueError("filter longer than transform")
    return R * np.fft.ifft(w, n=R)


def fd_filters(W: TimeDomainDemixer, R: int) -> np.ndarray:
    """Per-bin diagonals ``W_fd[p, q, k]`` of every embedded filter."""
    P, L, D = W.n_channels, W.filter_length, W.block_length
    out = np.empty((P, P, R), dtype=complex)
    for p in range(P):
        for q in range(P):
            circ, _, _ = circulant_embed(W.filters[p, q], L, D, R)
            out[p, q] = dft_diagonalize(circ)
    return out


def apply_fd_linear(W_fd: np.ndarray, x_block: np.ndarray, D: int) -> np.ndarray:
    """Block demixing in the DFT domain with the windows that make it linear.

    ``y_q = [I_D 0] F^-1 sum_p W_pq F [x_p; 0]``

    Parameters
    ----------
    W_fd : ndarray, shape (P, P, R)
    x_block : ndarray, shape (P, 2L) or (P, 2L, ...)
        Most-recent-first input blocks; trailing axes are batched.
    D : int
        Output samples per block.
    """
    P, _, R = W_fd.shape
    x_block = np.asarray(x_block)
    if x_block.shape[0] != P or x_block.shape[1] > R or x_block.shape[1] < D:
        raise ValueError("input block does not match the demixer")
    dft = UnitaryDFT(R)
    pad = zero_pad_selector(x_block.shape[1], R)
    X = dft.forward(pad.apply(x_block, axis=1), axis=1)
    Y = np.einsum("pqk,pk...->qk...", W_fd, X)
    y = dft.inverse(Y, axis=1)
    return head_selector(D, R).apply(y, axis=1).real


def apply_fd_circular(W_fd: np.ndarray, x_block: np.ndarray) -> np.ndarray:
    """Per-bin demixing of an ``R``-sample block without any windowing (circular)."""
    P, _, R = W_fd.shape
    if x_block.shape[:2] != (P, R):
        raise ValueError("circular path needs blocks of exactly R samples")
    dft = UnitaryDFT(R)
    X = dft.forward(x_block, axis=1)
    Y = np.einsum("pqk,pk->qk", W_fd, X)
    return dft.inverse(Y, axis=1).real


def block_vectors(x: np.ndarray, length: int, times) -> np.ndarray:
    """Most-recent-first vectors ``[x(t), ..., x(t-length+1)]`` (zeros before 0).

    Returns shape ``(P, length) + times.shape``.
    """
    x = np.atleast_2d(x)
    times = np.asarray(times)
    padded = np.concatenate([np.zeros((x.shape[0], length - 1)), x], axis=1)
    idx = times[None, ...] + (length - 1) - np.arange(length).reshape((length,) + (1,) * times.ndim)
    return padded[:, idx]


@dataclass(frozen=True)
class FrequencyDomainDemixer:
    """Per-bin ``P x P`` demixing matrices in one of two layouts.

    ``"bin-major"``: ``coefficients[k]`` is ``W(k)`` (block-diagonal stacking
    over bins).  ``"channel-block"``: ``coefficients[q, p]`` is the length-``K``
    diagonal of block ``(q, p)`` of the rearranged ``PK x PK`` matrix.
    """

    coefficients: np.ndarray
    layout: str = "bin-major"

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if self.layout == "bin-major":
            if c.ndim != 3 or c.shape[1] != c.shape[2]:
                raise ValueError("bin-major coefficients must have shape (K, P, P)")
        elif self.layout == "channel-block":
            if c.ndim != 3 or c.shape[0] != c.shape[1]:
                raise ValueError("channel-block coefficients must have shape (P, P, K)")
        else:
            raise ValueError(f"unknown layout {self.layout!r}")
        object.__setattr__(self, "coefficients", c)

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[0 if self.layout == "bin-major" else 2]

    @property
    def n_channels(self) -> int:
        return self.coefficients.shape[1 if self.layout == "bin-major" else 0]

    def per_bin(self) -> np.ndarray:
        """``(K, P, P)`` array regardless of layout."""
        if self.layout == "bin-major":
            return self.coefficients
        return np.ascontiguousarray(self.coefficients.transpose(2, 0, 1))

    def dense(self) -> np.ndarray:
        """The full ``PK x PK`` matrix in this layout."""
        K, P = self.n_bins, self.n_channels
        out = np.zeros((P * K, P * K), dtype=complex)
        if self.layout == "bin-major":
            for k in range(K):
                out[P * k : P * (k + 1), P * k : P * (k + 1)] = self.coefficients[k]
        else:
            diag = np.arange(K)
            for q in range(P):
                for p in range(P):
                    out[q * K + diag, p * K + diag] = self.coefficients[q, p]
        return out

    def log_abs_det(self, dense: bool = False) -> float:
        """``sum_k log|det W(k)|``; ``dense=True`` uses the full matrix of this layout."""
        if dense:
            return log_abs_det(self.dense())
        sign, logdet = np.linalg.slogdet(self.per_bin())
        bad = np.flatnonzero((sign == 0) | ~np.isfinite(logdet))
        if bad.size:
            raise SingularMatrixError(f"demixing matrix of bin {bad[0]} is singular")
        return float(np.sum(logdet))


def relayout_iva(W_fd: FrequencyDomainDemixer, target_layout: str) -> FrequencyDomainDemixer:
    """Convert between bin-major and channel-block layouts (lossless)."""
    if target_layout == W_fd.layout:
        return W_fd
    if target_layout == "channel-block":
        return FrequencyDomainDemixer(W_fd.coefficients.transpose(1, 2, 0), "channel-block")
    if target_layout == "bin-major":
        return FrequencyDomainDemixer(W_fd.coefficients.transpose(2, 0, 1), "bin-major")
    raise ValueError(f"unknown layout {target_layout!r}")


def layout_permutation(K: int, P: int) -> np.ndarray:
    """Index map taking bin-major stacking ``(k, q)`` to channel-block ``(q, k)``."""
    return (np.arange(K)[None, :] * P + np.arange(P)[:, None]).ravel()
