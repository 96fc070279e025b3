"""Source priors, separation costs and their gradients.

Cost conventions
----------------
Negative log-densities drop additive constants.  Laplace-type priors use the
floored magnitude ``max(r, eps)``:

* ``"laplace"``: one univariate term per coefficient, ``sum_j max(|y_j|, eps)``.
* ``"spherical-laplace"``: one multivariate term per vector, ``max(||y||, eps)``.
* ``"gaussian"``: zero-mean Gaussian with the sample covariance of the block
  plugged in; only meaningful for block (time-domain) costs.

Complex derivatives use the Wirtinger convention.  The score of a real-valued
``g(y)`` is ``phi = dg/d conj(y)``, so for ``g = ||y||`` it is ``y / (2 ||y||)``.
Gradients returned by :func:`fdica_grad` and :func:`iva_grad` are
``dJ/dRe(W) + 1j * dJ/dIm(W) = 2 dJ/d conj(W)``, which makes the log-det
contribution of ``-2 log|det W|`` equal to ``-2 W^{-H}``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .errors import SingularMatrixError
from .structured import (
    FrequencyDomainDemixer,
    TimeDomainDemixer,
    UnitaryDFT,
    block_vectors,
    head_selector,
    log_abs_det,
    truncated_toeplitz_det,
)

PRIOR_KINDS = ("laplace", "spherical-laplace", "gaussian")
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class SourcePrior:
    """Source density family and the floor used for norms."""

    kind: str = "spherical-laplace"
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior {self.kind!r}; expected one of {PRIOR_KINDS}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def radius(self, y: np.ndarray, axis: int = 0) -> np.ndarray:
        """Floored magnitude: elementwise for Laplace, vector norm along ``axis`` otherwise."""
        if self.kind == "laplace":
            return np.maximum(np.abs(y), self.eps)
        if self.kind == "spherical-laplace":
            return np.maximum(np.linalg.norm(y, axis=axis, keepdims=True), self.eps)
        raise ValueError("the Gaussian prior has no per-sample radius")

    def nll(self, y: np.ndarray, axis: int = 0) -> np.ndarray:
        """``-log p`` of each vector stored along ``axis`` (that axis is reduced)."""
        r = self.radius(y, axis)
        if self.kind == "laplace":
            return r.sum(axis=axis)
        return np.squeeze(r, axis=axis)

    def score(self, y: np.ndarray, axis: int = 0) -> np.ndarray:
        """Wirtinger derivative ``d(-log p)/d conj(y)``, same shape as ``y``."""
        return y / (2 * self.radius(y, axis))


LAPLACE = SourcePrior("laplace")
SPHERICAL_LAPLACE = SourcePrior("spherical-laplace")
GAUSSIAN = SourcePrior("gaussian")


def _as_tf_array(X) -> np.ndarray:
    coeffs = getattr(X, "coefficients", X)
    return np.asarray(coeffs)


# ----------------------------------------------------------------------------
# FD-ICA and IVA


def fdica_cost(W_k: np.ndarray, X_k: np.ndarray, prior: SourcePrior = LAPLACE) -> float:
    """Single-bin ICA cost ``(1/N) sum_n sum_q -log p(y_q(n)) - 2 log|det W|``.

    Parameters
    ----------
    W_k : ndarray, shape (P, P)
    X_k : ndarray, shape (P, N)
        Observed coefficients of one frequency bin.
    """
    W_k = np.asarray(W_k)
    Y = W_k @ np.asarray(X_k)
    source = prior.nll(Y[:, None, :], axis=1).mean(axis=-1).sum()
    return float(source) - 2 * log_abs_det(W_k)


def demix(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``Y[:, k] = W[k] @ X[:, k]`` for bin-major ``W`` (K, P, P) and ``X`` (P, K, N)."""
    return np.einsum("kqp,pkn->qkn", W, X)


def iva_cost(
    W: Union[FrequencyDomainDemixer, np.ndarray],
    X,
    prior: SourcePrior = SPHERICAL_LAPLACE,
) -> float:
    """``sum_q (1/N) sum_n -log p(y_q(n)) - 2 sum_k log|det W(k)|``.

    ``y_q(n)`` is the length-``K`` vector of output ``q`` across all bins.  A
    channel-block demixer is evaluated in that layout directly: outputs from
    its diagonal blocks and the log-det of its dense ``PK x PK`` matrix.

    Parameters
    ----------
    W : FrequencyDomainDemixer or ndarray, shape (K, P, P)
    X : TimeFrequencyTensor or ndarray, shape (P, K, N)
    prior : SourcePrior
        Spherical Laplace couples bins; univariate Laplace factorizes them.
    """
    if prior.kind == "gaussian":
        raise ValueError("the IVA cost supports Laplace-type priors only")
    if not isinstance(W, FrequencyDomainDemixer):
        W = FrequencyDomainDemixer(W)
    X = _as_tf_array(X)
    if W.layout == "channel-block":
        C = W.coefficients
        Y = np.einsum("qpk,pkn->qkn", C, X)
        try:
            logdet = W.log_abs_det(dense=True)
        except SingularMatrixError:
            W.log_abs_det()  # re-raise naming the offending bin
            raise
    else:
        Y = demix(W.coefficients, X)
        logdet = W.log_abs_det()
    source = prior.nll(Y, axis=1).mean(axis=-1).sum()
    return float(source) - 2 * logdet


def fdica_grad(W_k: np.ndarray, X_k: np.ndarray, prior: SourcePrior = LAPLACE) -> np.ndarray:
    """``2 dJ/d conj(W)`` of :func:`fdica_cost`: ``2 E[phi x^H] - 2 W^{-H}``."""
    W_k = np.asarray(W_k, dtype=complex)
    X_k = np.asarray(X_k)
    Y = W_k @ X_k
    phi = prior.score(Y[:, None, :], axis=1)[:, 0, :]
    n = X_k.shape[-1]
    return 2 * (phi @ X_k.conj().T) / n - 2 * np.linalg.inv(W_k).conj().T


def iva_grad(W: np.ndarray, X, prior: SourcePrior = SPHERICAL_LAPLACE) -> np.ndarray:
    """Per-bin ``2 dJ/d conj(W(k))`` of :func:`iva_cost`, shape (K, P, P)."""
    if isinstance(W, FrequencyDomainDemixer):
        W = W.per_bin()
    W = np.asarray(W, dtype=complex)
    X = _as_tf_array(X)
    Y = demix(W, X)
    phi = prior.score(Y, axis=1)
    n = X.shape[-1]
    cross = np.einsum("qkn,pkn->kqp", phi, X.conj()) / n
    return 2 * cross - 2 * np.linalg.inv(W).conj().transpose(0, 2, 1)


def score_correlation(W: np.ndarray, X, prior: SourcePrior = SPHERICAL_LAPLACE) -> np.ndarray:
    """``E[phi(y)(k) y(k)^H]`` per bin, shape (K, P, P)."""
    X = _as_tf_array(X)
    Y = demix(W, X)
    phi = prior.score(Y, axis=1)
    return np.einsum("qkn,pkn->kqp", phi, Y.conj()) / X.shape[-1]


def natural_gradient_direction(W: np.ndarray, X, prior: SourcePrior = SPHERICAL_LAPLACE) -> np.ndarray:
    """``(I - E[phi y^H]) W(k)`` per bin; equals ``-grad W^H W / 2``."""
    W = np.asarray(W, dtype=complex)
    eye = np.eye(W.shape[1])
    return (eye - score_correlation(W, X, prior)) @ W


# ----------------------------------------------------------------------------
# Broadband block costs


def block_count(n_samples: int, block_shift: int, block_length: int) -> int:
    """Blocks starting at ``m * block_shift`` that fit ``block_length`` samples."""
    if block_shift < 1 or block_length < 1:
        raise ValueError("block shift and length must be >= 1")
    return max(0, (n_samples - block_length) // block_shift + 1)


def _block_times(n_samples, block_shift, block_length, n_blocks):
    if block_length is None:
        block_length = block_shift
    if n_blocks is None:
        n_blocks = block_count(n_samples, block_shift, block_length)
    if n_blocks < 1:
        raise ValueError("signal too short for a single block")
    return np.arange(n_blocks)[:, None] * block_shift + np.arange(block_length)[None, :]


def trinicon_blocks(x, L: int, block_shift: int, block_length: int = None, n_blocks: int = None) -> np.ndarray:
    """Input lag vectors of length ``2L`` for every sample of every block.

    Block ``m`` holds times ``m * block_shift + j`` for ``j < block_length``
    (default ``block_length = block_shift``), so a 10 s signal at 16 kHz with a
    shift of 2048 gives 78 blocks.

    Returns
    -------
    ndarray, shape (P, 2L, N, block_length)
    """
    x = np.atleast_2d(getattr(x, "samples", x))
    times = _block_times(x.shape[1], block_shift, block_length, n_blocks)
    return block_vectors(x, 2 * L, times)


def gaussian_block_nll(v: np.ndarray) -> float:
    """Sample mean of the Gaussian ``-log p`` with the plug-in covariance.

    Parameters
    ----------
    v : ndarray, shape (dim, n)
        Real samples as columns.
    """
    dim, n = v.shape
    cov = v @ v.T / n
    cov, _ = regularize_covariance(cov)
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, v)
    quad = 0.5 * np.sum(white**2) / n
    logdet = 2 * np.sum(np.log(np.diag(chol)))
    return float(quad + 0.5 * logdet + 0.5 * dim * LOG_2PI)


def _block_source_terms(y: np.ndarray, prior: SourcePrior) -> np.ndarray:
    """Per-block ``E_sample[-log p]`` of one output; ``y`` has shape (D, N, n)."""
    if prior.kind == "gaussian":
        return np.array([gaussian_block_nll(np.real(y[:, m])) for m in range(y.shape[1])])
    return prior.nll(y, axis=0).mean(axis=-1)


def _trinicon_source(y: np.ndarray, prior: SourcePrior) -> float:
    # y: (P, D, N, n)
    return float(sum(_block_source_terms(y[q], prior).mean() for q in range(y.shape[0])))


def demix_blocks(W: TimeDomainDemixer, x_blocks: np.ndarray) -> np.ndarray:
    """Output lag vectors ``W^T x`` for every sample, shape (P, D, N, n)."""
    P, two_l = x_blocks.shape[:2]
    if P != W.n_channels or two_l != 2 * W.filter_length:
        raise ValueError("blocks do not match the demixer dimensions")
    flat = x_blocks.reshape((P * two_l,) + x_blocks.shape[2:])
    y = np.tensordot(W.matrix().T, flat, axes=1)
    return y.reshape((P, W.block_length) + x_blocks.shape[2:])


def trinicon_td_cost(W: TimeDomainDemixer, x_blocks: np.ndarray, prior: SourcePrior = SPHERICAL_LAPLACE) -> float:
    """Offline broadband cost from time-domain Toeplitz demixing.

    ``(1/N) sum_m sum_q E[-log p(y_q)] - log|det W_trunc|`` where ``W_trunc`` is
    the ``PD x PD`` top part of the Toeplitz blocks.

    Parameters
    ----------
    W : TimeDomainDemixer
    x_blocks : ndarray, shape (P, 2L, N, n)
        Output of :func:`trinicon_blocks`.
    """
    y = demix_blocks(W, x_blocks)
    return _trinicon_source(y, prior) - truncated_toeplitz_det(W)


def fd_block_spectra(x_blocks: np.ndarray, R: int) -> np.ndarray:
    """Unitary ``R``-point DFT of zero-padded lag vectors along axis 1."""
    if x_blocks.shape[1] > R:
        raise ValueError("DFT length must be at least the block vector length")
    return UnitaryDFT(R).forward(x_blocks, axis=1)


def _fd_truncated_matrix(W_fd: np.ndarray, D: int) -> np.ndarray:
    # Block (p, q) of (I x U F) W_fd (I x F^-1 U^T): entry [a, b] is
    # c[(a - b) mod R] with c = fft(W_fd[p, q]) / R.
    P, _, R = W_fd.shape
    c = np.fft.fft(W_fd, axis=-1) / R
    lag = (np.arange(D)[:, None] - np.arange(D)[None, :]) % R
    blocks = c[:, :, lag]  # (P, P, D, D)
    return blocks.transpose(0, 2, 1, 3).reshape(P * D, P * D)


def trinicon_fd_cost(
    W_fd: np.ndarray,
    X_blocks: np.ndarray,
    D: int = None,
    prior: SourcePrior = SPHERICAL_LAPLACE,
    circular: bool = False,
) -> float:
    """Broadband cost evaluated with DFT-domain filters.

    Outputs are ``[I_D 0] F^-1 sum_p W_pq F [x_p; 0]``; the log-det term is that
    of ``(I x U F) W_fd (I x F^-1 U^T)``.  With ``circular=True`` both window
    matrices are dropped: outputs keep all ``R`` samples and the log-det becomes
    ``sum_k log|det W(k)|``.

    Parameters
    ----------
    W_fd : ndarray, shape (P, P, R)
        ``W_fd[p, q, k]`` is the bin-``k`` gain from input ``p`` to output ``q``.
    X_blocks : ndarray, shape (P, R, N, n)
        Spectra of the zero-padded input lag vectors (see :func:`fd_block_spectra`).
    D : int
        Output samples per block; required unless ``circular``.
    """
    W_fd = np.asarray(W_fd)
    P, _, R = W_fd.shape
    if X_blocks.shape[:2] != (P, R):
        raise ValueError("block spectra do not match the demixer")
    Y = np.einsum("pqk,pk...->qk...", W_fd, X_blocks)
    y = UnitaryDFT(R).inverse(Y, axis=1)
    if circular:
        if prior.kind == "gaussian":
            raise ValueError("the circular path supports Laplace-type priors only")
        logdet = FrequencyDomainDemixer(W_fd.transpose(2, 1, 0)).log_abs_det()
    else:
        if D is None:
            raise ValueError("D is required for the windowed path")
        y = head_selector(D, R).apply(y, axis=1).real
        try:
            logdet = log_abs_det(_fd_truncated_matrix(W_fd, D))
        except SingularMatrixError:
            raise SingularMatrixError("truncated DFT-domain demixing matrix is singular") from None
    return _trinicon_source(y, prior) - logdet


# ----------------------------------------------------------------------------
# Second-order statistics


@dataclass(frozen=True)
class BlockCovarianceSet:
    """Per-block ``PD x PD`` output correlation matrices, shape (N, PD, PD).

    Rows and columns are grouped by channel: entries ``q*D .. q*D + D - 1``
    are the ``D`` lags of output ``q``.
    """

    matrices: np.ndarray
    n_channels: int
    block_length: int

    def __post_init__(self):
        R = np.asarray(self.matrices, dtype=float)
        n = self.n_channels * self.block_length
        if R.ndim != 3 or R.shape[1:] != (n, n):
            raise ValueError("matrices must have shape (N, PD, PD)")
        object.__setattr__(self, "matrices", R)

    @property
    def n_blocks(self) -> int:
        return self.matrices.shape[0]

    def channel_block(self, m: int, q: int) -> np.ndarray:
        D = self.block_length
        return self.matrices[m, q * D : (q + 1) * D, q * D : (q + 1) * D]

    def bdiag(self) -> np.ndarray:
        """Copies of the matrices with all block-off-diagonal entries zeroed."""
        P, D = self.n_channels, self.block_length
        mask = np.kron(np.eye(P), np.ones((D, D)))
        return self.matrices * mask


def covariances_from_lags(y_lags: np.ndarray) -> BlockCovarianceSet:
    """Biased correlation estimates from output lag vectors of shape (P, D, N, n)."""
    P, D, N, n = y_lags.shape
    flat = np.real(y_lags).reshape(P * D, N, n)
    R = np.einsum("imt,jmt->mij", flat, flat) / n
    return BlockCovarianceSet(R, P, D)


def estimate_block_covariances(
    y, D: int, block_shift: int, block_length: int = None, n_blocks: int = None
) -> BlockCovarianceSet:
    """``R(m) = (1/n) sum_t y(t) y(t)^T`` over the samples of each block.

    Parameters
    ----------
    y : array_like, shape (P, T)
        Output signals.
    D : int
        Lags per channel.
    block_shift, block_length : int
        Block hop and number of samples per block (``>= D``).
    """
    y = np.atleast_2d(getattr(y, "samples", y))
    block_length = block_shift if block_length is None else block_length
    if block_length < D:
        raise ValueError("blocks must hold at least D samples")
    times = _block_times(y.shape[1], block_shift, block_length, n_blocks)
    return covariances_from_lags(block_vectors(y, D, times))


def regularize_covariance(R: np.ndarray, rel: float = 1e-9, cond_limit: float = 1e12):
    """Add ``delta * I`` with ``delta = rel * trace(R) / n`` when ``R`` is near singular.

    Returns the (possibly) loaded matrix and whether loading was applied.
    """
    n = R.shape[0]
    evals = np.linalg.eigvalsh(R)
    top = evals[-1]
    if top > 0 and evals[0] > top / cond_limit:
        return R, False
    delta = rel * np.trace(R) / n
    if not delta > 0:
        delta = 1e-300 if top <= 0 else rel * top
    return R + delta * np.eye(n), True


def _logdet_spd(R: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(R)
    if sign <= 0:
        raise SingularMatrixError("covariance matrix is not positive definite")
    return float(val)


def sos_cost_from_covariances(cov: BlockCovarianceSet) -> Tuple[float, np.ndarray]:
    """``sum_m [log det bdiag R(m) - log det R(m)]`` and the per-block summands.

    Near-singular ``R(m)`` is diagonally loaded (see :func:`regularize_covariance`)
    and a ``RuntimeWarning`` reports how many blocks needed it.
    """
    P, D = cov.n_channels, cov.block_length
    summands = np.empty(cov.n_blocks)
    n_loaded = 0
    for m, R in enumerate(cov.matrices):
        R, loaded = regularize_covariance(R)
        n_loaded += loaded
        joint = _logdet_spd(R)
        parts = sum(_logdet_spd(R[q * D : (q + 1) * D, q * D : (q + 1) * D]) for q in range(P))
        summands[m] = parts - joint
    if n_loaded:
        warnings.warn(f"{n_loaded} of {cov.n_blocks} block covariances were diagonally loaded", RuntimeWarning, stacklevel=2)
    return float(summands.sum()), summands


def sos_cost(W: TimeDomainDemixer, x, block_shift: int, block_length: int = None) -> Tuple[float, np.ndarray]:
    """Joint block-diagonalization cost of the demixed outputs ``W * x``."""
    y = W.apply(np.atleast_2d(getattr(x, "samples", x)))
    cov = estimate_block_covariances(y, W.block_length, block_shift, block_length)
    return sos_cost_from_covariances(cov)


def gaussian_kl_cost(W: TimeDomainDemixer, x, block_shift: int, block_length: int = None) -> Tuple[float, np.ndarray]:
    """Mutual information of the outputs under a plug-in Gaussian model.

    Each summand is ``sum_q H(y_q(m)) - H(y(m))`` with the entropies estimated as
    sample means of the Gaussian ``-log p``.  Outputs come from the Toeplitz
    block path, independently of :func:`sos_cost`.
    """
    x = np.atleast_2d(getattr(x, "samples", x))
    blocks = trinicon_blocks(x, W.filter_length, block_shift, block_length)
    if blocks.shape[-1] < W.block_length:
        raise ValueError("blocks must hold at least D samples")
    y = demix_blocks(W, blocks)
    P, D, N, n = y.shape
    summands = np.empty(N)
    for m in range(N):
        parts = sum(gaussian_block_nll(y[q, :, m]) for q in range(P))
        joint = gaussian_block_nll(y[:, :, m].reshape(P * D, n))
        summands[m] = parts - joint
    return float(summands.sum()), summands
