"""Iterative separation algorithms and output rescaling.

All frequency-domain solvers take observations ``X`` of shape ``(P, K, N)``
and return bin-major demixers ``W`` of shape ``(K, P, P)``.  Each starts from
the identity scaled per bin by the inverse RMS of that bin; the natural
gradient is equivariant, so this only fixes the scale of the starting point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .costs import (
    BlockCovarianceSet,
    SourcePrior,
    covariances_from_lags,
    demix,
    demix_blocks,
    iva_cost,
    score_correlation,
    sos_cost_from_covariances,
    trinicon_blocks,
)
from .errors import SingularMatrixError
from .structured import TimeDomainDemixer

TERMINATION_REASONS = ("max-iter", "tolerance", "divergence")

_DEFAULTS = {
    "gradiva": dict(iterations=1000, step_size=0.1),
    "fdica": dict(iterations=1000, step_size=0.1),
    "auxiva": dict(iterations=100, step_size=1.0),
    "trinicon-sos": dict(iterations=1000, step_size=0.005),
}


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget and step size.

    ``tolerance`` stops early once the relative cost decrease of one iteration
    falls below it (``0`` disables the check).  ``prior`` overrides the
    algorithm's default source model.
    """

    iterations: int = 100
    step_size: float = 0.1
    seed: int = 0
    tolerance: float = 0.0
    prior: Optional[str] = None
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")

    @classmethod
    def defaults(cls, algorithm: str, **overrides) -> "SolverConfig":
        """Published iteration counts and step sizes for each algorithm."""
        try:
            base = dict(_DEFAULTS[algorithm])
        except KeyError:
            raise ValueError(f"no solver defaults for {algorithm!r}") from None
        base.update(overrides)
        return cls(**base)

    def source_prior(self, default: str) -> SourcePrior:
        return SourcePrior(self.prior or default, self.eps)


@dataclass
class SolverReport:
    """Outcome of one solver run.

    ``cost_trace`` has ``iterations + 1`` entries (initial cost first).
    """

    demixer: object
    cost_trace: np.ndarray
    iterations: int
    reason: str
    flags: Tuple[str, ...] = ()
    alignment: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


def initial_demixer(X: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Per-bin ``I / rms(X(k))``, shape (K, P, P)."""
    P, K, _ = X.shape
    rms = np.sqrt(np.mean(np.abs(X) ** 2, axis=(0, 2)))
    scale = 1.0 / np.maximum(rms, floor * max(rms.max(), 1.0))
    return np.eye(P)[None] * scale[:, None, None] + 0j


def _stalled(prev: float, cost: float, tol: float) -> bool:
    return tol > 0 and (prev - cost) <= tol * max(abs(prev), 1e-300)


def _natural_gradient_loop(X, config: SolverConfig, prior: SourcePrior, W0=None) -> SolverReport:
    X = np.asarray(getattr(X, "coefficients", X))
    if X.shape[2] < X.shape[0]:
        raise ValueError("need at least as many frames as channels")
    W = initial_demixer(X) if W0 is None else np.array(W0, dtype=complex)
    eye = np.eye(W.shape[1])
    cost = iva_cost(W, X, prior)
    trace = [cost]
    best = (cost, W.copy())
    reason = "max-iter"
    for _ in range(config.iterations):
        with np.errstate(over="ignore", invalid="ignore"):
            step = (eye - score_correlation(W, X, prior)) @ W
            W_new = W + config.step_size * step
            try:
                new_cost = iva_cost(W_new, X, prior) if np.all(np.isfinite(W_new)) else np.inf
            except SingularMatrixError:
                new_cost = np.inf
        if not np.isfinite(new_cost):
            reason = "divergence"
            break
        W, prev = W_new, cost
        cost = new_cost
        trace.append(cost)
        if cost < best[0]:
            best = (cost, W.copy())
        if _stalled(prev, cost, config.tolerance):
            reason = "tolerance"
            break
    final = best[1] if reason == "divergence" else W
    return SolverReport(final, np.array(trace), len(trace) - 1, reason)


def run_gradiva(X, config: SolverConfig = None, W0=None) -> SolverReport:
    """IVA by the natural gradient ``W <- W + mu (I - E[phi(y) y^H]) W`` per bin.

    Parameters
    ----------
    X : TimeFrequencyTensor or ndarray, shape (P, K, N)
    config : SolverConfig
        Defaults to 1000 iterations at step 0.1 with the spherical Laplace prior.
    W0 : ndarray, shape (K, P, P), optional
        Starting demixer (scaled identity otherwise).
    """
    config = config or SolverConfig.defaults("gradiva")
    return _natural_gradient_loop(X, config, config.source_prior("spherical-laplace"), W0)


def run_fdica(X, config: SolverConfig = None, W0=None, align: bool = True) -> SolverReport:
    """Independent per-bin ICA with a univariate Laplace prior, then permutation
    alignment across bins (see :func:`align_permutations`)."""
    config = config or SolverConfig.defaults("fdica")
    report = _natural_gradient_loop(X, config, config.source_prior("laplace"), W0)
    if align:
        X = np.asarray(getattr(X, "coefficients", X))
        perm = align_permutations(demix(report.demixer, X))
        report.demixer = apply_permutations(report.demixer, perm)
        report.alignment = perm
    return report


def _envelope_features(Y: np.ndarray) -> np.ndarray:
    env = np.abs(Y)
    env = env - env.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(env, axis=-1, keepdims=True)
    return env / np.where(norm > 0, norm, 1.0)


def align_permutations(Y: np.ndarray) -> np.ndarray:
    """Greedy bin-to-bin output matching on magnitude-envelope correlation.

    Starting from bin 0, the outputs of bin ``k`` are matched to the aligned
    outputs of bin ``k - 1`` by repeatedly taking the most correlated unmatched
    pair.

    Parameters
    ----------
    Y : ndarray, shape (P, K, N)
        Separated coefficients.

    Returns
    -------
    ndarray of int, shape (K, P)
        ``perm[k, q]`` is the output of bin ``k`` that becomes output ``q``.
    """
    P, K, _ = Y.shape
    feats = _envelope_features(Y)
    perm = np.tile(np.arange(P), (K, 1))
    for k in range(1, K):
        prev = feats[perm[k - 1], k - 1]
        corr = prev @ feats[:, k].T  # [aligned q, candidate j]
        used_q, used_j = set(), set()
        order = np.argsort(-corr, axis=None, kind="stable")
        for flat in order:
            q, j = divmod(int(flat), P)
            if q in used_q or j in used_j:
                continue
            perm[k, q] = j
            used_q.add(q)
            used_j.add(j)
    return perm


def apply_permutations(W: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Reorder the rows of every ``W(k)`` by ``perm[k]``."""
    return np.take_along_axis(W, perm[:, :, None], axis=1)


def _regularize_weighted(V: np.ndarray, cond_limit: float = 1e12, rel: float = 1e-9):
    evals = np.linalg.eigvalsh(V)
    bad = ~(evals[:, 0] > evals[:, -1] / cond_limit)
    if np.any(bad):
        tr = np.trace(V[bad], axis1=1, axis2=2).real / V.shape[1]
        delta = np.maximum(rel * tr, 1e-300)
        V = V.copy()
        V[bad] += delta[:, None, None] * np.eye(V.shape[1])
    return V, int(bad.sum())


def run_auxiva(X, config: SolverConfig = None, W0=None) -> SolverReport:
    """IVA by majorize-minimize with iterative projection.

    For each source ``q`` (outer loop) and every bin ``k``:
    ``V = E[x x^H / (2 max(r_q, eps))]``, ``w <- (W V)^{-1} e_q``,
    ``w <- w / sqrt(w^H V w)``, with row ``q`` of ``W(k)`` set to ``w^H``.
    Each update minimizes a majorizer of the cost, so the cost never increases.
    """
    config = config or SolverConfig.defaults("auxiva")
    prior = config.source_prior("spherical-laplace")
    if prior.kind != "spherical-laplace":
        raise ValueError("auxIVA updates are derived for the spherical Laplace prior")
    X = np.asarray(getattr(X, "coefficients", X))
    P, K, N = X.shape
    if N < P:
        raise ValueError("need at least as many frames as channels")
    W = initial_demixer(X) if W0 is None else np.array(W0, dtype=complex)
    Y = demix(W, X)
    outer = np.einsum("ikn,jkn->nkij", X, X.conj())  # (N, K, P, P)
    cost = iva_cost(W, X, prior)
    trace = [cost]
    reason = "max-iter"
    n_loaded = 0
    for _ in range(config.iterations):
        for q in range(P):
            r = np.maximum(np.linalg.norm(Y[q], axis=0), prior.eps)
            V = np.einsum("n,nkij->kij", 1.0 / (2 * r), outer) / N
            V, loaded = _regularize_weighted(V)
            n_loaded += loaded
            e_q = np.zeros((K, P, 1))
            e_q[:, q] = 1.0
            w = np.linalg.solve(W @ V, e_q)[..., 0]  # (K, P)
            norm = np.sqrt(np.einsum("ki,kij,kj->k", w.conj(), V, w).real)
            w = w / norm[:, None]
            W[:, q, :] = w.conj()
            Y[q] = np.einsum("kp,pkn->kn", W[:, q, :], X)
        prev, cost = cost, iva_cost(W, X, prior)
        trace.append(cost)
        if not np.isfinite(cost):
            reason = "divergence"
            break
        if _stalled(prev, cost, config.tolerance):
            reason = "tolerance"
            break
    flags = ("regularized",) if n_loaded else ()
    if n_loaded:
        warnings.warn(f"weighted covariances diagonally loaded {n_loaded} times", RuntimeWarning, stacklevel=2)
    return SolverReport(W, np.array(trace), len(trace) - 1, reason, flags)


def minimum_distortion_rescale(W: np.ndarray, reference: Optional[int] = None) -> np.ndarray:
    """Rescale each output to its image at a microphone.

    ``W'(k) = diag(W(k)^{-1}) W(k)`` maps output ``q`` to its image at
    microphone ``q``; with ``reference=r`` every output is mapped to microphone
    ``r`` instead (row ``q`` scaled by ``W(k)^{-1}[r, q]``).

    Parameters
    ----------
    W : ndarray, shape (K, P, P)
    """
    W = np.asarray(W)
    inv = np.empty_like(W, dtype=complex)
    for k, Wk in enumerate(W):
        try:
            inv[k] = np.linalg.inv(Wk)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(f"demixing matrix of bin {k} is singular") from None
    if reference is None:
        gains = np.diagonal(inv, axis1=1, axis2=2)
    else:
        gains = inv[:, reference, :]
    return gains[:, :, None] * W


def toeplitz_update_projection(delta: np.ndarray, P: int, L: int, D: int) -> np.ndarray:
    """Average each ``2L x D`` block of a dense update along its Toeplitz diagonals.

    Returns filter updates of shape (P, P, L).
    """
    taps = np.arange(L)[:, None] + np.arange(D)[None, :]  # row index of tap i in column j
    cols = np.broadcast_to(np.arange(D)[None, :], taps.shape)
    out = np.empty((P, P, L))
    for p in range(P):
        for q in range(P):
            block = delta[2 * L * p : 2 * L * (p + 1), D * q : D * (q + 1)]
            out[p, q] = block[taps, cols].mean(axis=1)
    return out


def run_trinicon_sos(
    x,
    filter_length: int,
    block_length: int,
    block_shift: int,
    config: SolverConfig = None,
    block_samples: int = None,
    W0: TimeDomainDemixer = None,
) -> SolverReport:
    """Broadband second-order separation by a nonholonomic natural gradient.

    Per iteration, with ``R(m)`` the output correlation of block ``m`` and
    ``B(m) = bdiag R(m)``::

        dW = (1/N) sum_m W (R(m) - B(m)) B(m)^{-1}
        w  <- w - mu * diagonal_average(dW)

    Parameters
    ----------
    x : array_like, shape (P, T)
        Microphone signals.
    filter_length, block_length : int
        ``L`` taps per filter and ``D`` output lags per block.
    block_shift : int
        Hop between blocks.
    block_samples : int, optional
        Samples per block (defaults to ``block_shift``).
    W0 : TimeDomainDemixer, optional
        Starting filters; defaults to unit taps at ``L // 2`` on the diagonal.
    """
    config = config or SolverConfig.defaults("trinicon-sos")
    x = np.atleast_2d(getattr(x, "samples", x))
    P = x.shape[0]
    L, D = filter_length, block_length
    blocks = trinicon_blocks(x, L, block_shift, block_samples)
    if blocks.shape[2] < 2:
        raise ValueError("signal too short for two blocks")
    if blocks.shape[3] < D:
        raise ValueError("blocks must hold at least D samples")
    if W0 is None:
        W0 = TimeDomainDemixer.identity(P, L, D, block_shift, delay=L // 2)
    W = W0

    def stats(W):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cov = covariances_from_lags(demix_blocks(W, blocks))
            cost, _ = sos_cost_from_covariances(cov)
        return cov, cost, bool(caught)

    cov, cost, loaded = stats(W)
    trace = [cost]
    any_loaded = loaded
    best = (cost, W)
    reason = "max-iter"
    for _ in range(config.iterations):
        delta = sos_natural_gradient(W.matrix(), cov)
        filters = W.filters - config.step_size * toeplitz_update_projection(delta, P, L, D)
        if not np.all(np.isfinite(filters)):
            reason = "divergence"
            break
        W_new = TimeDomainDemixer(filters, D, block_shift)
        try:
            cov_new, cost_new, loaded = stats(W_new)
        except (SingularMatrixError, np.linalg.LinAlgError):
            reason = "divergence"
            break
        if not np.isfinite(cost_new):
            reason = "divergence"
            break
        any_loaded |= loaded
        prev = cost
        W, cov, cost = W_new, cov_new, cost_new
        trace.append(cost)
        if cost < best[0]:
            best = (cost, W)
        if _stalled(prev, cost, config.tolerance):
            reason = "tolerance"
            break
    final = best[1] if reason == "divergence" else W
    flags = ("regularized",) if any_loaded else ()
    return SolverReport(final, np.array(trace), len(trace) - 1, reason, flags)


def global_system(W: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Per-bin ``G(k) = W(k) H(k)``, with ``H[k, p, q]`` from source ``q`` to mic ``p``."""
    return np.einsum("kqp,kps->kqs", W, H)


def dominance_ratio(G: np.ndarray) -> float:
    """Share of global-system energy on the best source per output, worst row."""
    energy = np.sum(np.abs(G) ** 2, axis=0)  # (P, P) accumulated over bins
    return float(np.min(energy.max(axis=1) / energy.sum(axis=1)))


def sos_natural_gradient(Wm: np.ndarray, cov: BlockCovarianceSet) -> np.ndarray:
    """Dense step ``(1/N) sum_m W (R(m) - B(m)) B(m)^{-1}`` with ``B = bdiag R``.

    Nearly singular ``B(m)`` is diagonally loaded by ``1e-9 * trace / PD``.
    """
    bdiag = cov.bdiag()
    n = bdiag.shape[1]
    delta = np.zeros_like(Wm)
    for R, B in zip(cov.matrices, bdiag):
        evals = np.linalg.eigvalsh(B)
        if not evals[0] > evals[-1] * 1e-12:
            B = B + max(1e-9 * np.trace(B) / n, 1e-300) * np.eye(n)
        delta += Wm @ np.linalg.solve(B, (R - B).T).T
    return delta / cov.n_blocks


__all__ = [
    "SolverConfig",
    "SolverReport",
    "TERMINATION_REASONS",
    "align_permutations",
    "apply_permutations",
    "dominance_ratio",
    "global_system",
    "initial_demixer",
    "minimum_distortion_rescale",
    "run_auxiva",
    "run_fdica",
    "run_gradiva",
    "run_trinicon_sos",
    "toeplitz_update_projection",
    "sos_natural_gradient",
]
