"""Randomized numerical checks of the structural identities behind the toolkit.

Every check draws random instances, measures the worst deviation and compares
it with a fixed tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .costs import (
    BlockCovarianceSet,
    LAPLACE,
    SPHERICAL_LAPLACE,
    fd_block_spectra,
    fdica_cost,
    iva_cost,
    sos_cost_from_covariances,
    trinicon_blocks,
    trinicon_fd_cost,
    trinicon_td_cost,
)
from .structured import (
    FrequencyDomainDemixer,
    TimeDomainDemixer,
    UnitaryDFT,
    circulant_embed,
    dft_diagonalize,
    extended_demixer,
    fd_filters,
    log_abs_det,
    relayout_iva,
    truncated_toeplitz_det,
)


@dataclass(frozen=True)
class IdentityResult:
    name: str
    trials: int
    max_deviation: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_deviation) and self.max_deviation <= self.tolerance)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def check_determinant(rng, trials: int) -> float:
    """``log|det W_ext|`` against ``log|det W_trunc|``, relative to ``max(1, |.|)``."""
    worst = 0.0
    for _ in range(trials):
        P = int(rng.integers(2, 4))
        L = int(rng.integers(2, 6))
        D = int(rng.integers(1, L + 1))
        W = TimeDomainDemixer(rng.standard_normal((P, P, L)), D)
        full = log_abs_det(extended_demixer(W))
        worst = max(worst, abs(full - truncated_toeplitz_det(W)) / max(1.0, abs(full)))
    return worst


def check_circulant(rng, trials: int) -> float:
    """Largest off-diagonal magnitude of ``F C F^-1`` and diagonal mismatch."""
    worst = 0.0
    for _ in range(trials):
        L = int(rng.integers(1, 17))
        D = int(rng.integers(1, L + 1))
        R = int(rng.integers(2 * L, 33))
        circ, _, _ = circulant_embed(rng.standard_normal(L), L, D, R)
        F = UnitaryDFT(R).dense()
        M = F @ circ.dense() @ F.conj().T
        off = M - np.diag(np.diag(M))
        worst = max(worst, np.abs(off).max(), np.abs(np.diag(M) - dft_diagonalize(circ)).max())
    return worst


def check_trinicon_td_fd(rng, trials: int) -> float:
    """Relative gap between the time-domain and DFT-domain broadband costs."""
    worst = 0.0
    priors = (SPHERICAL_LAPLACE, LAPLACE)
    for t in range(trials):
        P = int(rng.integers(1, 4))
        L = int(rng.integers(1, 7))
        D = int(rng.integers(1, L + 1))
        R = int(2 * L + rng.integers(0, 5))
        W = TimeDomainDemixer(rng.standard_normal((P, P, L)) + 2 * np.eye(P)[:, :, None] * (np.arange(L) == 0), D)
        x = rng.standard_normal((P, 120))
        blocks = trinicon_blocks(x, L, 16, 24)
        prior = priors[t % 2]
        td = trinicon_td_cost(W, blocks, prior)
        fd = trinicon_fd_cost(fd_filters(W, R), fd_block_spectra(blocks, R), D, prior)
        worst = max(worst, abs(td - fd) / max(abs(td), 1e-300))
    return worst


def check_layout(rng, trials: int) -> float:
    """IVA cost in bin-major versus channel-block layout (absolute)."""
    worst = 0.0
    for _ in range(trials):
        K, P, N = 8, 2, 16
        W = FrequencyDomainDemixer(_complex(rng, (K, P, P)))
        X = _complex(rng, (P, K, N))
        worst = max(worst, abs(iva_cost(W, X) - iva_cost(relayout_iva(W, "channel-block"), X)))
    return worst


def check_fdica_reduction(rng, trials: int) -> float:
    """IVA cost with a factorized prior against the sum of per-bin ICA costs."""
    worst = 0.0
    for _ in range(trials):
        K, P, N = int(rng.integers(1, 9)), int(rng.integers(2, 4)), 16
        W = _complex(rng, (K, P, P))
        X = _complex(rng, (P, K, N))
        per_bin = sum(fdica_cost(W[k], X[:, k], LAPLACE) for k in range(K))
        worst = max(worst, abs(iva_cost(W, X, LAPLACE) - per_bin))
    return worst


def check_sos_nonnegative(rng, trials: int) -> float:
    """Worst negative SOS summand on random SPD sets, plus the value at block-diagonal ones."""
    worst = 0.0
    for _ in range(trials):
        P, D = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        n = P * D
        A = rng.standard_normal((4, n, n + 2))
        cov = BlockCovarianceSet(A @ A.transpose(0, 2, 1), P, D)
        _, summands = sos_cost_from_covariances(cov)
        worst = max(worst, -summands.min())
        _, at_bdiag = sos_cost_from_covariances(BlockCovarianceSet(cov.bdiag(), P, D))
        worst = max(worst, np.abs(at_bdiag).max())
    return worst


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    run: Callable
    default_trials: int
    tolerance: float


CHECKS: Sequence[IdentityCheck] = (
    IdentityCheck("determinant-extended-vs-truncated", check_determinant, 200, 1e-9),
    IdentityCheck("circulant-dft-diagonalization", check_circulant, 100, 1e-10),
    IdentityCheck("trinicon-time-vs-dft-domain", check_trinicon_td_fd, 50, 1e-8),
    IdentityCheck("iva-layout-invariance", check_layout, 50, 1e-12),
    IdentityCheck("fdica-as-factorized-iva", check_fdica_reduction, 50, 1e-12),
    IdentityCheck("sos-summands-nonnegative", check_sos_nonnegative, 100, 1e-10),
)


def verify_identities(trials: int = None, seed: int = 0, tol_scale: float = 1.0) -> List[IdentityResult]:
    """Run every check; ``trials`` overrides each check's default count."""
    results = []
    for i, check in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        n = check.default_trials if trials is None else max(1, int(trials))
        start = time.perf_counter()
        dev = float(check.run(rng, n))
        results.append(IdentityResult(check.name, n, dev, check.tolerance * tol_scale, time.perf_counter() - start))
    return results
