import numpy as np
import pytest

from convbss.costs import LAPLACE, SPHERICAL_LAPLACE, covariances_from_lags, demix, fdica_cost, iva_cost, trinicon_blocks
from convbss.errors import SingularMatrixError
from convbss.solvers import (
    SolverConfig,
    align_permutations,
    apply_permutations,
    dominance_ratio,
    global_system,
    minimum_distortion_rescale,
    run_auxiva,
    run_fdica,
    run_gradiva,
    run_trinicon_sos,
    sos_natural_gradient,
    toeplitz_update_projection,
)
from convbss.structured import TimeDomainDemixer


def cplx(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def spherical_sources(rng, P, K, N):
    """Vectors sharing one random scale across bins: dependent bins, independent sources."""
    scale = rng.exponential(size=(P, 1, N))
    return scale * cplx(rng, (P, K, N))


def mix(A, S):
    return np.einsum("kps,skn->pkn", A, S)


def sir_db(G):
    """Per-output SIR of a global system with the output-to-source map fixed across bins."""
    energy = np.sum(np.abs(G) ** 2, axis=0)
    best = energy.max(axis=1)
    return 10 * np.log10(best / (energy.sum(axis=1) - best))


# -- configuration ---------------------------------------------------------


def test_defaults():
    assert SolverConfig.defaults("gradiva").iterations == 1000
    assert SolverConfig.defaults("gradiva").step_size == 0.1
    assert SolverConfig.defaults("auxiva").iterations == 100
    tri = SolverConfig.defaults("trinicon-sos")
    assert (tri.iterations, tri.step_size) == (1000, 0.005)
    with pytest.raises(ValueError):
        SolverConfig(iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        SolverConfig.defaults("ilrma")


# -- gradient IVA ----------------------------------------------------------


def test_gradiva_separates_instantaneous_bins():
    # with only two bins the coupling is weak and some draws settle in a
    # bin-permuted local minimum; this draw does not
    rng = np.random.default_rng(1)
    K, P, N = 2, 2, 2000
    A = cplx(rng, (K, P, P))
    X = mix(A, spherical_sources(rng, P, K, N))
    report = run_gradiva(X, SolverConfig(iterations=1000, step_size=0.1))
    assert report.reason == "max-iter"
    assert len(report.cost_trace) == report.iterations + 1 == 1001
    assert np.all(sir_db(global_system(report.demixer, A)) > 30)


def test_gradiva_separates_every_bin():
    # per bin, every draw is separated up to a permutation
    for seed in range(4):
        rng = np.random.default_rng(seed)
        A = cplx(rng, (2, 2, 2))
        X = mix(A, spherical_sources(rng, 2, 2, 2000))
        G = global_system(run_gradiva(X, SolverConfig(iterations=1000)).demixer, A)
        for k in range(2):
            assert np.all(sir_db(G[k : k + 1]) > 30)


def test_gradiva_stationary_at_true_demixer():
    rng = np.random.default_rng(1)
    K, P, N = 4, 2, 4000
    S = rng.laplace(size=(P, 1, N)) * cplx(rng, (P, K, N)) / np.sqrt(2)
    A = cplx(rng, (K, P, P))
    X = mix(A, S)
    # start from the separating solution refined to the sample fixed point
    W0 = run_gradiva(X, SolverConfig(iterations=300, step_size=0.1), W0=np.linalg.inv(A)).demixer
    report = run_gradiva(X, SolverConfig(iterations=5), W0=W0)
    assert np.max(np.abs(np.diff(report.cost_trace))) < 1e-6
    G = global_system(report.demixer, A)
    assert dominance_ratio(G) > 0.999


def test_gradiva_fixed_point_condition():
    from convbss.costs import score_correlation

    rng = np.random.default_rng(2)
    K, P, N = 3, 2, 300
    X = mix(cplx(rng, (K, P, P)), spherical_sources(rng, P, K, N))
    report = run_gradiva(X, SolverConfig(iterations=2000, step_size=0.1))
    C = score_correlation(report.demixer, X)
    assert np.max(np.abs(C - np.eye(P))) < 1e-6


def test_gradiva_divergence_returns_best():
    rng = np.random.default_rng(3)
    X = mix(cplx(rng, (2, 2, 2)), spherical_sources(rng, 2, 2, 100))
    report = run_gradiva(X, SolverConfig(iterations=50, step_size=50.0))
    assert report.reason == "divergence"
    assert np.all(np.isfinite(report.demixer))
    assert iva_cost(report.demixer, X) == pytest.approx(min(report.cost_trace))


def test_tolerance_stops_early():
    rng = np.random.default_rng(4)
    X = mix(cplx(rng, (2, 2, 2)), spherical_sources(rng, 2, 2, 200))
    report = run_gradiva(X, SolverConfig(iterations=5000, step_size=0.1, tolerance=1e-6))
    assert report.reason == "tolerance" and report.iterations < 5000


def test_solvers_are_deterministic():
    rng = np.random.default_rng(5)
    X = mix(cplx(rng, (8, 2, 2)), spherical_sources(rng, 2, 8, 60))
    for run in (run_gradiva, run_auxiva, run_fdica):
        a = run(X, SolverConfig(iterations=20))
        b = run(X, SolverConfig(iterations=20))
        assert np.array_equal(a.demixer, b.demixer)
        assert np.array_equal(a.cost_trace, b.cost_trace)


# -- auxIVA ----------------------------------------------------------------


def test_auxiva_monotone():
    rng = np.random.default_rng(6)
    for _ in range(5):
        K, P, N = 64, 2, 50
        X = mix(cplx(rng, (K, P, P)), spherical_sources(rng, P, K, N))
        trace = run_auxiva(X, SolverConfig(iterations=30)).cost_trace
        assert len(trace) == 31
        assert np.max(np.diff(trace)) <= 1e-9


def test_auxiva_on_independent_input():
    rng = np.random.default_rng(7)
    K, P, N = 16, 2, 500
    X = spherical_sources(rng, P, K, N)
    report = run_auxiva(X)
    G = global_system(report.demixer, np.tile(np.eye(P), (K, 1, 1)))
    assert dominance_ratio(G) > 0.99


def test_auxiva_reaches_gradiva_cost():
    rng = np.random.default_rng(8)
    K, P, N = 8, 2, 400
    X = mix(cplx(rng, (K, P, P)), spherical_sources(rng, P, K, N))
    aux = run_auxiva(X, SolverConfig(iterations=200)).cost_trace[-1]
    grad = run_gradiva(X, SolverConfig(iterations=2000, step_size=0.1)).cost_trace[-1]
    assert aux == pytest.approx(grad, abs=1e-6)


def test_auxiva_rejects_other_priors():
    with pytest.raises(ValueError):
        run_auxiva(np.ones((2, 2, 4)), SolverConfig(prior="laplace"))


# -- FD-ICA and permutation alignment --------------------------------------


def test_fdica_single_bin_equals_gradiva():
    rng = np.random.default_rng(9)
    X = mix(cplx(rng, (1, 2, 2)), spherical_sources(rng, 2, 1, 200))
    cfg = SolverConfig(iterations=50, prior="laplace")
    a = run_fdica(X, cfg, align=False)
    b = run_gradiva(X, cfg)
    assert np.array_equal(a.demixer, b.demixer)
    assert np.array_equal(a.cost_trace, b.cost_trace)
    # one bin leaves nothing to align
    assert np.array_equal(run_fdica(X, cfg).alignment, [[0, 1]])


def test_alignment_detects_swapped_bin():
    rng = np.random.default_rng(10)
    env = rng.exponential(size=(2, 1, 300)) ** 2
    Y = env * cplx(rng, (2, 2, 300))
    Y[:, 1] = Y[::-1, 1]
    perm = align_permutations(Y)
    assert np.array_equal(perm, [[0, 1], [1, 0]])


def test_alignment_preserves_fdica_cost():
    rng = np.random.default_rng(11)
    K = 6
    W = cplx(rng, (K, 2, 2))
    X = cplx(rng, (2, K, 40))
    perm = np.array([[0, 1], [1, 0], [1, 0], [0, 1], [1, 0], [0, 1]])
    Wp = apply_permutations(W, perm)
    before = sum(fdica_cost(W[k], X[:, k], LAPLACE) for k in range(K))
    after = sum(fdica_cost(Wp[k], X[:, k], LAPLACE) for k in range(K))
    assert after == pytest.approx(before, abs=1e-12)


def test_fdica_separates_and_aligns():
    rng = np.random.default_rng(12)
    K, P, N = 8, 2, 1500
    A = cplx(rng, (K, P, P))
    X = mix(A, spherical_sources(rng, P, K, N))
    report = run_fdica(X, SolverConfig(iterations=300))
    assert report.alignment.shape == (K, P)
    assert np.all(sir_db(global_system(report.demixer, A)) > 15)


# -- minimum distortion ----------------------------------------------------


def test_minimum_distortion_properties():
    rng = np.random.default_rng(13)
    for _ in range(50):
        K, P = 4, 2
        W, H = cplx(rng, (K, P, P)), cplx(rng, (K, P, P))
        Wr = minimum_distortion_rescale(W)
        G, Gr = global_system(W, H), global_system(Wr, H)
        ratio = Gr / G
        assert np.allclose(ratio, ratio[:, :, :1], rtol=1e-12, atol=0)
        # inverse of the rescaled demixer has a unit diagonal
        inv = np.linalg.inv(Wr)
        assert np.allclose(np.diagonal(inv, axis1=1, axis2=2), 1, atol=1e-12)
        # idempotent and blind to any diagonal prescaling
        Dg = cplx(rng, (K, P))[:, :, None]
        assert np.allclose(minimum_distortion_rescale(Dg * W), Wr, atol=1e-12)
        assert np.allclose(minimum_distortion_rescale(Wr), Wr, atol=1e-12)


def test_minimum_distortion_reference_mic():
    rng = np.random.default_rng(14)
    W = cplx(rng, (3, 2, 2))
    Wr = minimum_distortion_rescale(W, reference=1)
    assert np.allclose(np.linalg.inv(Wr)[:, 1, :], 1, atol=1e-12)


def test_minimum_distortion_singular():
    W = np.tile(np.eye(2, dtype=complex), (3, 1, 1))
    W[1] = 0
    with pytest.raises(SingularMatrixError, match="bin 1"):
        minimum_distortion_rescale(W)


# -- SOS-TRINICON ----------------------------------------------------------


def modulated_sources(rng, T, seg=1000):
    env = np.repeat(rng.uniform(0.1, 2.0, (2, T // seg)), seg, axis=1)
    return rng.standard_normal((2, T)) * env


def test_trinicon_instantaneous_separation():
    rng = np.random.default_rng(15)
    A = np.array([[1.0, 0.6], [0.5, 1.0]])
    x = A @ modulated_sources(rng, 20000)
    report = run_trinicon_sos(x, 1, 1, 1000, SolverConfig.defaults("trinicon-sos", iterations=300))
    assert report.cost_trace[-1] < 0.05 * report.cost_trace[0]
    G = report.demixer.filters[:, :, 0].T @ A
    assert dominance_ratio(G[None]) > 0.99


def test_trinicon_update_vanishes_at_block_diagonal_statistics():
    rng = np.random.default_rng(16)
    P, L, D = 2, 3, 2
    W = TimeDomainDemixer(rng.standard_normal((P, P, L)), D)
    A = rng.standard_normal((4, P * D, P * D + 1))
    from convbss.costs import BlockCovarianceSet

    cov = BlockCovarianceSet(A @ A.transpose(0, 2, 1), P, D)
    cov = BlockCovarianceSet(cov.bdiag(), P, D)
    delta = sos_natural_gradient(W.matrix(), cov)
    assert np.linalg.norm(toeplitz_update_projection(delta, P, L, D)) < 1e-8


def test_trinicon_stays_toeplitz():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 4000)) * np.repeat(rng.uniform(0.2, 2, (2, 8)), 500, axis=1)
    report = run_trinicon_sos(x, 8, 4, 500, SolverConfig(iterations=10, step_size=0.005))
    W = report.demixer
    assert W.filters.shape == (2, 2, 8)
    M = W.matrix()
    for p in range(2):
        for q in range(2):
            block = M[16 * p : 16 * (p + 1), 4 * q : 4 * (q + 1)]
            for j in range(4):
                assert np.array_equal(block[j : j + 8, j], W.filters[p, q])
                assert not np.any(np.delete(block[:, j], np.arange(j, j + 8)))
    assert len(report.cost_trace) == report.iterations + 1


def test_toeplitz_projection_of_toeplitz_update_is_exact():
    rng = np.random.default_rng(18)
    w = rng.standard_normal((2, 2, 5))
    M = TimeDomainDemixer(w, 3).matrix()
    assert np.allclose(toeplitz_update_projection(M, 2, 5, 3), w)


def test_trinicon_needs_two_blocks():
    with pytest.raises(ValueError):
        run_trinicon_sos(np.ones((2, 100)), 2, 2, 80)
