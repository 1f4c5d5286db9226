import numpy as np
import pytest

import toque
from toque.framework.Transport import (
    LogitMatrix,
    EnergyVector,
    TransportProblem,
    cluster_probabilities,
    energy_scores,
    transport_marginals,
    energy_cost,
    sinkhorn_solve,
    harden,
    entropic_objective,
    _epsilon_ladder,
    SCALING_START_SPAN,
)
from toque.framework._supporting_fn import ValidationError


def _uniform(n):
    return np.full(n, 1.0 / n)


def _random_simplex(rng, n):
    x = rng.uniform(0.1, 1.0, size=n)
    return x / x.sum()


def test_cluster_probabilities_examples():
    P = cluster_probabilities(LogitMatrix([[0.0, 5.0, 2.0], [0.0, 5.0, 0.0]]))
    assert np.allclose(P[:, 0], [0.5, 0.5])
    assert np.allclose(P[:, 1], [0.5, 0.5])
    assert np.allclose(P[:, 2], [0.8808, 0.1192], atol=1e-4)
    assert np.allclose(cluster_probabilities(np.full((4, 1), 3.0))[:, 0], 0.25)


def test_cluster_probabilities_extreme_logits_are_stable():
    P = cluster_probabilities(LogitMatrix([[1000.0, -1000.0], [0.0, 0.0]]))
    assert np.all(np.isfinite(P))
    assert np.allclose(P.sum(axis=0), 1.0)


def test_non_finite_logits_name_the_sample():
    values = np.zeros((3, 5))
    values[1, 3] = np.nan
    with pytest.raises(ValidationError, match="sample index 3"):
        LogitMatrix(values)


def test_energy_scores_examples():
    e = energy_scores(LogitMatrix([[0.0, 2.0], [0.0, 0.0]]))
    assert e.raw[0] == pytest.approx(np.log(2))
    assert e.raw[1] == pytest.approx(2.1269, abs=1e-4)
    e4 = energy_scores(np.ones((4, 1)))
    assert e4.raw[0] == pytest.approx(1 + np.log(4))


def test_energy_shift_is_positive_and_order_preserving():
    rng = np.random.default_rng(0)
    for _ in range(100):
        raw = rng.normal(scale=10, size=rng.integers(1, 50))
        e = EnergyVector(raw)
        assert np.all(e.shifted > 0)
        assert np.array_equal(np.argsort(e.shifted, kind="mergesort"), np.argsort(raw, kind="mergesort"))


def test_energy_shift_equivariance():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        logits = rng.normal(scale=3, size=(5, 1))
        c = rng.uniform(-10, 10)
        delta = energy_scores(logits + c).raw[0] - energy_scores(logits).raw[0]
        assert abs(delta - c) <= 1e-10


def test_transport_marginals_examples():
    alpha, beta = transport_marginals(EnergyVector(np.array([0.0, 2.0]), np.array([1.0, 3.0])), 2)
    assert np.allclose(alpha, [0.5, 0.5])
    assert np.allclose(beta, [0.25, 0.75])
    _, beta = transport_marginals(EnergyVector(np.zeros(4), np.array([2.0, 2.0, 4.0, 8.0])), 4)
    assert np.allclose(beta, [0.125, 0.125, 0.25, 0.5])
    _, beta = transport_marginals(EnergyVector(np.full(7, 3.0)), 3)
    assert np.allclose(beta, 1 / 7)
    with pytest.raises(ValidationError):
        transport_marginals(EnergyVector(np.zeros(3)), 0)


def test_energy_cost_examples():
    e = EnergyVector(np.zeros(1), np.array([2.0]))
    assert np.allclose(energy_cost(np.array([[0.2], [0.8]]), e), [[0.4], [1.6]])
    P = np.full((3, 2), 1 / 3)
    assert np.allclose(energy_cost(P, EnergyVector(np.zeros(2), np.array([1.0, 2.0]))), [[1 / 3, 2 / 3]] * 3)
    with pytest.raises(ValidationError):
        energy_cost(P, EnergyVector(np.zeros(3)))


def test_sinkhorn_symmetric_problem():
    problem = TransportProblem(np.ones((2, 2)), _uniform(2), _uniform(2), 0.3)
    q = sinkhorn_solve(problem).q
    assert np.allclose(q, 0.25)


def test_sinkhorn_single_cluster_equals_beta():
    beta = np.array([0.1, 0.2, 0.7])
    assignment = sinkhorn_solve(TransportProblem(np.array([[1.5, 2.0, 3.0]]), np.array([1.0]), beta, 0.05))
    assert np.allclose(assignment.q[0], beta)
    assert assignment.converged


def test_sinkhorn_sharp_epsilon_concentrates_on_diagonal():
    cost = np.array([[2.0, 1.0], [1.0, 2.0]])
    q = sinkhorn_solve(TransportProblem(cost, _uniform(2), _uniform(2), 0.01)).q
    assert np.allclose(q, [[0.5, 0.0], [0.0, 0.5]], atol=1e-3)


def test_sinkhorn_rejects_nonpositive_cost():
    with pytest.raises(ValidationError, match="strictly positive"):
        TransportProblem(np.array([[1.0, 0.0]]), np.array([1.0]), _uniform(2), 0.05)


def test_sinkhorn_rejects_bad_marginals():
    with pytest.raises(ValidationError):
        TransportProblem(np.ones((2, 2)), np.array([0.6, 0.6]), _uniform(2), 0.05)


def test_sinkhorn_flags_non_convergence():
    rng = np.random.default_rng(2)
    cost = rng.uniform(1.0, 3.0, size=(4, 6))
    assignment = sinkhorn_solve(TransportProblem(cost, _uniform(4), _random_simplex(rng, 6), 0.05),
                                tol=1e-12, max_iter=1)
    assert not assignment.converged
    assert assignment.iterations_used == 1


def _bounded_span_problem(rng, K, N, span, epsilon):
    # log-kernel entries in [0, span]: projective diameter at most 2 * span
    log_kernel = rng.uniform(0.0, span, size=(K, N))
    return TransportProblem(np.exp(epsilon * log_kernel), _uniform(K), _random_simplex(rng, N), epsilon)


def test_sinkhorn_feasibility_on_bounded_span_kernels():
    rng = np.random.default_rng(3)
    for trial in range(200):
        K, N = rng.integers(1, 65), rng.integers(1, 257)
        epsilon = (0.05, 0.01)[trial % 2]
        problem = _bounded_span_problem(rng, K, N, 5.0, epsilon)
        assignment = sinkhorn_solve(problem, tol=1e-6, max_iter=1000, log_domain=trial % 4 == 3)
        assert assignment.converged
        assert assignment.row_marginal_error <= 1e-6
        assert assignment.col_marginal_error <= 1e-6
        assert np.all(assignment.q >= 0)
        assert assignment.row_marginal_error == pytest.approx(np.abs(assignment.q.sum(axis=1) - problem.alpha).sum())


def test_energy_transport_reports_its_marginal_errors():
    rng = np.random.default_rng(13)
    for _ in range(25):
        K, N = rng.integers(2, 65), rng.integers(2, 257)
        logits = rng.normal(scale=3, size=(K, N))
        assignment, clusters, energy = toque.energy_transport(logits, epsilon=0.05, max_iter=1000,
                                                              epsilon_scaling=True)
        beta = energy.shifted / energy.shifted.sum()
        assert np.all(np.isfinite(assignment.q)) and np.all(assignment.q >= 0)
        assert assignment.iterations_used <= 1000
        assert assignment.col_marginal_error <= 1e-9
        assert assignment.row_marginal_error == pytest.approx(np.abs(assignment.q.sum(axis=1) - 1.0 / K).sum())
        assert assignment.col_marginal_error == pytest.approx(np.abs(assignment.q.sum(axis=0) - beta).sum(), abs=1e-15)
        assert assignment.converged == (assignment.row_marginal_error <= 1e-6)
        assert clusters.min() >= 0 and clusters.max() < K


def test_epsilon_ladder_halves_down_to_epsilon():
    rng = np.random.default_rng(14)
    for _ in range(100):
        log_cost = np.log(rng.uniform(1e-6, 1.0, size=(rng.integers(1, 10), rng.integers(1, 20))))
        epsilon = rng.uniform(0.005, 0.5)
        ladder = _epsilon_ladder(log_cost, epsilon)
        span = (log_cost.max(axis=0) - log_cost.min(axis=0)).max()
        assert ladder[-1] == epsilon
        assert span / ladder[0] <= SCALING_START_SPAN + 1e-9
        assert all(b < a and b >= a / 2 for a, b in zip(ladder, ladder[1:]))


def test_epsilon_scaling_reaches_the_plain_coupling():
    rng = np.random.default_rng(15)
    staged = 0
    for _ in range(40):
        cost = rng.uniform(1.0, 3.0, size=(2, 3))
        problem = TransportProblem(cost, _random_simplex(rng, 2), _random_simplex(rng, 3), 0.05)
        staged += len(_epsilon_ladder(np.log(cost), 0.05)) > 1
        plain = sinkhorn_solve(problem, tol=1e-10, max_iter=100000)
        scaled = sinkhorn_solve(problem, tol=1e-10, max_iter=100000, epsilon_scaling=True)
        assert scaled.converged and scaled.log_domain
        assert np.allclose(scaled.q, plain.q, atol=1e-7)
    assert staged > 0


def test_epsilon_scaling_stays_within_budget():
    rng = np.random.default_rng(16)
    cost = rng.uniform(1e-3, 1.0, size=(5, 9))
    problem = TransportProblem(cost, _uniform(5), _random_simplex(rng, 9), 0.01)
    assert len(_epsilon_ladder(np.log(cost), 0.01)) > 3
    assignment = sinkhorn_solve(problem, tol=1e-12, max_iter=7, epsilon_scaling=True)
    assert assignment.iterations_used <= 7
    assert not assignment.converged


def _solve_energy_problem(P, energy, epsilon=0.5):
    alpha, beta = transport_marginals(energy, P.shape[0])
    problem = TransportProblem(energy_cost(P, energy), alpha, beta, epsilon)
    return(beta, sinkhorn_solve(problem, tol=1e-10, max_iter=20000))


def test_scaling_shifted_energy_leaves_assignment_unchanged():
    rng = np.random.default_rng(17)
    for _ in range(30):
        logits = rng.normal(size=(rng.integers(2, 9), rng.integers(2, 40)))
        P = cluster_probabilities(logits)
        energy = energy_scores(logits)
        beta, assignment = _solve_energy_problem(P, energy)
        c = 10 ** rng.uniform(-3, 3)
        beta_c, assignment_c = _solve_energy_problem(P, energy.scaled(c))
        assert np.allclose(beta_c, beta, rtol=1e-12, atol=0)
        assert np.allclose(assignment_c.q, assignment.q, atol=1e-8)
        assert np.array_equal(harden(assignment_c), harden(assignment))


def test_permuting_samples_and_clusters_permutes_the_assignment():
    rng = np.random.default_rng(18)
    for _ in range(30):
        K, N = rng.integers(2, 9), rng.integers(2, 40)
        logits = rng.normal(size=(K, N))
        cols, rows = rng.permutation(N), rng.permutation(K)
        base, clusters, energy = toque.energy_transport(logits, epsilon=0.5, tol=1e-10, max_iter=20000)
        moved, moved_clusters, moved_energy = toque.energy_transport(logits[rows][:, cols], epsilon=0.5,
                                                                     tol=1e-10, max_iter=20000)
        beta = energy.shifted / energy.shifted.sum()
        moved_beta = moved_energy.shifted / moved_energy.shifted.sum()
        assert np.allclose(moved_beta, beta[cols], rtol=1e-12, atol=0)
        assert np.allclose(moved.q, base.q[rows][:, cols], atol=1e-8)
        assert np.array_equal(rows[moved_clusters], clusters[cols])


def _grid_best(cost, alpha, beta, epsilon):
    '''Brute-force maximum of the entropic objective over the 2 x N transport polytope.'''
    a = alpha[0]

    def objective(top):
        q = np.stack([top, beta[None, :] - top], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            qlogq = np.where(q > 0, q * np.log(q), 0.0)
        return (q * np.log(cost)[None]).sum(axis=(1, 2)) - epsilon * qlogq.sum(axis=(1, 2))

    if len(beta) == 2:
        lo, hi = max(0.0, a - beta[1]), min(a, beta[0])
        q0 = np.arange(lo, hi + 1e-12, 1e-4)
        top = np.stack([q0, a - q0], axis=1)
        return objective(top).max()

    def scan(lo0, hi0, lo1, hi1, step):
        g0, g1 = np.meshgrid(np.arange(lo0, hi0 + 1e-12, step), np.arange(lo1, hi1 + 1e-12, step))
        top = np.stack([g0.ravel(), g1.ravel(), a - g0.ravel() - g1.ravel()], axis=1)
        feasible = np.all((top >= 0) & (top <= beta[None, :]), axis=1)
        top = top[feasible]
        values = objective(top)
        best = np.argmax(values)
        return(values[best], top[best])

    _, top = scan(0.0, beta[0], 0.0, beta[1], 2e-3)
    value, _ = scan(max(0.0, top[0] - 3e-3), min(beta[0], top[0] + 3e-3),
                    max(0.0, top[1] - 3e-3), min(beta[1], top[1] + 3e-3), 2e-5)
    return value


@pytest.mark.parametrize("epsilon", [0.05, 0.1])
def test_sinkhorn_matches_brute_force_optimum(epsilon):
    rng = np.random.default_rng(4)
    for trial in range(50):
        N = 2 + trial % 2
        cost = rng.uniform(1.0, 2.0, size=(2, N))
        alpha = _random_simplex(rng, 2)
        beta = _random_simplex(rng, N)
        assignment = sinkhorn_solve(TransportProblem(cost, alpha, beta, epsilon), tol=1e-10, max_iter=100000)
        solved = entropic_objective(assignment.q, cost, epsilon)
        assert abs(solved - _grid_best(cost, alpha, beta, epsilon)) <= 1e-4


def test_log_domain_matches_dense():
    rng = np.random.default_rng(5)
    for _ in range(20):
        K, N = rng.integers(2, 10), rng.integers(2, 30)
        cost = rng.uniform(1.0, 1.5, size=(K, N))
        problem = TransportProblem(cost, _uniform(K), _random_simplex(rng, N), 0.05)
        dense = sinkhorn_solve(problem, tol=1e-12, max_iter=5000)
        logd = sinkhorn_solve(problem, tol=1e-12, max_iter=5000, log_domain=True)
        assert logd.log_domain
        assert np.allclose(dense.q, logd.q, atol=1e-8)


def test_underflowing_kernel_switches_to_log_domain():
    cost = np.array([[1.0, 1.0, 1.0], [1e-40, 1e-40, 1e-40]])
    problem = TransportProblem(cost, _uniform(2), _uniform(3), 0.05)
    assignment = sinkhorn_solve(problem, tol=1e-9, max_iter=5000)
    assert assignment.log_domain
    assert np.all(np.isfinite(assignment.q))


def test_harden_examples():
    assert harden(np.array([[0.7], [0.3]]))[0] == 0
    assert harden(np.array([[0.5], [0.5]]))[0] == 0
    assert np.array_equal(harden(np.diag([0.2, 0.3, 0.5])), [0, 1, 2])


def test_energy_transport_end_to_end():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(8, 40))
    assignment, clusters, energy = toque.energy_transport(logits, epsilon=0.5, tol=1e-8, max_iter=5000)
    assert assignment.shape == (8, 40)
    assert clusters.shape == (40,)
    assert clusters.min() >= 0 and clusters.max() < 8
    assert np.allclose(assignment.q.sum(axis=0), energy.shifted / energy.shifted.sum(), atol=1e-7)


def test_from_batch_transposes():
    batch = np.arange(6, dtype=float).reshape(3, 2)
    logits = LogitMatrix.from_batch(batch)
    assert (logits.K, logits.N) == (2, 3)
