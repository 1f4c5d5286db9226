from typing import Tuple, Union
import numpy as np
from scipy.special import logsumexp, softmax

from ._supporting_fn import (
    ValidationError,
    _check_finite_columns,
    _check_probability_vector,
    warn,
    debug,
)

ENERGY_SHIFT_DELTA = 1e-3
KERNEL_EXPONENTS = ("inverse", "literal")
# epsilon scaling: log-kernel span of the first stage, marginal tolerance of the stages before the last
SCALING_START_SPAN = 10.0
SCALING_STAGE_TOL = 1e-3


class LogitMatrix:
    '''
    Per-sample logits, K rows (clusters for the OT head, classes for the classifier) by N columns (samples).
    '''
    row_kinds = ("cluster", "class")

    def __init__(self, values, row_kind: str = "cluster"):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValidationError("Logits must be a 2D matrix, got {} dimensions.".format(values.ndim))
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError("Logits must have K >= 1 rows and N >= 1 columns, got {}.".format(values.shape))
        if row_kind not in type(self).row_kinds:
            raise ValidationError("row_kind should be one of {}.".format(type(self).row_kinds))
        _check_finite_columns(values, "logits")
        self.values = values
        self.row_kind = row_kind

    @classmethod
    def from_batch(cls, batch_logits: np.ndarray, row_kind: str = "cluster"):
        '''Network outputs are B x K; the transport works on K x B.'''
        return(cls(np.asarray(batch_logits).T, row_kind=row_kind))

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def N(self):
        return self.values.shape[1]

    def __repr__(self):
        return("LogitMatrix({} x {}, {})".format(self.K, self.N, self.row_kind))


class EnergyVector:
    def __init__(self, raw: np.ndarray, shifted: np.ndarray = None):
        self.raw = np.asarray(raw, dtype=float)
        if shifted is None:
            shifted = _shift_energy(self.raw)
        self.shifted = np.asarray(shifted, dtype=float)
        if self.raw.shape != self.shifted.shape:
            raise ValidationError("raw and shifted energies differ in length.")
        if np.any(self.shifted <= 0):
            raise ValidationError("Shifted energies must be strictly positive.")

    def __len__(self):
        return len(self.raw)

    def scaled(self, c: float):
        '''Same ordering, shifted energies multiplied by c > 0.'''
        if c <= 0:
            raise ValidationError("Energy scale must be positive.")
        return(type(self)(self.raw, self.shifted * c))


class TransportProblem:
    def __init__(self, cost: np.ndarray, alpha: np.ndarray, beta: np.ndarray, epsilon: float):
        cost = np.array(cost, dtype=float)
        if cost.ndim != 2:
            raise ValidationError("Cost must be a K x N matrix.")
        if not np.all(np.isfinite(cost)):
            raise ValidationError("Cost has non-finite entries.")
        if np.any(cost <= 0):
            bad = np.argwhere(cost <= 0)[0]
            raise ValidationError(
                "Cost entries must be strictly positive; entry ({}, {}) is {!r}.".format(
                    bad[0], bad[1], float(cost[bad[0], bad[1]]))
            )
        alpha = _check_probability_vector(alpha, "alpha")
        beta = _check_probability_vector(beta, "beta", strictly_positive=True)
        if cost.shape != (len(alpha), len(beta)):
            raise ValidationError(
                "Cost shape {} does not match marginals ({}, {}).".format(cost.shape, len(alpha), len(beta))
            )
        if not epsilon > 0:
            raise ValidationError("epsilon must be positive, got {!r}.".format(epsilon))
        self.cost = cost
        self.alpha = alpha
        self.beta = beta
        self.epsilon = float(epsilon)

    @property
    def shape(self):
        return self.cost.shape


class AssignmentMatrix:
    def __init__(self, q, row_marginal_error, col_marginal_error, iterations_used, scalings,
                 converged: bool, tol: float, log_domain: bool = False):
        self.q = q
        self.row_marginal_error = row_marginal_error
        self.col_marginal_error = col_marginal_error
        self.iterations_used = iterations_used
        # scale the column-normalized kernel, see sinkhorn_solve
        self.scalings = scalings
        self.converged = converged
        self.tol = tol
        self.log_domain = log_domain

    @property
    def shape(self):
        return self.q.shape

    def report(self) -> str:
        return("converged={} iterations={} row_error={:.3e} col_error={:.3e} log_domain={}".format(
            self.converged, self.iterations_used, self.row_marginal_error,
            self.col_marginal_error, self.log_domain))

    def __repr__(self):
        return("AssignmentMatrix({} x {}, {})".format(*self.q.shape, self.report()))


def _as_logits(logits: Union[LogitMatrix, np.ndarray]) -> LogitMatrix:
    if isinstance(logits, LogitMatrix):
        return logits
    return LogitMatrix(logits)


def _shift_energy(raw: np.ndarray, delta: float = ENERGY_SHIFT_DELTA) -> np.ndarray:
    '''
    Order-preserving shift that makes every energy strictly positive.
    All-equal energies map to a constant vector.
    '''
    raw = np.asarray(raw, dtype=float)
    lo = raw.min()
    spread = raw.max() - lo
    return raw - lo + delta * max(spread, 1.0)


def cluster_probabilities(logits: Union[LogitMatrix, np.ndarray]) -> np.ndarray:
    '''
    Column-wise softmax p(c|x_i) of a K x N logit matrix.
    '''
    logits = _as_logits(logits)
    return softmax(logits.values, axis=0)


def energy_scores(logits: Union[LogitMatrix, np.ndarray]) -> EnergyVector:
    logits = _as_logits(logits)
    raw = logsumexp(logits.values, axis=0)
    return EnergyVector(raw)


def transport_marginals(energy: EnergyVector, K: int) -> Tuple[np.ndarray, np.ndarray]:
    if K < 1:
        raise ValidationError("Number of clusters K must be at least 1, got {}.".format(K))
    if np.any(energy.shifted <= 0):
        raise ValidationError("Shifted energies must be strictly positive.")
    alpha = np.full(K, 1.0 / K)
    beta = energy.shifted / energy.shifted.sum()
    return(alpha, beta)


def energy_cost(P: np.ndarray, energy: EnergyVector) -> np.ndarray:
    '''
    Energy transport cost: every column of P scaled by that sample's shifted energy.
    '''
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != len(energy):
        raise ValidationError(
            "Probability matrix shape {} does not match {} energies.".format(P.shape, len(energy))
        )
    return P * energy.shifted[None, :]


def _log_kernel(problem: TransportProblem, exponent: str) -> np.ndarray:
    if exponent not in KERNEL_EXPONENTS:
        raise ValidationError("kernel exponent should be one of {}.".format(KERNEL_EXPONENTS))
    power = 1.0 / problem.epsilon if exponent == "inverse" else problem.epsilon
    log_kernel = np.log(problem.cost) * power
    # per-column constants are absorbed by v
    return log_kernel - log_kernel.max(axis=0, keepdims=True)


def _marginal_errors(q: np.ndarray, alpha: np.ndarray, beta: np.ndarray):
    row_error = float(np.abs(q.sum(axis=1) - alpha).sum())
    col_error = float(np.abs(q.sum(axis=0) - beta).sum())
    return(row_error, col_error)


def _sinkhorn_dense(log_kernel, alpha, beta, tol, max_iter):
    M = np.exp(log_kernel)
    u = np.ones(M.shape[0])
    v = np.ones(M.shape[1])
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        u = alpha / (M @ v)
        v = beta / (M.T @ u)
        row_error = np.abs(u * (M @ v) - alpha).sum()
        col_error = np.abs(v * (M.T @ u) - beta).sum()
        if row_error <= tol and col_error <= tol:
            converged = True
            break
    q = u[:, None] * M * v[None, :]
    return(q, u, v, n_iter, converged)


def _sinkhorn_log(log_kernel, alpha, beta, tol, max_iter, g0=None):
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha)
        log_beta = np.log(beta)
    f = np.zeros(log_kernel.shape[0])
    g = np.zeros(log_kernel.shape[1]) if g0 is None else np.array(g0, dtype=float)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        f = log_alpha - logsumexp(log_kernel + g[None, :], axis=1)
        g = log_beta - logsumexp(log_kernel + f[:, None], axis=0)
        q = np.exp(log_kernel + f[:, None] + g[None, :])
        row_error, col_error = _marginal_errors(q, alpha, beta)
        if row_error <= tol and col_error <= tol:
            converged = True
            break
    q = np.exp(log_kernel + f[:, None] + g[None, :])
    return(q, f, g, n_iter, converged)


def _epsilon_ladder(log_cost: np.ndarray, epsilon: float):
    '''Halving epsilons from one that keeps the log-kernel span near SCALING_START_SPAN down to epsilon.'''
    span = float((log_cost.max(axis=0) - log_cost.min(axis=0)).max())
    ladder = [max(epsilon, span / SCALING_START_SPAN)]
    while ladder[-1] > epsilon:
        ladder.append(max(epsilon, ladder[-1] / 2))
    return ladder


def _sinkhorn_scaled(log_cost, epsilon, alpha, beta, tol, max_iter):
    '''
    Log-domain Sinkhorn over a decreasing epsilon ladder. Each stage starts from the
    previous column potential, carried across stages in cost units (g * epsilon).
    Earlier stages stop at SCALING_STAGE_TOL and together use less than max_iter.
    '''
    centered = log_cost - log_cost.max(axis=0, keepdims=True)
    ladder = _epsilon_ladder(log_cost, epsilon)
    potential = None
    used = 0
    for eps in ladder[:-1]:
        budget = (max_iter - used) // 2
        if budget < 1:
            break
        g0 = None if potential is None else potential / eps
        _, _, g, n_iter, _ = _sinkhorn_log(centered / eps, alpha, beta, max(tol, SCALING_STAGE_TOL), budget, g0)
        potential = g * eps
        used += n_iter
    g0 = None if potential is None else potential / epsilon
    q, f, g, n_iter, converged = _sinkhorn_log(centered / epsilon, alpha, beta, tol, max_iter - used, g0)
    debug("Epsilon scaling over {} stages.".format(len(ladder)))
    return(q, f, g, used + n_iter, converged)


def sinkhorn_solve(
    problem: TransportProblem,
    tol: float = 1e-6,
    max_iter: int = 1000,
    log_domain: bool = False,
    exponent: str = "inverse",
    epsilon_scaling: bool = False,
) -> AssignmentMatrix:
    '''
    Entropic OT by Sinkhorn-Knopp scaling.

    The kernel is cost ** (1/epsilon) element-wise (exponent="inverse"), so smaller
    epsilon sharpens the coupling. exponent="literal" uses cost ** epsilon instead.
    Columns of the kernel are rescaled by their maxima before iterating; the
    returned scalings (u, v) refer to that rescaled kernel.
    The dense path switches to log-domain updates when the kernel underflows.

    epsilon_scaling solves a ladder of larger epsilons first (inverse exponent
    only, always in the log domain) and reaches the same coupling. From u = v = 1,
    convergence within max_iter is guaranteed only for kernels of small
    projective diameter (log-kernel span up to about 5 for tol 1e-6 and 1000
    iterations); beyond that the solve may stop unconverged and is flagged.
    '''
    if not tol > 0:
        raise ValidationError("tol must be positive, got {!r}.".format(tol))
    if max_iter < 1:
        raise ValidationError("max_iter must be at least 1, got {!r}.".format(max_iter))

    log_kernel = _log_kernel(problem, exponent)
    if epsilon_scaling and exponent != "inverse":
        debug("Epsilon scaling needs the inverse exponent; solving at epsilon directly.")
        epsilon_scaling = False
    if epsilon_scaling:
        log_domain = True
    elif not log_domain:
        underflow = ~np.any(log_kernel > -700.0, axis=1)
        if underflow.any():
            warn("Kernel rows {} underflow in the dense domain; using log-domain iterations.".format(
                np.where(underflow)[0][:5].tolist()))
            log_domain = True

    if epsilon_scaling:
        q, f, g, n_iter, converged = _sinkhorn_scaled(np.log(problem.cost), problem.epsilon, problem.alpha,
                                                      problem.beta, tol, max_iter)
    elif log_domain:
        q, f, g, n_iter, converged = _sinkhorn_log(log_kernel, problem.alpha, problem.beta, tol, max_iter)
    if log_domain:
        with np.errstate(over="ignore"):
            u, v = np.exp(f), np.exp(g)
    else:
        q, u, v, n_iter, converged = _sinkhorn_dense(log_kernel, problem.alpha, problem.beta, tol, max_iter)

    row_error, col_error = _marginal_errors(q, problem.alpha, problem.beta)
    converged = converged and row_error <= tol and col_error <= tol
    if not converged:
        warn("Sinkhorn did not converge in {} iterations (row error {:.3e}, column error {:.3e}).".format(
            n_iter, row_error, col_error))
    else:
        debug("Sinkhorn converged in {} iterations.".format(n_iter))
    return AssignmentMatrix(
        q=q,
        row_marginal_error=row_error,
        col_marginal_error=col_error,
        iterations_used=n_iter,
        scalings=(u, v),
        converged=converged,
        tol=tol,
        log_domain=log_domain,
    )


def harden(q: Union[AssignmentMatrix, np.ndarray]) -> np.ndarray:
    '''Cluster index per sample; ties go to the lowest row.'''
    q = q.q if isinstance(q, AssignmentMatrix) else np.asarray(q)
    return np.argmax(q, axis=0)


def entropic_objective(q: np.ndarray, cost: np.ndarray, epsilon: float) -> float:
    '''<Q, log cost> - epsilon * sum Q log Q, with 0 log 0 = 0.'''
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(q > 0, q * np.log(q), 0.0)
    return float((q * np.log(cost)).sum() - epsilon * qlogq.sum())


def energy_transport(
    logits: Union[LogitMatrix, np.ndarray],
    epsilon: float = 0.05,
    tol: float = 1e-6,
    max_iter: int = 1000,
    log_domain: bool = False,
    exponent: str = "inverse",
    epsilon_scaling: bool = False,
):
    '''
    Full energy-weighted assignment of N samples to K clusters from OT-head logits.
    Returns the AssignmentMatrix, hardened cluster indices and the energies used.
    '''
    logits = _as_logits(logits)
    # softmax can round to exactly 0 for extreme logits; the cost must stay positive
    P = np.maximum(cluster_probabilities(logits), 1e-300)
    energy = energy_scores(logits)
    alpha, beta = transport_marginals(energy, logits.K)
    problem = TransportProblem(energy_cost(P, energy), alpha, beta, epsilon)
    assignment = sinkhorn_solve(problem, tol=tol, max_iter=max_iter, log_domain=log_domain,
                                exponent=exponent, epsilon_scaling=epsilon_scaling)
    return(assignment, harden(assignment), energy)
