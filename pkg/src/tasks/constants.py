"""
Problem constants behind the step-size rule: smoothness, gradient noise,
client dissimilarity (G, B) and the initial suboptimality M.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize, nnls

from src.tasks.builders import FederatedTask
from src.tasks.oracle import GradientOracle

logger = logging.getLogger(__name__)

MIN_PROBE_POINTS = 10


@dataclass
class HeterogeneityProfile:
    """
    Dissimilarity controls of a task and the fitted (G^2, B^2) envelope of
    (1/N) sum_i ||grad f_i(w)||^2 <= G^2 + B^2 ||grad f(w)||^2.
    """
    skew: float
    shift: float
    G_sq: float
    B_sq: float
    client_sq_norms: np.ndarray = field(repr=False, default=None)
    global_sq_norms: np.ndarray = field(repr=False, default=None)

    @property
    def G(self) -> float:
        return math.sqrt(self.G_sq)

    @property
    def B(self) -> float:
        return math.sqrt(self.B_sq)


@dataclass
class ConvergenceConstants:
    """
    Constants of the convergence bound for an N-client task.

    sigma_tilde_sq and gamma depend on the participation S and theta on the
    anchor staleness K * V, so they are exposed as methods.
    """
    M: float
    beta: float
    sigma_sq: float
    G_sq: float
    B_sq: float
    clients: int
    optimal_value: Optional[float] = None
    profile: Optional[HeterogeneityProfile] = None

    def __post_init__(self):
        for name in ('M', 'beta', 'sigma_sq', 'G_sq', 'B_sq'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    def sigma_tilde_sq(self, S: int) -> float:
        return self.sigma_sq + 4.0 * (1.0 - S / self.clients) * self.G_sq

    def gamma(self, S: int) -> float:
        return 1.0 + (1.0 - S / self.clients) * self.B_sq / S

    @staticmethod
    def theta(omega: float, K: int, V: int) -> float:
        return omega * K * V + 1.0

    def as_dict(self, S: int = None) -> dict:
        out = {
            'M': self.M, 'beta': self.beta, 'sigma_sq': self.sigma_sq,
            'G_sq': self.G_sq, 'B_sq': self.B_sq, 'clients': self.clients,
        }
        if S is not None:
            out['sigma_tilde_sq'] = self.sigma_tilde_sq(S)
            out['gamma'] = self.gamma(S)
        return out


# ----- Reference optimum -----

def reference_optimum(task: FederatedTask, tol: float = 1e-10, max_iter: int = 2000):
    """
    Minimiser and minimum of the global objective.

    Closed form for quadratic and counter-example tasks, L-BFGS otherwise.
    The result is cached on the task.

    Returns:
        tuple: (w*, f*)
    """
    if task.optimum is not None and task.optimal_value is not None:
        return task.optimum, task.optimal_value
    result = minimize(task.loss, task.initial_weights, jac=task.gradient, method='L-BFGS-B',
                      options={'maxiter': max_iter, 'gtol': tol, 'ftol': tol})
    if not result.success:
        logger.warning(f"Reference optimisation for {task.name} stopped early: {result.message}")
    task.optimum = np.asarray(result.x, dtype=np.float64)
    task.optimal_value = float(result.fun)
    return task.optimum, task.optimal_value


# ----- Estimation -----

def fit_dissimilarity(client_sq_norms, global_sq_norms):
    """
    Upper envelope y <= G^2 + B^2 x of the per-probe gradient norms.

    Non-negative least squares gives the slope and intercept; the intercept
    is then raised until every probe satisfies the inequality.
    """
    y = np.asarray(client_sq_norms, dtype=np.float64)
    x = np.asarray(global_sq_norms, dtype=np.float64)
    design = np.column_stack([np.ones_like(x), x])
    scale = max(1.0, float(np.max(np.abs(y))))
    (G_sq, B_sq), _ = nnls(design, y / scale)
    G_sq, B_sq = G_sq * scale, B_sq * scale
    excess = float(np.max(y - G_sq - B_sq * x))
    if excess > 0:
        G_sq += excess
    return G_sq, B_sq


def estimate_smoothness(task: FederatedTask, probe_points, radius: float = 1e-3, seed: int = 0) -> float:
    """Largest observed gradient Lipschitz ratio around the probe points."""
    rng = np.random.default_rng([int(seed), 0x5300])
    ratios = []
    for w in probe_points:
        u = rng.normal(size=task.dimension)
        u *= radius / np.linalg.norm(u)
        for obj in task.objectives:
            ratios.append(np.linalg.norm(obj.gradient(w + u) - obj.gradient(w)) / radius)
    return float(max(ratios))


def estimate_constants(task: FederatedTask, probe_points, oracle: GradientOracle, draws: int = 8) -> ConvergenceConstants:
    """
    Measure the convergence constants of a task at a set of probe points.

    Args:
        task: federated task
        probe_points: at least 10 weight vectors
        oracle: gradient oracle whose noise is measured
        draws: oracle draws per (probe, client) for the variance estimate

    Returns:
        ConvergenceConstants: sigma^2 is the largest per-client oracle
        variance seen, beta is analytic when the task provides it
    """
    probes = [np.asarray(w, dtype=np.float64).ravel() for w in probe_points]
    if len(probes) < MIN_PROBE_POINTS:
        raise ValueError(f"need at least {MIN_PROBE_POINTS} probe points, got {len(probes)}")

    client_sq, global_sq, variances = [], [], []
    for w in probes:
        grads = task.client_gradients(w)
        client_sq.append(float(np.mean(np.sum(grads ** 2, axis=1))))
        global_sq.append(float(np.sum(grads.mean(axis=0) ** 2)))
        variances.append(max(oracle.variance(i, w, draws) for i in range(task.clients)))
    G_sq, B_sq = fit_dissimilarity(client_sq, global_sq)

    beta = task.smoothness
    if beta is None:
        beta = estimate_smoothness(task, probes)
    _, f_star = reference_optimum(task)
    M = max(0.0, task.loss(task.initial_weights) - f_star)

    profile = HeterogeneityProfile(task.skew, task.shift, G_sq, B_sq, np.asarray(client_sq), np.asarray(global_sq))
    constants = ConvergenceConstants(M=M, beta=beta, sigma_sq=float(max(variances)), G_sq=G_sq, B_sq=B_sq,
                                     clients=task.clients, optimal_value=f_star, profile=profile)
    logger.info(f"Estimated constants for {task.name}: {constants.as_dict()}")
    return constants


def probe_points_around(task: FederatedTask, count: int = MIN_PROBE_POINTS, radius: float = 1.0, seed: int = 0):
    """Probe points spread between the initial weights and the reference optimum."""
    rng = np.random.default_rng([int(seed), 0x9B0B])
    start = task.initial_weights
    end = task.optimum if task.optimum is not None else start
    points = []
    for k in range(count):
        mix = k / max(1, count - 1)
        points.append((1.0 - mix) * start + mix * end + radius * rng.normal(size=task.dimension) / np.sqrt(task.dimension))
    return points


# ----- Step size -----

def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def tuned_eta(constants: ConvergenceConstants, T: int, S: int, omega: float, K: int, V: int) -> float:
    """
    Step size min{1/(30 gamma beta theta), sqrt(2MS/(beta sigma~^2 T)),
    (MS/(12 beta^2 omega^2 K V sigma~^2 T))^(1/3)}.

    A zero omega or zero sigma~^2 makes the corresponding terms infinite.
    """
    _check_positive(M=constants.M, beta=constants.beta, T=T, S=S, K=K, V=V)
    if omega < 0:
        raise ValueError(f"omega must be non-negative, got {omega}")
    M, beta = constants.M, constants.beta
    sigma_t = constants.sigma_tilde_sq(S)
    staleness = K * V

    first = 1.0 / (30.0 * constants.gamma(S) * beta * ConvergenceConstants.theta(omega, K, V))
    second = math.sqrt(2.0 * M * S / (beta * sigma_t * T)) if sigma_t > 0 else math.inf
    if omega > 0 and sigma_t > 0:
        third = (M * S / (12.0 * beta ** 2 * omega ** 2 * staleness * sigma_t * T)) ** (1.0 / 3.0)
    else:
        third = math.inf
    return min(first, second, third)


def rate_bound(constants: ConvergenceConstants, T: int, S: int, omega: float, K: int, V: int) -> float:
    """Guaranteed bound on the averaged squared gradient norm under tuned_eta."""
    _check_positive(T=T, S=S, K=K, V=V)
    M, beta = constants.M, constants.beta
    sigma_t = constants.sigma_tilde_sq(S)
    theta = ConvergenceConstants.theta(omega, K, V)
    slow = 4.0 * math.sqrt(2.0 * M * beta * sigma_t / (T * S))
    middle = 8.0 * (12.0 * M ** 2 * beta ** 2 * omega ** 2 * K * V * sigma_t) ** (1.0 / 3.0) / (T ** (2.0 / 3.0) * S ** (1.0 / 3.0))
    fast = 120.0 * constants.gamma(S) * M * beta * theta / T
    return slow + middle + fast
