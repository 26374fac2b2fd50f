"""
Federated task builders: synthetic datasets, client partitions and the
objective set every client trains on.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.stats import ortho_group
from sklearn.datasets import make_classification
from sklearn.preprocessing import StandardScaler

from src.tasks.objectives import (
    CounterexampleObjective,
    LocalObjective,
    LogisticObjective,
    MlpObjective,
    QuadraticObjective,
    mlp_parameter_count,
)

logger = logging.getLogger(__name__)

MAX_MLP_PARAMETERS = 100_000

_DATA_STREAM = 0xDA7A
_INIT_STREAM = 0x1417


@dataclass(eq=False)
class FederatedTask:
    """
    The objective set of a federated problem.

    The global objective is the unweighted mean of the client objectives.
    `optimum` / `optimal_value` are filled in closed form where possible and
    otherwise by `reference_optimum`.
    """
    name: str
    objectives: List[LocalObjective]
    initial_weights: np.ndarray
    optimum: Optional[np.ndarray] = None
    optimal_value: Optional[float] = None
    skew: float = 0.0
    shift: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.initial_weights = np.asarray(self.initial_weights, dtype=np.float64).ravel()
        dims = {obj.dimension for obj in self.objectives}
        if not self.objectives or dims != {self.initial_weights.size}:
            raise ValueError("every client objective must match the initial weight dimension")

    @property
    def dimension(self) -> int:
        return self.initial_weights.size

    @property
    def clients(self) -> int:
        return len(self.objectives)

    @property
    def kind(self) -> str:
        return self.objectives[0].kind

    @property
    def degenerate_clients(self) -> list:
        return [obj.client_id for obj in self.objectives if obj.degenerate]

    @property
    def smoothness(self):
        """Global smoothness bound (max over clients) when analytic, else None."""
        betas = [obj.smoothness for obj in self.objectives]
        if any(b is None for b in betas):
            return None
        return max(betas)

    def loss(self, w) -> float:
        return float(np.mean([obj.loss(w) for obj in self.objectives]))

    def gradient(self, w) -> np.ndarray:
        return np.mean([obj.gradient(w) for obj in self.objectives], axis=0)

    def client_gradients(self, w) -> np.ndarray:
        return np.stack([obj.gradient(w) for obj in self.objectives])


# ============================================================================
# COUNTER-EXAMPLE AND QUADRATICS
# ============================================================================

def make_counterexample(clients: int = 1, initial: float = 0.0) -> FederatedTask:
    """Scalar task whose every client holds f(w) = (w-1)^2/2 + [w-1]_+^2/2."""
    objectives = [CounterexampleObjective(i) for i in range(clients)]
    return FederatedTask('counterexample', objectives, [initial], optimum=np.ones(1), optimal_value=0.0)


def make_quadratic(d: int, condition: float, seed: int, clients: int = 10, heterogeneity: float = 1.0,
                   noise: float = 0.0, centers=None, matrix=None) -> FederatedTask:
    """
    Quadratics sharing one SPD matrix A with eigenvalues spread over [1/condition, 1].

    Args:
        d: dimension
        condition: condition number of A, >= 1
        seed: data seed
        clients: number of clients N
        heterogeneity: scale of the client centers c_i
        noise: standard deviation of additive gradient noise
        centers: explicit (N, d) centers, overriding the random ones
        matrix: explicit SPD matrix, overriding the random one

    Returns:
        FederatedTask: optimum is the mean center, beta = lambda_max(A)
    """
    if condition < 1:
        raise ValueError(f"condition number must be >= 1, got {condition}")
    rng = np.random.default_rng([int(seed), _DATA_STREAM])

    if matrix is None:
        eigenvalues = np.linspace(1.0 / condition, 1.0, d) if d > 1 else np.ones(1)
        Q = ortho_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1))
        matrix = (Q * eigenvalues) @ Q.T
        matrix = 0.5 * (matrix + matrix.T)
        beta = float(eigenvalues[-1])
    else:
        matrix = np.asarray(matrix, dtype=np.float64)
        beta = float(np.linalg.eigvalsh(matrix)[-1])

    if centers is None:
        centers = heterogeneity * rng.normal(size=(clients, d))
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, d)

    objectives = [QuadraticObjective(i, matrix, c, noise=noise, top_eigenvalue=beta) for i, c in enumerate(centers)]
    optimum = centers.mean(axis=0)
    task = FederatedTask('quadratic', objectives, np.zeros(d), optimum=optimum, shift=heterogeneity,
                         metadata={'condition': float(condition), 'noise': float(noise)})
    task.optimal_value = task.loss(optimum)
    return task


# ============================================================================
# CLASSIFICATION DATA
# ============================================================================

def make_classification_pool(samples: int, d: int, seed: int, class_sep: float = 1.0):
    """
    Gaussian-cluster binary dataset, standardised and scaled to unit-order rows.

    Returns:
        tuple: (features (samples, d), labels in {-1, +1})
    """
    informative = max(2, min(d, d // 4))
    X, y = make_classification(
        n_samples=samples, n_features=d, n_informative=informative, n_redundant=0,
        n_clusters_per_class=1, flip_y=0.01, class_sep=class_sep, random_state=int(seed) % (2 ** 32),
    )
    X = StandardScaler().fit_transform(X) / np.sqrt(d)
    return X, 2.0 * y - 1.0


def partition_shards(labels, clients: int, samples_per_client: int, skew: float, seed: int):
    """
    Split sample indices into client shards.

    Each shard takes round(skew * n) samples from its client's dominant class
    (client id parity) and the rest from a shared i.i.d. pool.
    """
    if not 0.0 <= skew <= 1.0:
        raise ValueError(f"skew must lie in [0, 1], got {skew}")
    rng = np.random.default_rng([int(seed), _DATA_STREAM, 1])
    labels = np.asarray(labels)
    classes = np.unique(labels)
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    n_skew = int(round(skew * samples_per_client))

    shards = []
    taken = set()
    for i in range(clients):
        pool = pools[classes[i % classes.size]]
        if len(pool) < n_skew:
            raise ValueError("not enough samples of the dominant class for the requested skew")
        chosen = pool[:n_skew]
        del pool[:n_skew]
        taken.update(chosen)
        shards.append(chosen)

    remaining = [j for j in rng.permutation(labels.size).tolist() if j not in taken]
    n_iid = samples_per_client - n_skew
    if len(remaining) < clients * n_iid:
        raise ValueError("not enough samples for the requested partition")
    for i in range(clients):
        shards[i] = np.asarray(shards[i] + remaining[i * n_iid:(i + 1) * n_iid], dtype=np.int64)
    return shards


def make_logistic(N: int, d: int, samples_per_client: int, skew: float, seed: int, reg: float = 1e-3,
                  shift: float = 0.0, class_sep: float = 1.0) -> FederatedTask:
    """
    L2-regularised logistic regression over N label-skewed client shards.

    Args:
        N: number of clients
        d: feature dimension (= model dimension)
        samples_per_client: shard size
        skew: fraction of every shard drawn from its client's dominant class
        seed: data seed
        reg: L2 coefficient
        shift: norm of a per-client feature offset
        class_sep: cluster separation passed to sklearn

    Returns:
        FederatedTask: single-class shards are flagged as degenerate
    """
    # headroom for the dominant-class draws under label noise
    X, y = make_classification_pool(int(np.ceil(1.25 * N * samples_per_client)) + 8, d, seed, class_sep)
    shards = partition_shards(y, N, samples_per_client, skew, seed)
    return _logistic_task(X, y, shards, reg, shift, seed, skew)


def _client_offsets(N, d, shift, seed):
    if shift <= 0:
        return np.zeros((N, d))
    rng = np.random.default_rng([int(seed), _DATA_STREAM, 2])
    u = rng.normal(size=(N, d))
    return shift * u / np.linalg.norm(u, axis=1, keepdims=True) / np.sqrt(d)


def _logistic_task(X, y, shards, reg, shift, seed, skew, name='logistic'):
    d = X.shape[1]
    offsets = _client_offsets(len(shards), d, shift, seed)
    objectives = [
        LogisticObjective(i, X[idx] + offsets[i], y[idx], reg=reg) for i, idx in enumerate(shards)
    ]
    task = FederatedTask(name, objectives, np.zeros(d), skew=skew, shift=shift,
                         metadata={'reg': float(reg), 'samples_per_client': int(len(shards[0]))})
    if task.degenerate_clients:
        logger.warning(f"{len(task.degenerate_clients)} client shards hold a single class")
    return task


def load_csv_dataset(path):
    """
    Read a feature matrix from CSV: header row, one sample per line, label last.

    Labels are mapped to +/-1 (the larger of two distinct labels becomes +1).

    Returns:
        tuple: (features, labels)
    """
    frame = pd.read_csv(path)
    if frame.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    features = frame.iloc[:, :-1].to_numpy(dtype=np.float64)
    raw = frame.iloc[:, -1].to_numpy()
    classes = np.unique(raw)
    if classes.size != 2:
        raise ValueError(f"{path}: expected two label values, found {classes.size}")
    labels = np.where(raw == classes[1], 1.0, -1.0)
    logger.info(f"Loaded {features.shape[0]} samples with {features.shape[1]} features from {path}")
    return features, labels


def logistic_from_dataset(features, labels, N: int, samples_per_client: int, skew: float, seed: int,
                          reg: float = 1e-3, shift: float = 0.0) -> FederatedTask:
    X = StandardScaler().fit_transform(np.asarray(features, dtype=np.float64)) / np.sqrt(features.shape[1])
    shards = partition_shards(labels, N, samples_per_client, skew, seed)
    return _logistic_task(X, np.asarray(labels, dtype=np.float64), shards, reg, shift, seed, skew)


# ============================================================================
# MLP
# ============================================================================

def make_mlp(widths, activation: str, data, seed: int, reg: float = 0.0) -> FederatedTask:
    """
    One-hidden-layer network over client shards.

    Args:
        widths: (inputs, hidden)
        activation: 'tanh', 'sigmoid' or 'relu'
        data: list of (features, labels) shards, or a logistic FederatedTask to reuse
        seed: initialisation seed
        reg: L2 coefficient

    Returns:
        FederatedTask: initial weights drawn from a scaled normal
    """
    inputs, hidden = (int(v) for v in widths)
    if hidden < 1:
        raise ValueError("hidden width must be at least 1")
    count = mlp_parameter_count(inputs, hidden)
    if count > MAX_MLP_PARAMETERS:
        raise ValueError(f"{count} parameters exceed the limit of {MAX_MLP_PARAMETERS}")

    if isinstance(data, FederatedTask):
        data = [(obj.features, obj.labels) for obj in data.objectives]
    objectives = [MlpObjective(i, X, y, hidden, activation, reg) for i, (X, y) in enumerate(data)]
    if any(obj.inputs != inputs for obj in objectives):
        raise ValueError(f"every shard must carry {inputs} features")

    rng = np.random.default_rng([int(seed), _INIT_STREAM])
    w0 = np.concatenate([
        rng.normal(0.0, 1.0 / np.sqrt(inputs), size=hidden * inputs),
        np.zeros(hidden),
        rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
        np.zeros(1),
    ])
    return FederatedTask('mlp', objectives, w0, metadata={'widths': [inputs, hidden], 'activation': activation})
