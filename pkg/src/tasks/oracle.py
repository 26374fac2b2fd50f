"""
Seeded stochastic gradient oracle.
"""

import numpy as np

from src.tasks.builders import FederatedTask

ORACLE_STREAM = 0x06AD
_PROBE_STREAM = 0x06AE


class GradientOracle:
    """
    Unbiased per-client gradient estimates.

    Every draw is keyed by (seed, client, round, draw), so results do not
    depend on the order in which clients are served.
    """

    def __init__(self, task: FederatedTask, batch_size: int = 0, seed: int = 0):
        if batch_size < 0:
            raise ValueError(f"batch size must be non-negative, got {batch_size}")
        self.task = task
        self.batch_size = int(batch_size)
        self.seed = int(seed)

    @property
    def noise_model(self) -> str:
        if self.is_deterministic:
            return 'exact'
        kinds = {obj.kind for obj in self.task.objectives}
        return 'gaussian' if kinds == {'quadratic'} else 'minibatch'

    @property
    def is_deterministic(self) -> bool:
        for obj in self.task.objectives:
            if obj.is_deterministic:
                continue
            n = getattr(obj, 'n_samples', None)
            if n is None or 0 < self.batch_size < n:
                return False
        return True

    def rng(self, client_id: int, round_index: int, draw: int = 0, stream: int = ORACLE_STREAM):
        return np.random.default_rng([self.seed, stream, int(client_id), int(round_index), int(draw)])

    def gradient(self, client_id: int, w, round_index: int = 0, draw: int = 0) -> np.ndarray:
        objective = self.task.objectives[client_id]
        return objective.stochastic_gradient(w, self.rng(client_id, round_index, draw), self.batch_size)

    def variance(self, client_id: int, w, draws: int = 16) -> float:
        """Monte-Carlo estimate of E||g - grad f_i(w)||^2."""
        if self.is_deterministic:
            return 0.0
        objective = self.task.objectives[client_id]
        exact = objective.gradient(w)
        errors = []
        for k in range(draws):
            rng = self.rng(client_id, 0, k, stream=_PROBE_STREAM)
            g = objective.stochastic_gradient(w, rng, self.batch_size)
            errors.append(float(np.sum((g - exact) ** 2)))
        return float(np.mean(errors))
