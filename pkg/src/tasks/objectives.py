"""
Per-client objective functions with analytic gradients.

Every objective works on a flat float64 weight vector and exposes
`loss`, `gradient` and a seeded `stochastic_gradient`.
"""

import numpy as np
from scipy.special import expit

# ============================================================================
# COUNTER-EXAMPLE
# ============================================================================


def counterexample_loss(w):
    """f(w) = (w-1)^2/2 + [w-1]_+^2/2, minimised at w = 1."""
    r = np.asarray(w, dtype=np.float64) - 1.0
    return 0.5 * r ** 2 + 0.5 * np.maximum(r, 0.0) ** 2


def counterexample_grad(w):
    r = np.asarray(w, dtype=np.float64) - 1.0
    return r + np.maximum(r, 0.0)


class LocalObjective:
    """Base class; subclasses implement loss/gradient and optionally a sampled gradient"""

    kind = None

    def __init__(self, client_id: int, dimension: int):
        self.client_id = int(client_id)
        self.dimension = int(dimension)
        self.degenerate = False

    def loss(self, w) -> float:
        raise NotImplementedError

    def gradient(self, w) -> np.ndarray:
        raise NotImplementedError

    def stochastic_gradient(self, w, rng, batch_size: int = 0) -> np.ndarray:
        """Unbiased gradient estimate; the default oracle is exact."""
        return self.gradient(w)

    @property
    def smoothness(self):
        """Smoothness constant when it is available in closed form, else None."""
        return None

    @property
    def is_deterministic(self) -> bool:
        return True

    def _check(self, w):
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.size != self.dimension:
            raise ValueError(f"expected {self.dimension} weights, got {w.size}")
        return w


class CounterexampleObjective(LocalObjective):
    kind = 'counterexample'

    def __init__(self, client_id: int):
        super().__init__(client_id, 1)

    def loss(self, w):
        return float(counterexample_loss(self._check(w))[0])

    def gradient(self, w):
        return counterexample_grad(self._check(w))

    @property
    def smoothness(self):
        return 2.0


class QuadraticObjective(LocalObjective):
    """f_i(w) = (w - c_i)^T A (w - c_i) / 2 with optional Gaussian gradient noise"""

    kind = 'quadratic'

    def __init__(self, client_id: int, matrix, center, noise: float = 0.0, top_eigenvalue: float = None):
        center = np.asarray(center, dtype=np.float64).ravel()
        super().__init__(client_id, center.size)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.center = center
        self.noise = float(noise)
        self._beta = top_eigenvalue

    def loss(self, w):
        r = self._check(w) - self.center
        return 0.5 * float(r @ self.matrix @ r)

    def gradient(self, w):
        return self.matrix @ (self._check(w) - self.center)

    def stochastic_gradient(self, w, rng, batch_size=0):
        g = self.gradient(w)
        if self.noise > 0:
            g = g + rng.normal(0.0, self.noise, size=g.size)
        return g

    @property
    def smoothness(self):
        if self._beta is None:
            self._beta = float(np.linalg.eigvalsh(self.matrix)[-1])
        return self._beta

    @property
    def is_deterministic(self):
        return self.noise == 0


class _ShardObjective(LocalObjective):
    """Objective defined by an (X, y) shard; mini-batches are drawn without replacement"""

    def __init__(self, client_id, features, labels, dimension):
        super().__init__(client_id, dimension)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64).ravel()
        if self.features.shape[0] != self.labels.size or self.labels.size == 0:
            raise ValueError("shard features and labels must be non-empty and aligned")
        self.degenerate = np.unique(self.labels).size < 2

    @property
    def n_samples(self) -> int:
        return self.labels.size

    def batch_gradient(self, w, idx) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, w):
        return self.batch_gradient(self._check(w), slice(None))

    def stochastic_gradient(self, w, rng, batch_size=0):
        w = self._check(w)
        if batch_size <= 0 or batch_size >= self.n_samples:
            return self.batch_gradient(w, slice(None))
        idx = rng.choice(self.n_samples, size=batch_size, replace=False)
        return self.batch_gradient(w, idx)

    @property
    def is_deterministic(self):
        return False


class LogisticObjective(_ShardObjective):
    """Mean logistic loss over +/-1 labels plus (reg/2)||w||^2"""

    kind = 'logistic'

    def __init__(self, client_id, features, labels, reg: float = 0.0):
        features = np.asarray(features, dtype=np.float64)
        super().__init__(client_id, features, labels, features.shape[1])
        self.reg = float(reg)

    def loss(self, w):
        w = self._check(w)
        margins = self.labels * (self.features @ w)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * self.reg * (w @ w))

    def batch_gradient(self, w, idx):
        X, y = self.features[idx], self.labels[idx]
        coeff = -y * expit(-y * (X @ w))
        return X.T @ coeff / y.size + self.reg * w

    @property
    def smoothness(self):
        return 0.25 * float(np.max(np.sum(self.features ** 2, axis=1))) + self.reg


ACTIVATIONS = {
    'tanh': (np.tanh, lambda z, a: 1.0 - a ** 2),
    'sigmoid': (expit, lambda z, a: a * (1.0 - a)),
    'relu': (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(np.float64)),
}


class MlpObjective(_ShardObjective):
    """
    One-hidden-layer network with a scalar output and logistic loss on +/-1 labels.

    Parameter layout: W1 (hidden x inputs), b1 (hidden), w2 (hidden), b2 (1).
    """

    kind = 'mlp'

    def __init__(self, client_id, features, labels, hidden: int, activation: str = 'tanh', reg: float = 0.0):
        features = np.asarray(features, dtype=np.float64)
        inputs = features.shape[1]
        super().__init__(client_id, features, labels, mlp_parameter_count(inputs, hidden))
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}' (expected one of {sorted(ACTIVATIONS)})")
        self.inputs = inputs
        self.hidden = int(hidden)
        self.activation = activation
        self.reg = float(reg)

    def unpack(self, w):
        h, n = self.hidden, self.inputs
        W1 = w[:h * n].reshape(h, n)
        b1 = w[h * n:h * n + h]
        w2 = w[h * n + h:h * n + 2 * h]
        b2 = w[-1]
        return W1, b1, w2, b2

    def _forward(self, w, X):
        W1, b1, w2, b2 = self.unpack(w)
        act, _ = ACTIVATIONS[self.activation]
        z = X @ W1.T + b1
        a = act(z)
        return z, a, a @ w2 + b2

    def loss(self, w):
        w = self._check(w)
        _, _, out = self._forward(w, self.features)
        return float(np.mean(np.logaddexp(0.0, -self.labels * out)) + 0.5 * self.reg * (w @ w))

    def batch_gradient(self, w, idx):
        X, y = self.features[idx], self.labels[idx]
        W1, b1, w2, b2 = self.unpack(w)
        _, deriv = ACTIVATIONS[self.activation]
        z, a, out = self._forward(w, X)

        d_out = -y * expit(-y * out) / y.size
        g_w2 = a.T @ d_out
        g_b2 = d_out.sum()
        d_z = np.outer(d_out, w2) * deriv(z, a)
        g_W1 = d_z.T @ X
        g_b1 = d_z.sum(axis=0)
        grad = np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])
        return grad + self.reg * w


def mlp_parameter_count(inputs: int, hidden: int) -> int:
    return int(hidden) * int(inputs) + 2 * int(hidden) + 1
