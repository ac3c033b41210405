"""Finite-sum objectives with exact per-sample gradients."""
from __future__ import annotations

import numpy as np


class DifferentiableModel:
    """``J(W) = mean_i J_i(W)`` over ``n_samples`` terms.

    Subclasses provide ``per_sample_loss`` and ``per_sample_grad``; analytic
    constants (``L``, ``c``, ``j_star``, ``w_star``) are ``None`` when unknown.
    """

    dim: int
    n_samples: int
    L = None
    c = None
    j_star = None
    w_star = None
    weight_decay = 0.0

    def per_sample_loss(self, W, idx) -> np.ndarray:
        raise NotImplementedError

    def per_sample_grad(self, W, idx) -> np.ndarray:
        raise NotImplementedError

    def _index(self, idx):
        if idx is None:
            return np.arange(self.n_samples)
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        if idx.size == 0:
            raise ValueError("empty index set")
        if idx.min() < 0 or idx.max() >= self.n_samples:
            raise IndexError("sample index out of range")
        return idx

    def evaluate(self, W, idx=None):
        """Mean loss and mean gradient over ``idx`` (all samples when None)."""
        idx = self._index(idx)
        return (float(self.per_sample_loss(W, idx).mean()),
                self.per_sample_grad(W, idx).mean(axis=0))

    def per_sample_grad_column(self, W, col, idx=None, chunk=256) -> np.ndarray:
        """Coordinate ``col`` of every per-sample gradient, computed in chunks."""
        idx = self._index(idx)
        return np.concatenate([self.per_sample_grad(W, idx[s:s + chunk])[:, col]
                               for s in range(0, len(idx), chunk)])

    def loss(self, W) -> float:
        return self.evaluate(W)[0]

    def grad(self, W) -> np.ndarray:
        return self.evaluate(W)[1]

    def gap(self, W):
        if self.j_star is None:
            return None
        return self.loss(W) - self.j_star

    def initial_point(self, rng) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def has_constants(self) -> bool:
        return self.L is not None and self.c is not None and self.j_star is not None


class QuadraticModel(DifferentiableModel):
    """Least squares ``J_i = (a_i . W - y_i)^2 / 2 + (lam / 2) ||W||^2``."""

    def __init__(self, A, y, weight_decay=0.0):
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = A[:, None]
        self.A = A
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.y.shape[0] != A.shape[0]:
            raise ValueError("one target per row required")
        self.n_samples, self.dim = A.shape
        self.weight_decay = float(weight_decay)

        H = A.T @ A / self.n_samples
        eig = np.linalg.eigvalsh(H)
        self.L = float(eig[-1] + self.weight_decay)
        self.c = float(eig[0] + self.weight_decay)
        reg = H + self.weight_decay * np.eye(self.dim)
        if self.c <= 1e-12 * max(self.L, 1.0):
            raise np.linalg.LinAlgError("singular normal equations; add weight decay")
        self.w_star = np.linalg.solve(reg, A.T @ self.y / self.n_samples)
        self.j_star = float(self.per_sample_loss(self.w_star, np.arange(self.n_samples)).mean())

    def per_sample_loss(self, W, idx):
        W = np.asarray(W, dtype=float)
        idx = self._index(idx)
        r = self.A[idx] @ W - self.y[idx]
        return 0.5 * r**2 + 0.5 * self.weight_decay * (W @ W)

    def per_sample_grad(self, W, idx):
        W = np.asarray(W, dtype=float)
        idx = self._index(idx)
        r = self.A[idx] @ W - self.y[idx]
        return r[:, None] * self.A[idx] + self.weight_decay * W

    def evaluate(self, W, idx=None):
        idx = self._index(idx)
        W = np.asarray(W, dtype=float)
        A = self.A[idx]
        r = A @ W - self.y[idx]
        loss = 0.5 * np.mean(r**2) + 0.5 * self.weight_decay * (W @ W)
        return float(loss), A.T @ r / len(idx) + self.weight_decay * W


def quadratic_model(A, y, weight_decay=0.0) -> QuadraticModel:
    return QuadraticModel(A, y, weight_decay)


class FrozenGradientModel(DifferentiableModel):
    """Linear losses ``J_i = g_i . W``: per-sample gradients ignore ``W``."""

    def __init__(self, gradients):
        G = np.asarray(gradients, dtype=float)
        if G.ndim == 1:
            G = G[:, None]
        self.gradients = G
        self.n_samples, self.dim = G.shape

    def per_sample_loss(self, W, idx):
        return self.gradients[self._index(idx)] @ np.asarray(W, dtype=float)

    def per_sample_grad(self, W, idx):
        return self.gradients[self._index(idx)].copy()


# -- feedforward network ----------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a**2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
}


class MLPModel(DifferentiableModel):
    """Dense network with softmax cross-entropy and ``(lam/2)||W||^2`` decay.

    Parameters are one flat vector: for each layer the ``(out, in)`` weight
    matrix in row-major order, then its bias.
    """

    def __init__(self, layer_sizes, features, labels, activation="sigmoid",
                 weight_decay=0.0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output widths")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = sizes
        self.activation = activation
        self.weight_decay = float(weight_decay)
        self.X = np.asarray(features, dtype=float)
        self.y = np.asarray(labels, dtype=int)
        if self.X.shape[1] != sizes[0]:
            raise ValueError("feature width does not match the input layer")
        if self.y.max() >= sizes[-1]:
            raise ValueError("output width must cover every label")
        self.n_samples = self.X.shape[0]
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w, b, (fan_out, fan_in)))
        self.dim = offset

    def initial_point(self, rng):
        W = np.zeros(self.dim)
        for w, _, (fan_out, fan_in) in self._slices:
            r = np.sqrt(6.0 / (fan_in + fan_out))
            W[w] = rng.uniform(-r, r, fan_in * fan_out)
        return W

    def param_index(self, layer, out, inp) -> int:
        """Flat index of the weight from unit ``inp`` of layer ``layer`` to unit
        ``out`` of the next layer (negative ``layer`` counts from the output)."""
        w, _, (fan_out, fan_in) = self._slices[layer]
        return w.start + out * fan_in + inp

    def _unpack(self, W):
        W = np.asarray(W, dtype=float)
        return [(W[w].reshape(shape), W[b]) for w, b, shape in self._slices]

    def _forward(self, W, X):
        act = ACTIVATIONS[self.activation][0]
        layers = self._unpack(W)
        acts, pre = [X], []
        for li, (Wl, bl) in enumerate(layers):
            z = acts[-1] @ Wl.T + bl
            pre.append(z)
            acts.append(z if li == len(layers) - 1 else act(z))
        logits = acts[-1]
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return layers, acts, pre, logp

    def _backward(self, layers, acts, pre, logp, y):
        """Yield (layer, delta, input activation) from the output backwards."""
        dact = ACTIVATIONS[self.activation][1]
        delta = np.exp(logp)
        delta[np.arange(len(y)), y] -= 1.0
        for li in range(len(layers) - 1, -1, -1):
            yield li, delta, acts[li]
            if li:
                delta = (delta @ layers[li][0]) * dact(pre[li - 1], acts[li])

    def _decay(self, W):
        return 0.5 * self.weight_decay * float(np.dot(W, W))

    def per_sample_loss(self, W, idx):
        idx = self._index(idx)
        _, _, _, logp = self._forward(W, self.X[idx])
        return -logp[np.arange(len(idx)), self.y[idx]] + self._decay(np.asarray(W, dtype=float))

    def per_sample_grad(self, W, idx):
        idx = self._index(idx)
        W = np.asarray(W, dtype=float)
        layers, acts, pre, logp = self._forward(W, self.X[idx])
        out = np.empty((len(idx), self.dim))
        for li, delta, a_in in self._backward(layers, acts, pre, logp, self.y[idx]):
            w, b, (fan_out, fan_in) = self._slices[li]
            out[:, w] = (delta[:, :, None] * a_in[:, None, :]).reshape(len(idx), -1)
            out[:, b] = delta
        out += self.weight_decay * W
        return out

    def evaluate(self, W, idx=None):
        idx = self._index(idx)
        W = np.asarray(W, dtype=float)
        layers, acts, pre, logp = self._forward(W, self.X[idx])
        loss = -logp[np.arange(len(idx)), self.y[idx]].mean() + self._decay(W)
        g = np.empty(self.dim)
        for li, delta, a_in in self._backward(layers, acts, pre, logp, self.y[idx]):
            w, b, _ = self._slices[li]
            g[w] = (delta.T @ a_in).ravel() / len(idx)
            g[b] = delta.mean(axis=0)
        return float(loss), g + self.weight_decay * W

    def predict(self, W, X=None):
        X = self.X if X is None else np.asarray(X, dtype=float)
        return self._forward(W, X)[3].argmax(axis=1)

    def accuracy(self, W, X=None, y=None) -> float:
        y = self.y if y is None else np.asarray(y)
        return float(np.mean(self.predict(W, X) == y))


def mlp_model(layer_sizes, features, labels, activation="sigmoid", weight_decay=0.0):
    return MLPModel(layer_sizes, features, labels, activation, weight_decay)


def stratified_least_squares(n=400, n_categories=4, dim=10, seed=0, separation=3.0,
                             spread=1.0, noise=0.0, weight_decay=0.0):
    """Least-squares problem whose rows cluster by category.

    Row ``i`` of category ``j`` is ``m_j + spread * z_i`` with a random
    category centre ``m_j`` of norm ``separation``; targets follow a planted
    solution plus ``noise``. Rows and targets are rescaled so that ``L == 1``
    (before weight decay). Returns ``(model, dataset)``.
    """
    from .data import LabeledDataset, contiguous_labels, make_rng

    rng = make_rng(seed, "stratified-least-squares")
    labels = contiguous_labels(n, n_categories)
    centres = rng.standard_normal((n_categories, dim))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    A = centres[labels] + spread * rng.standard_normal((n, dim))
    w_true = rng.standard_normal(dim)
    y = A @ w_true + noise * rng.standard_normal(n)
    scale = np.sqrt(np.linalg.eigvalsh(A.T @ A / n)[-1])
    A, y = A / scale, y / scale
    return QuadraticModel(A, y, weight_decay), LabeledDataset(A, labels, n_categories)
