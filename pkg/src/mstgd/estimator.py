"""Memory stratified gradient statistic: blend coefficients, memory updates
and the stationary-point variance.

All quantities are handled component-wise: a "gradient vector" is any array
whose trailing axis indexes parameters, and coefficients are computed
independently for each component.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_DEN = 1e-12
P_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class BlendCoefficients:
    """Per-component (p, q) weights on the stored memory and the fresh draw.

    ``fallback`` marks components whose denominator vanished and were reset to
    the memoryless pair (0, 1). ``clamped`` marks components whose raw ``p``
    fell outside ``[0, P_MAX]``. ``saturated`` marks ``p == 1`` (the fresh
    gradient is ignored entirely).
    """

    p: np.ndarray
    q: np.ndarray
    fallback: np.ndarray = field(default=None)
    clamped: np.ndarray = field(default=None)
    saturated: np.ndarray = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        for name in ("fallback", "clamped", "saturated"):
            flag = getattr(self, name)
            if flag is None:
                flag = np.zeros(np.broadcast(p, q).shape, dtype=bool)
            object.__setattr__(self, name, np.asarray(flag, dtype=bool))

    @classmethod
    def memoryless(cls, shape=()):
        return cls(np.zeros(shape), np.ones(shape))

    @property
    def any_fallback(self) -> bool:
        return bool(np.any(self.fallback))


@dataclass(frozen=True)
class CategoryMoments:
    mean: np.ndarray
    variance: np.ndarray
    sample_count: int

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        var = np.asarray(self.variance, dtype=float)
        if np.any(var < 0):
            raise ValueError("variance components must be nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        object.__setattr__(self, "variance", var)


def category_moments(samples) -> CategoryMoments:
    """Mean and unbiased (n - 1) variance of a stack of gradient samples.

    A single sample reports zero variance.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    if n == 0:
        raise ValueError("need at least one sample")
    mean = samples.mean(axis=0)
    if n == 1:
        var = np.zeros_like(mean)
    else:
        var = samples.var(axis=0, ddof=1)
    return CategoryMoments(mean, var, n)


def check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or np.any(w < 0):
        raise ValueError("weights must be a 1-d vector of nonnegative fractions")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


def compute_blend_general(E_prev, E_cur, V_prev, V_cur, *, eps=EPS_DEN, p_max=P_MAX,
                          clamp=True) -> BlendCoefficients:
    """Coefficients that keep the memory statistic unbiased when the stratum
    mean moves from ``E_prev`` to ``E_cur`` and minimise its variance at the
    stationary point.

    ``p / (1 - q) == E_cur / E_prev`` holds for every non-degenerate component
    unless clamping had to drop the memory entirely (``p < 0``).
    """
    E_prev, E_cur, V_prev, V_cur = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (E_prev, E_cur, V_prev, V_cur)))
    if np.any(V_prev < 0) or np.any(V_cur < 0):
        raise ValueError("variances must be nonnegative")

    den = E_cur**2 * V_prev + E_prev**2 * V_cur
    fallback = den < eps
    safe = np.where(fallback, 1.0, den)
    p = np.where(fallback, 0.0, E_cur * E_prev * V_cur / safe)
    q = np.where(fallback, 1.0, E_cur**2 * V_prev / safe)

    clamped = np.zeros(p.shape, dtype=bool)
    if clamp:
        low = p < 0
        high = p > p_max
        clamped = low | high
        # p > p_max implies E_cur / E_prev >= p > 0, so the rescaled q is in [0, 1)
        ratio = np.where(high, E_cur / np.where(high, E_prev, 1.0), 1.0)
        q = np.where(high, 1.0 - p_max / ratio, q)
        p = np.where(high, p_max, p)
        p = np.where(low, 0.0, p)
        q = np.where(low, 1.0, q)
    return BlendCoefficients(p, q, fallback, clamped, p == 1.0)


def compute_blend_equal_mean(V_prev, V_cur, *, eps=EPS_DEN) -> BlendCoefficients:
    """Equal-mean coefficients ``p = V_cur / (V_prev + V_cur)``, ``q = 1 - p``."""
    V_prev, V_cur = np.broadcast_arrays(np.asarray(V_prev, dtype=float),
                                        np.asarray(V_cur, dtype=float))
    if np.any(V_prev < 0) or np.any(V_cur < 0):
        raise ValueError("variances must be nonnegative")
    fallback = (V_prev < eps) & (V_cur < eps)
    den = np.where(fallback, 1.0, V_prev + V_cur)
    p = np.where(fallback, 0.0, V_cur / den)
    q = np.where(fallback, 1.0, 1.0 - p)
    return BlendCoefficients(p, q, fallback, None, p == 1.0)


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def update_component(G_j, coeffs: BlendCoefficients, g):
    """Raw memory recursion ``p * G_j + q * g``."""
    G_j = np.asarray(G_j, dtype=float)
    g = np.asarray(g, dtype=float)
    _same_shape(G_j, g)
    return coeffs.p * G_j + coeffs.q * g


def update_component_zero_mean(G_j, coeffs: BlendCoefficients, g, E_j):
    """Mean-zeroed recursion ``p * G_j + q * (g - E_j)``."""
    G_j = np.asarray(G_j, dtype=float)
    g = np.asarray(g, dtype=float)
    E_j = np.asarray(E_j, dtype=float)
    _same_shape(G_j, g, E_j)
    return coeffs.p * G_j + coeffs.q * (g - E_j)


@dataclass
class MemoryState:
    """The C memory components plus the moments seen at the last update."""

    components: np.ndarray
    stored_means: np.ndarray
    stored_variances: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, n_categories: int, dim: int) -> "MemoryState":
        z = np.zeros((n_categories, dim))
        return cls(z.copy(), z.copy(), z.copy(), 0)

    @property
    def n_categories(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def stratified_mean(weights, components, means=None):
    """``sum_j w_j * (G_j + E_j)``, or ``sum_j w_j * G_j`` when ``means`` is None.

    ``components`` may be a :class:`MemoryState`, in which case pass
    ``means=True`` to add back its stored means.
    """
    w = np.asarray(weights, dtype=float)
    if isinstance(components, MemoryState):
        state = components
        components = state.components
        if means is True:
            means = state.stored_means
        elif means is False:
            means = None
    G = np.asarray(components, dtype=float)
    if G.shape[0] != w.shape[0]:
        raise ValueError(f"{w.shape[0]} weights for {G.shape[0]} components")
    total = G if means is None else G + np.asarray(means, dtype=float)
    return np.tensordot(w, total, axes=(0, 0))


def variance_sp(moments_prev, moments_cur, weights, *, eps=EPS_DEN, with_flags=False):
    """Stationary-point variance of the memory statistic, per component.

    Categories whose denominator vanishes contribute zero; with
    ``with_flags=True`` the boolean mask of those (category, component)
    entries is returned as well.
    """
    w = np.asarray(weights, dtype=float)
    if not (len(moments_prev) == len(moments_cur) == len(w)):
        raise ValueError("moments and weights are not aligned")
    E_prev = np.array([m.mean for m in moments_prev], dtype=float)
    E_cur = np.array([m.mean for m in moments_cur], dtype=float)
    V_prev = np.array([m.variance for m in moments_prev], dtype=float)
    V_cur = np.array([m.variance for m in moments_cur], dtype=float)
    _same_shape(E_prev, E_cur, V_prev, V_cur)

    den = E_cur**2 * V_prev + E_prev**2 * V_cur
    degenerate = den < eps
    term = np.where(degenerate, 0.0,
                    E_cur**2 * V_prev * V_cur / np.where(degenerate, 1.0, den))
    w = w.reshape((-1,) + (1,) * (term.ndim - 1))
    value = np.sum(w**2 * term, axis=0)
    if with_flags:
        return value, degenerate
    return value


def memoryless_variance(moments_cur, weights):
    """Variance of the one-draw-per-stratum mean, ``sum_j w_j^2 V_j``."""
    w = np.asarray(weights, dtype=float)
    V = np.array([m.variance for m in moments_cur], dtype=float)
    w = w.reshape((-1,) + (1,) * (V.ndim - 1))
    return np.sum(w**2 * V, axis=0)
