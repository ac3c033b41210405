"""Numeric checks of the estimator and convergence claims.

Every checker returns a :class:`BoundReport`: aligned per-index ``lhs``/``rhs``
arrays of an inequality ``lhs <= rhs`` (tolerance already folded into
``rhs``), the margin ``rhs - lhs`` and violation flags. ``asserted`` says
whether violations should count as failures or are merely reported.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import make_rng
from .estimator import (CategoryMoments, compute_blend_equal_mean, compute_blend_general,
                        memoryless_variance, variance_sp)

MEAN_SE = 4.0
VAR_REL_TOL = 0.05
GAP_FLOOR = 1e-12


@dataclass
class BoundReport:
    check: str
    k: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    asserted: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k)
        self.lhs = np.asarray(self.lhs, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if not (self.k.shape == self.lhs.shape == self.rhs.shape):
            raise ValueError("k, lhs and rhs must be aligned")

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def violated(self):
        return ~(self.lhs <= self.rhs)

    @property
    def first_violation(self):
        bad = np.flatnonzero(self.violated)
        return int(self.k[bad[0]]) if bad.size else None

    @property
    def ok(self) -> bool:
        return not self.violated.any() and self.extra.get("ok", True)

    @property
    def failed(self) -> bool:
        """An asserted check that did not hold."""
        return self.asserted and not self.ok

    def to_dict(self):
        def clean(v):
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {key: clean(x) for key, x in v.items()}
            if isinstance(v, (np.floating, float)):
                v = float(v)
                return v if math.isfinite(v) else repr(v)
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v

        return {
            "check": self.check,
            "k": clean(self.k),
            "lhs": clean(self.lhs),
            "rhs": clean(self.rhs),
            "margin": clean(self.margin),
            "violated": clean(self.violated),
            "asserted": self.asserted,
            "ok": self.ok,
            "first_violation": self.first_violation,
            "extra": clean(self.extra),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _report(check, k, lhs, rhs, asserted=True, **extra):
    return BoundReport(check, np.atleast_1d(k), np.atleast_1d(lhs), np.atleast_1d(rhs),
                       asserted, extra)


# -- scripted moment protocols ----------------------------------------------

@dataclass(frozen=True)
class MomentProtocol:
    """Per-iteration, per-category gradient moments ``means[k, j, :]``,
    ``variances[k, j, :]`` and the stratum weights."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        while means.ndim < 3:
            means = means[..., None]
        while var.ndim < 3:
            var = var[..., None]
        means, var = np.broadcast_arrays(means, var)
        if np.any(var < 0):
            raise ValueError("variances must be nonnegative")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (means.shape[1],) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("one weight per category, summing to 1")
        object.__setattr__(self, "means", means.copy())
        object.__setattr__(self, "variances", var.copy())
        object.__setattr__(self, "weights", w)

    @property
    def n_steps(self):
        return self.means.shape[0]

    def moments(self, k):
        return [CategoryMoments(self.means[k, j], self.variances[k, j], 1)
                for j in range(self.means.shape[1])]

    def stratified_mean(self, k):
        return np.tensordot(self.weights, self.means[k], axes=(0, 0))

    def memoryless_variance(self, k):
        return memoryless_variance(self.moments(k), self.weights)

    @classmethod
    def constant(cls, mean, variance, steps, weights=(1.0,)):
        w = np.asarray(weights, dtype=float)
        shape = (steps, len(w))
        return cls(np.full(shape, float(mean)), np.full(shape, float(variance)), w)

    @classmethod
    def two_step(cls, E_prev, E_cur, V_prev, V_cur, weights=(1.0,)):
        E = np.array([np.atleast_1d(E_prev), np.atleast_1d(E_cur)], dtype=float)
        V = np.array([np.atleast_1d(V_prev), np.atleast_1d(V_cur)], dtype=float)
        return cls(E, V, weights)

    @classmethod
    def geometric(cls, mean, variance, ratio, steps, weights=(1.0,)):
        """Constant mean, fresh-draw variance ``variance * ratio**k``."""
        w = np.asarray(weights, dtype=float)
        V = float(variance) * float(ratio) ** np.arange(steps)
        return cls(np.full((steps, len(w)), float(mean)),
                   np.repeat(V[:, None], len(w), axis=1), w)


ESTIMATOR_KINDS = ("general", "equal-mean", "memoryless", "fixed")


def protocol_coefficients(protocol: MomentProtocol, kind, fixed_pq=(0.5, 0.5)):
    """Coefficients used at every step; step 0 is the memoryless first fill."""
    K = protocol.n_steps
    p = np.zeros(protocol.means.shape)
    q = np.ones(protocol.means.shape)
    for k in range(1, K):
        if kind == "general":
            c = compute_blend_general(protocol.means[k - 1], protocol.means[k],
                                      protocol.variances[k - 1], protocol.variances[k])
        elif kind == "equal-mean":
            c = compute_blend_equal_mean(protocol.variances[k - 1], protocol.variances[k])
        elif kind == "memoryless":
            continue
        elif kind == "fixed":
            p[k], q[k] = fixed_pq
            continue
        else:
            raise ValueError(f"unknown estimator kind {kind!r}")
        p[k], q[k] = c.p, c.q
    return p, q


@dataclass
class McMoments:
    mean: np.ndarray      # (K, d)
    var: np.ndarray       # (K, d)
    se_mean: np.ndarray
    se_var: np.ndarray
    p: np.ndarray         # (K, C, d)
    q: np.ndarray
    replications: int

    @property
    def total_var(self):
        return self.var.sum(axis=1)

    @property
    def total_se_var(self):
        return np.sqrt((self.se_var**2).sum(axis=1))


def mc_estimator_moments(protocol: MomentProtocol, kind, replications=100_000, seed=0,
                         fixed_pq=(0.5, 0.5), mean_zeroing=None) -> McMoments:
    """Monte-Carlo moments of the memory statistic along a scripted protocol.

    Fresh stratum draws are Gaussian with the scripted moments, independent
    across steps, categories and replications. ``general`` and ``memoryless``
    use the raw recursion; ``equal-mean`` and ``fixed`` store mean-zeroed draws
    and add the scripted mean back (override with ``mean_zeroing``).
    """
    if replications < 1000:
        raise ValueError("use at least 1000 replications")
    if kind not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    if mean_zeroing is None:
        mean_zeroing = kind in ("equal-mean", "fixed")
    p, q = protocol_coefficients(protocol, kind, fixed_pq)
    rng = make_rng(seed, "mc-estimator", kind)
    K, C, d = protocol.means.shape
    M = replications
    w = protocol.weights[None, :, None]
    G = np.zeros((M, C, d))
    out = {name: np.empty((K, d)) for name in ("mean", "var", "se_mean", "se_var")}
    for k in range(K):
        E, sd = protocol.means[k], np.sqrt(protocol.variances[k])
        g = E + sd * rng.standard_normal((M, C, d))
        if mean_zeroing:
            G = p[k] * G + q[k] * (g - E)
            est = np.sum(w * (G + E), axis=1)
        else:
            G = p[k] * G + q[k] * g
            est = np.sum(w * G, axis=1)
        mu = est.mean(axis=0)
        dev = est - mu
        m2 = np.mean(dev**2, axis=0)
        m4 = np.mean(dev**4, axis=0)
        out["mean"][k] = mu
        out["var"][k] = m2 * M / (M - 1)
        out["se_mean"][k] = np.sqrt(m2 / M)
        out["se_var"][k] = np.sqrt(np.maximum(m4 - m2**2, 0.0) / M)
    return McMoments(replications=M, p=p, q=q, **out)


def exact_variance_recursion(protocol: MomentProtocol, p, q):
    """Brute-force per-component variance of the statistic for independent
    draws: ``Var(G_j^k) = p^2 Var(G_j^{k-1}) + q^2 V_j^k`` summed with ``w_j^2``."""
    K = protocol.n_steps
    w2 = (protocol.weights**2)[:, None]
    var_G = np.zeros(protocol.means.shape[1:])
    out = np.empty((K, protocol.means.shape[2]))
    for k in range(K):
        var_G = p[k] ** 2 * var_G + q[k] ** 2 * protocol.variances[k]
        out[k] = np.sum(w2 * var_G, axis=0)
    return out


# -- estimator checks ---------------------------------------------------------

def check_unbiased(protocol: MomentProtocol, replications=100_000, seed=0, kind="general"):
    """Monte-Carlo mean against the stratified population mean, per step and component."""
    mc = mc_estimator_moments(protocol, kind, replications, seed)
    truth = np.array([protocol.stratified_mean(k) for k in range(protocol.n_steps)])
    k = np.repeat(np.arange(protocol.n_steps), truth.shape[1])
    lhs = np.abs(mc.mean - truth).ravel()
    rhs = (MEAN_SE * mc.se_mean).ravel()
    return _report("unbiasedness", k, lhs, rhs, mc_mean=mc.mean, truth=truth)


def check_stationary_variance(protocol: MomentProtocol, replications=100_000, seed=0):
    """Empirical variance at the second step against the stationary-point
    formula, within a relative tolerance."""
    if protocol.n_steps != 2:
        raise ValueError("the stationary-point check uses a two-step protocol")
    mc = mc_estimator_moments(protocol, "general", replications, seed)
    predicted = variance_sp(protocol.moments(0), protocol.moments(1), protocol.weights)
    rel = np.abs(mc.var[1] - predicted) / np.where(predicted > 0, predicted, 1.0)
    return _report("stationary-point-variance", np.arange(rel.size), rel,
                   np.full(rel.size, VAR_REL_TOL), empirical=mc.var[1], predicted=predicted)


DIAG_LT, DIAG_LEQ, DIAG_INCOMPARABLE = "lt", "leq", "incomparable"


def check_diag_order(var_a, var_b) -> str:
    """Order of two diagonal variance matrices given by their diagonals."""
    a = np.asarray(var_a, dtype=float)
    b = np.asarray(var_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if not np.all(a <= b):
        return DIAG_INCOMPARABLE
    return DIAG_LT if np.any(a < b) else DIAG_LEQ


def check_design_effect(protocol: MomentProtocol, replications=100_000, seed=0):
    """Two reports: the analytic stationary-variance advantage over the
    memoryless design at every step, and the Monte-Carlo recursion bound
    ``Var_k <= p^{2k} Var_0 + sum_i p^{2(k-i)} q^2 Var_st^i``."""
    K = protocol.n_steps
    ks, lhs, rhs, orders = [], [], [], []
    for k in range(1, K):
        sp = variance_sp(protocol.moments(k - 1), protocol.moments(k), protocol.weights)
        st = protocol.memoryless_variance(k)
        orders.append(check_diag_order(sp, st))
        ks.extend([k] * sp.size)
        lhs.extend(sp)
        rhs.extend(st)
    lhs, rhs = np.array(lhs), np.array(rhs)
    strict = np.where(lhs < rhs, rhs, np.nextafter(lhs, -np.inf))
    prop1 = _report("design-effect", ks, lhs, strict, orders=orders,
                    ok=all(o == DIAG_LT for o in orders))

    mc = mc_estimator_moments(protocol, "general", replications, seed)
    p = float(mc.p[1:].max()) if K > 1 else 0.0
    q = float(mc.q[1:].max()) if K > 1 else 1.0
    var_st = np.array([protocol.memoryless_variance(k) for k in range(K)])
    bound = np.empty_like(mc.var)
    for k in range(K):
        acc = p ** (2 * k) * mc.var[0]
        for i in range(1, k + 1):
            acc = acc + p ** (2 * (k - i)) * q**2 * var_st[i]
        bound[k] = acc
    kk = np.repeat(np.arange(K), mc.var.shape[1])
    ineq = _report("design-effect-recursion", kk, mc.var.ravel(),
                   (bound + MEAN_SE * mc.se_var).ravel(), p=p, q=q)
    return prop1, ineq


def lemma2_threshold(eta, gamma, k0=0, k_max=10_000):
    """Smallest ``k > k0`` from which ``(1 + 1/(1-eta)) eta^{2k} <=
    gamma^{2(k-k0)}`` holds for every scanned ``k`` up to ``k_max``.

    Returns ``(k, status)``; ``k`` is None when no such index exists in range.
    ``status`` is ``"found"``, ``"none"`` or ``"no-guarantee"`` (``eta >=
    gamma``, where no finite threshold is promised).
    """
    if not (0 < eta < 1 and 0 < gamma < 1):
        raise ValueError("eta and gamma must lie in (0, 1)")
    k = np.arange(k0 + 1, k_max + 1, dtype=float)
    lhs = math.log1p(1.0 / (1.0 - eta)) + 2 * k * math.log(eta)
    rhs = 2 * (k - k0) * math.log(gamma)
    holds = lhs <= rhs
    if holds.all():
        found = int(k[0])
    elif not holds[-1]:
        found = None
    else:
        found = int(k[np.flatnonzero(~holds)[-1] + 1])
    if eta >= gamma:
        return found, "no-guarantee"
    return found, "found" if found is not None else "none"


def fit_log_linear(k, values):
    """Least-squares line through ``(k, log values)``: ``(slope, intercept, slope_se)``."""
    k = np.asarray(k, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    if k.size < 3:
        raise ValueError("need at least three points")
    A = np.column_stack([k, np.ones_like(k)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(k.size - 2, 1)
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(np.sum((k - k.mean()) ** 2)))
    return float(coef[0]), float(coef[1]), se


def check_variance_decay(var, se_var=None, k0=0, fit_end=None, asserted=True):
    """Geometric-decay check on a variance sequence.

    Fits ``log Var_k`` over ``[k0, fit_end)``, giving ``gamma_hat =
    exp(slope / 2)``; ``Phi_hat`` is the smallest constant with ``Var_k <=
    Phi_hat * gamma_hat^{2(k-k0)}`` on the fit window. The bound is then
    checked at every ``k >= k0`` with a Monte-Carlo allowance of 4 SE, and the
    decay is required to be significant (slope + 4 SE(slope) < 0).
    """
    var = np.asarray(var, dtype=float)
    if var.ndim > 1:
        var = var.sum(axis=1)
    if se_var is None:
        se_var = np.zeros_like(var)
    se_var = np.asarray(se_var, dtype=float)
    if se_var.ndim > 1:
        se_var = np.sqrt((se_var**2).sum(axis=1))
    if var.size < 4:
        raise ValueError("need at least four points")
    ks = np.arange(var.size)
    if np.all(var <= 1e-300):
        return _report("variance-decay", ks[k0:], var[k0:], var[k0:], asserted,
                       gamma_hat=0.0, gamma_sq_hat=0.0, phi_hat=0.0, ok=True)
    fit_end = var.size if fit_end is None else fit_end
    window = slice(k0, fit_end)
    slope, intercept, slope_se = fit_log_linear(ks[window], var[window])
    gamma_sq = math.exp(slope)
    phi = float(np.max(var[window] / gamma_sq ** (ks[window] - k0)))
    rhs = phi * gamma_sq ** (ks[k0:] - k0) + MEAN_SE * se_var[k0:]
    significant = slope + MEAN_SE * slope_se < 0
    return _report("variance-decay", ks[k0:], var[k0:], rhs, asserted,
                   gamma_hat=math.sqrt(gamma_sq), gamma_sq_hat=gamma_sq, phi_hat=phi,
                   slope=slope, slope_se=slope_se, k0=k0, ok=bool(significant))


# -- model checks -------------------------------------------------------------

def _probes(model, count, seed, scale):
    rng = make_rng(seed, "probes")
    centre = model.w_star if model.w_star is not None else np.zeros(model.dim)
    return centre + scale * rng.standard_normal((count, model.dim))


def check_strong_convexity_fact(model, probes=100, seed=0, scale=1.0):
    """``2c (J(W) - J*) <= ||grad J(W)||^2`` at random probes around W*."""
    if not model.has_constants:
        raise ValueError("model needs analytic L, c and J*")
    lhs, rhs = [], []
    for W in _probes(model, probes, seed, scale):
        loss, g = model.evaluate(W)
        lhs.append(2 * model.c * (loss - model.j_star))
        rhs.append(float(g @ g))
    rhs = np.array(rhs)
    # rounding allowance for the tight (L == c) case
    return _report("strong-convexity-fact", np.arange(probes), lhs,
                   rhs * (1 + 1e-9) + 1e-12)


def check_lipschitz(model, pairs=100, seed=0, scale=1.0):
    """``||grad J(W) - grad J(W')|| <= L ||W - W'||`` for random pairs."""
    if model.L is None:
        raise ValueError("model needs an analytic Lipschitz constant")
    P = _probes(model, 2 * pairs, seed, scale)
    lhs, rhs = [], []
    for W, V in zip(P[::2], P[1::2]):
        lhs.append(np.linalg.norm(model.grad(W) - model.grad(V)))
        rhs.append(model.L * np.linalg.norm(W - V))
    return _report("lipschitz", np.arange(pairs), lhs, np.array(rhs) * (1 + 1e-9) + 1e-15)


# -- convergence checks ------------------------------------------------------

@dataclass
class ConvergenceParams:
    L: float
    c: float
    h: float
    mu: float = 1.0
    mu_G: float = 1.0
    gamma: float = None
    k0: int = 0
    M: float = None
    dim: int = 1

    def __post_init__(self):
        if not 0 < self.mu <= self.mu_G:
            raise ValueError("need 0 < mu <= mu_G")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def rho(self):
        """Per-step gap contraction of gradient descent, ``1 - c h (2 - L h)``."""
        return 1.0 - self.c * self.h * (2.0 - self.L * self.h)

    def plateau(self, s2):
        """Noise floor ``h L s^2 / (2 c (2 - h L))``."""
        return self.h * self.L * s2 / (2.0 * self.c * (2.0 - self.h * self.L))

    @property
    def phi(self):
        return None if self.M is None else self.dim * self.M

    @property
    def step_ok(self):
        return 0 <= self.h <= min(self.mu / (self.L * self.mu_G**2), 1.0 / (self.c * self.mu))

    @property
    def lam(self):
        base = 1.0 - self.h * self.c * self.mu / 2.0
        return base if self.gamma is None else max(base, self.gamma)

    def omega(self, gap_start):
        if self.phi is None:
            return gap_start
        return max(self.h * self.L * self.phi / (self.c * self.mu), gap_start)


def sampling_variance(model, W, n):
    """Trace variance of the mean of ``n`` gradients drawn without replacement."""
    N = model.n_samples
    G = model.per_sample_grad(W, np.arange(N))
    sigma2 = float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))
    if n >= N:
        return 0.0, sigma2
    return (N - n) / (N - 1) * sigma2 / n, sigma2


def check_cvi(model, kind, cfg, replications=1000, params: ConvergenceParams = None,
              W0=None, steps=None):
    """Expected-gap bound ``e_{k+1} <= Lambda_1 + rho^k (e_1 - Lambda_1)`` for
    FGD, SGD or mini-batch descent, estimated over independent replications."""
    from .optimizers import Stepper, Streams

    if kind not in ("fgd", "sgd", "batch"):
        raise ValueError("the convergence-variance check covers fgd, sgd and batch")
    if not model.has_constants:
        raise ValueError("model needs analytic L, c and J*")
    if cfg.step_size >= 2.0 / model.L:
        raise ValueError("step size must be below 2/L")
    params = params or ConvergenceParams(model.L, model.c, cfg.step_size)
    steps = cfg.max_iter if steps is None else steps
    n = {"fgd": model.n_samples, "sgd": 1, "batch": cfg.batch_size}[kind]
    reps = 1 if kind == "fgd" else replications
    W1 = np.zeros(model.dim) if W0 is None else np.asarray(W0, dtype=float)

    gaps = np.empty((reps, steps + 1))
    sampled = min(reps, 50)  # s^2 is averaged over a subset; it is cheap to vary little
    s2 = np.zeros(steps + 1)
    sigma2 = np.zeros(steps + 1)
    for r in range(reps):
        stepper = Stepper(kind, model, None, cfg, Streams.from_seed(cfg.seed, "cvi", r))
        W = W1.copy()
        for k in range(steps + 1):
            gaps[r, k] = model.loss(W) - model.j_star
            if r < sampled:
                s, sg = sampling_variance(model, W, n)
                s2[k] += s / sampled
                sigma2[k] += sg / sampled
            if k < steps:
                W, _ = stepper.step(W)
    e = gaps.mean(axis=0)
    se = gaps.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros_like(e)

    lam1 = params.plateau(s2[0])
    rho = params.rho
    k = np.arange(1, steps + 1)
    bound = lam1 + rho**k * (e[0] - lam1)
    tail = e[steps // 2:]
    plateau = float(tail.mean())
    extra = dict(Lambda_1=lam1, rho=rho, plateau=plateau, e=e, se=se,
                 s2=s2, sigma2=sigma2,
                 sample_size_condition=bool(np.all(np.diff(sigma2) <= 1e-12 * max(sigma2.max(), 1.0))))
    if not np.any(s2 > 0):  # exact-gradient steps: pure contraction
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = e[1:] / e[:-1]
        # ratios are only resolved to 1e-9 where rounding in J - J* is far smaller
        live = e[1:] > 1e9 * np.finfo(float).eps * abs(model.j_star) + GAP_FLOOR
        extra["contraction"] = ratios[live]
        extra["ok"] = bool(np.all(ratios[live] <= rho + 1e-9))
    else:
        extra["plateau_ok"] = bool(plateau <= lam1 * 1.1)
        extra["ok"] = extra["plateau_ok"]
    rounding = 1e-12 * np.abs(bound) + gap_floor(model.j_star) - GAP_FLOOR
    return _report(f"cvi-{kind}", k, e[1:], bound + MEAN_SE * se[1:] + rounding, **extra)


def gap_floor(j_star):
    return 1e3 * np.finfo(float).eps * abs(j_star) + GAP_FLOOR


def check_linear_convergence(traces, params: ConvergenceParams, j_star=0.0, k0=None,
                             asserted=True, gamma=None):
    """Fitted log-gap rate and the bound ``E gap_k <= Omega lam^{2(k-k0)}``.

    ``traces`` is a list of :class:`RunTrace` on one iteration grid; their
    gaps are averaged. Points at or below the numerical floor are excluded.
    """
    if not traces or traces[0].column("gap").size == 0 or np.all(np.isnan(traces[0].column("gap"))):
        raise ValueError("no recorded optimality gaps")
    ks = traces[0].column("iteration")
    gaps = np.mean([t.column("gap") for t in traces], axis=0)
    k0 = params.k0 if k0 is None else k0
    floor = gap_floor(j_star)
    live = (ks >= k0) & (gaps > floor)
    # keep the leading run above the floor only
    if live.any():
        first_dead = np.flatnonzero((ks >= k0) & ~(gaps > floor))
        if first_dead.size:
            live &= ks < ks[first_dead[0]]
    if live.sum() >= 3:
        slope, _, slope_se = fit_log_linear(ks[live], gaps[live])
    else:
        slope, slope_se = 0.0, float("inf")
    start = gaps[np.searchsorted(ks, k0)]
    lam = params.lam
    omega = params.omega(start)
    rhs = omega * lam ** (2 * (ks[live] - k0))
    return _report("linear-convergence", ks[live], gaps[live], rhs, asserted,
                   fitted_rate=slope, fitted_rate_se=slope_se, log_lambda_sq=2 * math.log(lam),
                   lam=lam, omega=omega, floor=floor, step_ok=params.step_ok,
                   ok=bool(slope + MEAN_SE * slope_se < -1e-9))


def check_budget_dominance(target, rivals, budgets, floor=GAP_FLOOR):
    """Strict ``gap_target < min(gap_rivals)`` at equal gradient-evaluation budgets.

    ``target`` and each entry of ``rivals`` are lists of :class:`RunTrace`
    paired by seed. Budgets at which the target's gap has reached ``floor``
    are skipped; a rival that diverged or never reached a budget counts as an
    infinite gap.
    """
    from .experiments import gaps_at_budgets

    budgets = np.asarray(budgets)
    ks, lhs, rhs, seeds = [], [], [], []
    for s, tr in enumerate(target):
        mine = gaps_at_budgets(tr, budgets)
        theirs = np.min([gaps_at_budgets(r[s], budgets) for r in rivals], axis=0)
        live = mine > floor
        ks.extend(budgets[live])
        lhs.extend(mine[live])
        # strict inequality expressed as lhs <= nextafter(rhs, -inf)
        rhs.extend(np.nextafter(theirs[live], -np.inf))
        seeds.extend([s] * int(live.sum()))
    return _report("budget-dominance", np.array(ks), np.array(lhs), np.array(rhs),
                   seeds=seeds, ok=len(ks) > 0)
