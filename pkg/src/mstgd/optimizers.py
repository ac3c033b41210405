"""MSTGD and the gradient-descent baselines behind one stepping interface.

Every stepper takes the random streams it needs explicitly. A run owns two
streams: ``draw`` supplies the single per-category sample (shared by MSTGD and
the memoryless stratified stepper, so the two coincide draw-for-draw), and
``batch`` supplies moment batches and uniform mini-batches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import make_rng
from .estimator import (BlendCoefficients, MemoryState, category_moments,
                        compute_blend_equal_mean, compute_blend_general,
                        stratified_mean, update_component, update_component_zero_mean)

OPTIMIZERS = ("mstgd", "sgd", "batch", "fgd", "gst")
COEFF_MODES = ("equal-mean", "general")


@dataclass
class OptimizerConfig:
    step_size: float = 0.2
    batch_size: int = 20
    max_iter: int = 1000
    seed: int = 0
    coeff_mode: str = "equal-mean"
    mean_zeroing: bool = True
    record_every: int = 1
    forced_pq: tuple = None  # (p, q) override, for the memoryless reduction

    def __post_init__(self):
        if not self.step_size >= 0:
            raise ValueError("step size must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.coeff_mode not in COEFF_MODES:
            raise ValueError(f"coefficient mode must be one of {COEFF_MODES}")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")

    def to_dict(self):
        d = asdict(self)
        d["forced_pq"] = list(self.forced_pq) if self.forced_pq is not None else None
        return d


@dataclass
class StepReport:
    iteration: int
    W: np.ndarray
    direction: np.ndarray
    p: np.ndarray = None
    q: np.ndarray = None
    fallback: np.ndarray = None
    grad_evals: int = 0
    variance_trace: float = None


@dataclass
class Streams:
    draw: np.random.Generator
    batch: np.random.Generator

    @classmethod
    def from_seed(cls, seed, *tag):
        return cls(make_rng(seed, "draw", *tag), make_rng(seed, "batch", *tag))


def _per_category_draw(dataset, rng):
    return np.array([ix[rng.integers(len(ix))] for ix in dataset.category_indices])


def moment_batch_size(batch_size, n_categories):
    return math.ceil(batch_size / n_categories)


def mstgd_step(model, dataset, W, state: MemoryState, cfg: OptimizerConfig, streams: Streams):
    """One iteration of MSTGD; mutates ``state`` and returns ``(W_next, report)``.

    Per category: moments from ``ceil(B/C)`` samples, blend coefficients
    against the previous moments, one further disjoint draw folded into the
    memory. The first iteration fills the memory memorylessly.
    """
    C = dataset.n_categories
    if cfg.batch_size < C:
        raise ValueError(f"batch size {cfg.batch_size} is smaller than the {C} categories")
    if state.components.shape != (C, model.dim):
        raise ValueError("memory state is not dimensioned for this model and dataset")
    m = moment_batch_size(cfg.batch_size, C)
    w = dataset.weights
    xi = _per_category_draw(dataset, streams.draw)

    means = np.empty((C, model.dim))
    variances = np.empty((C, model.dim))
    ps, qs, flags = (np.empty((C, model.dim)) for _ in range(3))
    for j, ix in enumerate(dataset.category_indices):
        pool = ix[ix != xi[j]]
        if len(pool) < m:
            raise ValueError(f"category {j} has too few samples for a moment batch of {m}")
        batch = pool[streams.batch.choice(len(pool), size=m, replace=False)]
        mom = category_moments(model.per_sample_grad(W, batch))
        # evaluated on its own so the memoryless reduction matches g_st_step bit for bit
        g = model.per_sample_grad(W, xi[j:j + 1])[0]

        if cfg.forced_pq is not None:
            coeffs = BlendCoefficients(np.full(model.dim, cfg.forced_pq[0]),
                                       np.full(model.dim, cfg.forced_pq[1]))
        elif state.iteration == 0:
            coeffs = BlendCoefficients.memoryless(model.dim)
        elif cfg.coeff_mode == "equal-mean":
            coeffs = compute_blend_equal_mean(state.stored_variances[j], mom.variance)
        else:
            coeffs = compute_blend_general(state.stored_means[j], mom.mean,
                                           state.stored_variances[j], mom.variance)

        if cfg.mean_zeroing:
            state.components[j] = update_component_zero_mean(state.components[j], coeffs, g, mom.mean)
        else:
            state.components[j] = update_component(state.components[j], coeffs, g)
        means[j], variances[j] = mom.mean, mom.variance
        ps[j], qs[j], flags[j] = coeffs.p, coeffs.q, coeffs.fallback

    state.stored_means[:] = means
    state.stored_variances[:] = variances
    direction = stratified_mean(w, state.components, means if cfg.mean_zeroing else None)
    report = StepReport(state.iteration, W, direction, ps, qs, flags.astype(bool),
                        C * (m + 1), float(np.sum(w**2 * variances.sum(axis=1))))
    state.iteration += 1
    return W - cfg.step_size * direction, report


def sgd_step(model, dataset, W, cfg: OptimizerConfig, streams: Streams):
    i = streams.batch.integers(model.n_samples)
    g = model.per_sample_grad(W, [i])[0]
    return W - cfg.step_size * g, StepReport(0, W, g, grad_evals=1)


def batch_step(model, dataset, W, cfg: OptimizerConfig, streams: Streams):
    B = cfg.batch_size
    if B > model.n_samples:
        raise ValueError(f"batch size {B} exceeds the {model.n_samples} samples")
    if B == model.n_samples:
        idx = np.arange(B)
    else:
        idx = streams.batch.choice(model.n_samples, size=B, replace=False)
    g = model.evaluate(W, idx)[1]
    return W - cfg.step_size * g, StepReport(0, W, g, grad_evals=B)


def fgd_step(model, W, cfg: OptimizerConfig):
    g = model.grad(W)
    return W - cfg.step_size * g, StepReport(0, W, g, grad_evals=model.n_samples)


def g_st_step(model, dataset, W, cfg: OptimizerConfig, streams: Streams):
    """Memoryless stratified step: one draw per category, class-weighted."""
    xi = _per_category_draw(dataset, streams.draw)
    grads = np.array([model.per_sample_grad(W, xi[j:j + 1])[0] for j in range(len(xi))])
    direction = stratified_mean(dataset.weights, grads)
    return W - cfg.step_size * direction, StepReport(0, W, direction,
                                                     grad_evals=dataset.n_categories)


class Stepper:
    """Uniform ``step(W) -> (W_next, report)`` wrapper holding per-run state."""

    def __init__(self, kind, model, dataset, cfg: OptimizerConfig, streams: Streams = None):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}; choose from {OPTIMIZERS}")
        self.kind = kind
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.streams = streams or Streams.from_seed(cfg.seed)
        self.state = None
        if kind == "mstgd":
            self.state = MemoryState.zeros(dataset.n_categories, model.dim)

    def step(self, W):
        k, m, d, cfg, s = self.kind, self.model, self.dataset, self.cfg, self.streams
        if k == "mstgd":
            return mstgd_step(m, d, W, self.state, cfg, s)
        if k == "sgd":
            return sgd_step(m, d, W, cfg, s)
        if k == "batch":
            return batch_step(m, d, W, cfg, s)
        if k == "fgd":
            return fgd_step(m, W, cfg)
        return g_st_step(m, d, W, cfg, s)


TRACE_COLUMNS = ("iteration", "grad_evals", "loss", "gap", "grad_norm",
                 "train_acc", "test_acc", "est_sq_dev", "emp_var")


@dataclass
class RunTrace:
    optimizer: str
    config: dict
    rows: list = field(default_factory=list)
    diverged: bool = False
    W: np.ndarray = None

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)


def run(model, dataset, kind, cfg: OptimizerConfig, W0=None, test_set=None, sink=None,
        streams: Streams = None) -> RunTrace:
    """Iterate ``cfg.max_iter`` steps, recording every ``cfg.record_every``.

    ``sink`` (optional) receives each row dict as it is produced. Estimator
    diagnostics in a row describe the step taken from that row's iterate.
    Rows are recorded for iteration 0 and every ``record_every`` steps after.
    """
    if W0 is None:
        W0 = model.initial_point(make_rng(cfg.seed, "init"))
    W = np.array(W0, dtype=float)
    stepper = Stepper(kind, model, dataset, cfg, streams)
    trace = RunTrace(kind, {"optimizer": kind, **cfg.to_dict()})
    evals = 0
    classify = hasattr(model, "accuracy")

    def record(k, report):
        with np.errstate(all="ignore"):
            return _record(k, report)

    def _record(k, report):
        loss, g = model.evaluate(W)
        row = dict.fromkeys(TRACE_COLUMNS)
        row.update(iteration=k, grad_evals=evals, loss=loss,
                   grad_norm=float(np.linalg.norm(g)))
        if model.j_star is not None:
            row["gap"] = loss - model.j_star
        if classify:
            row["train_acc"] = model.accuracy(W)
            if test_set is not None:
                row["test_acc"] = model.accuracy(W, test_set.features, test_set.labels)
        if report is not None:
            row["est_sq_dev"] = float(np.sum((report.direction - g) ** 2))
            row["emp_var"] = report.variance_trace
        finite = all(v is None or np.isfinite(v) for v in row.values())
        trace.rows.append(row)
        if sink is not None:
            sink(row)
        return finite

    for k in range(cfg.max_iter + 1):
        report = None
        if k < cfg.max_iter:
            with np.errstate(all="ignore"):
                W_next, report = stepper.step(W)
        if k % cfg.record_every == 0 or k == cfg.max_iter:
            if not record(k, report):
                trace.diverged = True
                break
        if k == cfg.max_iter:
            break
        evals += report.grad_evals
        W = W_next
        if not np.all(np.isfinite(W)):
            record(k + 1, None)
            trace.diverged = True
            break
    trace.W = W
    return trace
