"""Experiment harnesses and CSV output.

CSV schemas (header row first, floats with 17 significant digits):

* estimator rounds: ``rep, round, method, estimate, population_mean, sq_dev``
* estimator summary: ``method, mean_sq_dev, std_sq_dev, rank1_fraction``
* training traces: ``optimizer, seed`` followed by :data:`TRACE_COLUMNS`
* variance decay: ``k, p, q, fresh_var, mc_var, mc_se, exact_var``
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import (DEC_INTERVALS, INC_INTERVALS, StratifiedPopulation, gen_normal_population,
                   gen_uniform_population, make_rng)
from .estimator import compute_blend_equal_mean, compute_blend_general
from .optimizers import TRACE_COLUMNS, OptimizerConfig, RunTrace, run

METHODS = ("mst", "st", "batch", "sgd")

DATA_KINDS = {
    "dec_udata": ("uniform", DEC_INTERVALS),
    "inc_udata": ("uniform", INC_INTERVALS),
    "random_ndata": ("normal", "random"),
    "meand_ndata": ("normal", "meanD"),
    "meani_ndata": ("normal", "meanI"),
    "vard_ndata": ("normal", "varD"),
    "vari_ndata": ("normal", "varI"),
}


def normalize_kind(kind: str) -> str:
    key = str(kind).lower()
    if key not in DATA_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {sorted(DATA_KINDS)}")
    return key


def make_population(kind, seed=0, rows=40) -> StratifiedPopulation:
    family, arg = DATA_KINDS[normalize_kind(kind)]
    if family == "uniform":
        return gen_uniform_population(arg, rows=rows, seed=seed)
    return gen_normal_population(arg, rows=rows, seed=seed)


@dataclass
class ExperimentSpec:
    kind: str
    data: str = None
    optimizers: tuple = ()
    config: dict = field(default_factory=dict)
    reps: int = 1
    seed: int = 0
    out: str = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("repetitions must be >= 1")
        self.optimizers = tuple(self.optimizers)

    def to_dict(self):
        d = asdict(self)
        d["optimizers"] = list(self.optimizers)
        return d


# -- estimator accuracy -----------------------------------------------------

@dataclass
class EstimatorAccuracy:
    rows: list            # per-round records
    sq_dev: dict          # method -> (reps, rounds) array
    rank1_fraction: float

    def summary(self):
        out = []
        for m in METHODS:
            d = self.sq_dev[m]
            out.append({"method": m, "mean_sq_dev": float(d.mean()), "std_sq_dev": float(d.std()),
                        "rank1_fraction": self.rank1_fraction if m == "mst" else None})
        return out


def _blend(coeff_mode, m_prev, m_cur):
    if coeff_mode == "general":
        return compute_blend_general(m_prev.mean, m_cur.mean, m_prev.variance, m_cur.variance)
    return compute_blend_equal_mean(m_prev.variance, m_cur.variance)


def track_population(pop: StratifiedPopulation, rng, coeff_mode="general"):
    """One repetition of the four estimators over every round of ``pop``.

    Each round draws one observation per category (shared by the memory and
    memoryless stratified estimators), C uniform draws for Batch and a single
    draw for SGD. Blend coefficients use the true category moments. Returns
    ``{method: (estimates (rounds, dim))}``.
    """
    C, K, dim = pop.n_categories, pop.n_rounds, pop.values.shape[2]
    w = pop.weights[:, None]
    G = np.zeros((C, dim))
    est = {m: np.empty((K, dim)) for m in METHODS}
    prev = None
    for k in range(K):
        cur = pop.moments(k)
        xi = np.array([ix[rng.integers(len(ix))] for ix in pop.category_indices])
        g = pop.values[k, xi]
        for j in range(C):
            if prev is None:
                p, q = 0.0, 1.0
            else:
                c = _blend(coeff_mode, prev[j], cur[j])
                p, q = c.p, c.q
            if coeff_mode == "general":
                G[j] = p * G[j] + q * g[j]
            else:
                G[j] = p * G[j] + q * (g[j] - cur[j].mean)
        means = np.array([m.mean for m in cur])
        est["mst"][k] = np.sum(w * (G if coeff_mode == "general" else G + means), axis=0)
        est["st"][k] = np.sum(w * g, axis=0)
        est["batch"][k] = pop.values[k, rng.choice(pop.size, size=C, replace=False)].mean(axis=0)
        est["sgd"][k] = pop.values[k, rng.integers(pop.size)]
        prev = cur
    return est


def estimator_accuracy(spec: ExperimentSpec, coeff_mode="general", population=None,
                       population_factory=None) -> EstimatorAccuracy:
    """Squared deviation of each estimator from every round's population mean.

    The population is regenerated for every repetition unless a fixed
    ``population`` is given. A repetition counts towards ``rank1_fraction``
    when the memory estimator's mean squared deviation over the rounds is no
    larger than every other method's.
    """
    if population is None and population_factory is None:
        kind = normalize_kind(spec.data)
        population_factory = lambda r: make_population(  # noqa: E731
            kind, seed=int(make_rng(spec.seed, "population", kind, r).integers(2**62)))
    rows, devs = [], {m: [] for m in METHODS}
    rank1 = 0
    for r in range(spec.reps):
        pop = population if population is not None else population_factory(r)
        est = track_population(pop, make_rng(spec.seed, "estimate", r), coeff_mode)
        per_rep = {}
        for m in METHODS:
            truth = np.array([pop.round_mean(k) for k in range(pop.n_rounds)])
            sq = np.sum((est[m] - truth) ** 2, axis=1)
            devs[m].append(sq)
            per_rep[m] = sq.mean()
            for k in range(pop.n_rounds):
                rows.append({"rep": r, "round": k, "method": m,
                             "estimate": float(est[m][k, 0]),
                             "population_mean": float(truth[k, 0]), "sq_dev": float(sq[k])})
        rank1 += all(per_rep["mst"] <= per_rep[m] for m in METHODS[1:])
    return EstimatorAccuracy(rows, {m: np.array(v) for m, v in devs.items()}, rank1 / spec.reps)


# -- gradient tracking ------------------------------------------------------

def collect_gradient_matrix(model, dataset, cfg: OptimizerConfig, coord=None, kind="fgd",
                            W0=None):
    """Per-sample values of one gradient coordinate along an optimizer run.

    Returns an ``(N, K)`` matrix, column ``k`` taken at the ``k``-th iterate
    (``K = cfg.max_iter``). ``coord`` defaults to the weight from the first
    penultimate unit to the first output unit of an MLP.
    """
    from .optimizers import Stepper

    if coord is None:
        coord = model.param_index(-1, 0, 0)
    W = model.initial_point(make_rng(cfg.seed, "init")) if W0 is None else np.asarray(W0, float)
    stepper = Stepper(kind, model, dataset, cfg)
    cols = []
    for _ in range(cfg.max_iter):
        cols.append(model.per_sample_grad_column(W, coord))
        W, _ = stepper.step(W)
    return np.column_stack(cols) if cols else np.empty((model.n_samples, 0))


def gradient_tracking(matrix, labels, spec: ExperimentSpec, coeff_mode="general"):
    """Estimator accuracy where column ``k`` of ``matrix`` is round ``k``."""
    if labels is None:
        raise ValueError("gradient tracking needs category labels")
    matrix = np.asarray(matrix, dtype=float)
    labels = np.asarray(labels)
    if labels.shape[0] != matrix.shape[0]:
        raise ValueError("one label per matrix row required")
    pop = StratifiedPopulation(matrix.T, labels)
    return estimator_accuracy(spec, coeff_mode, population=pop)


# -- training ---------------------------------------------------------------

@dataclass
class TrainingResult:
    traces: dict          # optimizer -> list of RunTrace (one per seed)
    seeds: list

    def final(self, optimizer, column="test_acc"):
        """Final value per seed; NaN for diverged runs."""
        return np.array([np.nan if t.diverged else t.rows[-1][column]
                         for t in self.traces[optimizer]], dtype=float)

    def table(self, column="test_acc"):
        out = []
        for opt in self.traces:
            vals = self.final(opt, column)
            ok = vals[~np.isnan(vals)]
            out.append({"optimizer": opt, f"mean_{column}": float(ok.mean()) if ok.size else None,
                        "diverged": int(np.isnan(vals).sum())})
        return out


def training_comparison(model, dataset, spec: ExperimentSpec, test_set=None,
                        checkpoint=1000, sgd_multiplier=None):
    """Train with every optimizer in ``spec.optimizers`` for ``spec.reps`` seeds.

    All optimizers get the same iteration budget, except SGD whose iterations
    and checkpoint cadence are multiplied by the batch size.
    """
    base = OptimizerConfig(**spec.config)
    mult = base.batch_size if sgd_multiplier is None else sgd_multiplier
    traces = {}
    seeds = [spec.seed + r for r in range(spec.reps)]
    for opt in spec.optimizers:
        traces[opt] = []
        for s in seeds:
            scale = mult if opt == "sgd" else 1
            cfg = OptimizerConfig(**{**spec.config, "seed": s,
                                     "max_iter": base.max_iter * scale,
                                     "record_every": max(1, checkpoint) * scale})
            traces[opt].append(run(model, dataset, opt, cfg, test_set=test_set))
    return TrainingResult(traces, seeds)


def gaps_at_budgets(trace: RunTrace, budgets):
    """Optimality gap at the last recorded row within each evaluation budget;
    ``inf`` for budgets the run did not reach or after divergence."""
    ev = trace.column("grad_evals")
    gap = trace.column("gap")
    out = np.full(len(budgets), np.inf)
    for i, b in enumerate(budgets):
        pos = np.searchsorted(ev, b, side="right") - 1
        if pos >= 0 and not (trace.diverged and pos == len(ev) - 1) and ev[-1] >= b:
            out[i] = gap[pos]
    return out


def convergence_comparison(seeds=5, budget=12_000, step_size=1.0, batch_size=20,
                           optimizers=("mstgd", "batch", "sgd"), problem=None):
    """Runs on the clustered least-squares problem with a shared evaluation budget."""
    from .models import stratified_least_squares

    problem = problem or {}
    model, ds = stratified_least_squares(**{"separation": 3.0, "spread": 0.3, **problem})
    traces = {}
    for opt in optimizers:
        traces[opt] = []
        for s in range(seeds):
            cfg = OptimizerConfig(step_size=step_size, batch_size=batch_size, seed=s,
                                  max_iter=_iterations_for_budget(opt, budget, batch_size,
                                                                  ds.n_categories))
            traces[opt].append(run(model, ds, opt, cfg))
    return model, traces


def _iterations_for_budget(opt, budget, batch_size, n_categories):
    per = {"mstgd": n_categories * (math.ceil(batch_size / n_categories) + 1),
           "batch": batch_size, "sgd": 1, "gst": n_categories}[opt]
    return math.ceil(budget / per)


# -- variance decay ---------------------------------------------------------

@dataclass
class DecayResult:
    rows: list
    report: object       # BoundReport on the Monte-Carlo variances
    exact_gamma_sq: float


def variance_decay_experiment(gradients=None, labels=None, pq=(0.5, 0.5), steps=20,
                              replications=100_000, seed=0, k0=5, kind="fixed"):
    """Monte-Carlo variance of the memory statistic on a frozen model.

    Category moments come from the fixed per-sample ``gradients``; the fresh
    draw variance shrinks by ``p^2 + q^2`` per step (noise vanishing at the
    optimum). ``kind="memoryless"`` keeps the variance constant and p = 0.
    """
    from .models import FrozenGradientModel
    from .verify import (MomentProtocol, check_variance_decay, exact_variance_recursion,
                         mc_estimator_moments)

    if gradients is None:
        gradients = make_rng(seed, "frozen-gradients").normal(1.0, 1.0, size=(40, 1))
        labels = np.repeat(np.arange(4), 10)
    frozen = FrozenGradientModel(gradients)
    pop = StratifiedPopulation(frozen.gradients[None], labels)
    mom = pop.moments(0)
    E = np.array([m.mean for m in mom])
    V = np.array([m.variance for m in mom])
    ratio = 1.0 if kind == "memoryless" else pq[0] ** 2 + pq[1] ** 2
    scale = ratio ** np.arange(steps)
    protocol = MomentProtocol(np.broadcast_to(E, (steps,) + E.shape),
                              scale[:, None, None] * V[None], pop.weights)
    mc = mc_estimator_moments(protocol, kind, replications, seed, fixed_pq=pq)
    exact = exact_variance_recursion(protocol, mc.p, mc.q).sum(axis=1)
    report = check_variance_decay(mc.var, mc.se_var, k0=k0, asserted=kind != "memoryless")
    exact_fit = check_variance_decay(exact, k0=k0)
    rows = [{"k": k, "p": float(mc.p[k].max()), "q": float(mc.q[k].max()),
             "fresh_var": float(np.sum(pop.weights[:, None] ** 2 * protocol.variances[k])),
             "mc_var": float(mc.total_var[k]), "mc_se": float(mc.total_se_var[k]),
             "exact_var": float(exact[k])} for k in range(steps)]
    return DecayResult(rows, report, exact_fit.extra["gamma_sq_hat"])


# -- CSV --------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def atomic_write(path, text):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def emit_csv(rows, path, columns=None):
    """Write dict rows (or a :class:`RunTrace`) as CSV, atomically."""
    if isinstance(rows, RunTrace):
        columns = columns or TRACE_COLUMNS
        rows = rows.rows
    if columns is None:
        if not rows:
            raise ValueError("columns are required for an empty table")
        columns = list(rows[0])
    atomic_write(path, render_csv(rows, columns))
    return path


def trace_rows(result: TrainingResult):
    rows = []
    for opt, traces in result.traces.items():
        for seed, t in zip(result.seeds, traces):
            rows.extend({"optimizer": opt, "seed": seed, **r} for r in t.rows)
    return rows


TRAINING_COLUMNS = ("optimizer", "seed") + TRACE_COLUMNS
ROUND_COLUMNS = ("rep", "round", "method", "estimate", "population_mean", "sq_dev")
SUMMARY_COLUMNS = ("method", "mean_sq_dev", "std_sq_dev", "rank1_fraction")
DECAY_COLUMNS = ("k", "p", "q", "fresh_var", "mc_var", "mc_se", "exact_var")
