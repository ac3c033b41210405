"""Command-line entry point: ``mstgd {estimate,train,verify}``.

Exit codes: 0 success, 1 an asserted check failed, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import verify as vf
from .data import IdxError, LabeledDataset, contiguous_labels, draw_stratified, load_idx, make_rng
from .models import MLPModel, QuadraticModel, stratified_least_squares
from .optimizers import COEFF_MODES, OPTIMIZERS, OptimizerConfig, run

SUITES = ("unbias", "variance", "design-effect", "lemma2", "cvi", "linear")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _echo(spec):
    print(json.dumps(spec, sort_keys=True))
    sys.stdout.flush()


def build_parser():
    ap = _Parser(prog="mstgd", description="Memory stratified gradient descent toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimator accuracy on synthetic populations")
    est.add_argument("--data", required=True)
    est.add_argument("--reps", type=int, default=100)
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out")
    est.add_argument("--coeff", choices=COEFF_MODES, default="general")

    tr = sub.add_parser("train", help="train a model with one or all optimizers")
    tr.add_argument("--model", choices=("quadratic", "mlp"), default="quadratic")
    tr.add_argument("--opt", choices=OPTIMIZERS + ("all",), default="mstgd")
    tr.add_argument("--h", type=float, default=0.2)
    tr.add_argument("--batch", type=int, default=20)
    tr.add_argument("--iters", type=int, default=1000)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--reps", type=int, default=1)
    tr.add_argument("--coeff", choices=COEFF_MODES, default="equal-mean")
    tr.add_argument("--no-mean-zeroing", action="store_true")
    tr.add_argument("--weight-decay", type=float, default=None)
    tr.add_argument("--layers", default=None, help="comma-separated widths")
    tr.add_argument("--record-every", type=int, default=None)
    tr.add_argument("--mnist-images")
    tr.add_argument("--mnist-labels")
    tr.add_argument("--mnist-test-images")
    tr.add_argument("--mnist-test-labels")
    tr.add_argument("--subset", type=int, default=None)
    tr.add_argument("--synthetic", action="store_true")
    tr.add_argument("--out")

    ve = sub.add_parser("verify", help="run numeric checks")
    ve.add_argument("--suite", choices=SUITES + ("all",), default="all")
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--reps", type=int, default=100_000, help="Monte-Carlo replications")
    ve.add_argument("--out")
    return ap


# -- estimate ---------------------------------------------------------------

def cmd_estimate(args):
    try:
        kind = ex.normalize_kind(args.data)
    except ValueError as err:
        raise UsageError(str(err))
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    spec = ex.ExperimentSpec("estimate", kind, ("mst", "st", "batch", "sgd"),
                             {"coeff": args.coeff}, args.reps, args.seed, args.out)
    _echo({"command": "estimate", **spec.to_dict()})
    result = ex.estimator_accuracy(spec, coeff_mode=args.coeff)
    summary = result.summary()
    print(ex.render_csv(summary, ex.SUMMARY_COLUMNS), end="")
    if args.out:
        ex.emit_csv(result.rows, args.out, ex.ROUND_COLUMNS)
        out = Path(args.out)
        ex.emit_csv(summary, out.with_name(out.stem + "_summary.csv"), ex.SUMMARY_COLUMNS)
    return 0


# -- train ------------------------------------------------------------------

def _synthetic_classes(seed, n=400, dim=10, n_categories=4):
    rng = make_rng(seed, "synthetic-classes")
    labels = contiguous_labels(n, n_categories)
    centres = 2.0 * rng.standard_normal((n_categories, dim))
    X = centres[labels] + rng.standard_normal((n, dim))
    perm = rng.permutation(n)
    train, test = perm[: n * 3 // 4], perm[n * 3 // 4:]
    return (LabeledDataset(X[train], labels[train], n_categories),
            LabeledDataset(X[test], labels[test], n_categories))


def _load_mnist(args):
    if not (args.mnist_images and args.mnist_labels):
        raise UsageError("--model mlp needs --mnist-images and --mnist-labels (or --synthetic)")
    try:
        train = load_idx(args.mnist_images, args.mnist_labels).to_dataset()
        test = None
        if args.mnist_test_images and args.mnist_test_labels:
            test = load_idx(args.mnist_test_images, args.mnist_test_labels).to_dataset()
    except (OSError, IdxError) as err:
        raise UsageError(f"cannot read MNIST files: {err}")
    return train, test


def _build_training(args):
    if args.model == "quadratic":
        model, ds = stratified_least_squares(seed=args.seed, separation=3.0, spread=0.3,
                                             weight_decay=args.weight_decay or 0.0)
        return model, ds, None, {"problem": "stratified-least-squares", "n": 400,
                                 "categories": 4, "dim": 10}
    if args.synthetic:
        train, test = _synthetic_classes(args.seed)
        source = {"problem": "synthetic-classes"}
    else:
        train, test = _load_mnist(args)
        source = {"problem": "mnist", "images": args.mnist_images}
    if args.subset is not None:
        per = args.subset // train.n_categories
        if per < 1 or per > min(len(ix) for ix in train.category_indices):
            raise UsageError("--subset must leave between 1 and the smallest class size per class")
        picked = np.sort(np.concatenate(draw_stratified(train, per, make_rng(args.seed, "subset"))))
        train = train.subset(picked)
    default_layers = f"{train.features.shape[1]},64,32,{train.n_categories}"
    layers = [int(x) for x in (args.layers or default_layers).split(",")]
    decay = 1e-3 if args.weight_decay is None else args.weight_decay
    try:
        model = MLPModel(layers, train.features, train.labels, weight_decay=decay)
    except ValueError as err:
        raise UsageError(str(err))
    return model, train, test, {**source, "layers": layers, "train_size": train.size}


def cmd_train(args):
    if args.iters < 0 or args.batch < 1 or args.h < 0 or args.reps < 1:
        raise UsageError("--iters, --batch, --h and --reps must be nonnegative/positive")
    model, ds, test, problem = _build_training(args)
    record_every = args.record_every or (1 if args.opt != "all" else max(1, args.iters // 10))
    config = dict(step_size=args.h, batch_size=args.batch, max_iter=args.iters, seed=args.seed,
                  coeff_mode=args.coeff, mean_zeroing=not args.no_mean_zeroing,
                  record_every=record_every)
    if args.opt == "mstgd" and args.batch < ds.n_categories:
        raise UsageError(f"--batch must be at least the {ds.n_categories} categories")
    opts = tuple(o for o in OPTIMIZERS if o != "fgd") if args.opt == "all" else (args.opt,)
    spec = ex.ExperimentSpec("train", args.model, opts, config, args.reps, args.seed, args.out)
    weight_decay = getattr(model, "weight_decay", 0.0)
    _echo({"command": "train", **spec.to_dict(), "problem": problem,
           "weight_decay": weight_decay, "sgd_multiplier": args.batch if args.opt == "all" else 1})
    if args.opt == "all":
        result = ex.training_comparison(model, ds, spec, test_set=test, checkpoint=record_every)
    else:
        traces = [run(model, ds, args.opt, OptimizerConfig(**{**config, "seed": args.seed + r}),
                      test_set=test) for r in range(args.reps)]
        result = ex.TrainingResult({args.opt: traces}, [args.seed + r for r in range(args.reps)])
    column = "test_acc" if test is not None else ("train_acc" if args.model == "mlp" else "gap")
    for row in result.table(column):
        print(json.dumps(row, sort_keys=True))
    if args.out:
        ex.emit_csv(ex.trace_rows(result), args.out, ex.TRAINING_COLUMNS)
    return 0


# -- verify -----------------------------------------------------------------

def _noisy_quadratic(seed, n=200):
    y = make_rng(seed, "noisy-quadratic").standard_normal(n)
    return QuadraticModel(np.ones(n), y)


def suite_unbias(seed, reps):
    protocol = vf.MomentProtocol.two_step([2.0, -1.0], [1.0, -3.0], [1.0, 2.0], [2.0, 0.5],
                                          weights=(0.4, 0.6))
    return [vf.check_unbiased(protocol, reps, seed)]


def suite_variance(seed, reps):
    hand = vf.MomentProtocol.two_step(2.0, 1.0, 1.0, 2.0)
    two = vf.MomentProtocol.two_step([2.0, 1.5], [1.0, 3.0], [1.0, 0.5], [2.0, 1.5],
                                     weights=(0.5, 0.5))
    decay = ex.variance_decay_experiment(replications=reps, seed=seed)
    control = ex.variance_decay_experiment(replications=reps, seed=seed, kind="memoryless")
    rel = abs(decay.report.extra["gamma_sq_hat"] - decay.exact_gamma_sq) / decay.exact_gamma_sq
    agree = vf._report("decay-rate-vs-exact", 0, rel, vf.VAR_REL_TOL,
                       mc_gamma_sq=decay.report.extra["gamma_sq_hat"],
                       exact_gamma_sq=decay.exact_gamma_sq)
    control.report.check = "variance-decay-memoryless-control"
    return [vf.check_stationary_variance(hand, reps, seed),
            vf.check_stationary_variance(two, reps, seed + 1),
            decay.report, agree, control.report]


def suite_design_effect(seed, reps):
    rng = make_rng(seed, "design-effect-protocol")
    protocol = vf.MomentProtocol(rng.uniform(0.5, 3.0, (10, 3, 2)), rng.uniform(0.1, 2.0, (10, 3, 2)),
                                 np.array([0.2, 0.3, 0.5]))
    return list(vf.check_design_effect(protocol, reps, seed))


def suite_lemma2(seed, reps):
    reports = []
    for eta, gamma in ((0.9, 0.95), (0.5, 0.9), (0.9, 0.9)):
        k, status = vf.lemma2_threshold(eta, gamma, 0, 10_000)
        control = eta >= gamma
        found = k is not None
        reports.append(vf._report(f"decay-threshold-{eta}-{gamma}", 0, 0.0, 0.0, asserted=not control,
                                  threshold=k, status=status,
                                  ok=(not found) if control else found))
    return reports


def suite_cvi(seed, reps):
    model = _noisy_quadratic(seed)
    W0 = [5.0]
    fgd = vf.check_cvi(model, "fgd", OptimizerConfig(step_size=0.5, max_iter=20, seed=seed), W0=W0)
    sgd = vf.check_cvi(model, "sgd", OptimizerConfig(step_size=0.5, max_iter=30, seed=seed),
                       replications=1000, W0=W0)
    full = vf.check_cvi(model, "batch", OptimizerConfig(step_size=0.5, max_iter=20, seed=seed,
                                                         batch_size=model.n_samples), W0=W0)
    out = [fgd, sgd, full]
    rng = make_rng(seed, "assumption-quadratics")
    for i in range(3):
        A = rng.standard_normal((50, 4)) * rng.uniform(0.2, 3.0, 4)
        quad = QuadraticModel(A, rng.standard_normal(50))
        out.append(vf.check_strong_convexity_fact(quad, 100, seed + i))
        out.append(vf.check_lipschitz(quad, 100, seed + i))
    return out


def suite_linear(seed, reps):
    model, traces = ex.convergence_comparison(seeds=5)
    budgets = np.arange(2000, 12_001, 1000)
    dominance = vf.check_budget_dominance(traces["mstgd"], [traces["batch"], traces["sgd"]], budgets)
    dev = np.mean([t.column("est_sq_dev")[:-1] for t in traces["mstgd"]], axis=0)
    decay = vf.check_variance_decay(dev[: len(dev) // 2], asserted=False)
    gamma = decay.extra["gamma_hat"]
    params = vf.ConvergenceParams(model.L, model.c, 1.0,
                                  gamma=gamma if 0 < gamma < 1 else None,
                                  M=decay.extra["phi_hat"] / model.dim, dim=model.dim)
    linear = vf.check_linear_convergence(traces["mstgd"], params, model.j_star)
    quad = _noisy_quadratic(seed)
    fgd = [run(quad, None, "fgd", OptimizerConfig(step_size=0.5, max_iter=40, seed=seed), W0=[5.0])]
    fgd_params = vf.ConvergenceParams(quad.L, quad.c, 0.5)
    fgd_report = vf.check_linear_convergence(fgd, fgd_params, quad.j_star)
    fgd_report.check = "linear-convergence-fgd"
    limit = 2 * np.log(1 - 0.5 * quad.c) + 1e-6
    fgd_report.extra.update(rate_limit=limit,
                            ok=bool(fgd_report.extra["fitted_rate"] <= limit))
    return [linear, dominance, fgd_report]


SUITE_FUNCS = {"unbias": suite_unbias, "variance": suite_variance,
               "design-effect": suite_design_effect, "lemma2": suite_lemma2,
               "cvi": suite_cvi, "linear": suite_linear}


def cmd_verify(args):
    if args.reps < 1000:
        raise UsageError("--reps must be at least 1000")
    suites = SUITES if args.suite == "all" else (args.suite,)
    _echo({"command": "verify", "suite": args.suite, "suites": list(suites), "seed": args.seed,
           "reps": args.reps, "out": args.out})
    reports = []
    for name in suites:
        for rep in SUITE_FUNCS[name](args.seed, args.reps):
            reports.append((name, rep))
            status = "ok" if rep.ok else ("FAIL" if rep.asserted else "not-asserted")
            print(f"{name:14s} {rep.check:40s} {status}")
    failed = [r for _, r in reports if r.failed]
    if args.out:
        payload = {"suite": args.suite, "seed": args.seed, "reps": args.reps,
                   "reports": [{"suite": n, **r.to_dict()} for n, r in reports]}
        ex.atomic_write(args.out, json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return 1 if failed else 0


COMMANDS = {"estimate": cmd_estimate, "train": cmd_train, "verify": cmd_verify}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"mstgd: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
