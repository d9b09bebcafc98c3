"""
Command-line front end.

Exit codes: 0 success, 1 runtime or I/O error, 2 solver divergence,
64 usage error.
"""

import argparse
import contextlib
import json
import math
import os
import sys
import time
import warnings

import numpy as np

from . import generators as gen
from . import io
from .core import deterministic, thread_count
from .learning import (ACTIVATIONS, MultilinearModel, accuracy, mlsvd_classifier_predict,
                       mlsvd_classifier_train, sgd_train)
from .mlsvd import compress, reconstruct
from .solver import SolverOptions, als, cpd, relative_error
from .tt import cpd_via_tt

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _positive_int_list(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _solver_flags(p):
    p.add_argument("--maxiter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--mlsvd-tol", type=float, default=1e-6)
    p.add_argument("--init", choices=["random", "mlsvd"], default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-damp", type=float, default=1.0)
    p.add_argument("--no-precond", action="store_true")


def _options(args, **extra):
    kw = dict(maxiter=args.maxiter, tol=args.tol, mlsvd_tol=args.mlsvd_tol, init=args.init,
              seed=args.seed, init_damp=args.init_damp, precond=not args.no_precond)
    kw.update(extra)
    return SolverOptions(**kw)


def build_parser():
    p = _Parser(prog="cpdkit", description="Dense tensor decompositions.")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS and zeroed timings for reproducible output")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decompose", help="rank-R CPD of a TSRv1 tensor")
    d.add_argument("--input", required=True)
    d.add_argument("--rank", type=int, required=True)
    d.add_argument("--method", choices=["dgn", "als", "tt"], default="dgn")
    _solver_flags(d)
    d.add_argument("--deterministic", action="store_true", dest="deterministic_sub")
    d.add_argument("--output", help="prefix of the .kru output (default: input stem)")
    d.add_argument("--stats", help="path of the stats JSON")

    m = sub.add_parser("mlsvd", help="truncated MLSVD of a TSRv1 tensor")
    m.add_argument("--input", required=True)
    m.add_argument("--rank-cap", type=int, required=True)
    m.add_argument("--tol", type=float, default=1e-6)
    m.add_argument("--variant", choices=["classic", "sequential"], default="classic")
    m.add_argument("--output", help="prefix for PREFIX.core.tsr and PREFIX.u<l>.tsr")

    b = sub.add_parser("bench", help="benchmark suites")
    b.add_argument("--suite", required=True,
                   choices=["warmup", "swamp", "bottleneck", "border", "matmul", "highorder"])
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--ablate", default=None,
                   help="no-reg, no-precond or fixed-cg:N")
    b.add_argument("--size", type=int, default=None,
                   help="dimension (swamp, bottleneck, highorder) or N (matmul)")
    b.add_argument("--rank", type=int, default=None)
    b.add_argument("--maxiter", type=int, default=200)
    b.add_argument("--tol", type=float, default=1e-6)
    b.add_argument("--init", choices=["random", "mlsvd"], default=None,
                   help="starting point (default: mlsvd for warmup, random otherwise)")
    b.add_argument("--deterministic", action="store_true", dest="deterministic_sub")

    g = sub.add_parser("gen", help="write a benchmark tensor as TSRv1")
    g.add_argument("--kind", required=True,
                   choices=["warmup", "collinear", "bottleneck", "matmul", "border",
                            "random", "ill"])
    g.add_argument("--dims", type=_positive_int_list, default=None)
    g.add_argument("--rank", type=int, default=3)
    g.add_argument("--c", type=float, default=0.5)
    g.add_argument("--nu", type=float, default=0.0)
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--s", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", required=True)

    lr = sub.add_parser("learn", help="train a multilinear model on a labeled CSV")
    lr.add_argument("--input", required=True)
    lr.add_argument("--order", type=int, default=2)
    lr.add_argument("--rank", type=int, required=True)
    lr.add_argument("--alpha", type=float, default=1.0)
    lr.add_argument("--lambda", type=float, default=0.0, dest="lam")
    lr.add_argument("--epochs", type=int, default=2000)
    lr.add_argument("--seed", type=int, default=0)
    lr.add_argument("--activation", choices=sorted(ACTIVATIONS), default="sigmoid")
    lr.add_argument("--output", required=True, help="model file (MLMv1)")

    c = sub.add_parser("classify", help="accuracy of a model, or of an MLSVD classifier")
    c.add_argument("--input", required=True, help="labeled CSV to classify")
    c.add_argument("--model", help="MLMv1 file written by learn")
    c.add_argument("--train", help="labeled CSV used to fit an MLSVD classifier")
    c.add_argument("--rank", type=int, default=None, help="MLSVD rank (classifier mode)")
    c.add_argument("--sub-rank", type=int, default=None, help="per-class subspace dimension")
    return p


# ---------------------------------------------------------------------------

def _prefix(args):
    if args.output:
        return args.output
    root, _ = os.path.splitext(args.input)
    return root


def cmd_decompose(args, det):
    t = io.read_tensor(args.input)
    opts = _options(args)
    if args.method == "dgn":
        k, stats = cpd(t, args.rank, opts)
    elif args.method == "tt":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            k, stats = cpd_via_tt(t, args.rank, opts)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    else:
        rng = np.random.default_rng(args.seed)
        k, stats = als(t, args.rank, maxiter=args.maxiter, tol=args.tol, rng=rng)
    stats.seed = args.seed
    prefix = _prefix(args)
    io.write_kruskal(prefix + ".kru", k)
    if args.stats:
        io.write_stats(args.stats, stats, timings=not det)
    err = stats.rel_error[-1] if stats.rel_error else relative_error(t, k)
    print(f"stop={stats.stop_reason} iterations={stats.iterations} rel_error={err:.6e}")
    if stats.stop_reason in ("divergence", "nonfinite"):
        print("solver diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_mlsvd(args, det):
    t = io.read_tensor(args.input)
    res = compress(t, args.rank_cap, args.tol, variant=args.variant)
    err = float(np.linalg.norm(t - reconstruct(res)) / np.linalg.norm(t)) if np.any(t) else 0.0
    prefix = _prefix(args)
    io.write_tensor(prefix + ".core.tsr", res.core)
    for l, u in enumerate(res.bases):
        io.write_tensor(f"{prefix}.u{l + 1}.tsr", u)
    print(json.dumps({"trunc_dims": list(res.trunc_dims), "rel_error": err,
                      "sigmas": [s.tolist() for s in res.sigmas]}))
    return EXIT_OK


def _ablation(text):
    if text is None:
        return {}
    if text == "no-reg":
        return {"init_damp": 0.0}
    if text == "no-precond":
        return {"precond": False}
    if text.startswith("fixed-cg:"):
        n = int(text.split(":", 1)[1])
        if n < 1:
            raise ValueError("fixed-cg needs a positive iteration count")
        return {"fixed_cg": n}
    raise UsageError(f"unknown ablation {text!r}")


def bench_instance(suite, seed, size=None, rank=None):
    """(tensor to decompose, reference tensor for the error, rank) of one bench run."""
    if suite == "warmup":
        t = gen.warmup_tensor()
        return t, t, rank or 3
    if suite in ("swamp", "bottleneck"):
        n = size or 100
        R = rank or 10
        make = gen.collinear_kruskal if suite == "swamp" else gen.double_bottleneck
        clean = make((n, n, n), R, 0.5 if suite == "swamp" else 0.1, seed).full()
        return gen.add_noise(clean, 0.01, seed + 1_000_003), clean, R
    if suite == "border":
        limit, _ = gen.border_rank_pair((10, 10, 10), seed=seed)
        return limit, limit, rank or 2
    if suite == "matmul":
        N = size or 3
        t = gen.matmul_tensor(N)
        return t, t, rank or math.ceil(N ** math.log2(7))
    if suite == "highorder":
        n = size or 10
        R = rank or 5
        t = gen.random_kruskal((n,) * 5, R, seed).full()
        return t, t, R
    raise UsageError(f"unknown suite {suite!r}")


SUITE_INIT = {"warmup": "mlsvd"}


def run_bench(suite, repeats, seed=0, ablate=None, size=None, rank=None, maxiter=200,
              tol=1e-6, init=None):
    """Run `repeats` seeded solves; returns (per-run rows, summary dict)."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    extra = _ablation(ablate)
    extra["init"] = init or SUITE_INIT.get(suite, "random")
    rows = []
    for i in range(repeats):
        s = seed + i
        t, ref, R = bench_instance(suite, s, size, rank)
        opts = SolverOptions(maxiter=maxiter, tol=tol, seed=s, **extra)
        t0 = time.perf_counter()
        if suite == "highorder":
            k, stats = cpd_via_tt(t, R, opts)
        else:
            k, stats = cpd(t, R, opts)
        elapsed = time.perf_counter() - t0
        rows.append({"seed": s, "rel_error": relative_error(ref, k), "time": elapsed,
                     "iterations": stats.iterations, "stop_reason": stats.stop_reason,
                     "mean_cg": float(np.mean(stats.cg_iters)) if stats.cg_iters else 0.0})
    errs = np.array([r["rel_error"] for r in rows])
    times = np.array([r["time"] for r in rows])
    summary = {"suite": suite, "repeats": repeats, "ablate": ablate, "init": extra["init"],
               "rel_error": {"mean": float(errs.mean()), "variance": float(errs.var()),
                             "min": float(errs.min()), "median": float(np.median(errs))},
               "time": {"mean": float(times.mean()), "variance": float(times.var()),
                        "min": float(times.min())},
               "mean_cg": float(np.mean([r["mean_cg"] for r in rows]))}
    return rows, summary


def cmd_bench(args, det):
    rows, summary = run_bench(args.suite, args.repeats, args.seed, args.ablate, args.size,
                              args.rank, args.maxiter, args.tol, args.init)
    print(f"{'seed':>6} {'rel_error':>12} {'time':>9} {'iters':>6} stop")
    for r in rows:
        t = 0.0 if det else r["time"]
        print(f"{r['seed']:>6} {r['rel_error']:>12.4e} {t:>9.3f} {r['iterations']:>6} "
              f"{r['stop_reason']}")
    if det:
        summary["time"] = {k: 0.0 for k in summary["time"]}
    print(json.dumps(summary))
    return EXIT_OK


def generate(kind, dims=None, rank=3, c=0.5, nu=0.0, n=10, s=1.0, seed=0):
    """Dense tensor for the `gen` command."""
    if kind == "warmup":
        t = gen.warmup_tensor(tuple(dims) if dims else (6, 5, 4))
    elif kind == "collinear":
        t = gen.collinear_kruskal(dims or (20, 20, 20), rank, c, seed).full()
    elif kind == "bottleneck":
        t = gen.double_bottleneck(dims or (20, 20, 20), rank, c, seed).full()
    elif kind == "matmul":
        t = gen.matmul_tensor(n)
    elif kind == "border":
        t, _ = gen.border_rank_pair(tuple(dims) if dims else (10, 10, 10), n, seed)
    elif kind == "random":
        t = gen.random_kruskal(dims or (10, 10, 10), rank, seed).full()
    elif kind == "ill":
        t = gen.perturb_normalized(gen.ill_conditioned_family(rank, c, s, seed).full(),
                                   seed=seed + 1)
    else:
        raise UsageError(f"unknown kind {kind!r}")
    if nu:
        t = gen.add_noise(t, nu, seed + 1_000_003)
    return t


def cmd_gen(args, det):
    t = generate(args.kind, args.dims, args.rank, args.c, args.nu, args.n, args.s, args.seed)
    io.write_tensor(args.output, t)
    print(f"wrote {args.output} with dims {' '.join(map(str, t.shape))}")
    return EXIT_OK


def _with_bias(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _targets(y, m):
    if m == 1:
        return y.astype(float)[:, None]
    out = np.zeros((y.size, m))
    out[np.arange(y.size), y] = 1.0
    return out


def cmd_learn(args, det):
    X, y = io.read_csv_dataset(args.input)
    if y.min() < 0:
        raise ValueError("class labels must be nonnegative integers")
    classes = int(y.max()) + 1
    m = 1 if classes <= 2 else classes
    Xb = _with_bias(X)
    model = MultilinearModel.random(Xb.shape[1], m, args.order, args.rank, args.seed,
                                    ACTIVATIONS[args.activation])
    model, trace = sgd_train(model, Xb, _targets(y, m), args.alpha, args.lam, args.epochs,
                             args.seed)
    io.write_model(args.output, model)
    acc = accuracy(model, Xb, _targets(y, m))
    print(f"final_loss={trace[-1]:.6e} accuracy={acc:.4f}" if trace else f"accuracy={acc:.4f}")
    return EXIT_OK


def _class_tensor(X, y):
    classes = int(y.max()) + 1
    counts = [int(np.sum(y == c)) for c in range(classes)]
    if min(counts) == 0:
        raise ValueError("every class needs at least one training sample")
    n = min(counts)
    t = np.stack([X[y == c][:n].T for c in range(classes)], axis=2)
    return t


def cmd_classify(args, det):
    X, y = io.read_csv_dataset(args.input)
    if args.model:
        model = io.read_model(args.model)
        if X.shape[1] + 1 != model.inputs:
            raise ValueError(f"dataset has {X.shape[1]} features; the model expects "
                             f"{model.inputs - 1}")
        m = model.outputs
        acc = accuracy(model, _with_bias(X), _targets(y, m))
    elif args.train:
        Xt, yt = io.read_csv_dataset(args.train)
        if Xt.shape[1] != X.shape[1]:
            raise ValueError(f"training data has {Xt.shape[1]} features, input has {X.shape[1]}")
        t = _class_tensor(Xt, yt)
        R = args.rank or min(t.shape[0], t.shape[1])
        clf = mlsvd_classifier_train(t, R, args.sub_rank or 1)
        acc = float(np.mean(mlsvd_classifier_predict(clf, X) == y))
    else:
        raise UsageError("classify needs --model or --train")
    print(f"accuracy={acc:.4f}")
    return EXIT_OK


COMMANDS = {"decompose": cmd_decompose, "mlsvd": cmd_mlsvd, "bench": cmd_bench,
            "gen": cmd_gen, "learn": cmd_learn, "classify": cmd_classify}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:        # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    det = args.deterministic or getattr(args, "deterministic_sub", False)
    try:
        threads = thread_count()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if det:
        ctx = deterministic(1)
    elif threads:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=threads)
    else:
        ctx = contextlib.nullcontext()
    try:
        with ctx:
            return COMMANDS[args.command](args, det)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
