"""Command-line surface: inspect, factorize, run, diff, and bench.

Exit codes are a stable contract:
  0 ok, 1 usage error, 2 model load error, 3 solver error,
  4 shape error, 5 diff above tolerance.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time

import numpy as np

from . import modelio
from .errors import ModelIOError, ShapeError, SolverError
from .factorizer import FactorizeConfig, ModuleFilter, RankPolicy, auto_fact
from .linalg import SnmfOptions
from .netgraph import (
    CED,
    LED,
    Activation,
    Conv,
    Flatten,
    Linear,
    Model,
    count_flops,
    count_params,
    forward,
    layer_output_shape,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_LOAD = 2
EXIT_SOLVER = 3
EXIT_SHAPE = 4
EXIT_DIFF = 5

FLOP_CONVENTION = "FLOPs: 2 per multiply-add; bias adds and activations count 1 each"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # Usage problems exit 1, not argparse's default 2.
    def error(self, message):
        raise _UsageError(message)


def _layer_kind(layer) -> str:
    return {
        Linear: "linear",
        Conv: "conv",
        LED: "led",
        CED: "ced",
        Activation: "relu",
        Flatten: "flatten",
    }[type(layer)]


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape)


def _load_model(path) -> Model:
    try:
        return modelio.load_model(path)
    except (ModelIOError, OSError) as exc:
        raise SystemExit(_fail(EXIT_LOAD, str(exc)))


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _inspect_rows(model: Model):
    rows = []
    params, _ = count_params(model)
    flops, _ = count_flops(model)
    shape = model.input_shape
    for layer in model.layers:
        out = layer_output_shape(layer, shape)
        rows.append(
            {
                "name": layer.name,
                "kind": _layer_kind(layer),
                "input_shape": list(shape),
                "output_shape": list(out),
                "params": params[layer.name],
                "flops": flops[layer.name],
            }
        )
        shape = out
    return rows


def _print_table(headers, rows):
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))


def cmd_inspect(args) -> int:
    model = _load_model(args.model)
    rows = _inspect_rows(model)
    total_params = sum(r["params"] for r in rows)
    total_flops = sum(r["flops"] for r in rows)
    if args.json:
        print(
            json.dumps(
                {
                    "model": model.name,
                    "input_shape": list(model.input_shape),
                    "flop_convention": FLOP_CONVENTION,
                    "layers": rows,
                    "totals": {"params": total_params, "flops": total_flops},
                },
                indent=2,
                sort_keys=True,
            )
        )
        return EXIT_OK
    print(f"model: {model.name}  input: {_shape_str(model.input_shape)}")
    print(FLOP_CONVENTION)
    table = [
        [r["name"], r["kind"], _shape_str(r["input_shape"]), _shape_str(r["output_shape"]), str(r["params"]), str(r["flops"])]
        for r in rows
    ]
    table.append(["TOTAL", "", "", "", str(total_params), str(total_flops)])
    _print_table(["name", "kind", "in", "out", "params", "flops"], table)
    return EXIT_OK


def _report_rows(report):
    rows = []
    for e in report.entries:
        rows.append(
            {
                "name": e.layer_name,
                "decision": e.decision if e.decision == "factorized" else f"skipped({e.skip_reason})",
                "rank": e.rank_used,
                "params_before": e.params_before,
                "params_after": e.params_after,
                "flops_before": e.flops_before,
                "flops_after": e.flops_after,
                "rel_error": e.rel_error,
            }
        )
    return rows


def cmd_factorize(args) -> int:
    if args.rank is not None:
        policy = RankPolicy.absolute(args.rank)
    else:
        policy = RankPolicy.of_ratio(args.rank_ratio)
    try:
        config = FactorizeConfig(
            solver=args.solver,
            rank_policy=policy,
            filter=ModuleFilter(include=tuple(args.include), exclude=tuple(args.exclude)),
            seed=args.seed,
            snmf_options=SnmfOptions(
                max_iterations=args.snmf_iters, rel_tolerance=args.snmf_tol, seed=args.seed
            ),
            sigma=args.sigma,
        )
    except ValueError as exc:
        raise _UsageError(str(exc))
    model = _load_model(args.model)
    if args.solver == "random":
        print(
            "warning: random factors do not approximate trained weights; "
            "use svd or snmf for post-training factorization",
            file=sys.stderr,
        )
    try:
        new_model, report = auto_fact(model, config)
    except SolverError as exc:
        return _fail(EXIT_SOLVER, str(exc))
    modelio.save_model(new_model, args.output)
    rows = _report_rows(report)
    if args.json:
        print(
            json.dumps(
                {"model": model.name, "flop_convention": FLOP_CONVENTION, "layers": rows, "totals": report.totals},
                indent=2,
                sort_keys=True,
            )
        )
        return EXIT_OK
    print(f"model: {model.name}  solver: {args.solver}")
    print(FLOP_CONVENTION)
    table = [
        [
            r["name"],
            r["decision"],
            "-" if r["rank"] is None else str(r["rank"]),
            str(r["params_before"]),
            str(r["params_after"]),
            str(r["flops_before"]),
            str(r["flops_after"]),
            "-" if r["rel_error"] is None else f"{r['rel_error']:.3e}",
        ]
        for r in rows
    ]
    t = report.totals
    table.append(
        ["TOTAL", f"{t['factorized']}/{t['layers']} factorized", "", str(t["params_before"]), str(t["params_after"]), str(t["flops_before"]), str(t["flops_after"]), ""]
    )
    _print_table(
        ["name", "decision", "rank", "params", "params'", "flops", "flops'", "rel_err"], table
    )
    return EXIT_OK


def cmd_run(args) -> int:
    model = _load_model(args.model)
    try:
        x = modelio.load_tensor(args.input)
    except (ModelIOError, OSError) as exc:
        return _fail(EXIT_LOAD, str(exc))
    try:
        y = forward(model, x)
    except ShapeError as exc:
        return _fail(EXIT_SHAPE, str(exc))
    modelio.save_tensor(y, args.output)
    print(f"output shape: {_shape_str(y.shape)}")
    return EXIT_OK


def cmd_diff(args) -> int:
    a = _load_model(args.model_a)
    b = _load_model(args.model_b)
    if a.input_shape != b.input_shape or a.output_shape() != b.output_shape():
        return _fail(
            EXIT_SHAPE,
            f"models are not comparable: {a.input_shape}->{a.output_shape()} "
            f"vs {b.input_shape}->{b.output_shape()}",
        )
    rng = np.random.default_rng(args.seed)
    max_abs = 0.0
    mean_abs = 0.0
    for _ in range(args.trials):
        x = rng.uniform(-1.0, 1.0, size=(args.batch,) + a.input_shape).astype(np.float32)
        try:
            ya = forward(a, x)
            yb = forward(b, x)
        except ShapeError as exc:
            return _fail(EXIT_SHAPE, str(exc))
        delta = np.abs(ya.astype(np.float64) - yb.astype(np.float64))
        max_abs = max(max_abs, float(delta.max()) if delta.size else 0.0)
        mean_abs += float(delta.mean()) if delta.size else 0.0
    mean_abs /= max(args.trials, 1)
    ok = max_abs <= args.tol
    if args.json:
        print(
            json.dumps(
                {"trials": args.trials, "max_abs": max_abs, "mean_abs": mean_abs, "tol": args.tol, "within_tol": ok},
                indent=2,
                sort_keys=True,
            )
        )
    else:
        print(f"trials: {args.trials}  max-abs: {max_abs:.6e}  mean-abs: {mean_abs:.6e}  tol: {args.tol:.1e}")
    return EXIT_OK if ok else EXIT_DIFF


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise _UsageError("--repeats must be >= 1")
    if args.warmup < 0:
        raise _UsageError("--warmup must be >= 0")
    model = _load_model(args.model)
    _, flops = count_flops(model, args.batch)
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-1.0, 1.0, size=(args.batch,) + model.input_shape).astype(np.float32)
    try:
        for _ in range(args.warmup):
            forward(model, x)
        samples = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            forward(model, x)
            samples.append(time.perf_counter() - t0)
    except ShapeError as exc:
        return _fail(EXIT_SHAPE, str(exc))
    median = statistics.median(samples)
    q = statistics.quantiles(samples, n=4) if len(samples) >= 2 else [median, median, median]
    result = {
        "model": model.name,
        "batch": args.batch,
        "repeats": args.repeats,
        "warmup": args.warmup,
        "flops": flops,
        "flop_convention": FLOP_CONVENTION,
        "median_s": median,
        "iqr_s": q[2] - q[0],
        "samples_s": samples,
    }
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print(f"model: {model.name}  batch: {args.batch}  theoretical FLOPs: {flops}")
        print(f"median: {median * 1e3:.3f} ms  IQR: {(q[2] - q[0]) * 1e3:.3f} ms  over {args.repeats} runs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrfact", description="Low-rank factorization toolkit for sequential models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print per-layer shapes, params, and FLOPs")
    p.add_argument("model")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("factorize", help="rewrite linear/conv layers into encoder-decoder pairs")
    p.add_argument("model")
    p.add_argument("output")
    p.add_argument("--solver", choices=["random", "svd", "snmf"], default="svd")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--rank", type=int)
    group.add_argument("--rank-ratio", type=float)
    p.add_argument("--include", action="append", default=[], metavar="PATTERN")
    p.add_argument("--exclude", action="append", default=[], metavar="PATTERN")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snmf-iters", type=int, default=200)
    p.add_argument("--snmf-tol", type=float, default=1e-5)
    p.add_argument("--sigma", choices=["balanced", "decoder-only"], default="balanced")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_factorize)

    p = sub.add_parser("run", help="forward a tensor file through a model")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("diff", help="compare two models on random batches")
    p.add_argument("model_a")
    p.add_argument("model_b")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("bench", help="measure forward latency")
    p.add_argument("model")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        code = args.fn(args)
    except _UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
