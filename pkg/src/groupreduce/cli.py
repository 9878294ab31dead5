"""Command-line interface: ``groupreduce <command> ...``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import baselines, compressor, fileio, metrics
from .errors import GroupReduceError, InvalidInputError


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"expected a fraction in (0, 1], got {text}")
    return value


def _rank_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or any(k < 0 for k in ks):
        raise argparse.ArgumentTypeError("ranks must be nonnegative integers")
    return ks


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _emit_csv(path: Optional[str], header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _num(v) for v in row])
    if path is None or path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        fileio.atomic_write(path, buf.getvalue().encode("utf-8"))


def _print_report(report: metrics.MemoryReport) -> None:
    for line in report.lines():
        print(line)


def _load_inputs(args):
    A = fileio.read_matrix(args.matrix)
    q = fileio.read_frequencies(args.freq, A.shape[0])
    return A, q


def _budget_params(frac: float, n: int, d: int) -> int:
    return int(np.floor(frac * n * d))


def cmd_compress(args) -> int:
    A, q = _load_inputs(args)
    n, d = A.shape
    cfg = compressor.RefineConfig(t_max=args.iters, m_min=args.min_moves, move_frac=args.move_frac)
    budget = _budget_params(args.budget, n, d) if args.budget is not None else None
    model = compressor.group_reduce(
        A, q, c=args.clusters, budget=budget, base_rank=args.base_rank, cfg=cfg
    )
    if args.out:
        fileio.save_model(args.out, model)
    _print_report(metrics.memory_footprint(model))
    print(f"ranks: {','.join(str(k) for k in model.partition.ranks)}")
    print(f"weighted_objective: {_num(metrics.weighted_objective(A, q, model))}")
    return 0


def cmd_quantize(args) -> int:
    model = fileio.load_model(args.model)
    if isinstance(model, baselines.QuantizedBlockModel):
        raise InvalidInputError(f"{args.model} is already quantized")
    qmodel = baselines.quantize_model(model, args.bits)
    fileio.save_model(args.out, qmodel)
    _print_report(metrics.memory_footprint(qmodel))
    return 0


def cmd_evaluate(args) -> int:
    A, q = _load_inputs(args)
    model = fileio.load_model(args.model)
    if model.dims != A.shape:
        raise InvalidInputError(f"model dims {model.dims} do not match matrix {A.shape}")
    _print_report(metrics.memory_footprint(model))
    print(f"weighted_objective: {_num(metrics.weighted_objective(A, q, model))}")
    print(f"unweighted_error: {_num(metrics.unweighted_error(A, model))}")
    return 0


def cmd_reconstruct(args) -> int:
    model = metrics.as_block_model(fileio.load_model(args.model))
    if args.row is not None:
        print(",".join(_num(v) for v in compressor.reconstruct_row(model, args.row)))
    else:
        fileio.write_matrix(args.out, compressor.reconstruct_full(model))
    return 0


def cmd_ablate(args) -> int:
    A, q = _load_inputs(args)
    n, d = A.shape
    cfg = compressor.RefineConfig(t_max=args.iters, m_min=args.min_moves, move_frac=args.move_frac)
    rows = metrics.ablation_run(A, q, args.clusters, _budget_params(args.budget, n, d), cfg)
    _emit_csv(
        args.out,
        ["strategy", "parameter_count", "weighted_error", "unweighted_error"],
        [(r.strategy, r.parameter_count, r.weighted_error, r.unweighted_error) for r in rows],
    )
    return 0


def cmd_spectrum(args) -> int:
    s = metrics.spectrum(fileio.read_matrix(args.matrix))
    _emit_csv(args.out, ["index", "singular_value"], [(i + 1, v) for i, v in enumerate(s)])
    return 0


def cmd_curve(args) -> int:
    A = fileio.read_matrix(args.matrix)
    _emit_csv(args.out, ["rank", "relative_error"], metrics.error_curve(A, args.ranks))
    return 0


def cmd_zipf(args) -> int:
    q = fileio.read_frequencies(args.freq)
    _emit_csv(args.out, ["rank", "log_frequency"], metrics.zipf_stats(q))
    return 0


def cmd_baseline(args) -> int:
    A = fileio.read_matrix(args.matrix)
    n, d = A.shape
    if args.svd is not None:
        pair = baselines.lowrank_baseline(A, args.svd)
        approx = pair.product()
        report = metrics.memory_footprint(pair)
    elif args.prune_budget is not None:
        pruned = baselines.prune_to_budget(A, _budget_params(args.prune_budget, n, d))
        approx = pruned.to_dense()
        report = metrics.memory_footprint(pruned)
    else:
        qm = baselines.quantize_uniform(A, args.quant_bits)
        approx = baselines.dequantize(qm)
        report = metrics.MemoryReport(parameter_count=qm.param_count(), dense_count=n * d)
    _print_report(report)
    print(f"unweighted_error: {_num(np.linalg.norm(A - approx))}")
    if args.freq:
        q = fileio.read_frequencies(args.freq, n)
        print(f"weighted_objective: {_num(float(np.sum(q * np.sum((A - approx) ** 2, axis=1))))}")
    return 0


def _add_refine_flags(p) -> None:
    p.add_argument("--iters", type=int, default=20, help="maximum refinement iterations")
    p.add_argument("--move-frac", type=float, default=0.10, help="fraction of candidates moved per iteration")
    p.add_argument("--min-moves", type=int, default=None, help="stop when fewer candidates remain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupreduce", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="block low-rank compression of a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--freq", required=True)
    p.add_argument("--clusters", type=int, default=None)
    size = p.add_mutually_exclusive_group(required=True)
    size.add_argument("--budget", type=_fraction, help="parameter budget as a fraction of N*D")
    size.add_argument("--base-rank", type=int, help="rank of the least frequent cluster")
    _add_refine_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("quantize", help="quantize the factors of a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("evaluate", help="errors and memory of a model against a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--freq", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reconstruct", help="materialise one row or the full matrix")
    p.add_argument("--model", required=True)
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--row", type=int)
    what.add_argument("--out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="strategy-by-strategy ablation at a matched budget")
    p.add_argument("--matrix", required=True)
    p.add_argument("--freq", required=True)
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--budget", type=_fraction, required=True)
    _add_refine_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("spectrum", help="singular values as CSV")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("curve", help="relative SVD error per rank as CSV")
    p.add_argument("--matrix", required=True)
    p.add_argument("--ranks", type=_rank_list, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("zipf", help="rank vs log-frequency as CSV")
    p.add_argument("--freq", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_zipf)

    p = sub.add_parser("baseline", help="plain SVD, pruning or quantization")
    p.add_argument("--matrix", required=True)
    p.add_argument("--freq")
    how = p.add_mutually_exclusive_group(required=True)
    how.add_argument("--svd", type=int, metavar="K")
    how.add_argument("--prune-budget", type=_fraction, metavar="FRAC")
    how.add_argument("--quant-bits", type=int, metavar="B")
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except GroupReduceError as exc:
        print(f"groupreduce: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"groupreduce: error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return 10


if __name__ == "__main__":
    sys.exit(main())
