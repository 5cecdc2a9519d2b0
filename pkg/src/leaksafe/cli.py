"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error, and for ``lint``
3 when an error-severity diagnostic was emitted.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from . import lab
from .dataset import DatasetError, load_dataset, write_dataset
from .metrics import METRIC_NAMES, overlap
from .speclint import DatasetSummary, SpecSyntaxError, execute, format_diagnostics, lint, parse_spec
from .speclint.engine import ExecutionError
from .volumetrics import (
    PhantomSpec, VolumeError, make_phantom, read_mask, read_volume, segment_lung_proxy,
    write_mask, write_volume,
)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_LINT = 0, 1, 2, 3


class CliFailure(Exception):
    pass


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliFailure(f"cannot read {path}: {exc.strerror}") from None


def _parse_pipeline(path):
    try:
        return parse_spec(_read_text(path))
    except SpecSyntaxError as exc:
        raise CliFailure(f"{path}:{exc}") from None


def cmd_run(args) -> int:
    try:
        scenario = lab.load_scenario(args.scenario)
    except OSError as exc:
        raise CliFailure(f"cannot read {args.scenario}: {exc.strerror}") from None
    except (SpecSyntaxError, lab.ScenarioError) as exc:
        raise CliFailure(f"{args.scenario}:{exc}" if isinstance(exc, SpecSyntaxError) else str(exc)) from None
    seed = scenario.base_seed if args.seed is None else args.seed
    if scenario.kind == "batch":
        report = lab.run_batch_probe(scenario, seed=seed, drop_markers=args.drop_markers)
    else:
        report = lab.run_pair(scenario, reps=args.reps, base_seed=seed, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.scenario).stem
    lab.emit_report(report, out / f"{stem}.txt", "table-text")
    lab.emit_report(report, out / f"{stem}.csv", "delimited")
    sys.stdout.write(lab.format_report(report, "table-text"))
    return EXIT_OK


def cmd_exec(args) -> int:
    spec = _parse_pipeline(args.pipeline)
    try:
        data = load_dataset(args.data)
    except (DatasetError, OSError) as exc:
        raise CliFailure(f"{args.data}: {exc}") from None
    try:
        result = execute(spec, data, args.seed, base_dir=Path(args.pipeline).parent)
    except ExecutionError as exc:
        raise CliFailure(f"{args.pipeline}:{exc}") from None
    lines = [f"pipeline: {spec.name}"]
    for label, m in (("test", result.metrics), ("baseline", result.baseline_metrics),
                     ("external", result.external_metrics)):
        if m is not None:
            lines.append(f"{label}: " + " ".join(f"{n}={v:.6f}" for n, v in zip(METRIC_NAMES, m.as_tuple())))
    lines.append(result.audit().summary())
    print("\n".join(lines))
    return EXIT_OK


def cmd_lint(args) -> int:
    spec = _parse_pipeline(args.pipeline)
    summary = None
    if args.data_summary:
        try:
            summary = DatasetSummary.from_json(_read_text(args.data_summary))
        except ValueError as exc:
            raise CliFailure(f"{args.data_summary}: {exc}") from None
    diags = lint(spec, summary, batch_threshold=args.batch_threshold)
    sys.stdout.write(format_diagnostics(diags, args.pipeline))
    return EXIT_LINT if any(d.severity == "error" for d in diags) else EXIT_OK


def cmd_gen(args) -> int:
    values = {f.name: getattr(args, f.name) for f in fields(lab.PARAM_TYPES[args.kind])
              if getattr(args, f.name) is not None}
    try:
        generated = lab.generate(args.kind, values, args.seed)
    except lab.ScenarioError as exc:
        raise CliFailure(str(exc)) from None
    write_dataset(generated.dataset, args.out)
    if args.external_out:
        if generated.external is None:
            raise CliFailure(f"generator {args.kind!r} makes no external set")
        write_dataset(generated.external, args.external_out)
    if args.summary_out:
        Path(args.summary_out).write_text(DatasetSummary.from_dataset(generated.dataset).to_json(),
                                          encoding="utf-8")
    return EXIT_OK


def cmd_phantom(args) -> int:
    try:
        grid, truth = make_phantom(PhantomSpec.for_dims(tuple(args.dims), args.seed))
    except VolumeError as exc:
        raise CliFailure(str(exc)) from None
    write_volume(grid, args.out_volume)
    write_mask(truth, args.out_truth)
    print(f"dims={grid.dims[0]}x{grid.dims[1]}x{grid.dims[2]} lung_voxels={int(truth.sum())} sha256={grid.digest()}")
    return EXIT_OK


def cmd_segment(args) -> int:
    try:
        grid = read_volume(args.volume)
        truth = read_mask(args.truth) if args.truth else None
    except (VolumeError, OSError) as exc:
        raise CliFailure(str(exc)) from None
    mask = segment_lung_proxy(grid)
    if truth is not None and truth.shape != mask.shape:
        raise CliFailure(f"truth mask shape {truth.shape} differs from volume {mask.shape}")
    write_mask(mask, args.out)
    if args.report:
        lines = [f"predicted_voxels={int(mask.sum())}"]
        if truth is not None:
            o = overlap(mask, truth)
            extra = int((mask & ~truth).sum())
            lines += [f"truth_voxels={int(truth.sum())}", f"extra_voxels={extra}",
                      f"dice={o.dice:.6f}", f"iou={o.iou:.6f}"]
        print("\n".join(lines))
    return EXIT_OK


def _add_gen_parsers(gen: argparse.ArgumentParser) -> None:
    kinds = gen.add_subparsers(dest="kind", metavar="KIND", required=True)
    for kind, cls in lab.PARAM_TYPES.items():
        p = kinds.add_parser(kind, help=(cls.__doc__ or "").strip().splitlines()[0] if cls.__doc__ else None)
        for f in fields(cls):
            default = getattr(cls(), f.name)
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(default),
                           default=None, help=f"default {default}")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--external-out", help="write the external probe set (batch only)")
        p.add_argument("--summary-out", help="write a dataset summary for lint --data-summary")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leaksafe", description="Leakage-safe ML experiments.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("run", help="run a paired pitfall scenario")
    p.add_argument("scenario")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--drop-markers", action="store_true", help="batch scenarios: ablate marker features")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("exec", help="execute one pipeline and audit it")
    p.add_argument("pipeline")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("lint", help="lint a pipeline")
    p.add_argument("pipeline")
    p.add_argument("--data-summary")
    p.add_argument("--batch-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_gen_parsers(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("phantom", help="write a synthetic chest phantom")
    p.add_argument("--dims", type=int, nargs=3, default=list(PhantomSpec().dims), metavar=("X", "Y", "Z"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-volume", required=True)
    p.add_argument("--out-truth", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("segment", help="threshold-based lung segmentation")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth")
    p.add_argument("--report", action="store_true")
    p.set_defaults(func=cmd_segment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "reps", None) is not None and args.reps < 0:
        parser.print_usage(sys.stderr)
        print("leaksafe: error: --reps must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"leaksafe: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
