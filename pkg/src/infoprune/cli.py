"""Command-line surface: inspect | score | plan | apply | report | verify | diagnose.

Exit codes: 0 success, 2 validation error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .applier import ApplyError, apply_plan, save_pruned
from .archive import ArchiveError, load_archive, propagate_shapes
from .costs import (DiagnosticsError, correlate, count_costs, evaluate_plan_costs,
                    feature_rank, renyi_matrix_entropy)
from .planner import (PlanError, PruningPlan, PruningRates, build_plan,
                      plan_json_text)
from .refnet import ChannelMask, ForwardError, capture_feature_maps, forward
from .scoring import ScoringConfig, ScoringError, score_model

_ERRORS = (ArchiveError, ScoringError, PlanError, ApplyError,
           DiagnosticsError, ForwardError)


def _dump_json(obj, out: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _scoring_config(args) -> ScoringConfig:
    m = args.m_nearest
    if m is not None and m != "exact":
        m = int(m)
    return ScoringConfig(sigma=args.sigma, m_nearest=m or "exact", metric=args.metric)


def _rates(args) -> PruningRates:
    if args.rates:
        rates = PruningRates.from_json(json.loads(Path(args.rates).read_text()))
    else:
        rates = PruningRates(global_rate=args.rate or 0.0)
    if args.rate is not None:
        rates.global_rate = args.rate
    if args.protect:
        rates.protected_layers |= set(args.protect)
    return rates


def _strategy(args) -> str:
    return {"least": "least_important", "most": "most_important",
            "random": "random"}[args.strategy]


def cmd_inspect(args) -> int:
    manifest, tensors = load_archive(args.archive)
    shapes = propagate_shapes(manifest)
    report = count_costs(manifest)
    print(f"archive: {args.archive}")
    print(f"input_shape: {list(manifest.input_shape)}")
    print(f"layers: {len(manifest.layers)}  "
          f"prunable: {sum(1 for s in manifest.layers if s.prunable)}  "
          f"tensors: {len(tensors)}")
    print(f"total params: {report.total_params:,}  total FLOPs: {report.total_flops:,}")
    for spec in manifest.layers:
        flag = "*" if spec.prunable else " "
        print(f"  {flag} {spec.id:<16} {spec.kind:<12} out={shapes[spec.id]}")
    if manifest.coupling_groups:
        print("coupling groups:")
        for group in manifest.coupling_groups:
            print(f"  {sorted(group)}")
    return 0


def cmd_score(args) -> int:
    manifest, tensors = load_archive(args.archive)
    table = score_model(manifest, tensors, _scoring_config(args))
    _dump_json(table.to_json(), args.out)
    return 0


def cmd_plan(args) -> int:
    manifest, tensors = load_archive(args.archive)
    table = score_model(manifest, tensors, _scoring_config(args))
    plan = build_plan(manifest, table, _rates(args), _strategy(args), args.seed)
    text = plan_json_text(plan)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_apply(args) -> int:
    manifest, tensors = load_archive(args.archive)
    plan = PruningPlan.from_json(json.loads(Path(args.plan).read_text()))
    pruned = apply_plan(manifest, tensors, plan)
    save_pruned(pruned, args.out)
    print(f"pruned archive written to {args.out}")
    return 0


def cmd_report(args) -> int:
    manifest, _ = load_archive(args.archive)
    if args.plan:
        plan = PruningPlan.from_json(json.loads(Path(args.plan).read_text()))
        report = evaluate_plan_costs(manifest, plan)
        print(report.to_text())
    else:
        report = count_costs(manifest)
        print(f"total params: {report.total_params:,}  total FLOPs: {report.total_flops:,}")
    if args.out:
        _dump_json(report.to_json(), args.out)
    return 0


def cmd_verify(args) -> int:
    manifest, tensors = load_archive(args.archive)
    plan = PruningPlan.from_json(json.loads(Path(args.plan).read_text()))
    pruned_manifest, pruned_tensors = load_archive(args.pruned)
    mask = ChannelMask.from_plan(manifest, plan)

    sink = [s for s in manifest.layers
            if s.id not in {i for sp in manifest.layers for i in sp.inputs}][0]
    kept_sink = plan.kept_out.get(sink.id)

    rng = np.random.default_rng(args.seed)
    max_dev = 0.0
    for _ in range(args.inputs):
        image = rng.standard_normal(manifest.input_shape).astype(np.float32)
        masked = forward(manifest, tensors, image, mask)
        pruned_out = forward(pruned_manifest, pruned_tensors, image)
        if kept_sink is not None:
            masked = masked[np.asarray(kept_sink)]
        max_dev = max(max_dev, float(np.max(np.abs(masked - pruned_out))))
    print(f"max |delta| over {args.inputs} inputs: {max_dev:.3e}")
    if max_dev > args.tolerance:
        print(f"verification FAILED (tolerance {args.tolerance})", file=sys.stderr)
        return 3
    return 0


def cmd_diagnose(args) -> int:
    manifest, tensors = load_archive(args.archive)
    rng = np.random.default_rng(args.seed)
    images = rng.standard_normal((args.samples,) + tuple(manifest.input_shape)).astype(np.float32)
    table = score_model(manifest, tensors, _scoring_config(args))

    result = {"samples": args.samples, "seed": args.seed, "alpha": args.alpha,
              "layers": {}}
    for spec in manifest.layers:
        if not (spec.prunable and spec.kind == "conv2d"):
            continue
        maps = capture_feature_maps(manifest, tensors, images, spec.id)
        fm_entropy = [renyi_matrix_entropy(ch, alpha=args.alpha) for ch in maps]
        ranks = [feature_rank(ch) for ch in maps]
        entry = {"feature_map_entropy": fm_entropy, "feature_map_rank": ranks,
                 "filter_entropy": table.layers[spec.id].entropy.tolist()}
        try:
            entry["pearson_r"] = correlate(entry["filter_entropy"], fm_entropy)
        except DiagnosticsError as exc:
            entry["pearson_r"] = None
            entry["pearson_note"] = str(exc)
        result["layers"][spec.id] = entry
    _dump_json(result, args.out)
    return 0


def _add_scoring_flags(p):
    p.add_argument("--sigma", type=float, default=0.8)
    p.add_argument("--m-nearest", default="exact")
    p.add_argument("--metric", default="euclidean",
                   choices=["euclidean", "manhattan", "chebyshev", "cosine"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infoprune",
                                     description="Entropy-based structural filter pruning")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--archive", required=True)
        p.set_defaults(fn=fn)
        return p

    add("inspect", cmd_inspect, help="print a manifest summary")

    p = add("score", cmd_score, help="write per-filter importance scores")
    _add_scoring_flags(p)
    p.add_argument("--out")

    p = add("plan", cmd_plan, help="build a pruning plan")
    _add_scoring_flags(p)
    p.add_argument("--rates", help="JSON rates file")
    p.add_argument("--rate", type=float, help="uniform global pruning rate")
    p.add_argument("--strategy", default="least", choices=["least", "most", "random"])
    p.add_argument("--seed", type=int)
    p.add_argument("--protect", action="append", help="layer id never pruned")
    p.add_argument("--out")

    p = add("apply", cmd_apply, help="execute a plan, write pruned archive")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, help="FLOPs/params report, optionally vs a plan")
    p.add_argument("--plan")
    p.add_argument("--out")

    p = add("verify", cmd_verify, help="masked-vs-pruned forward equivalence")
    p.add_argument("--plan", required=True)
    p.add_argument("--pruned", required=True)
    p.add_argument("--inputs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = add("diagnose", cmd_diagnose, help="Renyi/rank/Pearson feature-map analysis")
    _add_scoring_flags(p)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
