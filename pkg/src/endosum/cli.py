"""Batch command-line front end.

Subcommands: simulate, train-selector, summarize, evaluate, consistency,
ablate. All file formats are the ones defined by the I/O module; logs are
line-oriented key=value records. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io as eio
from .config import RunConfig, default_config_text, load_config
from .evaluate import (
    evaluate_corpus,
    pooled_inconsistency_rate,
    inconsistency_rate,
    switch_interval_cdf,
    wilcoxon_signed_rank,
)
from .model import ConfigError, DataError
from .pipeline import summarize_stream, train_selector
from .selector import read_head, write_head
from .simulate import generate_exam
from dataclasses import replace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def _log(**kv) -> None:
    print(" ".join(f"{k}={v}" for k, v in kv.items()), flush=True)


def cmd_init_config(args) -> int:
    text = default_config_text()
    if args.out:
        eio.atomic_write_text(args.out, text)
        _log(event="init-config", path=args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(cfg.num_patients):
        sim = replace(cfg.sim, seed=cfg.sim.seed + i)
        pid = f"sim-{i:04d}"
        stream, annotations, truth = generate_exam(sim, patient_id=pid)
        eio.write_exam(stream, out / f"{pid}.exam.jsonl")
        eio.write_annotations(annotations, out / f"{pid}.annotations.json")
        eio.atomic_write_text(out / f"{pid}.truth.json", _truth_to_json(truth))
        _log(event="simulate", patient=pid, frames=len(stream),
             events=len(truth.events), out=str(out))
    return EXIT_OK


def _truth_to_json(truth) -> str:
    doc = {
        "frame_labels": truth.frame_labels.tolist(),
        "events": [
            {
                "label_id": e.label_id,
                "start_frame": e.start_frame,
                "end_frame": e.end_frame,
                "keyframe_timestamp_sec": e.keyframe_timestamp_sec,
            }
            for e in truth.events
        ],
        "blur_frames": [int(i) for i in truth.blur_mask.nonzero()[0]],
        "miss_frames": [int(i) for i in truth.miss_mask.nonzero()[0]],
    }
    return json.dumps(doc) + "\n"


def cmd_validate(args) -> int:
    from .model import validate_stream, validate_annotations
    stream = eio.read_exam(args.exam)
    violations = validate_stream(stream)
    if args.annotations:
        ann = eio.read_annotations(args.annotations)
        violations += validate_annotations(ann, stream)
    for v in violations:
        print(f"violation: {v}")
    _log(event="validate", exam=args.exam, frames=len(stream),
         violations=len(violations))
    return EXIT_OK if not violations else EXIT_DATA


def cmd_train_selector(args) -> int:
    cfg = _load(args)
    head = train_selector(cfg)
    out = Path(args.out or Path(cfg.out_dir) / "selector_head.json")
    write_head(head, out)
    _log(event="train-selector", epochs=head.epochs_trained,
         final_loss=f"{head.final_loss:.6f}" if head.final_loss is not None else "-",
         out=str(out))
    return EXIT_OK


def _summarize_one(exam_path: str, head_path: str, out_dir: str,
                   cfg: RunConfig, variant: str):
    stream = eio.read_exam(exam_path)
    head = read_head(head_path)
    summary, hierarchy, stats = summarize_stream(stream, head, cfg, variant=variant)
    out = Path(out_dir)
    eio.write_summary(summary, out / f"{stream.patient_id}.summary.json")
    eio.atomic_write_text(out / f"{stream.patient_id}.hierarchy.json", hierarchy.to_json())
    return stats


def _run_summarize(args, variant: str) -> int:
    cfg = _load(args)
    exam_paths = sorted(str(p) for p in Path(args.in_dir).glob("*.exam.jsonl"))
    if not exam_paths:
        raise DataError(f"no *.exam.jsonl files under {args.in_dir}")
    head_path = args.head or str(Path(cfg.out_dir) / "selector_head.json")
    if not Path(head_path).exists():
        raise DataError(f"selector head file not found: {head_path}")
    out_dir = cfg.out_dir
    Path(out_dir).mkdir(parents=True, exist_ok=True)

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            stats = list(pool.map(
                _summarize_one, exam_paths,
                [head_path] * len(exam_paths),
                [out_dir] * len(exam_paths),
                [cfg] * len(exam_paths),
                [variant] * len(exam_paths),
            ))
    else:
        stats = [_summarize_one(p, head_path, out_dir, cfg, variant) for p in exam_paths]

    for s in stats:
        _log(event="summarize", variant=variant, patient=s.patient_id,
             frames=s.num_frames, candidates=s.num_candidates,
             coarse=s.num_coarse, fine=s.num_fine, entries=s.num_entries,
             sec=f"{s.elapsed_sec:.3f}", dists=s.has_distributions)
    return EXIT_OK


def cmd_summarize(args) -> int:
    return _run_summarize(args, "full")


def cmd_ablate(args) -> int:
    if args.variant not in ("no_weaver", "no_converger"):
        raise ConfigError(f"--variant must be no_weaver|no_converger, got {args.variant!r}")
    return _run_summarize(args, args.variant)


def _collect_pairs(summaries_dir: str, annotations_dir: str):
    pairs = []
    for spath in sorted(Path(summaries_dir).glob("*.summary.json")):
        summary = eio.read_summary(spath)
        apath = Path(annotations_dir) / f"{summary.patient_id}.annotations.json"
        if not apath.exists():
            raise DataError(f"no annotations for {summary.patient_id}: {apath}")
        pairs.append((summary, eio.read_annotations(apath)))
    if not pairs:
        raise DataError(f"no *.summary.json files under {summaries_dir}")
    return pairs


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    pairs = _collect_pairs(args.summaries, args.annotations)
    report = evaluate_corpus(
        pairs,
        window_sec=cfg.window_sec,
        conflict_window_sec=cfg.conflict_window_sec,
        tau_grid_sec=cfg.tau_grid_sec,
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    eio.atomic_write_text(out_dir / "report.json", report.to_json())
    eio.atomic_write_text(out_dir / "inconsistency.csv", _inconsistency_csv(report))
    eio.atomic_write_text(out_dir / "switch_cdf.csv", _switch_cdf_csv(report.switch_intervals))
    sys.stdout.write(report.format_table())
    _log(event="evaluate", patients=report.counts["num_patients"],
         findings=report.counts["num_findings"], out=str(out_dir / "report.json"))
    return EXIT_OK


def _inconsistency_csv(report) -> str:
    lines = ["tau_sec,rate"]
    for tau, rate in report.inconsistency.items():
        lines.append(f"{tau},{'' if rate is None else rate}")
    return "\n".join(lines) + "\n"


def _switch_cdf_csv(intervals) -> str:
    lines = ["interval_sec,cdf"]
    n = len(intervals)
    for i, v in enumerate(intervals, start=1):
        lines.append(f"{v},{i / n}")
    return "\n".join(lines) + "\n"


def cmd_consistency(args) -> int:
    cfg = _load(args)
    side_a = [eio.read_summary(p) for p in sorted(Path(args.a).glob("*.summary.json"))]
    side_b = [eio.read_summary(p) for p in sorted(Path(args.b).glob("*.summary.json"))]
    if not side_a or not side_b:
        raise DataError("both --a and --b must contain *.summary.json files")

    doc = {"taus": {}, "switch": {}}
    for tau in cfg.tau_grid_sec:
        pooled_a = pooled_inconsistency_rate(side_a, tau)
        pooled_b = pooled_inconsistency_rate(side_b, tau)
        by_pid_a = {s.patient_id: inconsistency_rate(s, tau) for s in side_a}
        by_pid_b = {s.patient_id: inconsistency_rate(s, tau) for s in side_b}
        common = sorted(
            pid for pid in by_pid_a
            if pid in by_pid_b and by_pid_a[pid] is not None and by_pid_b[pid] is not None
        )
        wil = wilcoxon_signed_rank(
            [by_pid_a[p] for p in common], [by_pid_b[p] for p in common]
        ) if common else None
        doc["taus"][str(int(tau))] = {
            "pooled_a": pooled_a,
            "pooled_b": pooled_b,
            "paired_patients": len(common),
            "wilcoxon_statistic": wil.statistic if wil else None,
            "wilcoxon_p": wil.p_value if wil else None,
            "wilcoxon_conclusive": bool(wil.conclusive) if wil else False,
        }
    stats_a = switch_interval_cdf(side_a)
    stats_b = switch_interval_cdf(side_b)
    doc["switch"] = {
        "count_a": stats_a.count, "count_b": stats_b.count,
        "intervals_a": list(stats_a.intervals), "intervals_b": list(stats_b.intervals),
    }
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    eio.atomic_write_text(out_dir / "consistency.json", json.dumps(doc, indent=2) + "\n")
    rows = ["tau_sec,rate_a,rate_b"]
    for tau, d in doc["taus"].items():
        ra = "" if d["pooled_a"] is None else d["pooled_a"]
        rb = "" if d["pooled_b"] is None else d["pooled_b"]
        rows.append(f"{tau},{ra},{rb}")
    eio.atomic_write_text(out_dir / "consistency.csv", "\n".join(rows) + "\n")
    _log(event="consistency", switch_a=stats_a.count, switch_b=stats_b.count,
         out=str(out_dir / "consistency.json"))
    return EXIT_OK


def _load(args) -> RunConfig:
    if not Path(args.config).exists():
        raise ConfigError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.sim = replace(cfg.sim, seed=args.seed)
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="endosum",
        description="Summarize ultra-long examination streams into keyframe findings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", default=None, help="override the config out_dir")

    p = sub.add_parser("init-config", help="write a fully commented default config")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_init_config)

    p = sub.add_parser("simulate", help="generate synthetic examinations")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate", help="check an exam file against every invariant")
    p.add_argument("--exam", required=True, help="*.exam.jsonl file")
    p.add_argument("--annotations", default=None, help="optional annotation JSON")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("train-selector", help="train the screening head on simulations")
    common(p)
    p.add_argument("--out", default=None, help="head file path")
    p.set_defaults(fn=cmd_train_selector)

    p = sub.add_parser("summarize", help="run the full pipeline over exam files")
    common(p)
    p.add_argument("--in-dir", required=True, help="directory of *.exam.jsonl")
    p.add_argument("--head", default=None, help="selector head JSON")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("ablate", help="run a reduced pipeline variant")
    common(p)
    p.add_argument("--in-dir", required=True)
    p.add_argument("--head", default=None)
    p.add_argument("--variant", required=True, help="no_weaver | no_converger")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("evaluate", help="score summaries against annotations")
    common(p)
    p.add_argument("--summaries", required=True)
    p.add_argument("--annotations", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("consistency", help="temporal stability comparison of two summary sets")
    common(p)
    p.add_argument("--a", required=True, help="summary directory A")
    p.add_argument("--b", required=True, help="summary directory B")
    p.set_defaults(fn=cmd_consistency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, never raises
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
