"""Sweep the utility threshold over the seeded synthetic benchmark.

Runs all three ranking systems at each threshold step and prints how the
judged pipeline trades recall for precision as the cut rises. Dense-only
and hybrid-only ignore the threshold, so their columns stay flat; the
interesting movement is in the last two columns.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from utilrank.evalbench import (
    SYSTEM_FULL,
    SYSTEMS,
    generate_synthetic_corpus,
    report_to_dict,
    run_benchmark,
)
from utilrank.pipeline import JudgeMode, PipelineConfig


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--docs", type=int, default=20)
    parser.add_argument("--queries", type=int, default=10)
    parser.add_argument("--top-k", type=int, default=50)
    parser.add_argument(
        "--thresholds",
        default="0.0,0.1,0.2,0.3,0.4",
        help="comma-separated utility cuts to sweep",
    )
    parser.add_argument("--out", default="", help="optional JSON file for the full sweep")
    args = parser.parse_args(argv)

    thresholds = [float(part) for part in args.thresholds.split(",") if part.strip()]
    corpus = generate_synthetic_corpus(args.seed, args.docs, args.queries)

    print(
        f"seed={args.seed} docs={args.docs} queries={args.queries} top_k={args.top_k}"
    )
    header = f"{'threshold':>9}" + "".join(f"{s + ' p@5':>18}" for s in SYSTEMS)
    header += f"{'FullPipeline r@5':>18}"
    print(header)
    print("-" * len(header))

    sweep: dict[str, dict] = {}
    for threshold in thresholds:
        cfg = PipelineConfig(
            top_k=args.top_k,
            utility_threshold=threshold,
            judge_mode=JudgeMode.MOCK,
        )
        report = run_benchmark(corpus, cfg)
        sweep[f"{threshold}"] = report_to_dict(report)
        row = f"{threshold:>9.2f}"
        for system in SYSTEMS:
            row += f"{report.means[system]['precision@5']:>18.4f}"
        row += f"{report.means[SYSTEM_FULL]['recall@5']:>18.4f}"
        print(row)

    if args.out:
        Path(args.out).write_text(
            json.dumps(sweep, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        print(f"sweep written to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
