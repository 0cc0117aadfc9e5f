"""Command-line entry points.

Subcommands: score (batch-score raw responses against ground truth), eval
(detection/counting metric report), train-toy (toy GRPO run plus the
reward-setting comparison table), serve (streaming scorer over stdio or TCP).
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import AppConfig, apply_reward_overrides, load_config, parse_threshold_flag
from .datasets import (
    load_ground_truth,
    load_jsonl,
    load_prediction_records,
    write_csv,
    write_json,
    write_metrics_report,
)
from .metrics import evaluate_dataset
from .rewards import RewardConfig
from .service import encode_line, run_server, score_request
from .toyenv import (
    ablation_presets,
    env_params_from_dict,
    run_ablation,
    train_params_from_dict,
    train_toy_grpo,
)


def _effective_reward(app: AppConfig, args: argparse.Namespace) -> RewardConfig:
    overrides = parse_threshold_flag(args.threshold) if args.threshold else {}
    return apply_reward_overrides(app.reward, overrides)


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def cmd_score(args: argparse.Namespace) -> int:
    app = load_config(args.config)
    cfg = _effective_reward(app, args)
    by_id = {g.image_id: g for g in load_ground_truth(args.gt)}
    rows = load_jsonl(args.input)
    if not rows:
        raise ValueError("no records in input file")

    lines: list[str] = []
    components: dict[str, list[float]] = {
        k: [] for k in ("format", "detect", "count", "non_repeat", "total")
    }
    aligned = scored = errors = 0
    for i, obj in enumerate(rows, start=1):
        rid = obj.get("id")
        if not isinstance(rid, str):
            rid = None
        try:
            extra = sorted(set(obj) - {"id", "response_text"})
            if rid is None or extra:
                raise ValueError(
                    f"record {i}: expected exactly {{id, response_text}}"
                    + (f", got extra {extra}" if extra else "")
                )
            gt = by_id.get(rid)
            if gt is None:
                raise ValueError(f"record {i}: unknown image_id {rid!r}")
            record = score_request(
                {
                    "id": rid,
                    "response_text": obj.get("response_text"),
                    "gt_points": [list(p) for p in gt.points],
                    "image_size": list(gt.image_size),
                },
                cfg,
            )
        except ValueError as exc:
            errors += 1
            lines.append(encode_line({"error": str(exc), "id": rid}))
            continue
        scored += 1
        for key, value in record["rewards"].items():
            components[key].append(value)
        ctx = record["context"]
        if ctx is not None and ctx["n_pred"] == ctx["n_count"]:
            aligned += 1
        lines.append(encode_line(record))

    summary = {
        "records": len(rows),
        "scored": scored,
        "errors": errors,
        "mean_total": _mean(components["total"]),
        "mean_format": _mean(components["format"]),
        "mean_detect": _mean(components["detect"]),
        "mean_count": _mean(components["count"]),
        "mean_non_repeat": _mean(components["non_repeat"]),
        "alignment_rate": aligned / scored if scored else None,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_json(summary, out / "summary.json")
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)
        print(encode_line({"summary": summary}))
    return 1 if errors else 0


def cmd_eval(args: argparse.Namespace) -> int:
    gts = load_ground_truth(args.gt)
    preds = load_prediction_records(args.pred, known_ids={g.image_id for g in gts})
    report = evaluate_dataset(gts, preds)
    write_metrics_report(report, args.out or ".")
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return 0


def cmd_train_toy(args: argparse.Namespace) -> int:
    app = load_config(args.config)
    cfg = _effective_reward(app, args)
    env = env_params_from_dict(app.env)
    train = train_params_from_dict(app.train)
    if args.seed is not None:
        train = dataclasses.replace(train, seed=args.seed)

    records, _ = train_toy_grpo(app.grpo, cfg, env, train)
    table = run_ablation(ablation_presets(), seed=train.seed)

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_records.jsonl").write_text(
        "\n".join(encode_line(r.as_dict()) for r in records) + "\n", encoding="utf-8"
    )
    write_json(table, out / "ablation.json")
    write_csv(table, out / "ablation.csv")
    print(
        json.dumps(
            {"final_epoch": records[-1].as_dict(), "ablation": table},
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    app = load_config(args.config)
    cfg = _effective_reward(app, args)

    def on_bound(address: tuple[str, int]) -> None:
        print(f"listening on {address[0]}:{address[1]}", file=sys.stderr, flush=True)

    return run_server(
        cfg,
        args.listen,
        sys.stdin,
        sys.stdout,
        max_workers=args.workers,
        on_bound=on_bound,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config JSON path (DETCOUNT_CONFIG is the fallback)")
    common.add_argument("--seed", type=int, help="training seed override")
    common.add_argument("--out", help="output directory")
    common.add_argument(
        "--threshold",
        help='point-match radius: pixels like "9px" or a diagonal fraction like "0.05"',
    )

    parser = argparse.ArgumentParser(
        prog="detcount",
        description="Detect-to-count rewards, metrics, and a streaming scorer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common], help="score raw responses per line")
    p.add_argument("--input", required=True, help="JSONL of {id, response_text}")
    p.add_argument("--gt", required=True, help="ground-truth JSON document")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="detection/count metric report")
    p.add_argument("--pred", required=True, help="JSONL of {image_id, response_text, mask_file?}")
    p.add_argument("--gt", required=True, help="ground-truth JSON document")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", parents=[common], help="toy GRPO run + reward comparison")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("serve", parents=[common], help="newline-JSON scoring loop")
    p.add_argument("--listen", help="host:port to listen on; stdio when omitted")
    p.add_argument("--workers", type=int, default=8, help="scoring threads")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
