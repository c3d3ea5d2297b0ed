"""Command-line entry point.

Exit codes: 0 success, 1 usage/config/data error, 2 numerical failure.
Set ``RGBDSOD_DETERMINISTIC=1`` for bitwise-reproducible runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .config import ConfigError, RunConfig, load_config, save_config, validate_config
from .data import DataError, RGBDDataset, generate_synthetic_dataset, save_prediction
from .inference import benchmark, predict_dataset, predict_triplet
from .metrics import MetricError, evaluate_dataset
from .model import ABLATION_PRESETS, count_parameters
from .plotting import plot_ablation, plot_pr_curves, plot_training_curves
from .training import (CheckpointError, NonFiniteLossError, deterministic_mode,
                       load_checkpoint, set_deterministic, train)

log = logging.getLogger("rgbdsod")


@dataclass
class CommandResult:
    exit_code: int = 0
    artifacts: list[Path] = field(default_factory=list)


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> CommandResult:
    cfg = load_config(args.config)
    if not cfg.train_dir:
        raise UsageError("config has no train_dir")
    train_set = RGBDDataset(cfg.train_dir, cfg.input_size)
    val_set = RGBDDataset(cfg.val_dir, cfg.input_size) if cfg.val_dir else None
    name = args.name or Path(args.config).stem
    run_dir = Path(args.runs_dir) / name

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume, expect=cfg)

    artifacts = [save_config(cfg, run_dir / "config.json")]
    result = train(cfg, train_set, val_set, run_dir=run_dir, resume=resume)
    artifacts += [run_dir / "train_log.jsonl", run_dir / "last.pt"]
    if (run_dir / "best.pt").exists():
        artifacts.append(run_dir / "best.pt")
    if result.records:
        artifacts.append(plot_training_curves(result.records, run_dir / "loss_curve.png"))
    print(f"trained {result.final.epoch} epochs, {result.final.step} steps -> {run_dir}")
    return CommandResult(0, artifacts)


def cmd_predict(args) -> CommandResult:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    cfg = model.cfg
    depth = args.depth
    if cfg.uses_depth and depth is None:
        raise UsageError(f"variant {cfg.variant} needs --depth")
    if not cfg.uses_depth:
        depth = None
    sal, edge, inputs = predict_triplet(model, args.rgb, depth)
    out = Path(args.out)
    artifacts = [save_prediction(sal, out)]
    if edge is not None:
        artifacts.append(save_prediction(edge, out.with_suffix(".edge.png")))
    if args.benchmark:
        torch.set_num_threads(args.threads)
        mean_s = benchmark(model, inputs[0], inputs[1], args.benchmark)
        print(f"mean_inference_s={mean_s:.6f}")
    return CommandResult(0, artifacts)


def _evaluate_model(model, data: Path, out: Path, label: str) -> tuple[dict, list[Path], object]:
    pred_dir = out / "pred"
    artifacts = predict_dataset(model, data, pred_dir)
    report = evaluate_dataset(pred_dir, data)
    csv = report.write_csv(out / "pr_curve.csv")
    js = report.write_json(out / "report.json", label, csv.name)
    fig = plot_pr_curves({label: (report.precision, report.recall)}, out / "pr_curve.png",
                         title=f"PR curve: {label}")
    return report.to_dict(label, csv.name), artifacts + [csv, js, fig], report


def cmd_eval(args) -> CommandResult:
    model = load_checkpoint(args.checkpoint).model()
    data = Path(args.data)
    summary, artifacts, _ = _evaluate_model(model, data, Path(args.out), data.name)
    print(json.dumps({k: summary[k] for k in ("n_images", "mae", "f_max", "s_measure")}))
    return CommandResult(0, artifacts)


def _split_dirs(data: Path) -> tuple[Path, Path]:
    if (data / "train").is_dir():
        test = data / "test" if (data / "test").is_dir() else data / "val"
        if not test.is_dir():
            raise UsageError(f"{data} has train/ but neither test/ nor val/")
        return data / "train", test
    return data, data


def cmd_ablate(args) -> CommandResult:
    names = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in names if v not in ABLATION_PRESETS]
    if unknown:
        raise UsageError(f"unknown variant(s): {', '.join(unknown)}; "
                         f"choose from {', '.join(ABLATION_PRESETS)}")
    if not names:
        raise UsageError("no variants given")
    base = load_config(args.config)
    if args.steps:
        base = base.replace(max_steps=args.steps)
    configs = {n: validate_config(base.replace(**ABLATION_PRESETS[n])) for n in names}
    train_dir, test_dir = _split_dirs(Path(args.data))
    out = Path(args.out)

    table, curves, artifacts = {}, {}, []
    for name, cfg in configs.items():
        log.info("ablation: training %s", name)
        train_set = RGBDDataset(train_dir, cfg.input_size)
        result = train(cfg, train_set, run_dir=out / name)
        model = result.final.model()
        summary, arts, report = _evaluate_model(model, test_dir, out / name, name)
        artifacts += arts
        table[name] = {"mae": summary["mae"], "f_max": summary["f_max"],
                       "s_measure": summary["s_measure"], "params": count_parameters(model),
                       "final_loss": result.records[-1]["L"] if result.records else None}
        curves[name] = (report.precision, report.recall)
        print(f"{name:>10}  params={table[name]['params']:>9}  S={summary['s_measure']:.4f}  "
              f"F={summary['f_max']:.4f}  MAE={summary['mae']:.4f}")

    table_path = out / "ablation.json"
    table_path.write_text(json.dumps(table, indent=2) + "\n")
    artifacts += [table_path, plot_ablation(table, out / "ablation.png"),
                  plot_pr_curves(curves, out / "ablation_pr.png", title="PR curves by variant")]
    return CommandResult(0, artifacts)


def cmd_gen_data(args) -> CommandResult:
    ids = generate_synthetic_dataset(args.count, args.seed, args.size, args.out)
    print(f"wrote {len(ids)} scenes to {args.out}")
    return CommandResult(0, [Path(args.out) / "manifest.json"])


def cmd_metrics(args) -> CommandResult:
    report = evaluate_dataset(args.pred, args.gt)
    out = Path(args.out)
    csv = report.write_csv(out.with_name(out.stem + "_pr.csv"))
    js = report.write_json(out, Path(args.gt).name, csv.name)
    fig = plot_pr_curves({Path(args.pred).name: (report.precision, report.recall)},
                         out.with_name(out.stem + "_pr.png"))
    print(json.dumps({"n_images": report.n_images, "mae": report.mae, "f_max": report.f_max,
                      "s_measure": report.s_measure}))
    return CommandResult(0, [js, csv, fig])


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbdsod",
                                description="RGB-D salient object detection tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--name", help="run id (default: config file stem)")
    t.add_argument("--runs-dir", default="runs")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict one RGB-D pair")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--rgb", required=True)
    pr.add_argument("--depth")
    pr.add_argument("--out", required=True)
    pr.add_argument("--benchmark", type=int, default=0, metavar="N",
                    help="time N forward passes after one warm-up")
    pr.add_argument("--threads", type=int, default=1)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("eval", help="predict a dataset and score it")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and score a list of variants")
    ab.add_argument("--config", required=True)
    ab.add_argument("--variants", required=True, help="comma-separated, e.g. full,no_edge")
    ab.add_argument("--data", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--steps", type=int, help="cap optimization steps per variant")
    ab.set_defaults(func=cmd_ablate)

    g = sub.add_parser("gen-data", help="write a synthetic RGB-D dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("metrics", help="score prediction PNGs against ground truth")
    m.add_argument("--pred", required=True)
    m.add_argument("--gt", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)
    return p


def run(argv: Optional[Sequence[str]] = None) -> CommandResult:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if deterministic_mode():
        set_deterministic(True)
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandResult(2)
    except (ConfigError, DataError, MetricError, CheckpointError, UsageError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandResult(1)


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
