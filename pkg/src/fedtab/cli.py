"""Command-line entry point: ``fedtab {featurize,synth,run,centralized,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import ConfigError, ExperimentConfig, parse_config
from .data import (
    ROAD_DATASETS,
    TabularDataset,
    load_series_file,
    load_tabular_csv,
    split_dataset,
    synth_blobs,
    synth_road_like,
    synth_series,
    write_series_file,
    write_tabular_csv,
)
from .featurize import CATALOG_VERSION, featurize_dataset
from .federation import run_centralized, run_experiment
from .metrics import ConfusionMatrix, summarize
from .model import save_checkpoint

log = logging.getLogger("fedtab")

BLOBS_SPREAD = 0.3
SYNTH_CHOICES = ("blobs", "series", *ROAD_DATASETS)


def make_synthetic(preset: str, seed: int) -> TabularDataset | data_mod.SeriesDataset:
    if preset == "blobs":
        return synth_blobs(3, 10, 200, BLOBS_SPREAD, seed)
    if preset == "series":
        return synth_series([200, 200, 200], seed)
    if preset in ROAD_DATASETS:
        return synth_road_like(preset, seed)
    raise ValueError(f"unknown synthetic preset {preset!r}")


def load_dataset(cfg: ExperimentConfig) -> TabularDataset:
    """Tabular data for an experiment, featurizing series input on the way."""
    if cfg.data.path:
        path = Path(cfg.data.path)
        if path.suffix.lower() == ".csv":
            return load_tabular_csv(path)
        return featurize_dataset(load_series_file(path))
    ds = make_synthetic(cfg.data.synth, cfg.seed)
    return ds if isinstance(ds, TabularDataset) else featurize_dataset(ds)


def prepare(cfg: ExperimentConfig):
    """Load data and derive every experiment input; raises before any training happens."""
    tab = load_dataset(cfg)
    plan = split_dataset(tab, cfg.split_spec(), cfg.federation.n_clients, cfg.seed, cfg.split.stratified)
    return tab, plan, cfg.model_config(tab.rows.shape[1], tab.n_classes), cfg.round_config()


def read_history(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return records


def cmd_featurize(args: argparse.Namespace) -> int:
    tab = featurize_dataset(load_series_file(args.input))
    write_tabular_csv(tab, args.output, {"catalog": CATALOG_VERSION})
    print(json.dumps({"rows": len(tab), "features": len(tab.feature_names), "output": str(args.output)}))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    ds = make_synthetic(args.preset, args.seed)
    if isinstance(ds, TabularDataset):
        write_tabular_csv(ds, args.out)
    else:
        write_series_file(ds, args.out)
    print(json.dumps({"preset": args.preset, "examples": len(ds), "output": str(args.out)}))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    tab, plan, model_cfg, round_cfg = prepare(cfg)
    history, _, _ = run_experiment(
        tab,
        plan,
        model_cfg,
        round_cfg,
        cfg.seed,
        history_path=cfg.output.history_path,
        checkpoint_every=cfg.output.checkpoint_every,
        checkpoint_dir=cfg.output.checkpoint_dir,
    )
    print(json.dumps({"history": cfg.output.history_path, **history.summary()}))
    return 0


def cmd_centralized(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    tab, plan, model_cfg, round_cfg = prepare(cfg)
    params, result = run_centralized(tab, plan, model_cfg, round_cfg, cfg.seed)
    ckpt_dir = Path(cfg.output.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, ckpt_dir / "centralized.ckpt")
    print(json.dumps({"checkpoint": str(ckpt_dir / "centralized.ckpt"), **result}))
    return 0


def format_report(records: list[dict]) -> tuple[str, ConfusionMatrix | None]:
    summary = summarize(records)
    lines = [
        f"rounds:            {summary['rounds']}",
        f"max test accuracy: {summary['max_acc']:.4f} (round {summary['max_round']})",
        f"final accuracy:    {summary['final_acc']:.4f}",
        f"min test loss:     {summary['min_loss']:.4f}",
    ]
    best = next(r for r in records if r["round"] == summary["max_round"])
    cm = None
    if "confusion" in best:
        names = best.get("class_names") or [f"class_{k}" for k in range(len(best["confusion"]))]
        cm = ConfusionMatrix(np.array(best["confusion"], dtype=np.int64), tuple(names))
        lines += ["", f"confusion matrix at round {summary['max_round']} (counts and row %):", cm.render()]
    return "\n".join(lines) + "\n", cm


def cmd_report(args: argparse.Namespace) -> int:
    history = Path(args.history)
    records = read_history(history)
    text, cm = format_report(records)
    (history.parent / "summary.txt").write_text(text, encoding="utf-8")
    if cm is not None:
        cm.to_csv(history.parent / "confusion.csv")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="series file -> tabular feature CSV")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--preset", required=True, choices=SYNTH_CHOICES)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, text in (
        ("run", cmd_run, "run a federated experiment"),
        ("centralized", cmd_centralized, "train one model on all client data"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="summarize a history JSONL file")
    p.add_argument("--history", required=True, type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedtab: error: config: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        message = str(exc).replace("\n", " ")
        print(f"fedtab: error: {args.command}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
