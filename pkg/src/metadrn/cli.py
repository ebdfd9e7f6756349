"""Command-line entry point: ``metadrn {train,eval,compare,export-features}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import checkpoint
from .harness.config import ConfigError, load_config
from .harness.export import export_episode
from .harness.runner import cmd_compare, cmd_eval, cmd_train, make_dataset, render_table, restore
from .data.episodes import Episode
from .model import MetaDRN
from .tensor import NumericError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("metadrn")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _train(args) -> int:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    report = cmd_train(cfg, resume=args.resume)
    print(f"trained {cfg.algorithm} for {len(report.rows)} epochs; best val soft mIoU "
          f"{report.best_val_soft_miou:.4f}; outputs in {report.output_dir}")
    return EXIT_OK


def _eval(args) -> int:
    result = cmd_eval(args.ckpt, args.split, args.episodes, args.queries)
    print(render_table([result.table_row()]), end="")
    soft = result.per_episode["soft_iou"]
    print(f"soft mIoU (per episode): {soft.format()}   "
          f"(per class: {result.per_class['soft_iou'].format()})")
    print(f"mIoU@0.5 per class: {result.per_class['iou_at_0_5'].format()}   "
          f"mIoU@0.35 per class: {result.per_class['iou_at_0_35'].format()}")
    print(f"constant-foreground IoU: {result.constant_fg_iou * 100:.2f}   episodes: {soft.n}")
    return EXIT_OK


def _compare(args) -> int:
    _, table = cmd_compare(args.run_dirs, args.split)
    print(table, end="")
    return EXIT_OK


def _export(args) -> int:
    ts = restore(args.ckpt)
    cfg = ts.cfg
    dataset = make_dataset(cfg)
    ids = dataset.sample_ids(args.class_name)
    if args.sample not in ids:
        raise KeyError(f"class {args.class_name!r} has no sample {args.sample}")
    support_id = args.support if args.support is not None else next(k for k in ids if k != args.sample)
    episode = Episode(args.class_name, [dataset.get(args.class_name, support_id)],
                      [dataset.get(args.class_name, args.sample)])
    out = Path(args.out or Path(args.ckpt).parent / f"features_{args.class_name}_{args.sample}")
    paths = export_episode(MetaDRN(cfg.model_spec()), cfg.algorithm, ts.state, cfg.inner(), episode, out)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metadrn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="adapt and evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--queries", type=int)
    p.set_defaults(func=_eval)

    p = sub.add_parser("compare", help="merge evaluation results of several runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--split", default="test")
    p.set_defaults(func=_compare)

    p = sub.add_parser("export-features", help="dump per-layer-group feature maps and masks")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--support", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, KeyError, ValueError, checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
