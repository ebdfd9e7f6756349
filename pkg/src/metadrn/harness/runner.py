"""Training and evaluation orchestration."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .. import meta
from ..data import AugmentPolicy, EpisodePlan, SegDataset, augment, epoch_iter, epoch_rng, load_dataset, synth_generate
from ..meta import MetaState
from ..metrics import EvalRecord, Summary, constant_foreground_iou, episode_eval, summarize, summarize_by_class
from ..model import MetaDRN, build
from ..optim import AdamW
from . import checkpoint
from .config import RunConfig, parse_config

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "meta_lr", "train_loss", "val_soft_miou", "val_miou_0_5", "val_miou_0_35", "seconds")
VAL_SEED_STREAM = 104729


def make_dataset(cfg: RunConfig) -> SegDataset:
    if cfg.data_source == "synthetic":
        return synth_generate(cfg.synth_classes, cfg.synth_samples, cfg.image_size, cfg.synth_seed,
                              cfg.split_counts())
    return load_dataset(cfg.data_path, cfg.data_manifest or None, cfg.data_split_seed)


def evaluate(cfg: RunConfig, model: MetaDRN, state: MetaState, episodes) -> list[EvalRecord]:
    inner = cfg.inner()
    records = []
    for ep in episodes:
        adapted = meta.adapt_for_eval(cfg.algorithm, state, ep.support, inner, model.loss)
        records.append(episode_eval(model, adapted, ep))
    return records


@dataclass
class TrainingState:
    cfg: RunConfig
    state: MetaState
    opt: AdamW
    schedule: object
    epoch: int = 0
    best: float = -math.inf
    history: list[float] = field(default_factory=list)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "meta/config": np.frombuffer(self.cfg.to_text(include_output=False).encode(), dtype=np.uint8),
            "meta/epoch": np.array([self.epoch], dtype=np.int64),
            "meta/rng": np.array([self.cfg.seed, self.epoch], dtype=np.int64),
            "meta/best": np.array([self.best], dtype=np.float64),
            "meta/history": np.array(self.history, dtype=np.float64),
            "sched/state": self.schedule.state_array(),
        }
        out.update(self.state.named())
        out.update(self.opt.state_arrays())
        return out

    def save(self, path) -> None:
        checkpoint.save(path, self.arrays(), self.cfg.hash())


def config_from_checkpoint(arrays: dict[str, np.ndarray], output_dir: str | None = None) -> RunConfig:
    text = arrays["meta/config"].tobytes().decode()
    overrides = {"output_dir": output_dir} if output_dir else None
    return parse_config(text, "<checkpoint>", overrides)


def restore(path, cfg: RunConfig | None = None) -> TrainingState:
    arrays, chash = checkpoint.load(path)
    ckpt_cfg = config_from_checkpoint(arrays, cfg.output_dir if cfg else None)
    if cfg is not None and chash != cfg.hash():
        raise checkpoint.CheckpointError(f"{path}: checkpoint was written by a different configuration")
    cfg = cfg or ckpt_cfg
    schedule = cfg.schedule()
    schedule.load_state_array(arrays["sched/state"])
    opt = AdamW(cfg.outer_beta1, cfg.outer_beta2, cfg.outer_eps, cfg.outer_weight_decay)
    opt.load_state_arrays(arrays)
    return TrainingState(cfg, MetaState.from_named(arrays), opt, schedule,
                         epoch=int(arrays["meta/epoch"][0]), best=float(arrays["meta/best"][0]),
                         history=[float(x) for x in arrays["meta/history"]])


def fresh_state(cfg: RunConfig) -> TrainingState:
    theta = build(cfg.model_spec(), cfg.seed)
    state = meta.initial_state(cfg.algorithm, theta, cfg.metasgd_alpha_init)
    opt = AdamW(cfg.outer_beta1, cfg.outer_beta2, cfg.outer_eps, cfg.outer_weight_decay)
    return TrainingState(cfg, state, opt, cfg.schedule())


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[1:] if rows else []


@dataclass
class RunReport:
    output_dir: Path
    rows: list[dict] = field(default_factory=list)
    best_val_soft_miou: float = -math.inf
    test: dict[str, Summary] | None = None


def validation_episodes(cfg: RunConfig, dataset: SegDataset):
    n = cfg.val_episodes or len(dataset.classes_in("val"))
    return EpisodePlan("val", n, cfg.seed + VAL_SEED_STREAM, queries=cfg.queries).episodes(dataset)


def cmd_train(cfg: RunConfig, resume: str | None = None, dataset: SegDataset | None = None) -> RunReport:
    """Run the meta-training loop, writing ``train_log.csv`` and checkpoints to ``cfg.output_dir``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    dataset = dataset or make_dataset(cfg)
    model = MetaDRN(cfg.model_spec())
    inner = cfg.inner()
    ts = restore(resume, cfg) if resume else fresh_state(cfg)

    csv_path = out / "train_log.csv"
    prior = [r for r in _read_rows(csv_path) if int(r[0]) <= ts.epoch] if resume and csv_path.exists() else []
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(prior)

    val_eps = validation_episodes(cfg, dataset)
    aug = partial(augment, policy=AugmentPolicy()) if cfg.augment else None
    report = RunReport(out, best_val_soft_miou=ts.best)

    for epoch in range(ts.epoch, cfg.epochs):
        t0 = time.perf_counter()
        lr = ts.schedule.lr_at(epoch)
        rng = epoch_rng(cfg.seed, epoch)
        losses = []
        for batch in epoch_iter(dataset, "train", cfg.meta_batch, rng, queries=cfg.queries, augment_fn=aug):
            grad = meta.meta_gradient(cfg.algorithm, ts.state, batch, inner, model.loss)
            ts.state = MetaState.from_named(ts.opt.step(ts.state.named(), grad.named(), lr))
            if cfg.metasgd_clamp_alpha and ts.state.alpha is not None:
                ts.state = meta.clamp_alpha(ts.state)
            losses.append(grad.loss)
        records = evaluate(cfg, model, ts.state, val_eps)
        soft = summarize(records, "soft_iou").mean
        ts.schedule.observe(soft)
        ts.history.append(soft)
        ts.epoch = epoch + 1
        seconds = time.perf_counter() - t0
        row = {
            "epoch": ts.epoch, "meta_lr": lr, "train_loss": float(np.mean(losses)), "val_soft_miou": soft,
            "val_miou_0_5": summarize(records, "iou_at_0_5").mean,
            "val_miou_0_35": summarize(records, "iou_at_0_35").mean,
            "seconds": seconds if cfg.wall_clock else 0.0,
        }
        report.rows.append(row)
        with open(csv_path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(
                [row["epoch"]] + [_fmt(row[c]) for c in CSV_COLUMNS[1:]])
        improved = soft > ts.best
        if improved:
            ts.best = soft
        report.best_val_soft_miou = ts.best
        ts.save(out / "last.ckpt")
        if improved:
            ts.save(out / "best.ckpt")
        if ts.epoch % cfg.checkpoint_every == 0:
            ts.save(out / f"epoch_{ts.epoch:03d}.ckpt")
        log.info("epoch %d lr %.3g loss %.4f val soft mIoU %.4f (%.1fs)", ts.epoch, lr, row["train_loss"],
                 soft, seconds)
    return report


# ---------------------------------------------------------------------------
# evaluation and reporting

TABLE_COLUMNS = ("Setting", "mIoU (thresh = 0.5)", "mIoU (thresh = 0.35)", "Time per epoch (min)", "Parameter Count")
SETTING_NAMES = {"maml": "MAML", "fomaml": "FOMAML", "metasgd": "Meta-SGD", "reptile": "Reptile"}


@dataclass
class EvalResult:
    setting: str
    algorithm: str
    split: str
    records: list[EvalRecord]
    per_episode: dict[str, Summary]
    per_class: dict[str, Summary]
    seconds_per_epoch: float | None
    param_count: int
    constant_fg_iou: float

    def to_json(self) -> dict:
        def s(x: Summary):
            return {"mean": x.mean, "ci95_half_width": x.ci95_half_width, "n": x.n}
        return {
            "setting": self.setting, "algorithm": self.algorithm, "split": self.split,
            "param_count": self.param_count, "seconds_per_epoch": self.seconds_per_epoch,
            "constant_foreground_iou": self.constant_fg_iou,
            "per_episode": {k: s(v) for k, v in self.per_episode.items()},
            "per_class": {k: s(v) for k, v in self.per_class.items()},
            "records": [r.as_dict() for r in self.records],
        }

    def table_row(self) -> dict:
        return row_from_json(self.to_json())


def _mean_epoch_seconds(run_dir: Path) -> float | None:
    path = run_dir / "train_log.csv"
    if not path.exists():
        return None
    secs = [float(r[6]) for r in _read_rows(path)]
    secs = [s for s in secs if s > 0]
    return float(np.mean(secs)) if secs else None


def cmd_eval(ckpt, split: str = "test", num_episodes: int = 40, queries: int | None = None,
             dataset: SegDataset | None = None, write: bool = True) -> EvalResult:
    ckpt = Path(ckpt)
    ts = restore(ckpt)
    cfg = ts.cfg
    dataset = dataset or make_dataset(cfg)
    model = MetaDRN(cfg.model_spec())
    q = queries or (cfg.test_queries if split == "test" else cfg.queries)
    episodes = EpisodePlan(split, num_episodes, cfg.seed, queries=q).episodes(dataset)
    records = evaluate(cfg, model, ts.state, episodes)
    fields_ = ("soft_iou", "iou_at_0_5", "iou_at_0_35", "query_loss")
    masks = [s.mask for ep in episodes for s in ep.query]
    result = EvalResult(
        setting=f"Meta-DRN, {SETTING_NAMES[cfg.algorithm]}", algorithm=cfg.algorithm, split=split,
        records=records,
        per_episode={f: summarize(records, f) for f in fields_},
        per_class={f: summarize_by_class(records, f) for f in fields_},
        seconds_per_epoch=_mean_epoch_seconds(ckpt.parent),
        param_count=model.num_params(),
        constant_fg_iou=constant_foreground_iou(masks),
    )
    if write:
        (ckpt.parent / f"eval_{split}.json").write_text(json.dumps(result.to_json(), indent=2, sort_keys=True))
    return result


def _fmt_summary(d: dict) -> str:
    return Summary(d["mean"], d["ci95_half_width"], d["n"]).format()


def _fmt_minutes(seconds: float | None) -> str:
    if seconds is None:
        return "-"
    total = int(round(seconds))
    return f"{total // 60}:{total % 60:02d}"


def _fmt_count(n: int) -> str:
    return f"{n / 1e6:.2f}M"


def row_from_json(d: dict) -> dict:
    return {
        "Setting": d["setting"],
        "mIoU (thresh = 0.5)": _fmt_summary(d["per_episode"]["iou_at_0_5"]),
        "mIoU (thresh = 0.35)": _fmt_summary(d["per_episode"]["iou_at_0_35"]),
        "Time per epoch (min)": _fmt_minutes(d["seconds_per_epoch"]),
        "Parameter Count": _fmt_count(d["param_count"]),
        "_miou_0_5": d["per_episode"]["iou_at_0_5"]["mean"],
    }


def render_table(rows: list[dict], flag_best: bool = False) -> str:
    best = max(range(len(rows)), key=lambda i: rows[i]["_miou_0_5"]) if flag_best and rows else None
    cells = [list(TABLE_COLUMNS)]
    for i, r in enumerate(rows):
        setting = r["Setting"] + (" *" if i == best else "")
        cells.append([setting] + [r[c] for c in TABLE_COLUMNS[1:]])
    widths = [max(len(row[j]) for row in cells) for j in range(len(TABLE_COLUMNS))]
    buf = io.StringIO()
    for k, row in enumerate(cells):
        buf.write("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |\n")
        if k == 0:
            buf.write("|" + "|".join("-" * (w + 2) for w in widths) + "|\n")
    return buf.getvalue()


def cmd_compare(run_dirs, split: str = "test") -> tuple[list[dict], str]:
    """Merge per-run evaluation results into one table; the best mIoU@0.5 row is starred."""
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two runs")
    paths = [Path(d) / f"eval_{split}.json" for d in run_dirs]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError("missing evaluation results: " + ", ".join(missing))
    rows = [row_from_json(json.loads(p.read_text())) for p in paths]
    return rows, render_table(rows, flag_best=True)


def best_row_index(rows: list[dict]) -> int:
    return max(range(len(rows)), key=lambda i: rows[i]["_miou_0_5"])
