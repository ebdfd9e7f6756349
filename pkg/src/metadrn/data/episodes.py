"""Segmentation datasets, class splits and 1-shot episode sampling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import pnm

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class SegSample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    class_id: str
    sample_id: int

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must have shape (3, H, W), got {self.image.shape}")
        if self.image.shape[1:] != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} sizes differ")


@dataclass
class Episode:
    class_id: str
    support: list[SegSample]
    query: list[SegSample]

    def __post_init__(self):
        ids_s = {s.sample_id for s in self.support}
        ids_q = {s.sample_id for s in self.query}
        if ids_s & ids_q:
            raise ValueError("support and query sets overlap")
        if any(s.class_id != self.class_id for s in (*self.support, *self.query)):
            raise ValueError("episode mixes classes")

    @property
    def episode_id(self) -> str:
        s = ",".join(str(x.sample_id) for x in self.support)
        q = ",".join(str(x.sample_id) for x in self.query)
        return f"{self.class_id}:{s}|{q}"


@dataclass
class ClassSplit:
    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise ValueError("class splits overlap")

    def of(self, name: str) -> list[str]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all(self) -> list[str]:
        return sorted([*self.train, *self.val, *self.test])


def default_split(classes: Sequence[str], seed: int = 0, test_frac: float = 0.24,
                  val_frac: float = 0.06) -> ClassSplit:
    """Seeded test membership; validation is the lexicographically last train classes.

    The fractions reproduce the 700/60/240 partition for 1000 classes.
    """
    names = sorted(classes)
    n = len(names)
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * n))
    perm = np.random.default_rng(seed).permutation(n)
    test = sorted(names[i] for i in perm[:n_test])
    rest = sorted(names[i] for i in perm[n_test:])
    val = rest[len(rest) - n_val:] if n_val else []
    train = rest[:len(rest) - n_val]
    return ClassSplit(train, val, test)


def split_by_counts(classes: Sequence[str], counts: tuple[int, int, int], seed: int = 0) -> ClassSplit:
    n_train, n_val, n_test = counts
    names = sorted(classes)
    if n_train + n_val + n_test != len(names):
        raise ValueError(f"split counts {counts} do not cover {len(names)} classes")
    perm = np.random.default_rng(seed).permutation(len(names))
    shuffled = [names[i] for i in perm]
    return ClassSplit(sorted(shuffled[:n_train]), sorted(shuffled[n_train:n_train + n_val]),
                      sorted(shuffled[n_train + n_val:]))


def read_manifest(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise ValueError(f"{path}:{lineno}: expected '<class_name> <train|val|test>'")
        out[parts[0]] = parts[1]
    return out


def split_from_manifest(classes: Sequence[str], manifest: dict[str, str]) -> ClassSplit:
    missing = sorted(set(classes) - set(manifest))
    extra = sorted(set(manifest) - set(classes))
    if missing or extra:
        raise ValueError(f"manifest mismatch: unlisted classes {missing[:5]}, unknown classes {extra[:5]}")
    groups = {s: sorted(c for c, t in manifest.items() if t == s) for s in SPLITS}
    return ClassSplit(groups["train"], groups["val"], groups["test"])


class SegDataset:
    """Read-only indexed collection of per-class segmentation samples.

    Subclasses implement :meth:`_load`. Every served class is recorded in
    ``access_log`` so callers can audit which splits a procedure touched.
    """

    def __init__(self, index: dict[str, list[int]], split: ClassSplit):
        self.index = {c: sorted(ids) for c, ids in sorted(index.items())}
        self.split = split
        self.access_log: set[str] = set()
        for name in split.all():
            if name not in self.index:
                raise ValueError(f"split names unknown class {name!r}")

    @property
    def classes(self) -> list[str]:
        return list(self.index)

    def classes_in(self, split: str) -> list[str]:
        return list(self.split.of(split))

    def split_of(self, class_name: str) -> str:
        for s in SPLITS:
            if class_name in self.split.of(s):
                return s
        raise KeyError(class_name)

    def sample_ids(self, class_name: str) -> list[int]:
        return self.index[class_name]

    def num_samples(self) -> int:
        return sum(len(v) for v in self.index.values())

    def get(self, class_name: str, sample_id: int) -> SegSample:
        if sample_id not in self.index[class_name]:
            raise KeyError(f"{class_name}/{sample_id}")
        self.access_log.add(class_name)
        return self._load(class_name, sample_id)

    def _load(self, class_name: str, sample_id: int) -> SegSample:
        raise NotImplementedError


class InMemoryDataset(SegDataset):
    def __init__(self, samples: dict[str, dict[int, SegSample]], split: ClassSplit):
        self.samples = samples
        super().__init__({c: list(v) for c, v in samples.items()}, split)

    def _load(self, class_name, sample_id):
        return self.samples[class_name][sample_id]


class FolderDataset(SegDataset):
    """``root/<class>/<k>.ppm`` images with ``<k>_mask.pgm`` masks, decoded on access."""

    def __init__(self, root, index, split, mask_threshold: int = 128):
        self.root = Path(root)
        self.mask_threshold = mask_threshold
        super().__init__(index, split)

    def _paths(self, class_name, k):
        d = self.root / class_name
        return d / f"{k}.ppm", d / f"{k}_mask.pgm"

    def _load(self, class_name, sample_id):
        img_path, mask_path = self._paths(class_name, sample_id)
        rgb = pnm.read_pnm(img_path)
        gray = pnm.read_pnm(mask_path)
        if rgb.ndim != 3:
            raise pnm.PNMError(f"{img_path}: expected a P6 colour image")
        if gray.ndim != 2:
            raise pnm.PNMError(f"{mask_path}: expected a P5 grayscale mask")
        image = (rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))
        mask = (gray >= self.mask_threshold).astype(np.uint8)
        return SegSample(image, mask, class_name, sample_id)


def load_dataset(root, manifest=None, split_seed: int = 0) -> FolderDataset:
    """Index an FSS-1000-style tree, validating every file header up front."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    index: dict[str, list[int]] = {}
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        ids = []
        for img in sorted(class_dir.glob("*.ppm")):
            if not img.stem.isdigit():
                continue
            mask = class_dir / f"{img.stem}_mask.pgm"
            if not mask.exists():
                raise FileNotFoundError(f"missing mask {mask} for image {img}")
            magic_i, wi, hi = pnm.read_header(img)
            magic_m, wm, hm = pnm.read_header(mask)
            if magic_i != "P6" or magic_m != "P5":
                raise pnm.PNMError(f"{img}: expected P6 image and P5 mask, got {magic_i}/{magic_m}")
            if (wi, hi) != (wm, hm):
                raise pnm.PNMError(f"{mask}: size {wm}x{hm} differs from image {wi}x{hi}")
            ids.append(int(img.stem))
        if not ids:
            continue
        if len(ids) != 10:
            log.warning("class %s has %d samples (expected 10)", class_dir.name, len(ids))
        index[class_dir.name] = ids
    if manifest is not None:
        split = split_from_manifest(list(index), read_manifest(manifest))
    else:
        split = default_split(list(index), seed=split_seed)
    return FolderDataset(root, index, split)


def write_sample(root, sample: SegSample) -> None:
    d = Path(root) / sample.class_id
    d.mkdir(parents=True, exist_ok=True)
    pnm.write_ppm(d / f"{sample.sample_id}.ppm", pnm.to_uint8(sample.image.transpose(1, 2, 0)))
    pnm.write_pgm(d / f"{sample.sample_id}_mask.pgm", sample.mask.astype(np.uint8) * 255)


def write_dataset(root, dataset: SegDataset) -> None:
    for c in dataset.classes:
        for k in dataset.sample_ids(c):
            write_sample(root, dataset._load(c, k))


# ---------------------------------------------------------------------------
# sampling


def epoch_rng(seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, epoch, stream)."""
    return np.random.default_rng([seed, epoch, stream])


def sample_episode(dataset: SegDataset, split: str, rng: np.random.Generator, shots: int = 1,
                   queries: int = 5, class_name: str | None = None, augment_fn=None) -> Episode:
    classes = dataset.classes_in(split)
    if not classes:
        raise ValueError(f"split {split!r} has no classes")
    if class_name is None:
        class_name = classes[int(rng.integers(len(classes)))]
    elif class_name not in classes:
        raise ValueError(f"class {class_name!r} is not in split {split!r}")
    ids = dataset.sample_ids(class_name)
    if len(ids) < shots + 1:
        raise ValueError(f"class {class_name!r} has {len(ids)} samples, needs at least {shots + 1}")
    q = min(queries, len(ids) - shots)
    chosen = rng.choice(len(ids), size=shots + q, replace=False)
    samples = [dataset.get(class_name, ids[i]) for i in chosen]
    if augment_fn is not None:
        samples = [augment_fn(s, rng) for s in samples]
    return Episode(class_name, samples[:shots], samples[shots:])


def batches_per_epoch(num_classes: int, meta_batch: int) -> int:
    return math.ceil(num_classes / meta_batch)


def epoch_iter(dataset: SegDataset, split: str, meta_batch: int, rng: np.random.Generator,
               shots: int = 1, queries: int = 5, augment_fn=None) -> Iterator[list[Episode]]:
    """One epoch of episode batches; each class of the split is drawn exactly once."""
    if meta_batch < 1:
        raise ValueError("meta_batch must be >= 1")
    classes = dataset.classes_in(split)
    order = [classes[i] for i in rng.permutation(len(classes))]
    for start in range(0, len(order), meta_batch):
        yield [sample_episode(dataset, split, rng, shots, queries, class_name=c, augment_fn=augment_fn)
               for c in order[start:start + meta_batch]]


@dataclass
class EpisodePlan:
    """A fixed list of evaluation episodes, rebuilt identically from its seed."""

    split: str
    num_episodes: int
    seed: int
    queries: int = 5
    shots: int = 1
    classes: list[str] = field(default_factory=list)

    def episodes(self, dataset: SegDataset) -> list[Episode]:
        rng = np.random.default_rng([self.seed, 7919])
        classes = self.classes or dataset.classes_in(self.split)
        order = [classes[i] for i in rng.permutation(len(classes))]
        return [sample_episode(dataset, self.split, rng, self.shots, self.queries,
                               class_name=order[i % len(order)])
                for i in range(self.num_episodes)]
