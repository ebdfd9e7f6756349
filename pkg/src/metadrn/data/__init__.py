from .augment import AugmentPolicy, augment
from .episodes import (
    ClassSplit,
    Episode,
    EpisodePlan,
    FolderDataset,
    InMemoryDataset,
    SegDataset,
    SegSample,
    epoch_iter,
    epoch_rng,
    load_dataset,
    sample_episode,
)
from .synth import synth_generate

__all__ = [
    "AugmentPolicy", "augment", "ClassSplit", "Episode", "EpisodePlan", "FolderDataset",
    "InMemoryDataset", "SegDataset", "SegSample", "epoch_iter", "epoch_rng", "load_dataset",
    "sample_episode", "synth_generate",
]
