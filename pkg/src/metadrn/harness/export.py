"""Feature-map and prediction-mask export."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import meta, nn
from .. import tensor as T
from ..data import pnm
from ..data.episodes import Episode
from ..metrics import THRESHOLDS
from ..model import GROUP_NAMES, MetaDRN
from ..params import ParamSet


def feature_maps(model: MetaDRN, params: ParamSet, image: np.ndarray):
    """Per layer group, the (H, W) map of highest mean activation, plus the foreground probability."""
    dtype = next(iter(params.values())).dtype
    x = T.Tensor(np.asarray(image, dtype=dtype)[None])
    with T.no_grad():
        logits, feats = model.forward(params, x, capture=True)
        prob = nn.softmax(logits, axis=1).data[0, 1]
    return {k: feats[k][0] for k in GROUP_NAMES}, prob


def write_feature_maps(out_dir, maps: dict[str, np.ndarray], prob: np.ndarray) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, name in enumerate(GROUP_NAMES, 1):
        p = out / f"feat_{i}_{name}.pgm"
        pnm.write_pgm(p, pnm.minmax_uint8(maps[name]))
        paths.append(p)
    for th in THRESHOLDS:
        p = out / f"mask_{str(th).replace('.', '_')}.pgm"
        pnm.write_pgm(p, (prob >= th).astype(np.uint8) * 255)
        paths.append(p)
    return paths


def export_episode(model: MetaDRN, algorithm: str, state: meta.MetaState, cfg_inner, episode: Episode,
                   out_dir) -> list[Path]:
    """Adapt on the support sample, then dump maps for the first query image."""
    adapted = meta.adapt_for_eval(algorithm, state, episode.support, cfg_inner, model.loss)
    maps, prob = feature_maps(model, adapted, episode.query[0].image)
    return write_feature_maps(out_dir, maps, prob)
