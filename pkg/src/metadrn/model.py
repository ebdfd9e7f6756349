"""The Meta-DRN segmentation network.

A stride-4 dilated residual backbone (head, three residual blocks, two
degridding convolutions) followed by a 1x1 convolution and a x4 pixel
shuffle that restores the input resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import nn
from . import tensor as T
from .params import ParamSet
from .tensor import Tensor

GROUP_NAMES = ("head", "resblock1", "resblock2", "resblock3", "degrid1", "degrid2")


@dataclass(frozen=True)
class ConvLayer:
    name: str
    cin: int
    cout: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    bias: bool = False
    bn: bool = True

    @property
    def padding(self) -> int:
        # 3x3 convs pad by their dilation; 1x1 convs need none
        return self.dilation * (self.kernel // 2)

    def n_params(self) -> int:
        n = self.cin * self.cout * self.kernel * self.kernel
        if self.bias:
            n += self.cout
        if self.bn:
            n += 2 * self.cout
        return n


@dataclass(frozen=True)
class ModelSpec:
    width_multiplier: Fraction | float = 1
    num_classes: int = 2
    upsample_factor: int = 4
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    base_filters: tuple[int, ...] = field(default=(16, 64, 128, 256, 512))

    def __post_init__(self):
        if not 0 < self.width_multiplier <= 1:
            raise ValueError("width_multiplier must lie in (0, 1]")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    def filters(self) -> tuple[int, ...]:
        return tuple(max(1, int(round(f * self.width_multiplier))) for f in self.base_filters)

    def layers(self) -> list[ConvLayer]:
        f16, f64, f128, f256, f512 = self.filters()
        r2 = self.upsample_factor ** 2
        return [
            ConvLayer("head.conv1", 3, f16, 3, stride=2),
            ConvLayer("head.conv2", f16, f64, 3),
            ConvLayer("resblock1.conv1", f64, f128, 3, stride=2),
            ConvLayer("resblock1.conv2", f128, f128, 3),
            ConvLayer("resblock1.shortcut", f64, f128, 1, stride=2),
            ConvLayer("resblock2.conv1", f128, f256, 3),
            ConvLayer("resblock2.conv2", f256, f256, 3, dilation=2),
            ConvLayer("resblock2.shortcut", f128, f256, 1),
            ConvLayer("resblock3.conv1", f256, f512, 3, dilation=2),
            ConvLayer("resblock3.conv2", f512, f512, 3, dilation=4),
            ConvLayer("resblock3.shortcut", f256, f512, 1),
            ConvLayer("degrid.conv1", f512, f512, 3, dilation=2),
            ConvLayer("degrid.conv2", f512, f512, 3, dilation=1),
            ConvLayer("upsample.conv", f512, self.num_classes * r2, 1, bias=True, bn=False),
        ]


def count_params(spec: ModelSpec) -> int:
    return sum(layer.n_params() for layer in spec.layers())


def build(spec: ModelSpec, seed: int) -> ParamSet:
    """Kaiming-normal (fan-in) conv weights, BN gamma=1/beta=0, zero biases."""
    rng = np.random.default_rng(seed)
    dtype = T.get_default_dtype()
    gain = math.sqrt(2.0 / (1.0 + spec.leaky_slope ** 2))
    params = ParamSet()
    for layer in spec.layers():
        fan_in = layer.cin * layer.kernel * layer.kernel
        w = rng.standard_normal((layer.cout, layer.cin, layer.kernel, layer.kernel)) * (gain / math.sqrt(fan_in))
        params[f"{layer.name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        if layer.bias:
            params[f"{layer.name}.bias"] = Tensor(np.zeros(layer.cout, dtype=dtype), requires_grad=True)
        if layer.bn:
            params[f"{layer.name}.bn.gamma"] = Tensor(np.ones(layer.cout, dtype=dtype), requires_grad=True)
            params[f"{layer.name}.bn.beta"] = Tensor(np.zeros(layer.cout, dtype=dtype), requires_grad=True)
    return params


def _max_mean_map(x: Tensor) -> np.ndarray:
    """Per sample, the channel with the highest mean activation, shape (N, H, W)."""
    d = x.data
    idx = d.mean(axis=(2, 3)).argmax(axis=1)
    return d[np.arange(d.shape[0]), idx].copy()


class MetaDRN:
    def __init__(self, spec: ModelSpec | None = None):
        self.spec = spec or ModelSpec()
        self._layers = {layer.name: layer for layer in self.spec.layers()}

    def init(self, seed: int) -> ParamSet:
        return build(self.spec, seed)

    def num_params(self) -> int:
        return count_params(self.spec)

    def _conv(self, params: ParamSet, name: str, x: Tensor) -> Tensor:
        layer = self._layers[name]
        y = nn.conv2d(x, params[f"{name}.weight"], params.get(f"{name}.bias"),
                      stride=layer.stride, dilation=layer.dilation, padding=layer.padding)
        if layer.bn:
            y = nn.batch_norm2d(y, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"], self.spec.bn_eps)
        return y

    def _act(self, x: Tensor) -> Tensor:
        return nn.leaky_relu(x, self.spec.leaky_slope)

    def _resblock(self, params: ParamSet, name: str, x: Tensor) -> Tensor:
        h = self._act(self._conv(params, f"{name}.conv1", x))
        h = self._conv(params, f"{name}.conv2", h)
        if f"{name}.shortcut" in self._layers:
            x = self._conv(params, f"{name}.shortcut", x)
        return self._act(T.add(h, x))

    def forward(self, params: ParamSet, images: Tensor, capture: bool = False):
        """Logits of shape (N, num_classes, H, W).

        With ``capture`` also returns a dict mapping each layer group to its
        max-mean-activation feature map.
        """
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected images of shape (N, 3, H, W), got {images.shape}")
        h, w = images.shape[2:]
        if h % 4 or w % 4:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 4")
        feats: dict[str, np.ndarray] = {}
        x = self._act(self._conv(params, "head.conv1", images))
        x = self._act(self._conv(params, "head.conv2", x))
        feats["head"] = x
        for block in ("resblock1", "resblock2", "resblock3"):
            x = self._resblock(params, block, x)
            feats[block] = x
        x = self._act(self._conv(params, "degrid.conv1", x))
        feats["degrid1"] = x
        x = self._act(self._conv(params, "degrid.conv2", x))
        feats["degrid2"] = x
        logits = nn.pixel_shuffle(self._conv(params, "upsample.conv", x), self.spec.upsample_factor)
        if capture:
            return logits, {k: _max_mean_map(v) for k, v in feats.items()}
        return logits

    __call__ = forward

    def loss(self, params: ParamSet, samples) -> Tensor:
        """Mean pixel cross entropy over a list of :class:`SegSample`."""
        images, masks = stack_samples(samples, params)
        return nn.softmax_cross_entropy(self.forward(params, images), masks)

    def foreground_prob(self, params: ParamSet, images: Tensor) -> np.ndarray:
        with T.no_grad():
            return nn.softmax(self.forward(params, images), axis=1).data[:, 1]


def stack_samples(samples, params: ParamSet | None = None) -> tuple[Tensor, np.ndarray]:
    dtype = next(iter(params.values())).dtype if params else T.get_default_dtype()
    images = np.stack([s.image for s in samples]).astype(dtype, copy=False)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return Tensor(images), masks
