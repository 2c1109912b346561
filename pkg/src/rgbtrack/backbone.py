"""Shared-parameter convolutional feature extractor.

Three conv layers, each followed by ReLU; a subsampling max pool sits
between layer 1 and layer 2 only, and layer 3 is dilated. One parameter
set serves both modalities: callers run the forward pass twice with the
same params and sum the two parameter gradients.

Feature maps are float arrays of shape (N, C, H, W); F1 is the conv1
post-activation map *before* the inner pool, F2/F3 the post-activation
maps of layers 2 and 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import layers


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel: int
    stride: int
    dilation: int = 1
    pad: int | None = None  # None means "same"-style padding

    def padding(self) -> int:
        if self.pad is not None:
            return self.pad
        return layers.same_pad(self.kernel, self.dilation)


@dataclass(frozen=True)
class BackboneConfig:
    """Three conv layers plus the inner pool after layer 1.

    Invariants: exactly 3 layers, layer-3 dilation 3, pool follows layer 1
    only. ``total_stride`` is the product of all strides and feeds the
    RoIAlign box projection.
    """

    layers: tuple[ConvLayerSpec, ...]
    pool_kernel: int = 2
    pool_stride: int = 2
    in_channels: int = 3
    pixel_mean: tuple[float, ...] | None = None  # per-channel, subtracted after /255

    def __post_init__(self):
        if len(self.layers) != 3:
            raise ValueError("backbone has exactly 3 conv layers")
        if self.layers[2].dilation != 3:
            raise ValueError("layer 3 must use dilation 3")

    @property
    def total_stride(self) -> int:
        s = self.pool_stride
        for ls in self.layers:
            s *= ls.stride
        return s

    @property
    def out_channels(self) -> tuple[int, int, int]:
        return tuple(ls.out_channels for ls in self.layers)


def toy_backbone() -> BackboneConfig:
    """CPU-speed preset: 16/32/64 channels, kernels 5/3/3, all same-padded."""
    return BackboneConfig(
        layers=(
            ConvLayerSpec(16, 5, 2),
            ConvLayerSpec(32, 3, 1),
            ConvLayerSpec(64, 3, 1, dilation=3),
        ),
        pool_kernel=2,
        pool_stride=2,
    )


def paper_backbone() -> BackboneConfig:
    """Full-width preset: 96/256/512 channels, kernels 7/5/3, conv1 unpadded."""
    return BackboneConfig(
        layers=(
            ConvLayerSpec(96, 7, 2, pad=0),
            ConvLayerSpec(256, 5, 2),
            ConvLayerSpec(512, 3, 1, dilation=3),
        ),
        pool_kernel=2,
        pool_stride=2,
    )


@dataclass
class ConvParams:
    w: np.ndarray  # (out, in, k, k)
    b: np.ndarray  # (out,)


@dataclass
class BackboneParams:
    convs: list[ConvParams] = field(default_factory=list)

    def named_arrays(self, prefix: str = "backbone"):
        for i, cp in enumerate(self.convs, start=1):
            yield f"{prefix}.conv{i}.w", cp.w
            yield f"{prefix}.conv{i}.b", cp.b


def init_backbone_params(
    config: BackboneConfig,
    rng: np.random.Generator,
    dtype=np.float64,
    n_layers: int | None = None,
) -> BackboneParams:
    """Fan-in-scaled uniform initialization; biases zero."""
    params = BackboneParams()
    cin = config.in_channels
    specs = config.layers[: n_layers if n_layers is not None else len(config.layers)]
    for ls in specs:
        fan_in = cin * ls.kernel * ls.kernel
        w = layers.fan_in_uniform(rng, (ls.out_channels, cin, ls.kernel, ls.kernel), fan_in, dtype)
        b = np.zeros(ls.out_channels, dtype=dtype)
        params.convs.append(ConvParams(w, b))
        cin = ls.out_channels
    return params


def with_in_channels(config: BackboneConfig, in_channels: int) -> BackboneConfig:
    return replace(config, in_channels=in_channels)


def output_shapes(config: BackboneConfig, input_size) -> tuple[list[tuple[int, int, int]], int]:
    """Pure shape arithmetic for (F1, F2, F3) given input (H, W).

    Returns ([(C, H, W)] * 3, total_stride).
    """
    h, w = int(input_size[0]), int(input_size[1])
    shapes = []
    for i, ls in enumerate(config.layers):
        p = ls.padding()
        h = layers.conv_out_size(h, ls.kernel, ls.stride, p, ls.dilation)
        w = layers.conv_out_size(w, ls.kernel, ls.stride, p, ls.dilation)
        shapes.append((ls.out_channels, h, w))
        if i == 0:
            h = layers.conv_out_size(h, config.pool_kernel, config.pool_stride, 0)
            w = layers.conv_out_size(w, config.pool_kernel, config.pool_stride, 0)
    return shapes, config.total_stride


def min_input_size(config: BackboneConfig) -> tuple[int, int]:
    """Smallest square input whose F3 map is at least 3x3."""
    for s in range(3, 4096):
        shapes, _ = output_shapes(config, (s, s))
        if all(v >= 1 for _, hh, ww in shapes for v in (hh, ww)) and shapes[2][1] >= 3 and shapes[2][2] >= 3:
            return (s, s)
    raise ValueError("no feasible input size below 4096")


def normalize_image(image: np.ndarray, config: BackboneConfig, dtype=np.float64) -> np.ndarray:
    """uint8 (H, W, C) or float [0,1] image -> (C, H, W) float."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != config.in_channels:
        raise ValueError(f"expected (H, W, {config.in_channels}) image, got {img.shape}")
    if img.dtype == np.uint8:
        arr = img.astype(dtype) / 255.0
    else:
        arr = img.astype(dtype)
    arr = arr.transpose(2, 0, 1)
    if config.pixel_mean is not None:
        arr = arr - np.asarray(config.pixel_mean, dtype=dtype)[:, None, None]
    return arr


def forward(x: np.ndarray, params: BackboneParams, config: BackboneConfig, start: int = 0, stop: int = 3):
    """Run layers [start, stop). x (N, Cin, H, W).

    Returns (feats, out, caches): the post-activation map of each layer
    in range, the stream output after the last layer (post-pool for
    layer 0), and the caches for backward.
    """
    caches = []
    feats = []
    cur = x
    for i in range(start, stop):
        ls = config.layers[i]
        cp = params.convs[i - start] if len(params.convs) < 3 else params.convs[i]
        z, conv_cache = layers.conv2d_forward(cur, cp.w, cp.b, ls.stride, ls.padding(), ls.dilation)
        f, relu_cache = layers.relu_forward(z)
        feats.append(f)
        pool_cache = None
        if i == 0:
            cur, pool_cache = layers.maxpool2d_forward(f, config.pool_kernel, config.pool_stride)
        else:
            cur = f
        caches.append((conv_cache, relu_cache, pool_cache))
    return feats, cur, caches


def backward(
    dfeats,
    dout,
    caches,
    params: BackboneParams,
    config: BackboneConfig,
    start: int = 0,
    stop: int = 3,
    need_dx: bool = False,
):
    """Backprop through layers [start, stop).

    dfeats is a list of per-layer gradients (entries may be None) and
    dout the gradient at the stream output. Returns (dx, grads) with
    grads shaped like the params actually used.
    """
    n_used = stop - start
    grads = BackboneParams(
        convs=[
            ConvParams(np.zeros_like(cp.w), np.zeros_like(cp.b))
            for cp in (params.convs if len(params.convs) < 3 else params.convs[start:stop])
        ]
    )
    upstream = dout
    dx = None
    for j in range(n_used - 1, -1, -1):
        i = start + j
        conv_cache, relu_cache, pool_cache = caches[j]
        dfeat = dfeats[j]
        if i == 0 and upstream is not None:
            dpool = layers.maxpool2d_backward(upstream, pool_cache)
            dfeat = dpool if dfeat is None else dfeat + dpool
        elif upstream is not None:
            dfeat = upstream if dfeat is None else dfeat + upstream
        if dfeat is None:
            upstream = None
            continue
        dz = layers.relu_backward(dfeat, relu_cache)
        want_dx = need_dx or j > 0
        w = params.convs[i - start].w if len(params.convs) < 3 else params.convs[i].w
        dxi, dw, db = layers.conv2d_backward(dz, conv_cache, w, need_dx=want_dx)
        grads.convs[j].w += dw
        grads.convs[j].b += db
        upstream = dxi
        dx = dxi
    return dx, grads


def extract_features(image: np.ndarray, params: BackboneParams, config: BackboneConfig):
    """Single-image contract: (H, W, C) image in [0, 1] -> (F1, F2, F3).

    The same parameter set serves both modalities; call once per
    modality. Raises if the input is too small for a 3x3 F3 map.
    """
    shapes, _ = output_shapes(config, np.asarray(image).shape[:2])
    if shapes[2][1] < 3 or shapes[2][2] < 3:
        raise ValueError(
            f"input {image.shape[0]}x{image.shape[1]} too small: F3 would be "
            f"{shapes[2][1]}x{shapes[2][2]}, need at least 3x3"
        )
    x = normalize_image(image, config)[None]
    feats, _, _ = forward(x, params, config)
    return feats[0][0], feats[1][0], feats[2][0]


# --- external weight archive ------------------------------------------------

def save_weights(path, params: BackboneParams) -> None:
    """Write the weight archive: .npz of float32 entries named conv{i}.{w,b}."""
    arrays = {name.split(".", 1)[1]: arr.astype("<f4") for name, arr in params.named_arrays()}
    np.savez(path, **arrays)


def load_weights(path, dtype=np.float64) -> BackboneParams:
    """Load a weight archive written by :func:`save_weights`."""
    with np.load(path) as z:
        convs = []
        for i in range(1, 4):
            wk, bk = f"conv{i}.w", f"conv{i}.b"
            if wk not in z:
                break
            convs.append(ConvParams(z[wk].astype(dtype), z[bk].astype(dtype)))
    if not convs:
        raise ValueError(f"no conv layers found in weight archive {path}")
    return BackboneParams(convs=convs)
