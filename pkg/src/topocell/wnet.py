"""W-Net generator and convolutional critic.

The generator is two U-Nets run back to back. With m = log2(R) resolution
halvings it has 4m + 2 conv layers total (34 at 256 px, 26 at 64 px):

    L0              embed, 4x4 stride-1 conv, 3 cond channels -> base width
    L1 .. Lm        first encoder, 4x4 stride-2 convs down to a 1x1 bottleneck
    Lm+1 .. L2m     first decoder, 4x4 stride-2 transposed convs; each level
                    concatenates the matching encoder activation before
                    convolving (mirrored skips)
    L2m+1 .. L3m    second encoder; its first layer additionally re-reads the
                    embed output, stitching the two U-Nets together
    L3m+1 .. L4m    second decoder, skips mirrored within the second U-Net
    L4m+1           projection, 4x4 stride-1 conv over the concatenation of
                    both decoder outputs and the embed, sigmoid to one channel

Channel widths double per level from base_channels, capped at max_channels.
Stride-1 4x4 layers keep their size via asymmetric (1,2,1,2) padding. All
weights start N(0, 0.02) and biases zero, except the output projection bias,
which opens at the logit of the expected output level so a fresh net emits
the corpus base rate instead of mid-gray; there is no normalization anywhere.

The critic scores (condition, image) pairs: four 4x4 convs at strides
2,2,2,1 (so its final feature map is R/8 on a side), global average pooled
and projected to one sigmoid score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (Grid, concat_channels, conv2d, conv2d_transpose, grid_sum,
                   mean_hw, relu, sigmoid)
from .patterns import TopographyRaster
from .seeds import INIT, PLANE_C, stream_seed

_SAME_PAD = (1, 2, 1, 2)  # keeps size for a 4x4 stride-1 conv


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 256
    cond_channels: int = 3
    base_channels: int = 16
    max_channels: int = 256
    disc_base: int = 64
    init_std: float = 0.02
    out_prior: float = 0.03   # output level the bias opens at; train() sets the corpus mean

    def __post_init__(self):
        r = self.resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")
        if not 0.0 < self.out_prior < 1.0:
            raise ValueError(f"out_prior must lie in (0, 1), got {self.out_prior}")

    @property
    def levels(self) -> int:
        """Resolution halvings to reach the 1x1 bottleneck."""
        return int(math.log2(self.resolution))

    def width(self, j: int) -> int:
        return min(self.base_channels << j, self.max_channels)


@dataclass
class ConvLayer:
    name: str
    kind: str                 # "conv" or "tconv"
    weight: Grid
    bias: Grid
    stride: int
    padding: int | tuple
    activation: str           # "relu" or "sigmoid"
    concat_with: tuple[int, ...] = ()   # activation indices appended to the input


def _make_layer(name, kind, cin, cout, stride, padding, activation, rng, std,
                concat_with=()):
    shape = (cout, cin, 4, 4) if kind == "conv" else (cin, cout, 4, 4)
    w = Grid(rng.normal(0.0, std, shape), requires_grad=True, name=f"{name}.weight")
    b = Grid(np.zeros(cout), requires_grad=True, name=f"{name}.bias")
    return ConvLayer(name, kind, w, b, stride, padding, activation, tuple(concat_with))


class _ConvNet:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.layers: list[ConvLayer] = []

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[Grid]:
        out = []
        for L in self.layers:
            out += [L.weight, L.bias]
        return out

    def param_manifest(self) -> list[tuple[str, list[int]]]:
        return [(p.name, list(p.shape)) for p in self.parameters()]

    def _run_layers(self, x: Grid) -> list[Grid]:
        acts = []
        h = x
        for L in self.layers:
            if L.concat_with:
                h = concat_channels([h] + [acts[k] for k in L.concat_with])
            if L.kind == "conv":
                h = conv2d(h, L.weight, L.bias, stride=L.stride, padding=L.padding)
            else:
                h = conv2d_transpose(h, L.weight, L.bias, stride=L.stride,
                                     padding=L.padding)
            h = relu(h) if L.activation == "relu" else sigmoid(h)
            acts.append(h)
        return acts


class Generator(_ConvNet):
    def __call__(self, x: Grid, return_acts: bool = False):
        r = self.cfg.resolution
        if x.shape != (self.cfg.cond_channels, r, r):
            raise ValueError(f"generator expects {(self.cfg.cond_channels, r, r)}, got {x.shape}")
        acts = self._run_layers(x)
        out = acts[-1]
        assert out.shape == (1, r, r)
        return (out, acts) if return_acts else out


class Discriminator(_ConvNet):
    def __init__(self, cfg: NetConfig, head_w: Grid, head_b: Grid):
        super().__init__(cfg)
        self.head_w = head_w
        self.head_b = head_b

    def parameters(self) -> list[Grid]:
        return super().parameters() + [self.head_w, self.head_b]

    def __call__(self, cond: Grid, img: Grid, return_acts: bool = False):
        x = concat_channels([cond, img])
        acts = self._run_layers(x)
        pooled = mean_hw(acts[-1])
        score = sigmoid(grid_sum(pooled * self.head_w) + self.head_b)
        return (score, acts) if return_acts else score


def build_generator(cfg: NetConfig, rng: np.random.Generator | None = None,
                    seed: int = 0) -> Generator:
    rng = rng if rng is not None else np.random.default_rng(stream_seed(seed, INIT))
    m = cfg.levels
    w = [cfg.width(j) for j in range(m + 1)]
    std = cfg.init_std
    net = Generator(cfg)
    add = net.layers.append

    add(_make_layer("g00_embed", "conv", cfg.cond_channels, w[0], 1, _SAME_PAD,
                    "relu", rng, std))
    for j in range(1, m + 1):
        add(_make_layer(f"g{j:02d}_down", "conv", w[j - 1], w[j], 2, 1,
                        "relu", rng, std))
    for t in range(m):
        lvl = m - 1 - t
        cin = w[m] if t == 0 else 2 * w[m - t]
        skips = () if t == 0 else (m - t,)
        add(_make_layer(f"g{m + 1 + t:02d}_up", "tconv", cin, w[lvl], 2, 1,
                        "relu", rng, std, skips))
    for j in range(1, m + 1):
        cin = 2 * w[0] if j == 1 else w[j - 1]
        skips = (0,) if j == 1 else ()
        add(_make_layer(f"g{2 * m + j:02d}_down", "conv", cin, w[j], 2, 1,
                        "relu", rng, std, skips))
    for t in range(m):
        lvl = m - 1 - t
        cin = w[m] if t == 0 else 2 * w[m - t]
        skips = () if t == 0 else (2 * m + (m - t),)
        add(_make_layer(f"g{3 * m + 1 + t:02d}_up", "tconv", cin, w[lvl], 2, 1,
                        "relu", rng, std, skips))
    add(_make_layer(f"g{4 * m + 1:02d}_project", "conv", 3 * w[0], 1, 1, _SAME_PAD,
                    "sigmoid", rng, std, (2 * m, 0)))
    # open the projection at the expected output level: a net that starts far
    # from the corpus base rate owes every pixel the same correction, and that
    # unanimous push overshoots into saturated sigmoids with zero gradient
    net.layers[-1].bias.data[:] = math.log(cfg.out_prior / (1.0 - cfg.out_prior))

    assert net.layer_count == 4 * m + 2
    return net


def build_discriminator(cfg: NetConfig, rng: np.random.Generator | None = None,
                        seed: int = 0) -> Discriminator:
    rng = rng if rng is not None else np.random.default_rng(stream_seed(seed, INIT) ^ 1)
    w = [min(cfg.disc_base << j, cfg.max_channels) for j in range(4)]
    std = cfg.init_std
    head_w = Grid(rng.normal(0.0, std, (w[3],)), requires_grad=True, name="head.weight")
    head_b = Grid(np.zeros(()), requires_grad=True, name="head.bias")
    net = Discriminator(cfg, head_w, head_b)
    cin = cfg.cond_channels + 1
    strides = (2, 2, 2, 1)
    for j, s in enumerate(strides):
        pad = 1 if s == 2 else _SAME_PAD
        net.layers.append(_make_layer(f"d{j:02d}", "conv", cin if j == 0 else w[j - 1],
                                      w[j], s, pad, "relu", rng, std))
    return net


# ---------------------------------------------------------------------------
# condition planes


def assemble_input(raster, day: int, density: float, *, seed: int = 0,
                   rng: np.random.Generator | None = None) -> Grid:
    """Stack the three condition planes into a (3, R, R) grid.

    Plane 0 is the topography raster. Plane 1 is the culture day, constant
    day/30. Plane 2 codes seeding density as per-pixel noise whose mean is
    exactly the density: U[0, 2p] for p <= 0.5, else 1 - U[0, 2(1-p)].
    """
    arr = raster.array if isinstance(raster, TopographyRaster) else np.asarray(raster)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"topography plane must be square, got {arr.shape}")
    if not 0 <= day <= 30:
        raise ValueError(f"day must lie in [0, 30], got {day}")
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    rng = rng if rng is not None else np.random.default_rng(stream_seed(seed, PLANE_C))
    r = arr.shape[0]
    day_plane = np.full((r, r), day / 30.0)
    u = rng.uniform(size=(r, r))
    if density <= 0.5:
        noise = 2.0 * density * u
    else:
        noise = 1.0 - 2.0 * (1.0 - density) * u
    return Grid(np.stack([arr, day_plane, noise]))


def generate(gen: Generator, raster, day: int, density: float, *, seed: int = 0,
             rng: np.random.Generator | None = None) -> Grid:
    """Predict a response image for one condition (no gradients recorded)."""
    x = assemble_input(raster, day, density, seed=seed, rng=rng)
    return gen(x)
