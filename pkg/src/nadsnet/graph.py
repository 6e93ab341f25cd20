"""Declarative layer graphs for NADS-Net and the six-stage PAF baseline.

A :class:`Graph` is an ordered list of :class:`LayerSpec` records whose
``inputs`` name earlier layers, plus one immutable weight dict per
parameterised layer. :func:`forward` walks the list once; nothing else is
needed to execute a graph, so a graph can be exported, counted and run from
the same description.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction
import math

import numpy as np

from . import kernels as K
from .exceptions import ConfigError, ShapeError
from .topology import DEFAULT_TOPOLOGY, SkeletonTopology

VARIANTS = ("nads_net", "six_stage_baseline")
OPS = ("input", "conv", "bn", "relu", "maxpool", "add", "concat", "upsample", "sigmoid", "tanh")
OUTPUT_NAMES = ("keypoint", "paf", "seatbelt")

# ResNet-50 bottleneck stages: (blocks, bottleneck width, stride of first block)
RESNET50_STAGES = ((3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2))
# first ten VGG-19 convolutions; "M" is a 2x2 max pool
VGG19_FIRST10 = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512)


@dataclass(frozen=True)
class ArchitectureConfig:
    variant: str = "nads_net"
    input_size: int = 384
    channel_scale: Fraction = Fraction(1)
    topology: SkeletonTopology = DEFAULT_TOPOLOGY
    stage_count: int = 6
    upsample_mode: str = "bilinear"
    fpn_channels: int = 256
    segmentation_channels: int = 128
    head_channels: int = 512
    bn_eps: float = 1e-3

    def __post_init__(self):
        scale = self.channel_scale
        if not isinstance(scale, Fraction):
            try:
                scale = Fraction(str(scale)) if isinstance(scale, float) else Fraction(scale)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"channel_scale {self.channel_scale!r} is not a number") from exc
            object.__setattr__(self, "channel_scale", scale)
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not isinstance(self.input_size, (int, np.integer)) or self.input_size <= 0:
            raise ConfigError(f"input_size must be a positive integer, got {self.input_size!r}")
        if self.input_size % 32:
            raise ConfigError(f"input_size {self.input_size} is not divisible by 32")
        if not (0 < self.channel_scale <= 1):
            raise ConfigError(f"channel_scale {self.channel_scale} outside (0, 1]")
        if self.stage_count < 1:
            raise ConfigError("stage_count must be >= 1")
        if self.upsample_mode not in ("bilinear", "nearest"):
            raise ConfigError(f"unknown upsample_mode {self.upsample_mode!r}")
        if self.bn_eps < 0:
            raise ConfigError("bn_eps must be non-negative")

    def channels(self, nominal):
        """Scale a nominal channel count, rounding half up and never below one."""
        return max(1, math.floor(nominal * self.channel_scale + Fraction(1, 2)))

    @property
    def output_stride(self):
        return 4 if self.variant == "nads_net" else 8

    @property
    def output_size(self):
        return self.input_size // self.output_stride

    def to_dict(self):
        return {
            "variant": self.variant,
            "input_size": self.input_size,
            "channel_scale": str(self.channel_scale),
            "topology": self.topology.to_dict(),
            "stage_count": self.stage_count,
            "upsample_mode": self.upsample_mode,
            "fpn_channels": self.fpn_channels,
            "segmentation_channels": self.segmentation_channels,
            "head_channels": self.head_channels,
            "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "topology" in d:
            d["topology"] = SkeletonTopology.from_dict(d["topology"])
        if "channel_scale" in d:
            d["channel_scale"] = Fraction(str(d["channel_scale"]))
        return cls(**d)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    op: str
    inputs: tuple = ()
    kernel: int = 0
    stride: int = 1
    padding: str = "same"
    in_channels: int = 0
    out_channels: int = 0
    bias: bool = False
    factor: int = 1
    mode: str = "bilinear"

    def param_count(self):
        if self.op == "conv":
            n = self.kernel * self.kernel * self.in_channels * self.out_channels
            return n + (self.out_channels if self.bias else 0)
        if self.op == "bn":
            # scale and shift only; running statistics are not trainable
            return 2 * self.out_channels
        return 0


@dataclass
class Graph:
    config: ArchitectureConfig
    layers: list
    weights: dict
    outputs: dict
    seed: int = 0
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._index = {layer.name: i for i, layer in enumerate(self.layers)}

    def layer(self, name):
        return self.layers[self._index[name]]

    def __len__(self):
        return len(self.layers)

    def validate(self):
        """Check edge ordering and weight shapes; raises ShapeError on the first violation."""
        seen = {}
        for layer in self.layers:
            if layer.op not in OPS:
                raise ShapeError(f"unknown op {layer.op!r} in layer {layer.name!r}")
            if layer.name in seen:
                raise ShapeError(f"duplicate layer name {layer.name!r}")
            for src in layer.inputs:
                if src not in seen:
                    raise ShapeError(f"layer {layer.name!r} reads {src!r} which is not an earlier layer")
            if layer.op == "conv":
                w = self.weights[layer.name]
                shape = (layer.kernel, layer.kernel, layer.in_channels, layer.out_channels)
                if w["kernel"].shape != shape:
                    raise ShapeError(f"layer {layer.name!r} kernel {w['kernel'].shape} != {shape}")
                if layer.bias != ("bias" in w):
                    raise ShapeError(f"layer {layer.name!r} bias flag disagrees with weights")
            elif layer.op == "bn":
                for key in ("scale", "shift", "mean", "var"):
                    if self.weights[layer.name][key].shape != (layer.out_channels,):
                        raise ShapeError(f"layer {layer.name!r} {key} has wrong length")
            seen[layer.name] = layer
        return self


class _Builder:
    def __init__(self, config, rng, init):
        self.config = config
        self.rng = rng
        self.init = init
        self.layers = []
        self.weights = {}
        self.channels = {}

    def _append(self, spec, channels):
        self.layers.append(spec)
        self.channels[spec.name] = channels
        return spec.name

    def input(self, channels=3):
        return self._append(LayerSpec("input", "input", out_channels=channels), channels)

    def conv(self, name, src, cout, k, stride=1, bias=True, bn=False, act="relu"):
        cin = self.channels[src]
        spec = LayerSpec(
            name, "conv", (src,), kernel=k, stride=stride, in_channels=cin, out_channels=cout, bias=bias
        )
        if self.init == "none":
            kernel = np.broadcast_to(K.DTYPE(0), (k, k, cin, cout))
        elif self.init == "zeros":
            kernel = np.zeros((k, k, cin, cout), dtype=K.DTYPE)
        else:
            kernel = K.he_normal(self.rng, (k, k, cin, cout), fan_in=k * k * cin)
        w = {"kernel": kernel}
        if bias:
            w["bias"] = np.zeros(cout, dtype=K.DTYPE)
        self.weights[name] = w
        out = self._append(spec, cout)
        if bn:
            out = self.bn(name + "_bn", out)
        if act:
            out = self.act(name + "_" + act, out, act)
        return out

    def bn(self, name, src):
        c = self.channels[src]
        self.weights[name] = {
            "scale": np.ones(c, dtype=K.DTYPE),
            "shift": np.zeros(c, dtype=K.DTYPE),
            "mean": np.zeros(c, dtype=K.DTYPE),
            "var": np.ones(c, dtype=K.DTYPE),
        }
        return self._append(LayerSpec(name, "bn", (src,), in_channels=c, out_channels=c), c)

    def act(self, name, src, kind):
        c = self.channels[src]
        return self._append(LayerSpec(name, kind, (src,), in_channels=c, out_channels=c), c)

    def maxpool(self, name, src, k, stride):
        c = self.channels[src]
        return self._append(
            LayerSpec(name, "maxpool", (src,), kernel=k, stride=stride, in_channels=c, out_channels=c), c
        )

    def add(self, name, a, b):
        c = self.channels[a]
        if self.channels[b] != c:
            raise ShapeError(f"layer {name!r} adds {c} and {self.channels[b]} channels")
        return self._append(LayerSpec(name, "add", (a, b), in_channels=c, out_channels=c), c)

    def concat(self, name, srcs):
        c = sum(self.channels[s] for s in srcs)
        return self._append(LayerSpec(name, "concat", tuple(srcs), in_channels=c, out_channels=c), c)

    def upsample(self, name, src, factor):
        c = self.channels[src]
        if factor == 1:
            return src
        return self._append(
            LayerSpec(
                name, "upsample", (src,), factor=factor, mode=self.config.upsample_mode,
                in_channels=c, out_channels=c,
            ),
            c,
        )


def _bottleneck(b, name, src, width, stride, project):
    cfg = b.config
    w, out_c = cfg.channels(width), cfg.channels(4 * width)
    x = b.conv(name + "_1", src, w, 1, bias=False, bn=True)
    x = b.conv(name + "_2", x, w, 3, stride=stride, bias=False, bn=True)
    x = b.conv(name + "_3", x, out_c, 1, bias=False, bn=True, act=None)
    if project:
        shortcut = b.conv(name + "_proj", src, out_c, 1, stride=stride, bias=False, bn=True, act=None)
    else:
        shortcut = src
    return b.act(name + "_out", b.add(name + "_add", x, shortcut), "relu")


def _build_nads_net(b):
    cfg = b.config
    x = b.input()
    x = b.conv("stem", x, cfg.channels(64), 7, stride=2, bias=False, bn=True)
    x = b.maxpool("stem_pool", x, 3, 2)
    pyramid = []
    for level, (blocks, width, stride) in enumerate(RESNET50_STAGES, start=2):
        for i in range(blocks):
            x = _bottleneck(b, f"c{level}_b{i}", x, width, stride if i == 0 else 1, project=i == 0)
        pyramid.append(x)

    fpn_c = cfg.channels(cfg.fpn_channels)
    seg_c = cfg.channels(cfg.segmentation_channels)
    laterals = [b.conv(f"lat{lvl}", c, fpn_c, 1, act=None) for lvl, c in zip(range(2, 6), pyramid)]
    merged = {5: laterals[3]}
    for lvl in (4, 3, 2):
        up = b.upsample(f"p{lvl + 1}_up", merged[lvl + 1], 2)
        merged[lvl] = b.add(f"p{lvl}", laterals[lvl - 2], up)

    fused = []
    for lvl in (2, 3, 4, 5):
        y = b.conv(f"p{lvl}_conv1", merged[lvl], seg_c, 3, bias=False, bn=True)
        y = b.conv(f"p{lvl}_conv2", y, seg_c, 3, bias=False, bn=True)
        fused.append(b.upsample(f"p{lvl}_to_s", y, 2 ** (lvl - 2)))
    features = b.concat("fused", fused)

    head_c = cfg.channels(cfg.head_channels)
    topo = cfg.topology
    outputs = {}
    for head, cout, act in (
        ("keypoint", topo.keypoint_channels, "sigmoid"),
        ("paf", topo.paf_channels, "tanh"),
        ("seatbelt", 1, "sigmoid"),
    ):
        y = b.conv(f"{head}_conv1", features, head_c, 3)
        y = b.conv(f"{head}_conv2", y, head_c, 3)
        y = b.conv(f"{head}_logits", y, cout, 1, act=None)
        outputs[head] = b.act(head, y, act)
    return outputs


def _build_baseline(b):
    cfg = b.config
    topo = cfg.topology
    x = b.input()
    n_conv, n_pool = 0, 0
    for item in VGG19_FIRST10:
        if item == "M":
            n_pool += 1
            x = b.maxpool(f"vgg_pool{n_pool}", x, 2, 2)
        else:
            n_conv += 1
            x = b.conv(f"vgg_conv{n_conv}", x, cfg.channels(item), 3)
    x = b.conv("cpm_conv1", x, cfg.channels(256), 3)
    features = b.conv("cpm_conv2", x, cfg.channels(128), 3)

    branches = (("paf", topo.paf_channels), ("keypoint", topo.keypoint_channels))
    prev = None
    for stage in range(1, cfg.stage_count + 1):
        src = features if prev is None else b.concat(f"s{stage}_in", [prev["paf"], prev["keypoint"], features])
        outs = {}
        for branch, cout in branches:
            y = src
            if stage == 1:
                for i in range(1, 4):
                    y = b.conv(f"s1_{branch}_conv{i}", y, cfg.channels(128), 3)
                y = b.conv(f"s1_{branch}_conv4", y, cfg.channels(512), 1)
                outs[branch] = b.conv(f"s1_{branch}_out", y, cout, 1, act=None)
            else:
                for i in range(1, 6):
                    y = b.conv(f"s{stage}_{branch}_conv{i}", y, cfg.channels(128), 7)
                y = b.conv(f"s{stage}_{branch}_conv6", y, cfg.channels(128), 1)
                outs[branch] = b.conv(f"s{stage}_{branch}_out", y, cout, 1, act=None)
        prev = outs
    return {
        "keypoint": b.act("keypoint", prev["keypoint"], "sigmoid"),
        "paf": b.act("paf", prev["paf"], "tanh"),
    }


def build_graph(config=None, seed=0, init="he"):
    """Build and deterministically initialise the graph for ``config``.

    Convolution kernels are drawn He-normal (fan-in scaling) from a generator
    seeded with ``seed``, in layer order; biases and batch-norm shifts start at
    zero, batch-norm scales and running variances at one. ``init="zeros"``
    zeroes every kernel instead; ``init="none"`` backs kernels with read-only
    zero views that take no memory, for describing and counting large graphs.
    """
    config = config or ArchitectureConfig()
    if not isinstance(config, ArchitectureConfig):
        raise ConfigError(f"expected ArchitectureConfig, got {type(config).__name__}")
    config.validate()
    if init not in ("he", "zeros", "none"):
        raise ConfigError(f"unknown init {init!r}")
    b = _Builder(config, np.random.default_rng(seed), init)
    outputs = _build_nads_net(b) if config.variant == "nads_net" else _build_baseline(b)
    for w in b.weights.values():
        for arr in w.values():
            if arr.flags.writeable:
                arr.setflags(write=False)
    return Graph(config, b.layers, b.weights, outputs, seed=seed).validate()


@dataclass(frozen=True)
class HeadOutputs:
    keypoint_maps: np.ndarray
    paf_maps: np.ndarray
    seatbelt_map: np.ndarray = None

    @property
    def size(self):
        return self.keypoint_maps.shape[:2]


def _run_layer(layer, args, weights, eps):
    op = layer.op
    if op == "conv":
        return K.conv2d(args[0], weights["kernel"], weights.get("bias"), layer.stride, layer.padding, layer.name)
    if op == "bn":
        return K.batchnorm_infer(args[0], weights["scale"], weights["shift"], weights["mean"], weights["var"],
                                 eps=eps, name=layer.name)
    if op == "relu":
        return K.relu(args[0])
    if op == "sigmoid":
        return K.sigmoid(args[0])
    if op == "tanh":
        return K.tanh(args[0])
    if op == "maxpool":
        return K.max_pool(args[0], layer.kernel, layer.stride, layer.padding, layer.name)
    if op == "add":
        return K.add(args[0], args[1], layer.name)
    if op == "concat":
        return K.concat_channels(args, layer.name)
    if op == "upsample":
        return K.bilinear_upsample(args[0], layer.factor, layer.mode, layer.name)
    raise ShapeError(f"cannot execute op {op!r} in layer {layer.name!r}")


def forward(graph, x):
    """Run one ``(input_size, input_size, 3)`` image through ``graph``."""
    cfg = graph.config
    x = K.as_tensor(x, "input")
    expected = (cfg.input_size, cfg.input_size, 3)
    if x.shape != expected:
        raise ShapeError(f"input shape {x.shape} != {expected}")
    wanted = set(graph.outputs.values())
    last_use = {}
    for i, layer in enumerate(graph.layers):
        for src in layer.inputs:
            last_use[src] = i
    values = {}
    for i, layer in enumerate(graph.layers):
        if layer.op == "input":
            values[layer.name] = x
            continue
        args = [values[s] for s in layer.inputs]
        values[layer.name] = _run_layer(layer, args, graph.weights.get(layer.name), cfg.bn_eps)
        for src in layer.inputs:
            if last_use[src] == i and src not in wanted:
                del values[src]
    out = {k: values[v] for k, v in graph.outputs.items()}
    return HeadOutputs(out["keypoint"], out["paf"], out.get("seatbelt"))


def count_parameters(graph):
    """Return ``(per_layer, total)`` where ``per_layer`` lists ``(name, op, count)``."""
    per_layer = [(layer.name, layer.op, layer.param_count()) for layer in graph.layers]
    return per_layer, sum(c for _, _, c in per_layer)


def layer_table(graph):
    """Plain-text layer table, one layer per line."""
    lines = [f"{'name':<22} {'op':<9} {'kernel':>6} {'stride':>6} {'channels':>13} {'params':>12}"]
    for layer in graph.layers:
        kernel = f"{layer.kernel}x{layer.kernel}" if layer.kernel else "-"
        chans = f"{layer.in_channels}->{layer.out_channels}"
        lines.append(
            f"{layer.name:<22} {layer.op:<9} {kernel:>6} {layer.stride:>6} {chans:>13} {layer.param_count():>12,}"
        )
    _, total = count_parameters(graph)
    lines.append(f"total parameters: {total:,}")
    return "\n".join(lines)
