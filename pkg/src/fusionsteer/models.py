"""NetConEmb and NetGated dual-branch RGB-D steering networks.

Both networks share the feature extractor: two symmetric conv branches (RGB
with 3 input channels, depth with 1), each stage being conv3x3 -> ReLU ->
maxpool2, followed by a flatten.  They differ in how the two flattened
vectors are fused:

* ``conemb``: concatenate (RGB first, depth second) and run a ReLU MLP
  ending in a single linear output.
* ``gated``: project each vector to an embedding, predict two scalar gates
  from the concatenated embeddings, sum the gate-weighted embeddings and run
  a ReLU MLP ending in a single linear output.  The gates are raw linear
  outputs with no squashing.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .tensor import DEFAULT_DTYPE, ShapeError, flatten_sample

CONEMB = "conemb"
GATED = "gated"


@dataclass(frozen=True)
class ModelConfig:
    fusion_kind: str
    image_size: int
    conv_widths: tuple[int, ...]
    fc_widths: tuple[int, ...]
    embed_dim: int = 0
    gate_hidden: int = 0
    profile: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "conv_widths", tuple(int(c) for c in self.conv_widths))
        object.__setattr__(self, "fc_widths", tuple(int(c) for c in self.fc_widths))
        self.validate()

    def validate(self) -> None:
        if self.fusion_kind not in (CONEMB, GATED):
            raise ValueError(f"unknown fusion kind {self.fusion_kind!r}")
        if not self.conv_widths or any(c < 1 for c in self.conv_widths):
            raise ValueError("conv_widths must be a non-empty list of positive ints")
        if self.image_size < 1 or self.image_size % (2 ** len(self.conv_widths)):
            raise ValueError(
                f"image_size {self.image_size} is not divisible by 2^{len(self.conv_widths)}")
        if any(d < 1 for d in self.fc_widths):
            raise ValueError("fc_widths must be positive")
        if self.fusion_kind == GATED and (self.embed_dim < 1 or self.gate_hidden < 1):
            raise ValueError("gated models need embed_dim and gate_hidden")

    @property
    def feature_size(self) -> int:
        return self.conv_widths[-1] * self.flat_side ** 2

    @property
    def flat_side(self) -> int:
        return self.image_size // 2 ** len(self.conv_widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


PROFILES = {
    "paper-conemb": ModelConfig(CONEMB, 240, (16, 32, 64, 64), (2880, 288, 32), profile="paper-conemb"),
    "paper-gated": ModelConfig(GATED, 240, (16, 32, 32, 32), (720, 32), embed_dim=1440, gate_hidden=64,
                               profile="paper-gated"),
    "tiny-conemb": ModelConfig(CONEMB, 48, (4, 8, 8, 8), (144, 32, 16), profile="tiny-conemb"),
    "tiny-gated": ModelConfig(GATED, 48, (4, 8, 8, 8), (32, 16), embed_dim=96, gate_hidden=16,
                              profile="tiny-gated"),
}


def get_profile(model: str, profile: str) -> ModelConfig:
    key = f"{profile}-{model}"
    if key not in PROFILES:
        raise KeyError(f"unknown profile {key!r}; choose from {sorted(PROFILES)}")
    return PROFILES[key]


def layer_specs(config: ModelConfig) -> "OrderedDict[str, tuple]":
    """Ordered ``name -> ("conv", c_in, c_out) | ("fc", d_in, d_out)``.

    This order is the parameter order used everywhere (checkpoints included).
    """
    specs: OrderedDict[str, tuple] = OrderedDict()
    for branch, c0 in (("rgb", 3), ("depth", 1)):
        c_in = c0
        for i, c_out in enumerate(config.conv_widths):
            specs[f"{branch}.conv{i}"] = ("conv", c_in, c_out)
            c_in = c_out
    feat = config.feature_size
    if config.fusion_kind == CONEMB:
        d = 2 * feat
        for i, width in enumerate(config.fc_widths):
            specs[f"head.fc{i}"] = ("fc", d, width)
            d = width
        specs["head.out"] = ("fc", d, 1)
    else:
        e = config.embed_dim
        specs["embed_rgb"] = ("fc", feat, e)
        specs["embed_depth"] = ("fc", feat, e)
        specs["gate.fc0"] = ("fc", 2 * e, config.gate_hidden)
        specs["gate.out"] = ("fc", config.gate_hidden, 2)
        d = e
        for i, width in enumerate(config.fc_widths):
            specs[f"post.fc{i}"] = ("fc", d, width)
            d = width
        specs["post.out"] = ("fc", d, 1)
    return specs


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    for name, (kind, a, b) in layer_specs(config).items():
        shapes[f"{name}.weight"] = (b, a, 3, 3) if kind == "conv" else (b, a)
        shapes[f"{name}.bias"] = (b,)
    return shapes


@dataclass
class GateRecord:
    w_rgb: np.ndarray
    w_depth: np.ndarray

    @property
    def mean_rgb(self) -> float:
        return float(np.mean(self.w_rgb))

    @property
    def mean_depth(self) -> float:
        return float(np.mean(self.w_depth))


@dataclass
class ForwardCache:
    model_version: int
    acts: dict = field(default_factory=dict)


class FusionModel:
    def __init__(self, config: ModelConfig, dtype=DEFAULT_DTYPE):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.layers: OrderedDict[str, L.Conv2dLayer | L.FcLayer] = OrderedDict()
        for name, (kind, a, b) in layer_specs(config).items():
            self.layers[name] = L.Conv2dLayer(a, b, dtype) if kind == "conv" else L.FcLayer(a, b, dtype)
        self._version = 0

    # -- parameters -------------------------------------------------------
    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        params: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, layer in self.layers.items():
            params[f"{name}.weight"] = layer.weight
            params[f"{name}.bias"] = layer.bias
        return params

    def load_parameters(self, params: dict) -> None:
        own = self.parameters()
        if set(own) != set(params):
            missing, extra = set(own) - set(params), set(params) - set(own)
            raise KeyError(f"parameter names differ (missing {sorted(missing)}, unexpected {sorted(extra)})")
        for name, arr in own.items():
            src = np.asarray(params[name])
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: expected {arr.shape}, got {src.shape}")
            arr[...] = src
        self.touch()

    def touch(self) -> None:
        """Mark parameters as changed; invalidates outstanding forward caches."""
        self._version += 1

    def astype(self, dtype) -> "FusionModel":
        other = FusionModel(self.config, dtype)
        for name, arr in other.parameters().items():
            arr[...] = self.parameters()[name]
        return other

    # -- forward / backward ----------------------------------------------
    def _branch_forward(self, prefix: str, x: np.ndarray, acts: dict) -> np.ndarray:
        for i in range(len(self.config.conv_widths)):
            name = f"{prefix}.conv{i}"
            pre = L.conv2d_forward(self.layers[name], x)
            act = L.relu_forward(pre)
            pooled, idx = L.maxpool2_forward(act)
            acts[name] = (x, pre, idx)
            x = pooled
        return flatten_sample(x)

    def _branch_backward(self, prefix: str, grad_flat: np.ndarray, acts: dict, grads: dict) -> None:
        n = grad_flat.shape[0]
        side = self.config.flat_side
        g = grad_flat.reshape(n, self.config.conv_widths[-1], side, side)
        for i in reversed(range(len(self.config.conv_widths))):
            name = f"{prefix}.conv{i}"
            x, pre, idx = acts[name]
            g = L.maxpool2_backward(idx, g)
            g = L.relu_backward(pre, g)
            lg = L.conv2d_backward(self.layers[name], x, g)
            grads[f"{name}.weight"], grads[f"{name}.bias"] = lg.grad_weight, lg.grad_bias
            g = lg.grad_input

    def _mlp_forward(self, names: list[str], x: np.ndarray, acts: dict) -> np.ndarray:
        # ReLU after every layer except the last
        for k, name in enumerate(names):
            y = L.fc_forward(self.layers[name], x)
            acts[name] = (x, y)
            x = L.relu_forward(y) if k < len(names) - 1 else y
        return x

    def _mlp_backward(self, names: list[str], g: np.ndarray, acts: dict, grads: dict) -> np.ndarray:
        for k in reversed(range(len(names))):
            name = names[k]
            x, y = acts[name]
            if k < len(names) - 1:
                g = L.relu_backward(y, g)
            lg = L.fc_backward(self.layers[name], x, g)
            grads[f"{name}.weight"], grads[f"{name}.bias"] = lg.grad_weight, lg.grad_bias
            g = lg.grad_input
        return g

    def _head_names(self, prefix: str) -> list[str]:
        return [f"{prefix}.fc{i}" for i in range(len(self.config.fc_widths))] + [f"{prefix}.out"]

    def _check_inputs(self, rgb: np.ndarray, depth: np.ndarray) -> None:
        s = self.config.image_size
        if rgb.ndim != 4 or rgb.shape[1:] != (3, s, s):
            raise ShapeError(f"rgb must be [N,3,{s},{s}], got {rgb.shape}")
        if depth.ndim != 4 or depth.shape[1:] != (1, s, s):
            raise ShapeError(f"depth must be [N,1,{s},{s}], got {depth.shape}")
        if rgb.shape[0] != depth.shape[0]:
            raise ShapeError(f"batch sizes differ: {rgb.shape[0]} vs {depth.shape[0]}")

    def forward(self, rgb: np.ndarray, depth: np.ndarray, record_gates: bool = False):
        """Returns ``(omega [N,1], GateRecord or None, ForwardCache)``."""
        self._check_inputs(rgb, depth)
        rgb = np.ascontiguousarray(rgb, dtype=self.dtype)
        depth = np.ascontiguousarray(depth, dtype=self.dtype)
        cache = ForwardCache(self._version)
        acts = cache.acts
        f_rgb = self._branch_forward("rgb", rgb, acts)
        f_depth = self._branch_forward("depth", depth, acts)
        gates = None
        if self.config.fusion_kind == CONEMB:
            fused = L.concat_forward(f_rgb, f_depth)
            omega = self._mlp_forward(self._head_names("head"), fused, acts)
        else:
            pre_rgb = L.fc_forward(self.layers["embed_rgb"], f_rgb)
            pre_depth = L.fc_forward(self.layers["embed_depth"], f_depth)
            e_rgb, e_depth = L.relu_forward(pre_rgb), L.relu_forward(pre_depth)
            acts["embed"] = (f_rgb, pre_rgb, e_rgb, f_depth, pre_depth, e_depth)
            w = self._mlp_forward(["gate.fc0", "gate.out"], L.concat_forward(e_rgb, e_depth), acts)
            w_rgb, w_depth = w[:, :1], w[:, 1:2]
            acts["gates"] = (w_rgb, w_depth)
            e_gated = w_rgb * e_rgb + w_depth * e_depth
            omega = self._mlp_forward(self._head_names("post"), e_gated, acts)
            if record_gates:
                gates = GateRecord(w_rgb[:, 0].copy(), w_depth[:, 0].copy())
        return omega, gates, cache

    def backward(self, cache: ForwardCache, grad_omega: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        """Gradients of every parameter given dLoss/domega, in ``parameters()`` order."""
        if cache.model_version != self._version:
            raise RuntimeError("stale forward cache: parameters changed since the forward pass")
        acts = cache.acts
        grad_omega = np.asarray(grad_omega, dtype=self.dtype)
        grads: dict[str, np.ndarray] = {}
        feat = self.config.feature_size
        if self.config.fusion_kind == CONEMB:
            g = self._mlp_backward(self._head_names("head"), grad_omega, acts, grads)
            g_rgb, g_depth = L.concat_backward(g, feat)
        else:
            g_gated = self._mlp_backward(self._head_names("post"), grad_omega, acts, grads)
            f_rgb, pre_rgb, e_rgb, f_depth, pre_depth, e_depth = acts["embed"]
            w_rgb, w_depth = acts["gates"]
            g_w = np.concatenate([np.sum(g_gated * e_rgb, axis=1, keepdims=True),
                                  np.sum(g_gated * e_depth, axis=1, keepdims=True)], axis=1)
            g_fused = self._mlp_backward(["gate.fc0", "gate.out"], g_w, acts, grads)
            ge_rgb, ge_depth = L.concat_backward(g_fused, self.config.embed_dim)
            ge_rgb = ge_rgb + w_rgb * g_gated
            ge_depth = ge_depth + w_depth * g_gated
            lg = L.fc_backward(self.layers["embed_rgb"], f_rgb, L.relu_backward(pre_rgb, ge_rgb))
            grads["embed_rgb.weight"], grads["embed_rgb.bias"], g_rgb = lg.grad_weight, lg.grad_bias, lg.grad_input
            lg = L.fc_backward(self.layers["embed_depth"], f_depth, L.relu_backward(pre_depth, ge_depth))
            grads["embed_depth.weight"], grads["embed_depth.bias"], g_depth = lg.grad_weight, lg.grad_bias, lg.grad_input
        self._branch_backward("rgb", g_rgb, acts, grads)
        self._branch_backward("depth", g_depth, acts, grads)
        return OrderedDict((name, grads[name]) for name in self.parameters())

    def predict(self, rgb: np.ndarray, depth: np.ndarray) -> np.ndarray:
        return self.forward(rgb, depth)[0]


NEUTRAL_GATE = 0.5


def build_model(config: ModelConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> FusionModel:
    """He-normal hidden layers, Xavier-uniform output layer, zero biases.

    The gated model's gate output layer starts with zero weights and both
    biases at ``NEUTRAL_GATE``, so training begins from an even average of the
    two embeddings instead of two random, unbounded gate values.
    """
    model = FusionModel(config, dtype)
    last = next(reversed(model.layers))
    for name, layer in model.layers.items():
        L.init_parameters(rng, layer, output=(name == last))
    if config.fusion_kind == GATED:
        gate = model.layers["gate.out"]
        gate.weight[...] = 0
        gate.bias[...] = NEUTRAL_GATE
    return model


def count_parameters(model_or_config) -> int:
    if isinstance(model_or_config, FusionModel):
        return sum(int(p.size) for p in model_or_config.parameters().values())
    return sum(int(np.prod(s)) for s in parameter_shapes(model_or_config).values())


def count_flops(model_or_config) -> int:
    """Forward FLOPs per sample: 2 x multiply-adds of every conv and FC, plus the gate product and sum."""
    config = model_or_config.config if isinstance(model_or_config, FusionModel) else model_or_config
    total = 0
    for branch, c0 in (("rgb", 3), ("depth", 1)):
        side, c_in = config.image_size, c0
        for c_out in config.conv_widths:
            total += 2 * side * side * c_out * c_in * 9
            side //= 2
            c_in = c_out
    for name, (kind, a, b) in layer_specs(config).items():
        if kind == "fc":
            total += 2 * a * b
    if config.fusion_kind == GATED:
        total += 3 * config.embed_dim
    return total


MASKS = ("none", "rgb", "depth")


def mask_modality(rgb: np.ndarray, depth: np.ndarray, mask: str = "none"):
    """Replace the named (already normalized) modality by exact zeros."""
    if mask == "none":
        return rgb, depth
    if mask == "rgb":
        return np.zeros_like(rgb), depth
    if mask == "depth":
        return rgb, np.zeros_like(depth)
    raise ValueError(f"unknown mask {mask!r}; expected one of {MASKS}")
