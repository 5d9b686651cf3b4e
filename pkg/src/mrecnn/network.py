"""Dual-branch sub-networks: a whole-face branch and a region branch fused by
channel concatenation of their last pooling outputs, then a fully connected
classifier head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .rng import make_generator

FAMILIES = ("vgg16", "alexnet")
REGIONS = ("left_eye", "nose", "mouth")

# (channels, number of 3x3 convs) per stage; a 2x2 pool closes every stage
_VGG16_STAGES = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
# five 3x3 convs; pools after conv1, conv2 and conv5
_ALEXNET_CONVS = (96, 256, 384, 384, 256)
_ALEXNET_POOL_AFTER = (0, 1, 4)

DEFAULT_FC_WIDTHS = {"vgg16": (256,), "alexnet": (64,)}


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(1 << 20)
    return Fraction(str(x))


@dataclass(frozen=True)
class ArchSpec:
    family: str = "alexnet"
    input_size: int = 224
    channel_scale: Fraction = Fraction(1)
    fc_widths: tuple[int, ...] | None = None
    num_classes: int = 7
    in_channels: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        scale = _as_fraction(self.channel_scale)
        if not 0 < scale <= 1:
            raise ValueError(f"channel_scale must lie in (0, 1], got {scale}")
        object.__setattr__(self, "channel_scale", scale)
        fc = DEFAULT_FC_WIDTHS[self.family] if self.fc_widths is None else self.fc_widths
        fc = tuple(int(w) for w in fc)
        if any(w < 1 for w in fc):
            raise ValueError(f"fc_widths must be positive, got {fc}")
        object.__setattr__(self, "fc_widths", fc)
        if self.num_classes < 1 or self.in_channels < 1:
            raise ValueError("num_classes and in_channels must be positive")
        divisor = 2 ** self.pool_count
        if self.input_size < 1 or self.input_size % divisor:
            raise ValueError(
                f"input_size {self.input_size} must be a positive multiple of {divisor} "
                f"({self.pool_count} pooling stages in {self.family})")

    @property
    def pool_count(self) -> int:
        return 5 if self.family == "vgg16" else 3

    def scaled(self, channels: int) -> int:
        return max(1, math.ceil(channels * self.channel_scale))

    def branch_plan(self) -> list[tuple]:
        """Layer sequence of one branch: ``("conv", name, cin, cout)`` or ``("pool", name)``."""
        plan, cin = [], self.in_channels
        if self.family == "vgg16":
            for s, (ch, reps) in enumerate(_VGG16_STAGES, start=1):
                for r in range(1, reps + 1):
                    cout = self.scaled(ch)
                    plan.append(("conv", f"conv{s}_{r}", cin, cout))
                    cin = cout
                plan.append(("pool", f"pool{s}"))
        else:
            npool = 0
            for i, ch in enumerate(_ALEXNET_CONVS):
                cout = self.scaled(ch)
                plan.append(("conv", f"conv{i + 1}", cin, cout))
                cin = cout
                if i in _ALEXNET_POOL_AFTER:
                    npool += 1
                    plan.append(("pool", f"pool{npool}"))
        return plan

    @property
    def branch_channels(self) -> int:
        return [p for p in self.branch_plan() if p[0] == "conv"][-1][3]

    @property
    def branch_extent(self) -> int:
        return self.input_size // 2 ** self.pool_count

    @property
    def fused_width(self) -> int:
        return 2 * self.branch_channels * self.branch_extent ** 2

    def head_plan(self) -> list[tuple[str, int, int]]:
        widths = [self.fused_width, *self.fc_widths, self.num_classes]
        return [(f"fc{i + 1}", widths[i], widths[i + 1]) for i in range(len(widths) - 1)]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for branch in ("face", "region"):
            for step in self.branch_plan():
                if step[0] == "conv":
                    _, name, cin, cout = step
                    shapes[f"{branch}.{name}.weight"] = (cout, cin, 3, 3)
                    shapes[f"{branch}.{name}.bias"] = (cout,)
        for name, din, dout in self.head_plan():
            shapes[f"{name}.weight"] = (din, dout)
            shapes[f"{name}.bias"] = (dout,)
        return shapes


def parameter_count(spec: ArchSpec) -> int:
    return sum(math.prod(s) for s in spec.param_shapes().values())


@dataclass
class SubNetwork:
    spec: ArchSpec
    region: str
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    grads_ready: bool = field(default=False, repr=False)
    _cache: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.region not in REGIONS:
            raise ValueError(f"region must be one of {REGIONS}, got {self.region!r}")
        shapes = self.spec.param_shapes()
        if set(shapes) != set(self.params):
            missing = sorted(set(shapes) ^ set(self.params))
            raise ValueError(f"parameter names disagree with the architecture: {missing[:5]}")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape} != {shape}")
        if not self.grads:
            self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    # graph walking -----------------------------------------------------
    def layer_names(self) -> list[str]:
        names = [f"{b}.{step[1]}" for b in ("face", "region") for step in self.spec.branch_plan()]
        return names + [name for name, _, _ in self.spec.head_plan()]

    def count_layers(self, kind: str, branch: str = "face") -> int:
        """Count ``"conv"`` or ``"pool"`` layers in one branch."""
        prefix = f"{branch}.{kind}"
        return sum(1 for name in self.layer_names() if name.startswith(prefix))

    # forward / backward ------------------------------------------------
    def _check_inputs(self, face, region_img):
        face = T.as_tensor(face, 4, "face")
        region_img = T.as_tensor(region_img, 4, "region")
        if face.shape[0] != region_img.shape[0]:
            raise T.ShapeError(
                f"batch size mismatch: face {face.shape[0]}, region {region_img.shape[0]}")
        want = (self.spec.in_channels, self.spec.input_size, self.spec.input_size)
        for label, x in (("face", face), ("region", region_img)):
            if x.shape[1:] != want:
                raise T.ShapeError(f"{label} input must be N x {want}, got {x.shape}")
        return face, region_img

    def _branch_forward(self, branch, x, cache, taps):
        for step in self.spec.branch_plan():
            name = f"{branch}.{step[1]}"
            if step[0] == "conv":
                p = T.ConvParams(self.params[name + ".weight"], self.params[name + ".bias"], 1, 1)
                pre = T.conv2d_forward(x, p)
                if cache is not None:
                    cache.append(("conv", name, x, pre))
                x = T.relu(pre)
            else:
                out, idx = T.maxpool2x2_forward(x)
                if cache is not None:
                    cache.append(("pool", name, idx))
                x = out
            if taps is not None:
                taps[name] = x
        return x

    def forward(self, face, region_img, train_mode: bool = False, taps: dict | None = None):
        """Return logits of shape N x num_classes.

        Intermediate activations are cached for :meth:`backward` only when
        ``train_mode`` is set. If ``taps`` is a dict it receives every layer's
        output keyed by layer name.
        """
        face, region_img = self._check_inputs(face, region_img)
        face_cache = [] if train_mode else None
        region_cache = [] if train_mode else None
        a = self._branch_forward("face", face, face_cache, taps)
        b = self._branch_forward("region", region_img, region_cache, taps)
        fused = T.concat_channels(a, b)
        x = T.flatten(fused)
        head_cache = []
        plan = self.spec.head_plan()
        for i, (name, _, _) in enumerate(plan):
            pre = T.linear_forward(x, self.params[name + ".weight"], self.params[name + ".bias"])
            head_cache.append((name, x, pre))
            x = T.relu(pre) if i < len(plan) - 1 else pre
            if taps is not None:
                taps[name] = x
        if train_mode:
            self._cache = {
                "face": face_cache, "region": region_cache, "head": head_cache,
                "fused_shape": fused.shape, "split": a.shape[1],
            }
        else:
            self._cache = None
        return x

    def _branch_backward(self, cache, g):
        for entry in reversed(cache):
            if entry[0] == "pool":
                g = T.maxpool2x2_backward(entry[2], g)
            else:
                _, name, x, pre = entry
                g = T.relu_backward(pre, g)
                p = T.ConvParams(self.params[name + ".weight"], self.params[name + ".bias"], 1, 1)
                g, gw, gb = T.conv2d_backward(x, p, g)
                self.grads[name + ".weight"] = gw
                self.grads[name + ".bias"] = gb
        return g

    def backward(self, logit_grads) -> None:
        """Fill ``grads`` with d(loss)/d(param) given d(loss)/d(logits)."""
        if self._cache is None:
            raise RuntimeError("backward requires a preceding forward with train_mode=True")
        cache, self._cache = self._cache, None
        g = T.as_tensor(logit_grads, 2, "logit_grads")
        n = cache["head"][0][1].shape[0]
        if g.shape != (n, self.spec.num_classes):
            raise T.ShapeError(f"logit_grads shape {g.shape} != {(n, self.spec.num_classes)}")
        last = len(cache["head"]) - 1
        for i, (name, x, pre) in reversed(list(enumerate(cache["head"]))):
            if i < last:
                g = T.relu_backward(pre, g)
            g, gw, gb = T.linear_backward(x, self.params[name + ".weight"], g)
            self.grads[name + ".weight"] = gw
            self.grads[name + ".bias"] = gb
        g = g.reshape(cache["fused_shape"])
        ga, gb_ = T.split_channels(g, cache["split"])
        self._branch_backward(cache["face"], ga)
        self._branch_backward(cache["region"], gb_)
        self.grads_ready = True

    def copy(self) -> "SubNetwork":
        return SubNetwork(self.spec, self.region, {k: v.copy() for k, v in self.params.items()})


def build_subnetwork(spec: ArchSpec, region: str = "left_eye", seed: int = 0) -> SubNetwork:
    """Build a sub-network with Glorot-uniform weights and zero biases.

    The result is a pure function of ``(spec, region, seed)``.
    """
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}, got {region!r}")
    rng = make_generator(seed, REGIONS.index(region))
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=T.DTYPE)
            continue
        if len(shape) == 4:
            rf = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * rf, shape[0] * rf
        else:
            fan_in, fan_out = shape
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape).astype(T.DTYPE)
    return SubNetwork(spec, region, params)
