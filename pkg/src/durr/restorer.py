"""Restoration unit: a small U-Net predicting a residual, unrolled by forward Euler.

One step maps ``x_prev -> x_prev + f([x_prev, x0]; w)`` where ``x0`` is the
degraded observation. The step size is folded into ``f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .tensorcore import NetworkParams, Tensor
from .degradation.metrics import metric_psnr

PRELU_INIT = 0.25
HEAD_INIT_SCALE = 0.1

# (name, kind, kernel, dilation, stride, base width); width None means the 1-channel output
RESTORER_LAYERS = (
    ("conv1", "conv", 5, 1, 1, 32),
    ("conv2", "conv", 3, 1, 1, 32),
    ("down", "conv", 3, 1, 2, 64),
    ("conv4", "conv", 3, 1, 1, 64),
    ("dil2", "conv", 3, 2, 1, 64),
    ("dil4", "conv", 3, 4, 1, 64),
    ("up", "deconv", 4, 1, 2, 64),
    ("fuse", "conv", 3, 1, 1, 32),
    ("head", "conv", 5, 1, 1, None),
)
SKIP_FROM = "conv2"
SKIP_INTO = "fuse"


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RestorerArch:
    width_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.width_scale <= 1:
            raise ValueError(f"width_scale must be in (0, 1], got {self.width_scale}")

    def width(self, base: int | None) -> int:
        if base is None:
            return 1
        return max(1, int(round(base * self.width_scale)))

    def layers(self) -> list[dict]:
        """Concrete layer list with input/output channel counts and padding."""
        out, cin, skip_w = [], 2, None
        for name, kind, k, d, s, base in RESTORER_LAYERS:
            cout = self.width(base)
            if name == SKIP_INTO:
                cin += skip_w
            pad = 1 if kind == "deconv" else d * (k - 1) // 2
            out.append(dict(name=name, kind=kind, k=k, dilation=d, stride=s, cin=cin, cout=cout,
                            padding=pad, prelu=name != "head"))
            if name == SKIP_FROM:
                skip_w = cout
            cin = cout
        return out

    def descriptor(self) -> dict:
        return {"unit": "restorer", "width_scale": self.width_scale, "layers": self.layers()}


def parameter_count(arch: RestorerArch) -> int:
    """Closed-form count: weights + biases per layer, plus one PReLU slope per channel."""
    total = 0
    for L in arch.layers():
        total += L["cin"] * L["cout"] * L["k"] ** 2 + L["cout"]
        if L["prelu"]:
            total += L["cout"]
    return total


def build_restoration_unit(arch: RestorerArch = RestorerArch(), seed: int = 0,
                           dtype=np.float32) -> NetworkParams:
    rng = np.random.default_rng(seed)
    entries = []
    for L in arch.layers():
        k, cin, cout = L["k"], L["cin"], L["cout"]
        if L["kind"] == "deconv":
            # each output pixel sees (k/stride)^2 taps per input channel
            fan_in = cin * (k // L["stride"]) ** 2
            shape = (cin, cout, k, k)
        else:
            fan_in = cin * k * k
            shape = (cout, cin, k, k)
        std = np.sqrt(2.0 / fan_in)
        if L["name"] == "head":
            std *= HEAD_INIT_SCALE
        entries.append((f"{L['name']}.weight", Tensor(rng.normal(0.0, std, shape).astype(dtype))))
        entries.append((f"{L['name']}.bias", Tensor(np.zeros(cout, dtype=dtype))))
        if L["prelu"]:
            entries.append((f"{L['name']}.slope", Tensor(np.full(cout, PRELU_INIT, dtype=dtype))))
    return NetworkParams(entries, arch.descriptor())


def arch_of(params: NetworkParams) -> RestorerArch:
    if params.arch.get("unit") != "restorer":
        raise ShapeMismatch(f"not a restoration unit: {params.arch.get('unit')!r}")
    return RestorerArch(params.arch["width_scale"])


def residual(x_prev: Tensor, x0: Tensor, params: NetworkParams) -> Tensor:
    """Predicted update ``f([x_prev, x0]; w)`` for NCHW batches with even H, W."""
    if x_prev.shape != x0.shape:
        raise ShapeMismatch(f"x_prev {x_prev.shape} and x0 {x0.shape} differ")
    if x_prev.ndim != 4 or x_prev.shape[1] != 1:
        raise ShapeMismatch(f"expected (N, 1, H, W) batches, got {x_prev.shape}")
    if x_prev.shape[2] % 2 or x_prev.shape[3] % 2:
        raise ShapeMismatch(f"spatial dims must be even, got {x_prev.shape[2:]}")
    h = tc.concat([x_prev, x0], axis=1)
    skip = None
    for L in params.arch["layers"]:
        name = L["name"]
        w, b = params[f"{name}.weight"], params[f"{name}.bias"]
        if name == SKIP_INTO:
            h = tc.concat([h, skip], axis=1)
        if L["kind"] == "deconv":
            h = tc.conv2d_transpose(h, w, b, stride=L["stride"], padding=L["padding"])
        else:
            h = tc.conv2d(h, w, b, stride=L["stride"], dilation=L["dilation"], padding=L["padding"])
        if L["prelu"]:
            h = tc.activation(h, "prelu", params[f"{name}.slope"])
        if name == SKIP_FROM:
            skip = h
    return h


def unfold_step(x_prev: Tensor, x0: Tensor, params: NetworkParams) -> Tensor:
    return tc.add(x_prev, residual(x_prev, x0, params))


def unroll(x0: Tensor, params: NetworkParams, n_steps: int) -> list[Tensor]:
    """States ``[X_0, ..., X_n]`` of a batch, recorded for backprop through time."""
    states = [x0]
    for _ in range(n_steps):
        states.append(unfold_step(states[-1], x0, params))
    return states


# ---------------------------------------------------------------- image-level API

def pad_even(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")


def _on_input(x0: np.ndarray, cur: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Full-precision input plus the accumulated update, cropped to the input size."""
    h, w = x0.shape
    return x0 + (cur[0, 0, :h, :w].astype(np.float64) - base[0, 0, :h, :w])


@dataclass
class Trajectory:
    states: list[np.ndarray]
    psnr: list[float] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.states) - 1

    def __len__(self) -> int:
        return len(self.states)


def unfold_trajectory(x0: np.ndarray, params: NetworkParams, n_steps: int,
                      ground_truth: np.ndarray | None = None, step_hook=None) -> Trajectory:
    """Run ``n_steps`` restorer steps on a single 2-D image.

    Odd sizes are edge-padded to even and cropped back. States are not clamped.
    ``step_hook(n, state)`` is called after every state, including ``X_0``.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if ground_truth is not None and ground_truth.shape != x0.shape:
        raise ShapeMismatch(f"ground truth {ground_truth.shape} vs input {x0.shape}")
    h, w = x0.shape
    dtype = next(iter(params.entries.values())).dtype
    base = Tensor(pad_even(np.asarray(x0, dtype=dtype))[None, None])
    states = [np.asarray(x0, dtype=np.float64)]
    if step_hook:
        step_hook(0, states[0])
    cur = base
    with tc.no_grad():
        for n in range(1, n_steps + 1):
            cur = unfold_step(cur, base, params)
            states.append(_on_input(states[0], cur.data, base.data))
            if step_hook:
                step_hook(n, states[-1])
    psnr = None
    if ground_truth is not None:
        psnr = [metric_psnr(np.clip(s, 0, 1), ground_truth) for s in states]
    return Trajectory(states, psnr)
