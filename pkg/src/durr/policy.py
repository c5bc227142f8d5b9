"""Stopping policies over restoration trajectories.

The learned policy unit scores "continue" for the current estimate; stopping
has value zero, so the greedy rule is to continue while that score is
positive. Also here: the signal/noise decorrelation rule and the oracle
peak selector used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import restorer as R
from . import tensorcore as tc
from .tensorcore import NetworkParams, Tensor

LSTM_HIDDEN = 32

# (name, kernel, stride, base width, link role); "tap" starts a skip, "add" closes it
POLICY_LAYERS = (
    ("conv1", 5, 1, 16, None),
    ("conv2", 3, 1, 16, "tap"),
    ("conv3", 3, 1, 16, None),
    ("conv4", 3, 1, 16, "add"),
    ("conv5", 3, 2, 32, "tap"),
    ("conv6", 3, 1, 32, None),
    ("conv7", 3, 1, 32, "add"),
    ("conv8", 3, 2, 64, "tap"),
    ("conv9", 3, 1, 64, None),
    ("conv10", 3, 1, 64, "add"),
)


@dataclass(frozen=True)
class PolicyArch:
    width_scale: float = 1.0
    hidden: int = LSTM_HIDDEN
    # off by default: the unit sees only the current estimate
    with_observation: bool = False

    def __post_init__(self):
        if not 0 < self.width_scale <= 1:
            raise ValueError(f"width_scale must be in (0, 1], got {self.width_scale}")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")

    def layers(self) -> list[dict]:
        cin = 2 if self.with_observation else 1
        out = []
        for name, k, s, base, link in POLICY_LAYERS:
            cout = max(1, int(round(base * self.width_scale)))
            out.append(dict(name=name, k=k, stride=s, cin=cin, cout=cout, padding=(k - 1) // 2, link=link))
            cin = cout
        return out

    def descriptor(self) -> dict:
        return {"unit": "policy", "width_scale": self.width_scale, "hidden": self.hidden,
                "with_observation": self.with_observation, "layers": self.layers()}


def arch_of(params: NetworkParams) -> PolicyArch:
    if params.arch.get("unit") != "policy":
        raise R.ShapeMismatch(f"not a policy unit: {params.arch.get('unit')!r}")
    a = params.arch
    return PolicyArch(a["width_scale"], a["hidden"], a["with_observation"])


def parameter_count(arch: PolicyArch) -> int:
    layers = arch.layers()
    conv = sum(L["cin"] * L["cout"] * L["k"] ** 2 + L["cout"] for L in layers)
    feat = layers[-1]["cout"]
    lstm = 4 * arch.hidden * (feat + arch.hidden) + 4 * arch.hidden
    return conv + lstm + arch.hidden + 1


def build_policy_unit(arch: PolicyArch = PolicyArch(), seed: int = 0, dtype=np.float32) -> NetworkParams:
    rng = np.random.default_rng(seed)
    entries = []
    for L in arch.layers():
        std = np.sqrt(2.0 / (L["cin"] * L["k"] ** 2))
        entries.append((f"{L['name']}.weight",
                        Tensor(rng.normal(0, std, (L["cout"], L["cin"], L["k"], L["k"])).astype(dtype))))
        entries.append((f"{L['name']}.bias", Tensor(np.zeros(L["cout"], dtype=dtype))))
    feat = arch.layers()[-1]["cout"]
    bound = 1.0 / np.sqrt(arch.hidden)
    entries.append(("lstm.weight", Tensor(rng.uniform(-bound, bound, (4 * arch.hidden, feat + arch.hidden))
                                          .astype(dtype))))
    entries.append(("lstm.bias", Tensor(np.zeros(4 * arch.hidden, dtype=dtype))))
    entries.append(("fc.weight", Tensor(rng.uniform(-bound, bound, (1, arch.hidden)).astype(dtype))))
    entries.append(("fc.bias", Tensor(np.zeros(1, dtype=dtype))))
    return NetworkParams(entries, arch.descriptor())


def features(x: Tensor, params: NetworkParams) -> Tensor:
    """Residual conv tower + global average pooling: (N, C, H, W) -> (N, F)."""
    h, link = x, None
    for L in params.arch["layers"]:
        name = L["name"]
        h = tc.conv2d(h, params[f"{name}.weight"], params[f"{name}.bias"], stride=L["stride"],
                      padding=L["padding"])
        if L["link"] == "add":
            h = tc.add(h, link)
        h = tc.activation(h, "relu")
        if L["link"] == "tap":
            link = h
    return tc.pool_gap(h)


def q_forward(x: Tensor, h: Tensor, c: Tensor, params: NetworkParams) -> tuple[Tensor, Tensor, Tensor]:
    """Batched Q(continue) for estimates ``x``: returns (q of shape (N, 1), h_next, c_next)."""
    feats = features(x, params)
    h_next, c_next = tc.lstm_step(feats, h, c, params["lstm.weight"], params["lstm.bias"])
    q = tc.dense(h_next, params["fc.weight"], params["fc.bias"])
    return q, h_next, c_next


@dataclass
class PolicyState:
    h: np.ndarray
    c: np.ndarray
    step_index: int = 0

    @classmethod
    def initial(cls, params: NetworkParams, batch: int = 1) -> "PolicyState":
        hidden = params.arch["hidden"]
        dtype = params["fc.weight"].dtype
        return cls(np.zeros((batch, hidden), dtype), np.zeros((batch, hidden), dtype), 0)


@dataclass
class StopDecision:
    action: str  # "continue" | "stop"
    q_continue: float
    step: int


def _policy_input(x_current: np.ndarray, x0: np.ndarray | None, params: NetworkParams) -> np.ndarray:
    dtype = params["fc.weight"].dtype
    planes = [x_current]
    if params.arch.get("with_observation"):
        if x0 is None:
            raise ValueError("this policy unit also needs the degraded observation")
        planes.append(x0)
    return np.stack(planes)[None].astype(dtype)


def policy_q_step(x_current: np.ndarray, state: PolicyState, params: NetworkParams,
                  x0: np.ndarray | None = None) -> tuple[float, PolicyState]:
    if state.h.shape[1] != params.arch["hidden"]:
        raise R.ShapeMismatch(f"state width {state.h.shape[1]} != policy hidden {params.arch['hidden']}")
    with tc.no_grad():
        q, h, c = q_forward(Tensor(_policy_input(x_current, x0, params)), Tensor(state.h), Tensor(state.c), params)
    return float(q.data[0, 0]), PolicyState(h.data, c.data, state.step_index + 1)


def policy_decide(x0: np.ndarray, restorer: NetworkParams, policy: NetworkParams, max_steps: int,
                  ground_truth: np.ndarray | None = None):
    """Unfold ``x0`` until Q(continue) <= 0 or ``max_steps`` is reached.

    Returns ``(restored, trajectory, n)`` where ``restored`` is the clamped state
    at the stopping step and ``trajectory.extras["q"]`` holds the scores seen.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    h, w = x0.shape
    dtype = restorer["head.weight"].dtype
    base = Tensor(R.pad_even(np.asarray(x0, dtype=dtype))[None, None])
    cur = base
    x = np.asarray(x0, dtype=np.float64)
    states, qs, decisions = [x], [], []
    pstate = PolicyState.initial(policy)
    n = 0
    while True:
        q, pstate = policy_q_step(x, pstate, policy, x0)
        qs.append(q)
        if q > 0 and n < max_steps:
            decisions.append(StopDecision("continue", q, n))
            with tc.no_grad():
                cur = R.unfold_step(cur, base, restorer)
            x = R._on_input(states[0], cur.data, base.data)
            states.append(x)
            n += 1
        else:
            decisions.append(StopDecision("stop", q, n))
            break
    psnr = None
    if ground_truth is not None:
        from .degradation.metrics import metric_psnr

        psnr = [metric_psnr(np.clip(s, 0, 1), ground_truth) for s in states]
    traj = R.Trajectory(states, psnr, {"q": qs, "decisions": decisions})
    return np.clip(x, 0.0, 1.0), traj, n


# ---------------------------------------------------------------- handcrafted / oracle rules

def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0:
        return 0.0
    return float(np.dot(a, b) / den)


def decorrelation_stop_index(traj: R.Trajectory) -> int:
    """Step n >= 1 minimising |corr(X_0 - X_n, X_n)|; earliest on ties."""
    if len(traj.states) < 2:
        raise ValueError("decorrelation needs a trajectory with at least two states")
    x0 = np.asarray(traj.states[0], dtype=np.float64)
    scores = [abs(_pearson(x0 - s, s)) for s in traj.states[1:]]
    return 1 + int(np.argmin(scores))


def oracle_peak_index(traj: R.Trajectory) -> int:
    if traj.psnr is None:
        raise ValueError("oracle stopping needs per-step PSNR (ground truth)")
    return int(np.argmax(traj.psnr))
