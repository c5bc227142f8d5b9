"""Adam and RMSprop, operating in place on :class:`NetworkParams`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradStore, NetworkParams, NonFiniteError, TensorError

ADAM_BETAS = (0.9, 0.999)
RMSPROP_ALPHA = 0.99
EPS = 1e-8


@dataclass
class OptState:
    method: str
    step: int = 0
    # adam: first/second moments; rmsprop: only "sq" is used
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat ``slot/name -> array`` view, used by checkpoints."""
        return {f"{slot}/{name}": arr for slot, d in self.slots.items() for name, arr in d.items()}

    @classmethod
    def from_arrays(cls, method: str, step: int, arrays: dict[str, np.ndarray]) -> "OptState":
        st = cls(method, step)
        for key, arr in arrays.items():
            slot, name = key.split("/", 1)
            st.slots.setdefault(slot, {})[name] = arr
        return st


def optimizer_step(params: NetworkParams, grads: GradStore, state: OptState, lr: float) -> OptState:
    """Apply one update of ``state.method`` to ``params`` (in place) and return ``state``."""
    if not lr > 0:
        raise TensorError(f"learning rate must be positive, got {lr}")
    if set(grads) != set(params.names()):
        raise TensorError("gradient keys do not match parameter names")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of {name}")

    state.step += 1
    t = state.step
    if state.method == "adam":
        b1, b2 = ADAM_BETAS
        m_all = state.slots.setdefault("m", {})
        v_all = state.slots.setdefault("v", {})
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in params.items():
            g = grads[name]
            m = m_all.get(name)
            if m is None:
                m = m_all[name] = np.zeros_like(p.data)
                v_all[name] = np.zeros_like(p.data)
            v = v_all[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + EPS)).astype(p.dtype)
    elif state.method == "rmsprop":
        sq_all = state.slots.setdefault("sq", {})
        for name, p in params.items():
            g = grads[name]
            sq = sq_all.get(name)
            if sq is None:
                sq = sq_all[name] = np.zeros_like(p.data)
            sq *= RMSPROP_ALPHA
            sq += (1.0 - RMSPROP_ALPHA) * g * g
            p.data = p.data - (lr * g / (np.sqrt(sq) + EPS)).astype(p.dtype)
    else:
        raise TensorError(f"unknown optimizer {state.method!r}")
    return state
