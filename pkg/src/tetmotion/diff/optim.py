"""SGD with momentum and Adam with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np

from tetmotion.errors import InvalidArgument, NumericError

KINDS = ("sgd-momentum", "adam")


@dataclass
class OptimizerState:
    kind: str = "sgd-momentum"
    lr: float = 0.01
    momentum: float = 0.99
    weight_decay: float = 3e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")

    def hyperparameters(self):
        return {"kind": self.kind, "lr": self.lr, "momentum": self.momentum,
                "weight_decay": self.weight_decay, "betas": list(self.betas), "eps": self.eps,
                "step_count": self.step_count}


def sgd(lr=0.01, momentum=0.99, weight_decay=3e-5):
    return OptimizerState("sgd-momentum", lr=lr, momentum=momentum, weight_decay=weight_decay)


def adam(lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    return OptimizerState("adam", lr=lr, weight_decay=weight_decay, betas=tuple(betas), eps=eps,
                          momentum=0.0)


def optimizer_step(state, params, grads):
    """Return updated copies of ``params``; ``state`` buffers are updated in place."""
    for name, g in grads.items():
        if name not in params:
            raise InvalidArgument(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise InvalidArgument(f"{name}: gradient shape {np.shape(g)} != {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}", name=name)
    state.step_count += 1
    t = state.step_count
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if state.kind == "sgd-momentum":
            buf = state.buffers.get(name)
            d = g + state.weight_decay * p
            buf = d.copy() if buf is None else state.momentum * buf + d
            state.buffers[name] = buf
            out[name] = p - state.lr * buf
        else:
            b1, b2 = state.betas
            m, v = state.buffers.get(name, (np.zeros_like(p), np.zeros_like(p)))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            state.buffers[name] = (m, v)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps) \
                - state.lr * state.weight_decay * p
    return out


def buffer_arrays(state):
    """Flatten buffers for checkpointing."""
    out = {}
    for name, buf in sorted(state.buffers.items()):
        if state.kind == "adam":
            out[f"opt.m.{name}"], out[f"opt.v.{name}"] = buf
        else:
            out[f"opt.buf.{name}"] = buf
    return out


def restore_buffers(state, arrays):
    for key, arr in arrays.items():
        if not key.startswith("opt."):
            continue
        _, slot, name = key.split(".", 2)
        if slot == "buf":
            state.buffers[name] = arr
        else:
            m, v = state.buffers.get(name, (None, None))
            state.buffers[name] = (arr, v) if slot == "m" else (m, arr)
    return state
