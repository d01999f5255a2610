"""Dense layers and a GRU cell on top of the tape.

Parameters live in plain numpy arrays.  A forward pass binds them to tape
leaves (see ``bind``) so gradients come back keyed by parameter name.
"""

from dataclasses import dataclass

import numpy as np

from tetmotion.diff import ops
from tetmotion.diff.tape import Tape
from tetmotion.errors import InvalidArgument

ACTIVATIONS = {
    "identity": lambda x: x,
    "relu": ops.relu,
    "tanh": ops.tanh,
}


def uniform_init(rng, n_out, n_in):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_out, n_in))


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @classmethod
    def create(cls, rng, n_in, n_out, activation="identity", zero=False):
        if activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {activation!r}")
        weight = np.zeros((n_out, n_in)) if zero else uniform_init(rng, n_out, n_in)
        return cls(weight, np.zeros(n_out), activation)

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def params(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def load(self, prefix, params):
        self.weight = params[f"{prefix}.weight"]
        self.bias = params[f"{prefix}.bias"]

    def forward(self, x, bound, prefix):
        if x.value.shape[-1] != self.n_in:
            raise InvalidArgument(f"{prefix}: expected {self.n_in} inputs, got {x.value.shape[-1]}")
        out = ops.linear(x, bound[f"{prefix}.weight"], bound[f"{prefix}.bias"])
        return ACTIVATIONS[self.activation](out)


@dataclass
class GruCell:
    """z = sigma(W_z [x, h] + b_z); r = sigma(W_r [x, h] + b_r);
    h~ = tanh(W_h [x, r*h] + b_h); h' = (1 - z) * h + z * h~."""

    w_z: np.ndarray  # (H, I + H)
    w_r: np.ndarray
    w_h: np.ndarray
    b_z: np.ndarray  # (H,)
    b_r: np.ndarray
    b_h: np.ndarray

    @classmethod
    def create(cls, rng, input_size, hidden_size):
        n = input_size + hidden_size
        return cls(
            uniform_init(rng, hidden_size, n),
            uniform_init(rng, hidden_size, n),
            uniform_init(rng, hidden_size, n),
            np.zeros(hidden_size), np.zeros(hidden_size), np.zeros(hidden_size),
        )

    @property
    def hidden_size(self):
        return self.w_z.shape[0]

    @property
    def input_size(self):
        return self.w_z.shape[1] - self.hidden_size

    _NAMES = ("w_z", "w_r", "w_h", "b_z", "b_r", "b_h")

    def params(self, prefix):
        return {f"{prefix}.{k}": getattr(self, k) for k in self._NAMES}

    def load(self, prefix, params):
        for k in self._NAMES:
            setattr(self, k, params[f"{prefix}.{k}"])

    def forward(self, x, h, bound, prefix):
        if x.value.shape[-1] != self.input_size or h.value.shape[-1] != self.hidden_size:
            raise InvalidArgument(
                f"{prefix}: expected input {self.input_size} and hidden {self.hidden_size}, "
                f"got {x.value.shape[-1]} and {h.value.shape[-1]}"
            )
        p = lambda k: bound[f"{prefix}.{k}"]  # noqa: E731
        xh = ops.concat([x, h], axis=-1)
        z = ops.sigmoid(ops.linear(xh, p("w_z"), p("b_z")))
        r = ops.sigmoid(ops.linear(xh, p("w_r"), p("b_r")))
        xrh = ops.concat([x, ops.mul(r, h)], axis=-1)
        cand = ops.tanh(ops.linear(xrh, p("w_h"), p("b_h")))
        return ops.add(ops.mul(ops.sub(1.0, z), h), ops.mul(z, cand))


def bind(tape, params, trainable=True):
    """Create one tape node per named parameter."""
    make = tape.variable if trainable else (lambda v, name=None: tape.constant(v))
    return {name: make(value, name=name) for name, value in params.items()}


def gru_step(cell, x, h):
    """Numeric GRU update for plain arrays."""
    tape = Tape()
    bound = bind(tape, cell.params("gru"), trainable=False)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if x.shape[0] != h.shape[0]:
        raise InvalidArgument("input and hidden batch sizes differ")
    out = cell.forward(tape.constant(x), tape.constant(h), bound, "gru")
    return out.value
