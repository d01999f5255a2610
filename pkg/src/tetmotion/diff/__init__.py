"""Reverse-mode differentiation, small learnable layers and optimizers."""

from tetmotion.diff.layers import DenseLayer, GruCell, bind, gru_step
from tetmotion.diff.optim import OptimizerState, adam, optimizer_step, sgd
from tetmotion.diff.tape import Gradients, Node, Tape

__all__ = [
    "DenseLayer", "GruCell", "bind", "gru_step",
    "OptimizerState", "adam", "optimizer_step", "sgd",
    "Gradients", "Node", "Tape", "backward",
]


def backward(tape, root):
    return tape.backward(root)
