"""Named-parameter checkpoints in the shared container format."""

import numpy as np

from tetmotion.diff.optim import OptimizerState, buffer_arrays, restore_buffers
from tetmotion.errors import InvalidArgument
from tetmotion.io import FORMAT_VERSION, read_container, write_container


def save_checkpoint(path, params, optimizer=None, metadata=None):
    arrays = {f"param.{k}": np.asarray(v, dtype="<f8") for k, v in sorted(params.items())}
    header = {"kind": "checkpoint", "format_version": FORMAT_VERSION,
              "metadata": metadata or {}}
    if optimizer is not None:
        header["optimizer"] = optimizer.hyperparameters()
        arrays.update({k: np.asarray(v, dtype="<f8") for k, v in buffer_arrays(optimizer).items()})
    return write_container(path, header, arrays)


def load_checkpoint(path):
    """Return ``(params, optimizer_or_None, metadata)``."""
    header, arrays = read_container(path)
    if header.get("kind") != "checkpoint":
        raise InvalidArgument(f"{path}: not a checkpoint")
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    optimizer = None
    if "optimizer" in header:
        h = dict(header["optimizer"])
        step_count = h.pop("step_count")
        h["betas"] = tuple(h["betas"])
        optimizer = OptimizerState(**h)
        optimizer.step_count = step_count
        restore_buffers(optimizer, arrays)
    return params, optimizer, header.get("metadata", {})
