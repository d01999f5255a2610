"""Reverse-mode differentiation over a linear record of array operations.

Nodes hold float64 numpy arrays.  Every operation appends one node whose
parents were appended earlier, so reversing the record is a valid
topological order and ``backward`` visits each node once.
"""

import numpy as np

from tetmotion.errors import ContractViolation


class Node:
    __slots__ = ("tape", "index", "value", "parents", "vjp", "name", "is_leaf")

    def __init__(self, tape, index, value, parents, vjp, name=None, is_leaf=False):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.is_leaf = is_leaf

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} #{self.index} shape={self.value.shape}>"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from tetmotion.diff import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from tetmotion.diff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from tetmotion.diff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from tetmotion.diff import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from tetmotion.diff import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from tetmotion.diff import ops
        return ops.div(other, self)

    def __neg__(self):
        from tetmotion.diff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from tetmotion.diff import ops
        return ops.matmul(self, other)


class Gradients:
    """Mapping from leaf nodes (or their names) to gradient arrays."""

    def __init__(self, leaves, grads):
        self._by_index = {}
        self._by_name = {}
        for leaf in leaves:
            g = grads.get(leaf.index)
            if g is None:
                g = np.zeros_like(leaf.value)
            self._by_index[leaf.index] = g
            if leaf.name is not None:
                self._by_name[leaf.name] = g

    def __getitem__(self, key):
        if isinstance(key, Node):
            return self._by_index[key.index]
        return self._by_name[key]

    def __contains__(self, key):
        if isinstance(key, Node):
            return key.index in self._by_index
        return key in self._by_name

    def named(self):
        return dict(self._by_name)


class Tape:
    def __init__(self):
        self.nodes = []
        self._leaves = []

    def __len__(self):
        return len(self.nodes)

    def _append(self, value, parents, vjp, name=None, is_leaf=False):
        value = np.asarray(value, dtype=np.float64)
        node = Node(self, len(self.nodes), value, tuple(parents), vjp, name, is_leaf)
        self.nodes.append(node)
        return node

    def variable(self, value, name=None):
        """A leaf whose gradient ``backward`` reports."""
        node = self._append(np.array(value, dtype=np.float64), (), None, name, is_leaf=True)
        self._leaves.append(node)
        return node

    def constant(self, value):
        return self._append(value, (), None)

    def record(self, value, parents, vjp):
        """Append an operation.  ``vjp(g)`` returns one cotangent per parent (or None)."""
        for p in parents:
            if p.tape is not self:
                raise ContractViolation("operands belong to a different tape")
        return self._append(value, parents, vjp)

    def lift(self, x):
        return x if isinstance(x, Node) else self.constant(x)

    def backward(self, root):
        if not isinstance(root, Node) or root.tape is not self or root.index >= len(self.nodes) \
                or self.nodes[root.index] is not root:
            raise ContractViolation("root is not a node of this tape")
        if root.value.size != 1:
            raise ContractViolation(f"root must be a scalar, got shape {root.value.shape}")
        grads = {root.index: np.ones_like(root.value)}
        for node in reversed(self.nodes[:root.index + 1]):
            g = grads.pop(node.index, None) if not node.is_leaf else grads.get(node.index)
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = np.asarray(pg, dtype=np.float64)
        return Gradients(self._leaves, grads)
