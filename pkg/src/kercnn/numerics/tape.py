"""Reverse-mode gradient tape.

Operations in :mod:`kercnn.numerics.ops` accept plain ndarrays or
:class:`Var` objects.  When at least one argument is a ``Var`` bound to a
tape, the operation is recorded and :meth:`Tape.backward` can later replay
it; otherwise the operation simply returns an ndarray.
"""
import numpy as np


class Var:
    __slots__ = ("value", "tape", "grad", "requires_grad", "name")

    def __init__(self, value, tape, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self._records = []

    def __len__(self):
        return len(self._records)

    def var(self, value, name=None):
        """A leaf that should receive a gradient."""
        return Var(np.asarray(value), self, requires_grad=True, name=name)

    def bind(self, params):
        """Wrap a ``name -> array`` mapping as leaves of this tape."""
        return {k: self.var(v, name=k) for k, v in params.items()}

    def record(self, value, parents, backward):
        needs = any(isinstance(p, Var) and p.requires_grad for p in parents)
        out = Var(value, self, requires_grad=needs)
        if needs:
            self._records.append((out, parents, backward))
        return out

    def backward(self, out, seed=None):
        """Accumulate d(out)/d(leaf) into every participating leaf's ``grad``."""
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(out.value)
        out.grad = seed
        for node, parents, fn in reversed(self._records):
            if node.grad is None:
                continue
            grads = fn(node.grad)
            for p, g in zip(parents, grads):
                if g is None or not isinstance(p, Var) or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            if node is not out:
                node.grad = None

    @staticmethod
    def grads(bound):
        """Gradients of bound leaves; untouched leaves get zeros."""
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for k, v in bound.items()}
