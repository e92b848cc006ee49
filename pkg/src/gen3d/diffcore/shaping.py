"""Bridge between flat ParameterStore segments and shaped graph tensors."""

from __future__ import annotations

import numpy as np

from . import tape
from .params import GradientRecord


class ShapedParams:
    """Wraps a store's segments as (optionally trainable) shaped tensors.

    `layout` maps segment name -> shape; order of gradient records follows
    the store, not the layout.
    """

    def __init__(self, store, layout, trainable=True):
        self.store = store
        self.leaves = []
        self.t = {}
        for name in store.names:
            flat = (tape.variable if trainable else tape.constant)(store.segment(name))
            self.leaves.append(flat)
            shape = layout[name]
            self.t[name] = tape.reshape(flat, shape) if shape != flat.shape else flat

    def gradient_record(self, loss_tensor):
        grads = tape.grad(loss_tensor, self.leaves)
        return GradientRecord.from_store(self.store, [g.data for g in grads], loss_tensor.item())

    def zero_record(self, loss_value):
        return GradientRecord.from_store(
            self.store, [np.zeros_like(v) for v in self.store.values], loss_value
        )
