"""Momentum SGD."""
from __future__ import annotations

import numpy as np

from .engine import Tensor


def sgd_step(params, grads, lr, momentum, velocity):
    """One in-place update: v <- momentum*v - lr*g; p <- p + v.

    ``params``, ``grads`` and ``velocity`` are parallel lists of arrays.
    Returns ``params`` for convenience.
    """
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v -= lr * g
        p += v
    return params


class SGD:
    """Momentum SGD over parameter groups, each with its own learning rate.

    A group with ``lr == 0`` is skipped entirely so frozen parameters stay
    bit-identical.
    """

    def __init__(self, groups: dict[str, list[Tensor]], lrs: dict[str, float], momentum=0.9):
        self.groups = groups
        self.lrs = dict(lrs)
        self.momentum = momentum
        self.velocity = {name: [np.zeros_like(p.data) for p in ps] for name, ps in groups.items()}

    def zero_grad(self):
        for ps in self.groups.values():
            for p in ps:
                p.zero_grad()

    def step(self):
        for name, ps in self.groups.items():
            lr = self.lrs[name]
            if lr == 0.0:
                continue
            sgd_step([p.data for p in ps], [p.ensure_grad() for p in ps], lr,
                     self.momentum, self.velocity[name])
