"""Stochastic gradient descent with classical momentum.

The velocity update is ``v = momentum * v + grad`` followed by
``p = p - lr * v``. Velocities are keyed by parameter name so an optimizer
can be rebuilt against reloaded parameters.
"""

from __future__ import annotations

import numpy as np


class MomentumSGD:
    """Plain SGD with momentum over a list of named parameter tensors."""

    def __init__(self, params, lr, momentum=0.9):
        names = [p.name for p in params]
        if None in names:
            raise ValueError("all optimizer parameters need names")
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names passed to optimizer")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """Apply one update; parameters with no gradient are left alone."""
        for p in self.params:
            if p.grad is None:
                continue
            v = self.momentum * self.velocity[p.name] + p.grad
            self.velocity[p.name] = v
            p.data = p.data - self.lr * v
