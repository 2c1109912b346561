"""Adam optimizer over named parameter tensors with per-group learning
rates and decoupled weight decay."""

from __future__ import annotations

import numpy as np


class Adam:
    """Updates parameter arrays in place.

    ``param_specs`` is a list of (name, array, group); ``lr`` maps group
    name to learning rate. Weight decay is decoupled by default
    (applied directly to the parameter, not through the moments);
    ``decoupled=False`` folds it into the gradient instead.
    """

    def __init__(
        self,
        param_specs,
        lr: dict[str, float],
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decoupled: bool = True,
    ):
        self.params = {name: arr for name, arr, _ in param_specs}
        self.groups = {name: group for name, _, group in param_specs}
        self.lr = dict(lr)
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decoupled = decoupled
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr, _ in param_specs}
        self.v = {name: np.zeros_like(arr) for name, arr, _ in param_specs}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            lr = self.lr[self.groups[name]]
            if lr == 0.0:
                continue
            g = grads[name]
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decoupled:
                update = update + self.weight_decay * p
            p -= lr * update

    def state_arrays(self):
        """Optimizer state as flat (key, array) pairs for checkpointing."""
        for name, arr in self.m.items():
            yield f"adam.m.{name}", arr
        for name, arr in self.v.items():
            yield f"adam.v.{name}", arr

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.m:
            self.m[name][...] = arrays[f"adam.m.{name}"]
            self.v[name][...] = arrays[f"adam.v.{name}"]
