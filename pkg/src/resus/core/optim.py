"""Adam updates and validation-based early stopping."""

from __future__ import annotations

from collections.abc import Mapping, MutableMapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Adam:
    """Adam over a dict of named numpy parameters, updated in place."""

    def __init__(
        self,
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(
        self, params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
    ) -> None:
        """Apply one update to every parameter that has a gradient."""
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for name, grad in grads.items():
            param = params[name]
            grad = np.asarray(grad, dtype=np.float64)
            m = self._m.setdefault(name, np.zeros(param.shape))
            v = self._v.setdefault(name, np.zeros(param.shape))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            params[name] = (param - update).astype(param.dtype)


@dataclass
class EarlyStopping:
    """Stop once the validation score fails to improve ``patience`` times in a row."""

    patience: int = 2
    max_epochs: int = 10
    best_score: float = float("-inf")
    best_epoch: int = -1
    best_state: Any = None
    bad_epochs: int = 0
    history: list[float] = field(default_factory=list)

    def update(self, epoch: int, score: float, state: Any) -> bool:
        """Record one epoch's score; return True when training should stop."""
        self.history.append(score)
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.best_state = state
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience or epoch + 1 >= self.max_epochs
