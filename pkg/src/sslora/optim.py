"""In-place SGD / AdamW over named numpy parameters, plus MultiStepLR."""

from __future__ import annotations

from bisect import bisect_right
from typing import Iterable, Mapping

import numpy as np


def multistep_lr(step: int, base_lr: float, milestones: Iterable[int], gamma: float) -> float:
    """Learning rate at 0-based ``step``: decayed once per milestone reached."""
    return base_lr * gamma ** bisect_right(sorted(milestones), step)


class SGD:
    def __init__(self, params: Mapping[str, np.ndarray]):
        self.params = params

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            self.params[name] -= lr * g

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, tensors: Mapping[str, np.ndarray], counts: Mapping[str, int]) -> None:
        pass

    def step_counts(self) -> dict[str, int]:
        return {}


class AdamW:
    """Adam with decoupled weight decay, per-parameter step counts.

    A parameter absent from ``grads`` is left untouched for that step (no
    moment decay, no weight decay), which keeps idle domain adapters frozen.
    ``decay`` lists the parameter names that receive weight decay; ``None``
    means all of them.
    """

    def __init__(self, params: Mapping[str, np.ndarray], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01,
                 decay: Iterable[str] | None = None):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay = set(params) if decay is None else set(decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = {k: 0 for k in params}

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            p = self.params[name]
            m, v = self.m[name], self.v[name]
            self.t[name] += 1
            t = self.t[name]
            if self.weight_decay and name in self.decay:
                p *= 1.0 - lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def step_counts(self) -> dict[str, int]:
        return dict(self.t)

    def load_state(self, tensors: Mapping[str, np.ndarray], counts: Mapping[str, int]) -> None:
        for name in self.params:
            self.m[name][...] = tensors[f"opt.m.{name}"]
            self.v[name][...] = tensors[f"opt.v.{name}"]
            self.t[name] = int(counts[name])
