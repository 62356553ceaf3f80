"""Adaptive-moment optimizer with linear learning-rate warm-up."""

from __future__ import annotations

import numpy as np

EPSILON = 1e-8


class Adam:
    """Adam with bias correction; the effective rate ramps linearly from 0
    to `learning_rate` over `warmup_steps` and then stays constant."""

    def __init__(
        self,
        params,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        warmup_steps: int = 0,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.warmup_steps = int(warmup_steps)
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def effective_rate(self) -> float:
        if self.warmup_steps <= 0:
            return self.learning_rate
        return self.learning_rate * min(1.0, self.step_count / self.warmup_steps)

    def step(self):
        self.step_count += 1
        lr = self.effective_rate()
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1**self.step_count)
            v_hat = self.v[i] / (1.0 - b2**self.step_count)
            p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + EPSILON)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "warmup_steps": self.warmup_steps,
            "step_count": self.step_count,
            "m": [m.tolist() for m in self.m],
            "v": [v.tolist() for v in self.v],
        }

    def load_state_dict(self, state: dict):
        self.learning_rate = float(state["learning_rate"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.warmup_steps = int(state["warmup_steps"])
        self.step_count = int(state["step_count"])
        self.m = [np.array(m, dtype=np.float64).reshape(p.value.shape) for m, p in zip(state["m"], self.params)]
        self.v = [np.array(v, dtype=np.float64).reshape(p.value.shape) for v, p in zip(state["v"], self.params)]
