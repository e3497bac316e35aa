"""Adaptive-moment optimizer with per-group learning rates."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor


class Adam:
    """Adam with bias correction; eps defaults low (1e-15) for hash tables.

    ``param_groups`` is a list of {"params": [Tensor...], "lr": float,
    "name": str}. Learning rates may be mutated between steps (schedules).
    Non-finite gradients abort with a diagnostic naming the offending group.
    """

    def __init__(
        self,
        param_groups: Sequence[dict],
        beta1: float = 0.9,
        beta2: float = 0.99,
        eps: float = 1e-15,
    ):
        self.groups = []
        for g in param_groups:
            self.groups.append(
                {
                    "params": list(g["params"]),
                    "lr": float(g["lr"]),
                    "name": g.get("name", f"group{len(self.groups)}"),
                }
            )
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [[np.zeros_like(p.data) for p in g["params"]] for g in self.groups]
        self._v = [[np.zeros_like(p.data) for p in g["params"]] for g in self.groups]

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self) -> None:
        """Apply one update from the gradients currently in ``.grad``.

        Parameters whose grad is None are skipped (their moments still decay
        nothing; step bias correction is shared). NaN/inf gradients raise.
        """
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for gi, group in enumerate(self.groups):
            lr = group["lr"]
            for pi, p in enumerate(group["params"]):
                if p.grad is None:
                    continue
                grad = p.grad
                if not np.all(np.isfinite(grad)):
                    bad = int(np.sum(~np.isfinite(grad)))
                    raise FloatingPointError(
                        f"non-finite gradient in group {group['name']!r} param {pi} "
                        f"shape {p.data.shape}: {bad} bad entries at step {t}"
                    )
                m = self._m[gi][pi]
                v = self._v[gi][pi]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * np.square(grad)
                m_hat = m / c1
                v_hat = v / c2
                p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict:
        tensors = {}
        for gi, group in enumerate(self.groups):
            for pi in range(len(group["params"])):
                tensors[f"m{gi}_{pi}"] = self._m[gi][pi].copy()
                tensors[f"v{gi}_{pi}"] = self._v[gi][pi].copy()
        return {
            "step_count": self.step_count,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "lrs": [g["lr"] for g in self.groups],
            "tensors": tensors,
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for gi, group in enumerate(self.groups):
            group["lr"] = float(state["lrs"][gi])
            for pi, p in enumerate(group["params"]):
                m = np.asarray(state["tensors"][f"m{gi}_{pi}"])
                v = np.asarray(state["tensors"][f"v{gi}_{pi}"])
                if m.shape != p.data.shape:
                    raise ValueError(f"optimizer state shape mismatch for group {gi} param {pi}")
                self._m[gi][pi] = m.astype(p.data.dtype).copy()
                self._v[gi][pi] = v.astype(p.data.dtype).copy()


def cosine_decay(base_lr: float, step: int, total_steps: int, floor_fraction: float = 0.1) -> float:
    """Cosine anneal from base_lr to floor_fraction * base_lr over total_steps."""
    if total_steps <= 0:
        return base_lr
    s = min(max(step, 0), total_steps) / total_steps
    lo = base_lr * floor_fraction
    return lo + (base_lr - lo) * 0.5 * (1.0 + float(np.cos(np.pi * s)))
