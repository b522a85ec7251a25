"""AdamW with decoupled weight decay and a one-cycle learning-rate policy."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 3e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * update + lr * self.weight_decay * p.data
            p._finite_ok = False  # mutated in place; revalidate on next use

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt.t": np.array([float(self.t)])}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["opt.t"][0])
        for k in self.params:
            self.m[k] = arrays[f"opt.m.{k}"].reshape(self.m[k].shape).copy()
            self.v[k] = arrays[f"opt.v.{k}"].reshape(self.v[k].shape).copy()


def one_cycle_lr(
    step: int,
    total_steps: int,
    lr_max: float,
    warmup_frac: float = 0.1,
    start_div: float = 25.0,
    final_div: float = 100.0,
) -> float:
    """Cosine ramp from lr_max/start_div to lr_max over the warmup fraction,
    then cosine decay to lr_max/final_div at the last step. Monotone up then
    down, peak exactly lr_max at the warmup boundary."""
    if total_steps < 1:
        raise ValueError("one_cycle_lr: total_steps must be >= 1")
    if not (0 <= step < total_steps):
        raise ValueError(f"one_cycle_lr: step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return lr_max
    start = lr_max / start_div
    final = lr_max / final_div
    last = total_steps - 1
    warm = max(1, int(np.floor(warmup_frac * last)))
    if step <= warm:
        frac = step / warm
        return start + (lr_max - start) * 0.5 * (1.0 - np.cos(np.pi * frac))
    frac = (step - warm) / (last - warm)
    return lr_max + (final - lr_max) * 0.5 * (1.0 - np.cos(np.pi * frac))
