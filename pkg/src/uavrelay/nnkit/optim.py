"""Adaptive-moment parameter updates."""
from __future__ import annotations

import numpy as np

from .nn import ParamStore


class Adam:
    def __init__(self, store: ParamStore, lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.items()}

    def step(self) -> None:
        """One update from the gradients currently held by the store."""
        for name, p in self.store.items():
            if p.grad is None:
                raise RuntimeError(f"missing gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.store.version += 1

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"__adam_t": np.array([self.t], dtype=np.int64)}
        for k in self.m:
            out[f"__adam_m/{k}"] = self.m[k]
            out[f"__adam_v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["__adam_t"][0])
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"__adam_m/{k}"], dtype=self.m[k].dtype).copy()
            self.v[k] = np.asarray(arrays[f"__adam_v/{k}"], dtype=self.v[k].dtype).copy()


def sgd_adam_step(store: ParamStore, opt: Adam) -> ParamStore:
    """Functional wrapper: apply one Adam step and return the store."""
    opt.step()
    return store
