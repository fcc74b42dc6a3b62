"""Central finite-difference gradient checking shared by unit and acceptance tests."""
import numpy as np

from uavrelay.nnkit import ParamStore, Tensor


def randomize_biases(store: ParamStore, rng: np.random.Generator, scale: float = 0.1) -> None:
    """Give zero-initialized biases small random values.

    Zero biases put relu pre-activations exactly on the kink wherever the
    incoming signal is itself zero (e.g. after an earlier relu); there the
    analytic subgradient and central differences legitimately disagree at any
    step size, so checks perturb away from that measure-zero set.
    """
    for name in store.names():
        t = store[name]
        if np.all(t.data == 0.0):
            t.data = rng.normal(0.0, scale, size=t.data.shape).astype(t.data.dtype)


def numeric_grad(fn, t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar fn() w.r.t. every element of t.data."""
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    got = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn().data)
        flat[i] = orig - eps
        dn = float(fn().data)
        flat[i] = orig
        got[i] = (up - dn) / (2.0 * eps)
    return out


def _worst_rel_err(fn, tensors, eps: float) -> float:
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(fn, t, eps=eps)
        scale = np.maximum(1.0, np.maximum(np.abs(numeric), np.abs(analytic)))
        rel = np.abs(analytic - numeric) / scale
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst


def check_gradients(fn, tensors, eps: float = 1e-5, tol: float = 1e-4) -> float:
    """Compare each tensor's backward() grad to central finite differences.

    Relative error is |analytic - numeric| / max(1, |numeric|, |analytic|)
    elementwise. Central differences are invalid when a perturbation crosses a
    relu/abs kink, so a failing check retries with smaller steps; it must pass
    at some step size.
    """
    worst = np.inf
    for step in (eps, eps / 10.0, eps / 100.0):
        worst = _worst_rel_err(fn, tensors, step)
        if worst <= tol:
            return worst
    raise AssertionError(f"gradient mismatch: worst relative error {worst:.3e}")
