"""Finite-difference gradient checking shared by the autodiff tests."""
from typing import Callable, Sequence

import numpy as np

from latxgen.core.tensor import Tensor

STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12))


def numeric_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int) -> np.ndarray:
    """Central differences of the scalar ``fn`` with respect to ``arrays[index]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    for pos in np.ndindex(target.shape):
        original = target[pos]
        target[pos] = original + STEP
        plus = fn(*[Tensor(a) for a in base]).item()
        target[pos] = original - STEP
        minus = fn(*[Tensor(a) for a in base]).item()
        target[pos] = original
        grad[pos] = (plus - minus) / (2 * STEP)
    return grad


def check_gradients(fn: Callable[..., Tensor], *arrays: np.ndarray, tol: float = 1e-5) -> None:
    """Assert autodiff and central differences agree for every input of ``fn``."""
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        numeric = numeric_grad(fn, arrays, i)
        err = relative_error(analytic, numeric)
        assert err < tol, f"input {i}: relative gradient error {err:.2e}"
