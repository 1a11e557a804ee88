"""Central finite-difference checks for the analytic gradients of ``core.ops``."""
from typing import Callable, Dict, Sequence

import numpy as np

from core.tensor import ComputationTape, Tensor, backward
from utils.logger import setup_logger

logger = setup_logger(__name__)


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Centered-difference gradient of a scalar ``loss_fn()`` w.r.t. every entry of ``tensor``.

    ``tensor.data`` is perturbed in place and restored entry by entry.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for j in range(flat.size):
        original = flat[j]
        flat[j] = original + h
        f_plus = loss_fn().item()
        flat[j] = original - h
        f_minus = loss_fn().item()
        flat[j] = original
        out[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8, floor: float = 1e-8) -> float:
    """Norm of the difference over the larger norm, or 0 when the difference is within ``atol``."""
    diff = np.linalg.norm(analytic - numeric)
    if diff <= atol:
        return 0.0
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-5,
) -> Dict[str, float]:
    """Compare tape gradients with central differences.

    Args:
        loss_fn: Builds a scalar loss from the current tensor values. It is
            called once under a tape and twice per entry without one.
        tensors: Trainable tensors to check.
        h: Finite-difference step.

    Returns:
        Mapping of tensor name (or ``#index``) to relative error.
    """
    tape = ComputationTape()
    with tape.recording():
        loss = loss_fn()
    backward(tape, loss, params=tensors)
    analytic = [t.grad.copy() for t in tensors]

    errors = {}
    for i, (t, g) in enumerate(zip(tensors, analytic)):
        key = t.name or f'#{i}'
        errors[key] = relative_error(g, numerical_gradient(loss_fn, t, h))
        logger.debug(f'gradcheck {key}: relative error {errors[key]:.2e}')
    return errors
