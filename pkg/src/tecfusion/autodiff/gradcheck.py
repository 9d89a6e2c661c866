"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..errors import InvalidArgumentError, NumericFailureError
from .tensor import Tensor, backward

ArrayLike = Union[np.ndarray, float]


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> list:
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    loss = fn(*leaves)
    if loss.value.size != 1:
        raise InvalidArgumentError(f"grad_check needs a scalar function, got shape {loss.shape}")
    backward(loss)
    return [np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad for leaf in leaves]


def grad_check(
    fn: Callable[..., Tensor],
    point: Union[ArrayLike, Sequence[ArrayLike]],
    step: float = 1e-5,
    coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare backward gradients of ``fn`` with central differences at ``point``.

    ``fn`` receives one Tensor per input array and must return a scalar Tensor.
    ``point`` is a single array or a sequence of arrays. The result is the
    maximum over coordinates of ``|a - n| / max(1, |a|, |n|)``.

    When ``coords`` is given, only that many coordinates (drawn with ``seed``)
    are perturbed; otherwise every coordinate is checked.
    """
    single = isinstance(point, (np.ndarray, float, int))
    inputs = [np.array(point, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in point]
    analytic = analytic_gradients(fn, inputs)

    def evaluate(arrays, where):
        value = fn(*[Tensor(a) for a in arrays]).value
        if not np.all(np.isfinite(value)):
            raise NumericFailureError(f"non-finite value while perturbing coordinate {where}", coordinate=where)
        return float(np.asarray(value).reshape(()))

    locations = [(k, i) for k, x in enumerate(inputs) for i in range(x.size)]
    if coords is not None and coords < len(locations):
        pick = np.random.default_rng(seed).choice(len(locations), size=coords, replace=False)
        locations = [locations[j] for j in sorted(pick)]

    worst = 0.0
    for k, i in locations:
        arrays = [x.copy() for x in inputs]
        flat = arrays[k].reshape(-1)
        base = flat[i]
        flat[i] = base + step
        f_plus = evaluate(arrays, (k, i))
        flat[i] = base - step
        f_minus = evaluate(arrays, (k, i))
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic[k].reshape(-1)[i])
        if not np.isfinite(a):
            raise NumericFailureError(f"non-finite analytic gradient at coordinate {(k, i)}", coordinate=(k, i))
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst
