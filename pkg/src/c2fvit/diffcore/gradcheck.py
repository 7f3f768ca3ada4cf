"""Finite-difference verification of tape gradients."""
import numpy as np

from .tensor import Tensor, backprop, no_grad


def grad_check(fn, point, step=1e-5, samples=None, seed=0):
    """Compare tape gradients of ``fn`` against central differences.

    Parameters
    ----------
    fn : callable
        Maps one tensor per entry of ``point`` to a scalar tensor.
    point : array or sequence of arrays
        Where to evaluate.  The arrays are perturbed in place and restored.
    step : float
        Central-difference half-width.
    samples : int, optional
        Check only this many randomly chosen coordinates (over all inputs).

    Returns
    -------
    float
        ``max |analytic - numeric| / max(1, |numeric|)`` over checked coordinates.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    arrays = [point] if isinstance(point, np.ndarray) else list(point)
    arrays = [np.array(a, dtype=np.float64) if not isinstance(a, np.ndarray) else a for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: non-finite function value at the base point")
    grads = backprop(out, wrt=leaves)

    coords = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
    if samples is not None and samples < len(coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = leaves[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            fp = float(fn(*leaves).data.reshape(-1)[0])
            flat[j] = orig - step
            fm = float(fn(*leaves).data.reshape(-1)[0])
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * step)
            analytic = float(grads[leaves[i]].reshape(-1)[j])
            if not (np.isfinite(numeric) and np.isfinite(analytic)):
                raise FloatingPointError(f"grad_check: non-finite derivative at input {i}, coordinate {j}")
            worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst
