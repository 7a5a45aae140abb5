"""Central finite-difference gradient oracle shared by the test modules."""

import numpy as np

from noisecast import tensor as T


def numeric_grad(fn, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar fn w.r.t. every element of x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn()
        flat[i] = orig - step
        fm = fn()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def check_gradients(build_loss, params: dict[str, np.ndarray], rtol: float = 1e-5,
                    step: float = 1e-4):
    """Assert analytic gradients of build_loss match finite differences.

    params maps name -> float64 array; build_loss receives
    {name: Tensor} and returns a scalar Tensor.
    """
    tensors = {k: T.Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = build_loss(tensors)
    T.backward(loss)

    def value():
        ts = {k: T.Tensor(v) for k, v in params.items()}
        return float(build_loss(ts).data)

    for name, arr in params.items():
        analytic = tensors[name].grad
        assert analytic is not None, f"no gradient reached {name}"
        num = numeric_grad(value, arr, step=step)
        # central differences carry O(step^2) truncation noise (~1e-8 for
        # unit-scale losses); the denominator floor turns the check into
        # a 1e-8 absolute bound for entries whose gradient is below 1e-3
        denom = np.maximum(np.abs(num), np.maximum(np.abs(analytic), 1e-3))
        rel = np.abs(analytic - num) / denom
        assert rel.max() < rtol, (
            f"gradient mismatch for {name}: max rel err {rel.max():.3g} "
            f"at {np.unravel_index(rel.argmax(), rel.shape)}"
        )
