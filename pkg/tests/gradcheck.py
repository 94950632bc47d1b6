"""Central finite-difference gradient checking used across the test suite."""

import numpy as np

from slmprop.nn import GradTape, Tensor


def numeric_grads(forward, tensors, h=1e-5):
    """Central differences of the scalar `forward()` wrt each tensor's data."""
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = forward()
            flat[i] = keep - h
            fm = forward()
            flat[i] = keep
            gf[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_rel_error(analytic, numeric):
    err = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(n), 1e-3)
        err = max(err, float(np.max(np.abs(a - n) / denom)))
    return err


def check_gradients(build, tensors, h=1e-5, tol=1e-4, seed=0):
    """Assert analytic gradients of `build()` match central differences.

    `build` must construct the graph from the current tensor data and return
    the output Tensor; the scalar objective is a fixed random weighting of
    that output.
    """
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=build().data.shape)

    def forward():
        return float((build().data * weights).sum())

    with GradTape() as tape:
        out = build()
        loss = Tensor(0.0)
        # weighted sum via primitives to stay on-tape
        from slmprop.nn import mul, sum_all
        loss = sum_all(mul(out, Tensor(weights)))
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_grads(forward, tensors, h=h)
    err = max_rel_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: max relative error {err:.3e} >= {tol}"
    return err
