"""Shared test helpers: finite differences and gradient comparison."""

import numpy as np


def finite_difference(loss_fn, params, h=1e-5):
    """Central finite differences of loss_fn(params) w.r.t. every entry.

    params is a list of arrays; returns matching arrays of numeric gradients.
    loss_fn must be a pure function of params (freeze any randomness).
    """
    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn(params)
            flat[j] = orig - h
            down = loss_fn(params)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, floor=1e-7):
    """Relative error <= rtol componentwise, with an absolute floor below
    which both gradients count as zero."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        assert a.shape == n.shape
        scale = np.maximum(np.abs(a), np.abs(n))
        mask = scale > floor
        if mask.any():
            rel = np.abs(a - n)[mask] / scale[mask]
            worst = max(worst, float(rel.max()))
    assert worst <= rtol, f"worst relative gradient error {worst:.3e} > {rtol}"
    return worst
