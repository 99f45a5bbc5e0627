"""Independent oracles shared by the test modules."""
import numpy as np


def central_differences(f, params, step=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of
    every array in ``params`` (perturbed in place and restored)."""
    out = {}
    for key, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[key] = g
    return out


def max_rel_error(analytic, numeric):
    worst = 0.0
    for key, fd in numeric.items():
        a = analytic[key]
        err = np.max(np.abs(a - fd) / np.maximum(1.0, np.abs(fd)))
        worst = max(worst, float(err))
    return worst
