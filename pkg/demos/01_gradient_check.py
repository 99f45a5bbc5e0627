"""
Checking the adversarial gradients
==================================

The saddle-point cost is the mean source regression error minus lambda times
the domain cross-entropy. Its gradient is assembled by a small reverse-mode
tape, so it is worth comparing against central finite differences.
"""
import numpy as np

from dannr.data import Dataset
from dannr.model import init_model, objective, objective_gradients

rng = np.random.default_rng(0)

# a handful of labeled source rows and unlabeled target rows
Xs = rng.uniform(0, 1, (10, 4))
ys = rng.uniform(0, 1, 10)
Xt = rng.uniform(0.3, 1.3, (10, 4))
source = Dataset(Xs, ys)

model = init_model(4, hidden=(5,), seed=1)
lam = 0.8
grads = objective_gradients(model, source, Xt, lam)

step = 1e-5
for name, p in model.parameters().items():
    fd = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        orig = p[i]
        p[i] = orig + step
        up = objective(model, source, Xt, lam)
        p[i] = orig - step
        down = objective(model, source, Xt, lam)
        p[i] = orig
        fd[i] = (up - down) / (2 * step)
    err = np.max(np.abs(grads[name] - fd) / np.maximum(1.0, np.abs(fd)))
    print(f"{name:12s} shape {str(p.shape):8s} max relative error {err:.2e}")

# the discriminator gradient carries the -lambda sign of the saddle point:
# the cost rewards a confused discriminator
print("sign check on d.bias:", np.sign(grads["d.bias"]))
