"""Check the recurrent cell's hand-written gradients against finite differences.

Everything the optimizer sees comes from ``objective``, so this is the one
place where a sign slip would silently ruin training. We build a tiny rollout
with a forced extraction order, then nudge every parameter both ways.
"""

import numpy as np

from mcc.cell import init_params
from mcc.dataset import ModalitySchema
from mcc.inference import unroll
from mcc.training import objective

rng = np.random.default_rng(0)

# three modalities with different sizes and prices
schema = ModalitySchema([2, 3, 1], [1.0, 0.5, 2.0])
params = init_params(hidden=4, input_size=schema.total_dim, n_modalities=3, seed=rng, scale=0.5)
X = rng.normal(size=(2, schema.total_dim))
y = np.array([1, -1])

# instance 0 reads all three blocks, instance 1 stops after two
sequences = np.array([[1, 0, 2], [2, 1, -1]])
targets = [np.array([1, 2]), np.array([0, 1]), np.array([2, -1]), np.array([-1, -1])]


def loss_and_grad(p, with_grad=True):
    u = unroll(p, X, schema, sequences=sequences)
    return objective(p, u, y, targets, schema.costs, lam=0.1, with_grad=with_grad)


loss, grads, parts = loss_and_grad(params)
print(f"loss {loss:.6f}  parts {parts}")

theta = params.flat().copy()
numeric = np.zeros_like(theta)
eps = 1e-5
for k in range(theta.size):
    for sign in (+1, -1):
        params.set_flat(theta + sign * eps * (np.arange(theta.size) == k))
        numeric[k] += sign * loss_and_grad(params, with_grad=False)[0] / (2 * eps)
params.set_flat(theta)

analytic = grads.flat()
rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
print(f"{theta.size} parameters, max relative error {rel.max():.2e}")

# per-block view: where is the gradient mass?
offset = 0
for name, value in grads.arrays().items():
    block = rel[offset:offset + value.size]
    print(f"  {name:5s} |g|={np.abs(value).sum():9.4f}  worst rel err {block.max():.1e}")
    offset += value.size
