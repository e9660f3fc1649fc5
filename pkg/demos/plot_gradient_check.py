"""
Checking backpropagation with finite differences
================================================

Central differences against the tape for a full forward pass: four patch
pairs with eight bands through backbone, attention, refine and classifier.
"""

import numpy as np

from emsnet import tensor as T
from emsnet.losses import total_loss
from emsnet.model import EmsNetConfig, forward, init_params

rng = np.random.default_rng(0)
cfg = EmsNetConfig.build(8)
params = init_params(cfg, rng)
x1, x2 = rng.random((4, 8, 5, 5)), rng.random((4, 8, 5, 5))
y = np.array([0, 0, 1, 1])


def loss():
    z, y_hat = forward(params, x1, x2, cfg)
    return total_loss(z, y_hat, y).graph


tape = loss().backward()
print("ops replayed:", len(tape))

h = 1e-5
for name, p in params.items():
    if not p.requires_grad:
        continue
    direction = rng.standard_normal(p.shape)
    direction /= np.linalg.norm(direction)
    analytic = float(np.sum(p.grad * direction))
    base = p.data
    with T.no_grad():
        p.data = base + h * direction
        up = loss().item()
        p.data = base - h * direction
        down = loss().item()
    p.data = base
    numeric = (up - down) / (2 * h)
    err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
    print(f"{name:34s} {analytic: .6e} {numeric: .6e}  rel {err:.1e}")
