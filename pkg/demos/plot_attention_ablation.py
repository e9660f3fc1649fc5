"""
How much work the distill matrix saves
======================================

The efficient attention multiplies the CxC channel score matrix by a
C'xC distill matrix before the softmax, so only C' rows are normalised and
mixed with the values. With the identity in its place it is ordinary
self-attention.
"""

import numpy as np

from emsnet import tensor as T
from emsnet.ems import EmsConfig, emsa, init_ems, standard_attention
from emsnet.model import EmsNetConfig, forward, init_params
from emsnet.tensor import Tensor

rng = np.random.default_rng(0)
x1, x2 = rng.random((4, 16, 5, 5)), rng.random((4, 16, 5, 5))

for distill, ratio in (("learned", 1 / 8), ("identity", 1.0)):
    cfg = EmsNetConfig.build(16, c_prime_ratio=ratio, distill=distill)
    params = init_params(cfg, np.random.default_rng(1))
    with T.no_grad(), T.record_ops() as ops:
        forward(params, x1, x2, cfg)
    soft = [op for op in ops if op.name == "softmax"]
    rows = sum(int(np.prod(op.input_shapes[0][:-1])) for op in soft)
    print(f"{distill:8s} softmax inputs {[op.input_shapes[0] for op in soft]}  rows={rows}")

# With W = I the two attention forms agree
cfg = EmsConfig(channels=32, c_prime=32, distill="identity")
params = init_ems(cfg, rng)
fd = Tensor(np.abs(rng.standard_normal((32, 5, 5))))
print("\nmax |emsa - attention| =", np.abs(emsa(fd, params).data - standard_attention(fd, params).data).max())

# Distilled weights: each of the C' rows is a convex mix of the C value rows
cfg = EmsConfig.from_ratio(32)
params = init_ems(cfg, rng)
out, weights = emsa(fd, params, return_weights=True)
print("distilled output", out.shape, "row sums", np.round(weights.data.sum(axis=-1), 12))
