"""
Selective scan and its gradient
===============================

Step size, B and C are computed from the input itself. The hand-written
backward pass is compared against central differences.
"""

import numpy as np

from vlmamba import Prng, selective_scan, selective_scan_backward
from vlmamba.gradcheck import finite_difference_grads, group_rel_errors, random_instance

rng = Prng(3)
x, params, g = random_instance(rng, L=12, d_inner=3, n=4)

y = selective_scan(x, params)
print("output shape", y.shape)

# Same numbers from the parallel scan.
print("parallel gap", np.abs(y - selective_scan(x, params, method="parallel")).max())

analytic = selective_scan_backward(x, params, g).groups()
numeric = finite_difference_grads(x, params, g)
for group, err in group_rel_errors(analytic, numeric).items():
    print(f"{group:11s} {err:.2e}")
