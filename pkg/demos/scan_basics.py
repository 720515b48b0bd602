"""
Discretizing and scanning a diagonal state space
================================================

A continuous system ``h' = a h + b x`` is turned into a per-step recurrence
and then evaluated two ways: a plain loop and a Blelloch prefix scan.
"""

import numpy as np

from vlmamba import discretize_zoh, scan_parallel, scan_sequential, Prng

# With a = -1 and a step of ln 2 the state halves each step.
dp = discretize_zoh(np.array([-1.0]), np.array([1.0]), np.array([np.log(2.0)]))
print("a_bar", dp.a_bar.ravel(), "b_bar", dp.b_bar.ravel())

# Tiny steps switch to a short series instead of expm1(dA)/a; the two
# formulas meet smoothly at the switch point.
for delta in (0.99e-4, 1.01e-4):
    print(delta, discretize_zoh(np.array([-1.0]), np.array([1.0]), np.array([delta])).b_bar.ravel())

#
# A random multi-channel instance: 8 channels, 16 state dims, 1000 steps.
rng = Prng(0)
L, di, n = 1000, 8, 16
a = -np.arange(1, n + 1, dtype=np.float64) * np.ones((di, 1))
b = rng.normal((L, n), 1.0, np.float64)
c = rng.normal((L, n), 1.0, np.float64)
x = rng.normal((L, di), 1.0, np.float64)
delta = np.full(L, 0.05)

dp = discretize_zoh(a, b, delta)
y_seq, _ = scan_sequential(dp, c, np.ones(di), x)
y_par, _ = scan_parallel(dp, c, np.ones(di), x)
print("max |sequential - parallel| =", np.abs(y_seq - y_par).max())
