"""
Scanning a patch grid in two and four directions
================================================

A 1D causal layer sees a 2D grid through a set of traversal orders.
BSM reads rows forward and backward; CSM adds the column-major pair.
"""

import numpy as np

from vlmamba import PatchGrid, Prng, VssWeights, init_mamba_layer, scan_orders, vss_forward

for o in scan_orders("CSM", 2, 3):
    print(f"{o.name:8s}", o.perm.tolist())

rng = Prng(1)
w = VssWeights([init_mamba_layer(rng, 8, d_state=4)])
grid = PatchGrid(4, 4, rng.normal((16, 8), 1.0, np.float32))

# Nudging the last patch moves the first output: the merged pass sees both ways.
moved = grid.features.copy()
moved[-1] += 1.0
for mech in ("BSM", "CSM"):
    d = np.abs(vss_forward(grid, mech, w)[0] - vss_forward(grid.with_features(moved), mech, w)[0]).max()
    print(mech, "first-patch change", d)

# Transposing the grid swaps the row and column passes and nothing else.
t = PatchGrid(4, 4, grid.as_grid().transpose(1, 0, 2).reshape(-1, 8))
back = vss_forward(t, "CSM", w).reshape(4, 4, 8).transpose(1, 0, 2).reshape(-1, 8)
print("transpose gap", np.abs(back - vss_forward(grid, "CSM", w)).max())
