"""
Three ways to bridge vision features into the language model
============================================================
"""

import numpy as np

from vlmamba import MmcConfig, PatchGrid, Prng, connector_forward, init_connector

grid = PatchGrid(4, 4, Prng(0).normal((16, 32), 1.0, np.float32))

for variant in ("MLP", "VSS_MLP", "VSS_L2"):
    cfg = MmcConfig(variant, "CSM", d_in=32, d_model=24)
    w = init_connector(Prng(1), cfg, d_state=8)
    out = connector_forward(cfg, w, grid)
    print(f"{variant:8s} out {out.shape} rms {np.sqrt((out ** 2).mean()):.3f}")

# With the VSS output projection zeroed only the skip path survives.
cfg = MmcConfig("VSS_L2", "BSM", d_in=32, d_model=24)
w = init_connector(Prng(2), cfg, d_state=8)
for layer in w.vss.layers:
    layer.w_out[:] = 0
trace = {}
connector_forward(cfg, w, grid, trace=trace)
print("traced:", sorted(trace)[:6], "...")
