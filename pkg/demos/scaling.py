"""
Linear scan versus quadratic attention
======================================

Single-threaded timings over doubling sequence lengths, with a log-log fit.
"""

from vlmamba import attention_flops, run_scaling, scan_flops

for L in (1024, 2048, 4096):
    att = attention_flops(L, 16)
    print(L, "scan", scan_flops(L, 16, 16), "attention", att["total"])

report = run_scaling([256, 512, 1024, 2048, 4096], repeats=3)
for r in report.rows:
    print(f"{r.kernel:15s} L={r.L:5d} {r.median_ns / 1e6:9.3f} ms")
for kernel, (slope, r2) in report.fits.items():
    print(f"{kernel}: slope {slope:.2f} (r2 {r2:.3f})")
