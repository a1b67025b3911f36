"""Per-point information: complete, missing, the surrogate bound, and a Monte-Carlo check.

Run: python3 demos/information_bounds.py
"""

import numpy as np

from iboss_clr import ClrParams, RngSpec, complete_info_point, missing_info_diag, surrogate_q, true_info_point_mc

params = ClrParams([[0.0, 1.0], [1.0, 1.5]], [1.0, 1.0], [0.4, 0.6])

print(" x      missing  surrogate   (beta_1 intercept entry)")
for x in (-3.0, -1.0, 0.0, 1.0, 3.0, 6.0):
    m = missing_info_diag([1.0, x], params)
    q = surrogate_q([1.0, x], params)
    print(f"{x:5.1f}  {m[0]:9.5f}  {q[0]:9.5f}")

x = np.array([1.0, 0.5])
est, se = true_info_point_mc(x, params, 10**6, RngSpec(3))
c = complete_info_point(x, params)
m = missing_info_diag(x, params)
print("\ncomplete - missing vs Monte Carlo (diagonal):")
for a, b, s in zip(np.diag(c) - m, np.diag(est), np.diag(se)):
    print(f"  {a:9.5f}  {b:9.5f}  +/- {s:.5f}")
