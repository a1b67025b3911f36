"""Small simulation: slope MSE for IBOSS and random subdata as N grows with k fixed.

Run: python3 demos/desk_simulation.py   (under a minute)
"""

import numpy as np

from iboss_clr.experiments import desk_config, run_simulation

for family in ("normal", "lognormal"):
    print(family)
    for n in (5_000, 20_000, 80_000):
        cfg = desk_config(family, n_full=n, replicates=10)
        rep = run_simulation(cfg, threads=1)
        line = "  ".join(f"{m} {np.median(rep.column(m, 'mse_b1')):.4f}" for m in cfg.methods)
        print(f"  N={n:>6}  median slope MSE: {line}")
