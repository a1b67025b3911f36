"""Pick 12 rows out of 2000 with IBOSS and compare against a random draw.

Run: python3 demos/selection_walkthrough.py
"""

import numpy as np

from iboss_clr import ClrParams, Dataset, RngSpec, d_criterion, select_iboss, select_random, subdata_info

gen = RngSpec(7).generator()
z = gen.normal(size=(2000, 2))
data = Dataset(z, np.zeros(len(z)))

chosen = select_iboss(data, 12)
print("IBOSS rows:", chosen.indices.tolist())
print(np.round(z[chosen.indices], 2))

params = ClrParams([[0.0, 1.0, 1.0], [1.0, 2.0, -1.0]], [1.0, 2.0], [0.5, 0.5])
ld_iboss = d_criterion(subdata_info(data, chosen.indices, params))
ld_rand = [d_criterion(subdata_info(data, select_random(data, 12, RngSpec(7, i)).indices, params))
           for i in range(200)]
print(f"log det, IBOSS:  {ld_iboss:.2f}")
print(f"log det, random: median {np.median(ld_rand):.2f}, best of 200 {max(ld_rand):.2f}")
