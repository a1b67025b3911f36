"""Bootstrap comparison on the synthetic stand-in data set.

The full-data fit is the target; each bootstrap sample of size n is reduced to
k=1000 rows by each method and refitted.

Run: python3 demos/bootstrap_standin.py   (under a minute)
"""

from iboss_clr import RngSpec
from iboss_clr.experiments import gen_standin_data, run_bootstrap

data = gen_standin_data(50_000, RngSpec(11).generator())
for rep in run_bootstrap(data, n_values=[10_000, 50_000], k=1000, b_samples=20, rng=RngSpec(12)):
    for m, s in rep.methods.items():
        print(f"n={rep.metadata['n']:>6}  {m:<7} slope MSE {s['mse_slopes']:.5f}  fit {s['cpu_fit_seconds']:.3f}s")
