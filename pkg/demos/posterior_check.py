"""Does the sampler hit the right posterior? Compare SGLD chains with a grid oracle.

A micro-model with one backbone parameter and one weight per training
value is small enough to normalise on a grid.
Smaller step sizes should bring the chain's marginals closer to it.

    python demos/posterior_check.py [out_dir]
"""

import os
import sys

from bads.posterior import verify_posterior, write_report

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/posterior"
os.makedirs(out, exist_ok=True)

report = verify_posterior(etas=(1e-2, 3e-3, 1e-3), n_steps=100_000, thin=5)
for run in report["runs"]:
    axes = ", ".join(f"{k} {tv:.3f}" for k, tv in run["tv_per_axis"].items())
    print(f"eta {run['eta']:.0e}: {run['n_samples']} samples, TV per axis: {axes}")
print("oracle mean", [round(m, 4) for m in report["grid"]["oracle_mean"]])
write_report(report, os.path.join(out, "posterior_report.json"))
