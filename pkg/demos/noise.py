"""Label noise: half the training labels are flipped uniformly at random.

The weight network sees each example's embedding and label, and pushes
noisy examples below clean ones. A tighter sparsity prior (sigma 0.5
instead of 5e-5 * N_t) stiffens the weights and shrinks that gap.

    python demos/noise.py [out_dir]
"""

import logging
import os
import sys

import numpy as np

from bads.harness import evaluate_split, preset, run_experiment
from bads.plots import export_plots

logging.basicConfig(level=logging.ERROR)
out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/noise"

base = preset("cifar", seed=0)
tight = {k: v for k, v in base.sgld.items() if k != "sigma_per_nt"}
tight["sigma"] = 0.5
runs = {
    "bads sigma=1.0": base,
    "bads sigma=0.5": base.replace(sgld=tight),
    "mixing": base.replace(method="mixing"),
}

for name, cfg in runs.items():
    path = os.path.join(out, name.replace(" ", "_").replace("=", ""))
    res = run_experiment(cfg, out_dir=path)
    acc, _ = evaluate_split(res.params, res.scenario)
    line = f"{name:15s} clean test accuracy {acc:.3f}"
    if cfg.method.startswith("bads"):
        export_plots(res.log, path)
        clean = res.log.batch_column("weight_clean")[-500:]
        noisy = res.log.batch_column("weight_noisy")[-500:]
        line += f", weight clean - noisy {np.nanmean(clean) - np.nanmean(noisy):+.3f}"
    print(line)
