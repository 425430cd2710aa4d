"""Class imbalance: 995 majority vs 5 minority training points, 5 meta points per class.

BADS learns to up-weight the rare class from the balanced meta set, while
Mixing (train and meta pooled, uniform weights) follows the majority.

    python demos/imbalance.py [out_dir]
"""

import logging
import os
import sys

from bads.harness import evaluate_split, preset, run_experiment
from bads.plots import export_plots

logging.basicConfig(level=logging.ERROR)
out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/imbalance"

for method in ("bads-weightnet", "mixing", "meta_only"):
    res = run_experiment(preset("mnist", method=method, seed=0), out_dir=os.path.join(out, method))
    acc, _ = evaluate_split(res.params, res.scenario)
    print(f"{method:15s} balanced test accuracy {acc:.3f}")
    if method == "bads-weightnet":
        export_plots(res.log, os.path.join(out, method))
        last = res.log.rows[-1]
        print(f"{'':15s} mean weight: minority {last['weight_minority']:.4f}, "
              f"majority {last['weight_majority']:.4f}")

print(f"logs and SVG charts under {out}/")
