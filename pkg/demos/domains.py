"""Domain mixture: one training domain matches the test task, seven are rotated away.

At a small sparsity level (beta 0.05) the mass budget goes to the aligned
domain. At beta 0.8 most points must keep high weight, so the preference
disappears or flips. The sweep runs both values over a few seeds.

    python demos/domains.py [out_dir]
"""

import logging
import sys

from bads.harness import preset, sweep

logging.basicConfig(level=logging.ERROR)
out = sys.argv[1] if len(sys.argv) > 1 else "demo_out/domains"

_, summary = sweep(preset("webnlg"), "sgld.beta", [0.05, 0.8], replicates=3, out_dir=out,
                   separation=("aligned", "off-1"))
print(summary)
