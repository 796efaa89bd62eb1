"""End to end on seed-1 synthetic scenes: IIDM against the OLS baseline.

Generates three 32x32 scenes, distils the slim coder, trains the denoiser on
the first two and estimates carbon density on the held-out third. Takes a
few minutes on one CPU. Pass a step count to trade accuracy for time, and an
output directory to keep the artifacts.

    python demos/04_desk_run.py [steps] [out]
"""
import sys
import tempfile
import time

from iidm.pipeline.config import RunConfig, apply_overrides
from iidm.pipeline.run import run_pipeline

steps = int(sys.argv[1]) if len(sys.argv) > 1 else RunConfig().diffusion.steps
out = sys.argv[2] if len(sys.argv) > 2 else tempfile.mkdtemp(prefix="iidm-")
cfg = apply_overrides(RunConfig(), steps=steps)

t0 = time.time()
reports = run_pipeline(cfg, out)
print(f"{steps} denoiser steps, {time.time() - t0:.0f} s, artifacts in {out}\n")
print(f"{'model':6s} {'MAE':>8s} {'RMSE':>8s} {'PSNR':>8s} {'SSIM':>8s}")
for name, r in reports.items():
    print(f"{name:6s} {r.mae:8.4f} {r.rmse:8.4f} {r.psnr:8.3f} {r.ssim:8.4f}")
