"""Recover pose, shape, light and albedo coefficients from one rendered image."""
import os
import time

import numpy as np

from uvapm import fit, synthetic
from uvapm.uvcore import save_image

out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

# a ground truth we know: random coefficients rendered at 128x128
scene = synthetic.closed_loop_scene(seed=7)
truth = scene["truth"]

t0 = time.time()
result = fit.fit(scene["image"], scene["landmarks"], scene["mask"], scene["shape_model"],
                 scene["mesh"], scene["model"], scene["detail"], fit.FitConfig())
print(f"fit took {time.time() - t0:.0f} s")

for name, info in result.report["stages"].items():
    print(f"{name}: loss {info['initial']:.5f} -> {info['best']:.5f} in {info['iterations']} steps")
final = result.report["final"]
print(f"photometric {final['photometric']:.2e}, landmark {final['landmark']:.2e} px^2")

est = result.state
print("pose error   ", np.round(est.pose - truth.pose, 4))
print("light const  ", np.round(est.gamma[:, 0] / truth.gamma[:, 0], 3))
print("alpha_c error", np.abs(est.alpha_c - truth.alpha_c).max().round(3))

save_image(np.concatenate([scene["image"], result.rendered], axis=1), os.path.join(out, "target_vs_fit.png"))
save_image(result.albedo, os.path.join(out, "recovered_albedo.png"))
