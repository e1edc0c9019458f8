"""Build a per-channel PCA albedo model from procedural UV maps and look at it."""
import os

import numpy as np

from uvapm import albedo, builder, synthetic
from uvapm.uvcore import resize, save_image

out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

# 30 procedural face albedos at 128x128; the coarse model lives at 32x32
imgs = synthetic.procedural_albedos(30, 128, seed=0)
small = [resize(im, 32) for im in imgs]
model = builder.build_uvapm(small, 12)
print("rank", model.rank, "per channel,", model.n_coeffs, "coefficients in total")

for name, ch in zip("RGB", model.channels):
    ratio = ch.explained_variance_ratio()
    print(f"{name}: first 3 components explain {ratio[:3].sum():.3f}, all {model.rank} explain {ratio.sum():.3f}")

# mean +/- one standard deviation along the first red component
sigma = model.channels[0].singular_values[0] / np.sqrt(len(small) - 1)
alpha = np.zeros(model.n_coeffs)
alpha[0] = sigma
tiles = [albedo.decode_coarse(model, -alpha), model.mean_image(), albedo.decode_coarse(model, alpha)]
save_image(np.concatenate(tiles, axis=1), os.path.join(out, "first_component.png"))

# encoding a training face and decoding it again
ac = builder.encode_coarse(small[3], model)
rec = albedo.decode_coarse(model, ac)
print("training face reconstruction RMS:", np.sqrt(np.mean((rec - small[3]) ** 2)))

builder.save_model(model, os.path.join(out, "albedo.uvapm"))
print("saved", os.path.join(out, "albedo.uvapm"))
