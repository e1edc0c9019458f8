"""Pose the toy face, light it with spherical harmonics and rasterize it."""
import os

import numpy as np

from uvapm import render, synthetic
from uvapm.uvcore import save_image

out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)

shape_model, mesh = synthetic.toy_face()
print(shape_model.n_vertices, "vertices,", len(mesh.triangles), "triangles")

tex = synthetic.procedural_albedo(64, np.random.default_rng(4))
beta = np.zeros(shape_model.n_id)
beta[0] = 1.5
verts = render.assemble_shape(shape_model, beta, np.zeros(shape_model.n_exp))

frames = []
for yaw in (-0.4, 0.0, 0.4):
    pose = render.PoseCoeffs(scale=0.85, yaw=yaw, pitch=0.1)
    rot = render.euler_to_rotation(pose.pitch, pose.yaw, pose.roll)
    nmap, cov, _ = render.bake_normals_uv(mesh, render.vertex_normals(verts @ rot, mesh.triangles), 64)
    # light from the upper left: constant band plus linear terms
    gamma = render.neutral_gamma()
    gamma[:, 1] = 0.8
    gamma[:, 3] = -0.6
    shaded = render.shade(tex, gamma, nmap, cov)
    buf = render.render(verts, mesh, shaded, pose, 160, 160)
    print(f"yaw {yaw:+.1f}: {buf.mask.sum()} pixels covered")
    frames.append(buf.image)

save_image(np.concatenate(frames, axis=1), os.path.join(out, "yaw_sweep.png"))

# neutral lighting leaves the albedo untouched
flat = render.shade(tex, render.neutral_gamma(), nmap, cov)
print("neutral light max change:", np.abs(flat - tex).max())
