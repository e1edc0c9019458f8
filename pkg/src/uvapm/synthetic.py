"""Tiny synthetic assets: a toy face mesh, its linear shape model and procedural albedo maps.

The toy face is a height field over a regular grid whose UV layout is the
planar projection of the grid, so a UV map covers the whole unit square.
Identity and expression deformations are in-plane and, on the landmark
vertices, orthogonal to the pose directions, which keeps pose and shape
separately recoverable from landmarks.
"""
import numpy as np

from .render import FaceMesh, LinearShapeModel, N_LANDMARKS, euler_to_rotation, rotation_derivatives

EXTENT = 0.9


def _grid(n):
    xs = np.linspace(-EXTENT, EXTENT, n)
    gx, gy = np.meshgrid(xs, xs[::-1])
    return gx, gy


def _height(x, y):
    dome = 0.45 * np.exp(-(x ** 2 / 0.9 + y ** 2 / 1.2))
    nose = 0.12 * np.exp(-(x ** 2 / 0.015 + (y + 0.02) ** 2 / 0.06))
    brow = 0.04 * np.exp(-((y - 0.28) ** 2 / 0.01)) * np.exp(-x ** 2 / 0.2)
    return dome + nose + brow


def _landmark_layout():
    """68 points in face coordinates, iBUG ordering."""
    pts = []
    t = np.linspace(np.pi * 1.05, np.pi * 1.95, 17)
    pts += [(0.72 * np.cos(a), 0.15 + 0.78 * np.sin(a)) for a in t]          # 0-16 jaw
    pts += [(-0.55 + 0.09 * i, 0.36 + 0.04 * np.sin(np.pi * i / 4)) for i in range(5)]   # 17-21
    pts += [(0.19 + 0.09 * i, 0.36 + 0.04 * np.sin(np.pi * i / 4)) for i in range(5)]    # 22-26
    pts += [(0.0, 0.22 - 0.08 * i) for i in range(4)]                        # 27-30 nose bridge
    pts += [(-0.12 + 0.06 * i, -0.14 - 0.02 * (i in (1, 2, 3))) for i in range(5)]       # 31-35
    for cx in (-0.3, 0.3):                                                   # 36-47 eyes
        a = np.linspace(0, 2 * np.pi, 7)[:-1]
        pts += [(cx - 0.13 * np.cos(ai), 0.2 + 0.05 * np.sin(ai)) for ai in a]
    a = np.linspace(0, 2 * np.pi, 13)[:-1]                                   # 48-59 outer lip
    pts += [(-0.25 * np.cos(ai), -0.38 + 0.1 * np.sin(ai)) for ai in a]
    a = np.linspace(0, 2 * np.pi, 9)[:-1]                                    # 60-67 inner lip
    pts += [(-0.16 * np.cos(ai), -0.38 + 0.04 * np.sin(ai)) for ai in a]
    return np.asarray(pts)


def _orthogonalize(cols, against, rows):
    """Orthonormal columns whose restriction to ``rows`` has no component along ``against``.

    The correction is a combination of the ``against`` fields, so only the
    restricted (landmark) part is constrained.
    """
    coef, *_ = np.linalg.lstsq(against[rows], cols[rows], rcond=None)
    out, _ = np.linalg.qr(cols - against @ coef)
    return out


def toy_face(grid=41, n_id=6, n_exp=4, seed=0, amplitude=0.05):
    """Build ``(LinearShapeModel, FaceMesh)`` for the toy face.

    ``amplitude`` is the RMS vertex displacement (in model units) produced by
    a unit coefficient on any basis vector.
    """
    rng = np.random.default_rng(seed)
    gx, gy = _grid(grid)
    x, y = gx.ravel(), gy.ravel()
    z = _height(x, y)
    mean = np.stack([x, y, z], axis=1)
    n = mean.shape[0]

    uvs = np.stack([(x + EXTENT) / (2 * EXTENT), (y + EXTENT) / (2 * EXTENT)], axis=1)
    idx = np.arange(n).reshape(grid, grid)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    # counter-clockwise when viewed from +z
    tris = np.concatenate([np.stack([a, c, b], 1), np.stack([b, c, d], 1)])

    layout = _landmark_layout()
    dist = ((layout[:, None, 0] - x[None]) ** 2 + (layout[:, None, 1] - y[None]) ** 2)
    landmarks = np.argmin(dist, axis=1)
    assert landmarks.size == N_LANDMARKS

    # smooth in-plane deformation fields
    def field(count):
        cols = []
        for _ in range(count):
            cx, cy = rng.uniform(-0.6, 0.6, 2)
            s = rng.uniform(0.15, 0.4)
            bump = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / s)
            poly = rng.normal(size=6)
            terms = np.stack([x, y, x * y, x * x, y * y, np.ones_like(x)], 1)
            dx = bump * (terms @ poly)
            dy = bump * (terms @ rng.normal(size=6))
            cols.append(np.stack([dx, dy, np.zeros_like(dx)], 1).ravel())
        return np.stack(cols, 1)

    tangents = [mean.ravel()]
    for axis in range(3):
        e = np.zeros((n, 3))
        e[:, axis] = 1.0
        tangents.append(e.ravel())
    drot = rotation_derivatives(0.0, 0.0, 0.0)
    tangents += [(mean @ drot[i]).ravel() for i in range(3)]
    tangents = np.stack(tangents, 1)
    raw = field(n_id + n_exp)
    rows = (3 * landmarks[:, None] + np.arange(3)[None, :]).ravel()
    basis = _orthogonalize(raw, tangents, rows) * amplitude * np.sqrt(n)
    model = LinearShapeModel(mean.ravel(), basis[:, :n_id], basis[:, n_id:])
    mesh = FaceMesh(tris, uvs, landmarks)
    return model, mesh


# ---------------------------------------------------------------------------
# procedural albedo maps

def _blob(u, v, cu, cv, su, sv):
    return np.exp(-(((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2))


def _face_coords(size):
    t = (np.arange(size) + 0.5) / size
    u, vv = np.meshgrid(t, t)
    v = 1.0 - vv
    # back to face coordinates used by the toy mesh
    return u * 2 * EXTENT - EXTENT, v * 2 * EXTENT - EXTENT


def procedural_albedo(size, rng, detail=True):
    """One procedural face albedo map in the toy mesh's UV layout."""
    x, y = _face_coords(size)
    tone = rng.uniform(0.45, 0.85)
    skin = np.array([0.95, 0.72, 0.6]) * tone + rng.normal(0, 0.02, 3)
    img = np.ones((size, size, 3)) * skin
    # low-frequency shading of skin colour
    grad = rng.normal(0, 0.04, 3)
    img *= 1.0 + grad[None, None, :] * y[..., None]
    cheeks = rng.uniform(0.0, 0.12)
    for cx in (-0.4, 0.4):
        img[..., 0] += cheeks * _blob(x, y, cx, -0.1, 0.2, 0.15) * skin[0]
    brow_dark = rng.uniform(0.3, 0.7)
    for cx in (-0.33, 0.33):
        m = _blob(x, y, cx, 0.37, 0.2, 0.05)
        img *= 1.0 - brow_dark * m[..., None]
        e = _blob(x, y, cx, 0.2, 0.11, 0.045)
        img = img * (1 - 0.6 * e[..., None]) + 0.6 * e[..., None] * np.array([0.25, 0.2, 0.18])
    lip = rng.uniform(0.2, 0.5)
    m = _blob(x, y, 0.0, -0.38, 0.24, 0.08)
    img = img * (1 - lip * m[..., None]) + lip * m[..., None] * np.array([0.7, 0.3, 0.3]) * tone
    beard = rng.uniform(0.0, 0.35)
    m = np.clip((-0.2 - y) / 0.3, 0, 1) * _blob(x, y, 0.0, -0.6, 0.7, 0.5)
    img *= 1.0 - beard * m[..., None]
    if detail:
        img *= 1.0 + high_frequency_detail(size, rng)[..., None]
    return np.clip(img, 0.02, 0.98)


def high_frequency_detail(size, rng):
    """Zero-mean multiplicative brightness texture: pores, spots and wrinkle lines."""
    x, y = _face_coords(size)
    freq = rng.uniform(30, 45)
    phase = rng.uniform(0, 2 * np.pi, 2)
    pores = 0.05 * rng.uniform(0.5, 1.0) * np.sin(freq * x + phase[0]) * np.sin(freq * y + phase[1])
    spots = np.zeros_like(x)
    for _ in range(rng.integers(3, 8)):
        cx, cy = rng.uniform(-0.7, 0.7, 2)
        spots -= rng.uniform(0.05, 0.15) * _blob(x, y, cx, cy, 0.03, 0.03)
    wrinkles = np.zeros_like(x)
    depth = rng.uniform(0.0, 0.12)
    for k in range(3):
        wrinkles -= depth * np.exp(-((y - 0.5 - 0.06 * k) / 0.012) ** 2) * _blob(x, y, 0, 0.5, 0.5, 1.0)
    return pores + spots + wrinkles


def procedural_albedos(n, size, seed=0, detail=True):
    rng = np.random.default_rng(seed)
    return [procedural_albedo(size, rng, detail=detail) for _ in range(n)]


def write_toy_assets(directory, n_albedos=12, size=64, seed=0):
    """Write a toy face and a folder of albedo PNGs, for demos and CLI runs.

    Returns a dict of the written paths.
    """
    import json
    import os

    from .render import save_shape_model, write_obj
    from .uvcore import save_image

    os.makedirs(directory, exist_ok=True)
    model, mesh = toy_face(seed=seed)
    paths = {
        "shape_model": os.path.join(directory, "shape.uvshp"),
        "mesh": os.path.join(directory, "face.obj"),
        "landmark_indices": os.path.join(directory, "landmarks.json"),
        "albedo_dir": os.path.join(directory, "albedo"),
    }
    save_shape_model(model, paths["shape_model"])
    write_obj(paths["mesh"], model.mean.reshape(-1, 3), mesh.uvs, mesh.triangles)
    with open(paths["landmark_indices"], "w") as fh:
        json.dump([int(i) for i in mesh.landmarks], fh)
    os.makedirs(paths["albedo_dir"], exist_ok=True)
    for i, img in enumerate(procedural_albedos(n_albedos, size, seed=seed)):
        save_image(img, os.path.join(paths["albedo_dir"], f"albedo_{i:03d}.png"))
    return paths


def erode(mask, iterations=1):
    """Binary erosion with a 3x3 cross; pixels outside the image count as empty."""
    m = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        p = np.pad(m, 1, constant_values=False)
        m = p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m


def closed_loop_scene(seed=7, size=128, k=16, m=8, n_albedos=20, coarse_size=32, detail_size=64):
    """Ground-truth fitting problem rendered from known coefficients.

    Builds a k-component coarse model and an m-component detail basis from
    procedural albedos, draws a random state, renders it and returns a dict
    with the assets, the true state, the image, its landmarks and a mask
    (rendered coverage eroded by two pixels).
    """
    from .builder import build_detail_basis, build_uvapm, extract_residuals
    from .fit import FitProblem, FitState
    from .render import neutral_gamma
    from .uvcore import FaceMask, resize

    shape_model, mesh = toy_face()
    imgs = procedural_albedos(n_albedos, 2 * detail_size, seed=1)
    model = build_uvapm([resize(i, coarse_size) for i in imgs], k)
    detail = build_detail_basis(extract_residuals(imgs, model, detail_size), m)

    rng = np.random.default_rng(seed)
    truth = FitState.zeros(shape_model.n_id, shape_model.n_exp, 3 * model.rank, detail.rank)
    truth.pose = np.array([0.8, 0.03, -0.02, 0.0, -0.05, 0.08, 0.03])
    truth.beta = rng.normal(0, 0.08, shape_model.n_id)
    truth.xi = rng.normal(0, 0.08, shape_model.n_exp)
    truth.gamma = neutral_gamma()
    truth.gamma[:, 0] *= 0.97
    truth.gamma[:, 1:4] += rng.normal(0, 0.08, (3, 3))
    truth.alpha_c = rng.normal(0, 0.1, 3 * model.rank)
    truth.alpha_d = rng.normal(0, 0.05, detail.rank)

    probe = FitProblem(np.zeros((size, size, 3)), np.zeros((N_LANDMARKS, 2)), np.ones((size, size)),
                       shape_model, mesh, model, detail)
    probe.refresh(truth)
    _, _, image = probe.render(truth)
    landmarks = probe.projected_landmarks(truth)
    mask = FaceMask.from_weights(erode(probe.buffers.mask, 2).astype(np.float64))
    return {"shape_model": shape_model, "mesh": mesh, "model": model, "detail": detail,
            "truth": truth, "image": image, "landmarks": landmarks, "mask": mask}
