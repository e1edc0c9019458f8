"""Linear shape model, weak-perspective camera, SH shading and a z-buffer rasterizer.

Conventions
-----------
* Vertices are row vectors; the camera applies ``f * S @ R + t`` and drops z.
* ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)``.
* Projected x, y in [-1, 1] map to pixel coordinates with y flipped, so
  row 0 is the top of the image. Pixel ``(row, col)`` has its centre at
  ``(col + 0.5, row + 0.5)``.
* The viewer looks down -z: the fragment with the larger view-space z wins
  the depth test.
* Texture coordinate ``v = 1`` is the top row of a UV map.
"""
from dataclasses import dataclass
import json
import os
import struct

import numpy as np

from . import _binio
from .errors import FormatError, InvalidInputError
from .uvcore import check_image

SHAPE_MAGIC = b"UVSHP1"
SHAPE_VERSION = 1
N_LANDMARKS = 68

# real SH normalisation constants, bands l <= 2
SH_C0 = 0.5 / np.sqrt(np.pi)
SH_C1 = np.sqrt(3.0 / (4.0 * np.pi))
SH_C2 = 0.5 * np.sqrt(15.0 / np.pi)
SH_C3 = 0.25 * np.sqrt(5.0 / np.pi)
SH_C4 = 0.25 * np.sqrt(15.0 / np.pi)


# ---------------------------------------------------------------------------
# shape model and mesh

@dataclass(frozen=True, eq=False)
class LinearShapeModel:
    """``S = mean + B_id @ beta + B_exp @ xi`` with ``3n`` stacked xyz rows."""

    mean: np.ndarray
    id_basis: np.ndarray
    exp_basis: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        if mean.size % 3:
            raise InvalidInputError("mean shape length must be a multiple of 3")
        bases = []
        for name, b in (("id_basis", self.id_basis), ("exp_basis", self.exp_basis)):
            b = np.asarray(b, dtype=np.float32)
            if b.ndim == 1:
                b = b.reshape(mean.size, -1)
            if b.ndim != 2 or b.shape[0] != mean.size:
                raise InvalidInputError(f"{name} must have {mean.size} rows, got {b.shape}")
            if not np.all(np.isfinite(b)):
                raise InvalidInputError(f"{name} contains non-finite values")
            bases.append(b)
        if not np.all(np.isfinite(mean)):
            raise InvalidInputError("mean shape contains non-finite values")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "id_basis", bases[0])
        object.__setattr__(self, "exp_basis", bases[1])

    @property
    def n_vertices(self):
        return self.mean.size // 3

    @property
    def n_id(self):
        return self.id_basis.shape[1]

    @property
    def n_exp(self):
        return self.exp_basis.shape[1]

    def equals(self, other):
        return (isinstance(other, LinearShapeModel)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.id_basis, other.id_basis)
                and np.array_equal(self.exp_basis, other.exp_basis))


@dataclass(frozen=True, eq=False)
class FaceMesh:
    triangles: np.ndarray
    uvs: np.ndarray
    landmarks: np.ndarray

    def __post_init__(self):
        tris = np.asarray(self.triangles, dtype=np.int64)
        uvs = np.asarray(self.uvs, dtype=np.float64)
        lmk = np.asarray(self.landmarks, dtype=np.int64).reshape(-1)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise InvalidInputError(f"triangles must be (f, 3), got {tris.shape}")
        if uvs.ndim != 2 or uvs.shape[1] != 2:
            raise InvalidInputError(f"uvs must be (n, 2), got {uvs.shape}")
        n = uvs.shape[0]
        if tris.size and (tris.min() < 0 or tris.max() >= n):
            raise InvalidInputError("triangle index out of range")
        if lmk.size != N_LANDMARKS:
            raise InvalidInputError(f"expected {N_LANDMARKS} landmark indices, got {lmk.size}")
        if lmk.min() < 0 or lmk.max() >= n:
            raise InvalidInputError("landmark index out of range")
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "uvs", uvs)
        object.__setattr__(self, "landmarks", lmk)

    @property
    def n_vertices(self):
        return self.uvs.shape[0]


def assemble_shape(model, beta, xi):
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if beta.size != model.n_id or xi.size != model.n_exp:
        raise InvalidInputError(
            f"coefficient lengths ({beta.size}, {xi.size}) do not match bases ({model.n_id}, {model.n_exp})")
    s = (model.mean.astype(np.float64)
         + model.id_basis.astype(np.float64) @ beta
         + model.exp_basis.astype(np.float64) @ xi)
    return s.reshape(-1, 3)


# ---------------------------------------------------------------------------
# camera

@dataclass
class PoseCoeffs:
    scale: float = 1.0
    translation: tuple = (0.0, 0.0, 0.0)
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        self.translation = tuple(float(t) for t in self.translation)
        if len(self.translation) != 3:
            raise InvalidInputError("translation needs three components")
        vals = (self.scale, self.pitch, self.yaw, self.roll) + self.translation
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("pose values must be finite")
        if self.scale <= 0:
            raise InvalidInputError(f"scale must be positive, got {self.scale}")

    def to_vector(self):
        return np.array([self.scale, *self.translation, self.pitch, self.yaw, self.roll])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        return cls(float(v[0]), tuple(v[1:4]), float(v[4]), float(v[5]), float(v[6]))

    def to_dict(self):
        return {"scale": self.scale, "translation": list(self.translation),
                "pitch": self.pitch, "yaw": self.yaw, "roll": self.roll}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("scale", 1.0), tuple(d.get("translation", (0.0, 0.0, 0.0))),
                   d.get("pitch", 0.0), d.get("yaw", 0.0), d.get("roll", 0.0))


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def euler_to_rotation(pitch, yaw, roll):
    if not all(np.isfinite(a) for a in (pitch, yaw, roll)):
        raise InvalidInputError("Euler angles must be finite")
    return _rz(roll) @ _ry(yaw) @ _rx(pitch)


def rotation_derivatives(pitch, yaw, roll):
    """d R / d(pitch, yaw, roll) as a ``(3, 3, 3)`` stack."""
    rx, ry, rz = _rx(pitch), _ry(yaw), _rz(roll)
    return np.stack([rz @ ry @ _drx(pitch), rz @ _dry(yaw) @ rx, _drz(roll) @ ry @ rx])


def _pose_vector(pose):
    if isinstance(pose, PoseCoeffs):
        return pose.to_vector()
    return np.asarray(pose, dtype=np.float64).reshape(7)


def to_view(vertices, pose):
    """``f * S @ R + t`` for every vertex; columns are view-space x, y, z."""
    p = _pose_vector(pose)
    rot = euler_to_rotation(*p[4:7])
    return p[0] * (np.asarray(vertices, dtype=np.float64) @ rot) + p[1:4]


def viewport(xy, width, height):
    xy = np.asarray(xy, dtype=np.float64)
    return np.stack([(xy[..., 0] + 1.0) * (width / 2.0),
                     (1.0 - xy[..., 1]) * (height / 2.0)], axis=-1)


def project(vertices, pose, width=None, height=None):
    """Weak-perspective projection.

    Without an image size the result is the orthographic image-plane
    coordinate; with one it is mapped through the viewport to pixels.
    ``t_z`` has no effect on the result.
    """
    xy = to_view(vertices, pose)[:, :2]
    if width is None:
        return xy
    return viewport(xy, width, height)


def projection_jacobian(vertices, pose, width, height):
    """Derivatives of pixel projections.

    Returns ``(d_pose, d_vertex)`` with shapes ``(n, 2, 7)`` and
    ``(n, 2, 3)``: the first w.r.t. ``[f, tx, ty, tz, pitch, yaw, roll]``,
    the second w.r.t. each vertex's own xyz.
    """
    p = _pose_vector(pose)
    v = np.asarray(vertices, dtype=np.float64)
    rot = euler_to_rotation(*p[4:7])
    drot = rotation_derivatives(*p[4:7])
    sx, sy = width / 2.0, -height / 2.0
    scale = np.array([sx, sy])
    n = v.shape[0]
    d_pose = np.zeros((n, 2, 7))
    d_pose[:, :, 0] = (v @ rot)[:, :2] * scale
    d_pose[:, 0, 1] = sx
    d_pose[:, 1, 2] = sy
    for a in range(3):
        d_pose[:, :, 4 + a] = p[0] * (v @ drot[a])[:, :2] * scale
    d_vertex = np.empty((n, 2, 3))
    d_vertex[:, 0, :] = p[0] * sx * rot[:, 0]
    d_vertex[:, 1, :] = p[0] * sy * rot[:, 1]
    return d_pose, d_vertex


# ---------------------------------------------------------------------------
# normals

def vertex_normals(vertices, triangles):
    """Area-weighted vertex normals; isolated or degenerate vertices get +z."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    acc = np.zeros_like(v)
    for c in range(3):
        for j in range(3):
            acc[:, j] += np.bincount(t[:, c], weights=face_n[:, j], minlength=v.shape[0])
    norm = np.linalg.norm(acc, axis=1)
    out = np.tile([0.0, 0.0, 1.0], (v.shape[0], 1))
    ok = norm > 1e-12
    out[ok] = acc[ok] / norm[ok, None]
    return out


# ---------------------------------------------------------------------------
# rasterization

def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize(points, triangles, width, height, depth=None):
    """Rasterize 2-D triangles (pixel coordinates) at pixel centres.

    A pixel is covered when its centre lies inside or on the triangle.
    With ``depth`` (per-vertex) the larger interpolated value wins; ties go
    to the lower triangle index. Returns ``(tri_id, bary, zbuf, n_degenerate)``;
    ``tri_id`` is -1 where nothing is drawn.
    """
    if width <= 0 or height <= 0:
        raise InvalidInputError(f"zero-area raster {width}x{height}")
    pts = np.asarray(points, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64)
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), -np.inf)
    zv = None if depth is None else np.asarray(depth, dtype=np.float64)
    n_degenerate = 0
    for fi, (i0, i1, i2) in enumerate(tris):
        x0, y0 = pts[i0]
        x1, y1 = pts[i1]
        x2, y2 = pts[i2]
        area = _edge(x0, y0, x1, y1, x2, y2)
        if not np.isfinite(area) or abs(area) < 1e-12:
            n_degenerate += 1
            continue
        c0 = max(int(np.ceil(min(x0, x1, x2) - 0.5)), 0)
        c1 = min(int(np.floor(max(x0, x1, x2) - 0.5)), width - 1)
        r0 = max(int(np.ceil(min(y0, y1, y2) - 0.5)), 0)
        r1 = min(int(np.floor(max(y0, y1, y2) - 0.5)), height - 1)
        if c0 > c1 or r0 > r1:
            continue
        px = np.arange(c0, c1 + 1) + 0.5
        py = np.arange(r0, r1 + 1)[:, None] + 0.5
        b0 = _edge(x1, y1, x2, y2, px, py) / area
        b1 = _edge(x2, y2, x0, y0, px, py) / area
        b2 = _edge(x0, y0, x1, y1, px, py) / area
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not inside.any():
            continue
        win_id = tri_id[r0:r1 + 1, c0:c1 + 1]
        win_z = zbuf[r0:r1 + 1, c0:c1 + 1]
        if zv is None:
            z = np.zeros_like(b0)
            wins = inside & (win_id < 0)
        else:
            z = b0 * zv[i0] + b1 * zv[i1] + b2 * zv[i2]
            wins = inside & ((z > win_z) | ((z == win_z) & ((win_id < 0) | (fi < win_id))))
        if not wins.any():
            continue
        win_id[wins] = fi
        win_z[wins] = z[wins]
        win_b = bary[r0:r1 + 1, c0:c1 + 1]
        win_b[wins] = np.stack([b0[wins], b1[wins], b2[wins]], axis=-1)
    return tri_id, bary, zbuf, n_degenerate


def _uv_to_texel(uv, size):
    """Continuous texel coordinates (x, y) for UVs on a ``size x size`` map."""
    return uv[..., 0] * size - 0.5, (1.0 - uv[..., 1]) * size - 0.5


def bake_normals_uv(mesh, normals, size):
    """Rasterize vertex normals into a ``size x size`` UV-space normal map.

    Returns ``(normal_map, coverage, n_skipped)``. Uncovered texels hold
    (0, 0, 1); ``n_skipped`` counts triangles degenerate in UV space.
    """
    normals = np.asarray(normals, dtype=np.float64)
    tx, ty = _uv_to_texel(mesh.uvs, size)
    pts = np.stack([tx + 0.5, ty + 0.5], axis=-1)
    tri_id, bary, _, skipped = rasterize(pts, mesh.triangles, size, size)
    coverage = tri_id >= 0
    nmap = np.zeros((size, size, 3))
    nmap[..., 2] = 1.0
    ids = tri_id[coverage]
    corner = normals[mesh.triangles[ids]]
    interp = np.einsum("pk,pkj->pj", bary[coverage], corner)
    length = np.linalg.norm(interp, axis=1)
    ok = length > 1e-12
    interp[ok] /= length[ok, None]
    interp[~ok] = (0.0, 0.0, 1.0)
    nmap[coverage] = interp
    return nmap, coverage, skipped


# ---------------------------------------------------------------------------
# spherical harmonics

def sh_basis_map(normals):
    """The nine real SH basis values for every normal in a ``(..., 3)`` array.

    Order: 1, y, z, x, xy, yz, 3z^2 - 1, xz, x^2 - y^2.
    """
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack([
        np.full_like(x, SH_C0),
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C4 * (x * x - y * y),
    ], axis=-1)


def sh_basis(normal):
    normal = np.asarray(normal, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(normal)) or abs(np.linalg.norm(normal) - 1.0) > 1e-3:
        raise InvalidInputError(f"sh_basis expects a unit normal, got {normal}")
    return sh_basis_map(normal)


def neutral_gamma():
    """SH coefficients giving unit irradiance everywhere (shade is the identity)."""
    g = np.zeros((3, 9))
    g[:, 0] = 1.0 / SH_C0
    return g


def _check_gamma(gamma):
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.size != 27:
        raise InvalidInputError(f"gamma must have 3x9 values, got {gamma.shape}")
    gamma = gamma.reshape(3, 9)
    if not np.all(np.isfinite(gamma)):
        raise InvalidInputError("gamma contains non-finite values")
    return gamma


def shade(albedo, gamma, normal_map, coverage=None):
    """Per-texel Lambertian SH shading ``T = A * sum_k gamma_k H_k(N)``.

    Texels outside ``coverage`` keep the unlit albedo.
    """
    albedo = check_image(albedo, "albedo")
    gamma = _check_gamma(gamma)
    normal_map = np.asarray(normal_map, dtype=np.float64)
    if normal_map.shape != albedo.shape:
        raise InvalidInputError(f"normal map {normal_map.shape} does not match albedo {albedo.shape}")
    irradiance = sh_basis_map(normal_map) @ gamma.T
    out = albedo * irradiance
    if coverage is not None:
        out = np.where(np.asarray(coverage, bool)[..., None], out, albedo)
    return out


# ---------------------------------------------------------------------------
# rendering

@dataclass
class RenderBuffers:
    """Rendered image plus the per-pixel correspondence used for gradients."""

    image: np.ndarray
    depth: np.ndarray
    triangle_id: np.ndarray
    barycentrics: np.ndarray
    uv: np.ndarray
    mask: np.ndarray
    texel_index: np.ndarray
    texel_weight: np.ndarray
    texture_size: int

    @property
    def shape(self):
        return self.mask.shape


def _bilinear_taps(uv, size):
    x, y = _uv_to_texel(uv, size)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xs = [np.clip(x0, 0, size - 1), np.clip(x0 + 1, 0, size - 1)]
    ys = [np.clip(y0, 0, size - 1), np.clip(y0 + 1, 0, size - 1)]
    idx = np.stack([ys[0] * size + xs[0], ys[0] * size + xs[1],
                    ys[1] * size + xs[0], ys[1] * size + xs[1]], axis=-1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    return idx, wts


def rasterize_mesh(vertices, mesh, pose, width, height, texture_size):
    """Geometry pass of :func:`render`: buffers with an empty image."""
    if width <= 0 or height <= 0:
        raise InvalidInputError(f"zero-area image {width}x{height}")
    view = to_view(vertices, pose)
    pts = viewport(view[:, :2], width, height)
    tri_id, bary, zbuf, _ = rasterize(pts, mesh.triangles, width, height, depth=view[:, 2])
    mask = tri_id >= 0
    uv = np.zeros((height, width, 2))
    corner_uv = mesh.uvs[mesh.triangles[tri_id[mask]]]
    uv[mask] = np.einsum("pk,pkj->pj", bary[mask], corner_uv)
    idx, wts = _bilinear_taps(uv[mask], texture_size)
    depth = np.where(mask, zbuf, 0.0)
    return RenderBuffers(np.zeros((height, width, 3)), depth, tri_id, bary, uv, mask,
                         idx, wts, int(texture_size))


def sample_texture(buffers, texture):
    """Re-render a texture through frozen correspondence buffers."""
    texture = np.asarray(texture, dtype=np.float64)
    size = buffers.texture_size
    if texture.shape != (size, size, 3):
        raise InvalidInputError(f"texture {texture.shape} does not match buffers ({size}x{size})")
    flat = texture.reshape(-1, 3)
    img = np.zeros(buffers.shape + (3,))
    img[buffers.mask] = np.einsum("pt,ptc->pc", buffers.texel_weight, flat[buffers.texel_index])
    return img


def render(vertices, mesh, texture, pose, width, height):
    """Rasterize the posed mesh and bilinearly sample ``texture`` (a shaded UV map)."""
    texture = check_image(texture, "texture")
    if texture.shape[0] != texture.shape[1]:
        raise InvalidInputError("texture must be square")
    buffers = rasterize_mesh(vertices, mesh, pose, width, height, texture.shape[0])
    buffers.image = sample_texture(buffers, texture)
    return buffers


def texture_vjp(buffers, grad_image):
    """Adjoint of :func:`sample_texture`: pixel gradients scattered onto texels."""
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != buffers.shape + (3,):
        raise InvalidInputError(
            f"gradient {grad_image.shape} does not match buffers {buffers.shape}")
    size = buffers.texture_size
    g = grad_image[buffers.mask]
    idx = buffers.texel_index.ravel()
    out = np.empty((size * size, 3))
    for c in range(3):
        w = (buffers.texel_weight * g[:, c:c + 1]).ravel()
        out[:, c] = np.bincount(idx, weights=w, minlength=size * size)
    return out.reshape(size, size, 3)


def shade_vjp(albedo, gamma, normal_map, coverage, grad_texture):
    """Gradients of a scalar w.r.t. albedo and gamma given d/d shaded texture."""
    gamma = _check_gamma(gamma)
    h = sh_basis_map(normal_map)
    irradiance = h @ gamma.T
    g = np.asarray(grad_texture, dtype=np.float64)
    lit = np.ones(albedo.shape[:2], bool) if coverage is None else np.asarray(coverage, bool)
    grad_albedo = np.where(lit[..., None], g * irradiance, g)
    ga = (g * albedo)[lit]
    grad_gamma = ga.T @ h[lit]
    return grad_albedo, grad_gamma


def render_gradients(buffers, grad_image, albedo, gamma, normal_map, coverage=None):
    """Frozen-correspondence backward pass of render(shade(albedo, gamma)).

    Given d loss / d rendered pixels, returns a dict with the gradient
    w.r.t. the shaded ``texture``, the ``albedo`` map and ``gamma`` (3x9).
    Invisible pixels contribute nothing.
    """
    if albedo.shape[0] != buffers.texture_size:
        raise InvalidInputError("albedo resolution does not match render buffers")
    g_tex = texture_vjp(buffers, grad_image)
    g_alb, g_gamma = shade_vjp(albedo, gamma, normal_map, coverage, g_tex)
    return {"texture": g_tex, "albedo": g_alb, "gamma": g_gamma}


# ---------------------------------------------------------------------------
# file formats

def shape_model_to_bytes(model):
    head = SHAPE_MAGIC + struct.pack("<HIII", SHAPE_VERSION, model.n_vertices, model.n_id, model.n_exp)
    return (head + _binio.f32(model.mean) + _binio.f32_colmajor(model.id_basis)
            + _binio.f32_colmajor(model.exp_basis))


def shape_model_from_bytes(data, name="<bytes>"):
    reader = _binio.Reader(data, name)
    _binio.read_magic(reader, SHAPE_MAGIC)
    version, n, nb, ne = reader.unpack("<HIII", "header")
    if version != SHAPE_VERSION:
        raise FormatError(f"{name}: unsupported version {version}", section="header", offset=6)
    mean = reader.floats(3 * n, "mean shape")
    b_id = reader.floats(3 * n * nb, "identity basis").reshape((3 * n, nb), order="F")
    b_exp = reader.floats(3 * n * ne, "expression basis").reshape((3 * n, ne), order="F")
    reader.finish()
    return LinearShapeModel(mean, b_id, b_exp)


def save_shape_model(model, path):
    with open(path, "wb") as fh:
        fh.write(shape_model_to_bytes(model))


def load_shape_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return shape_model_from_bytes(data, name=os.fspath(path))


def read_obj(path):
    """Parse the v / vt / f subset of Wavefront OBJ.

    Returns ``(vertices, uvs, triangles)`` with one UV per vertex; polygons
    are fan-triangulated. A vertex referenced with two different UVs
    (a texture seam) is rejected.
    """
    verts, texcoords, faces = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "vt":
                    texcoords.append([float(x) for x in parts[1:3]])
                elif parts[0] == "f":
                    corners = []
                    for tok in parts[1:]:
                        fields = tok.split("/")
                        vi = int(fields[0])
                        ti = int(fields[1]) if len(fields) > 1 and fields[1] else None
                        vi = vi - 1 if vi > 0 else len(verts) + vi
                        if ti is not None:
                            ti = ti - 1 if ti > 0 else len(texcoords) + ti
                        corners.append((vi, ti))
                    for j in range(1, len(corners) - 1):
                        faces.append((corners[0], corners[j], corners[j + 1]))
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: cannot parse {line.strip()!r}",
                                  section=f"line {lineno}") from exc
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    tc = np.asarray(texcoords, dtype=np.float64).reshape(-1, 2)
    uv_of = np.full(len(vertices), -1, dtype=np.int64)
    tris = np.zeros((len(faces), 3), dtype=np.int64)
    for fi, face in enumerate(faces):
        for c, (vi, ti) in enumerate(face):
            if not 0 <= vi < len(vertices):
                raise FormatError(f"{path}: face {fi} references missing vertex {vi + 1}", section="faces")
            if ti is None or not 0 <= ti < len(tc):
                raise FormatError(f"{path}: face {fi} lacks a valid texture coordinate", section="faces")
            if uv_of[vi] >= 0 and uv_of[vi] != ti and not np.array_equal(tc[uv_of[vi]], tc[ti]):
                raise FormatError(f"{path}: vertex {vi + 1} has more than one UV (seam)", section="faces")
            uv_of[vi] = ti
            tris[fi, c] = vi
    uvs = np.zeros((len(vertices), 2))
    has = uv_of >= 0
    uvs[has] = tc[uv_of[has]]
    return vertices, uvs, tris


def write_obj(path, vertices, uvs, triangles):
    with open(path, "w") as fh:
        for v in np.asarray(vertices):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in np.asarray(uvs):
            fh.write(f"vt {t[0]:.9g} {t[1]:.9g}\n")
        for f in np.asarray(triangles) + 1:
            fh.write(f"f {f[0]}/{f[0]} {f[1]}/{f[1]} {f[2]}/{f[2]}\n")


def load_landmark_indices(path):
    with open(path) as fh:
        idx = json.load(fh)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size != N_LANDMARKS:
        raise FormatError(f"{path}: expected {N_LANDMARKS} landmark indices, got {idx.size}")
    return idx


def load_mesh(obj_path, landmark_path):
    _, uvs, tris = read_obj(obj_path)
    return FaceMesh(tris, uvs, load_landmark_indices(landmark_path))
