"""Image containers, HSV conversion, masks, resampling and PNG I/O.

Images are plain numpy arrays: a UV image is ``(H, W, 3)`` floating point
with nominal range [0, 1], a channel plane is ``(H, W)``. Hue is stored in
[0, 1) rather than degrees.
"""
from dataclasses import dataclass
import os

import cv2
import numpy as np

from .errors import FormatError, InvalidInputError


def _float(x):
    x = np.asarray(x)
    if x.dtype in (np.float32, np.float64):
        return x
    return x.astype(np.float64)


def check_image(img, name="image"):
    img = _float(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return img


def check_plane(plane, name="plane"):
    plane = _float(plane)
    if plane.ndim != 2:
        raise InvalidInputError(f"{name} must have shape (H, W), got {plane.shape}")
    if not np.all(np.isfinite(plane)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return plane


# ---------------------------------------------------------------------------
# colour space

def rgb_to_hsv(img):
    """Hexcone RGB -> HSV, hue scaled to [0, 1).

    Works on any ``(..., 3)`` array. Inputs are not clamped; values outside
    [0, 1] go through the same algebra.
    """
    img = _float(img)
    if img.shape[-1] != 3:
        raise InvalidInputError(f"expected trailing dimension 3, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("rgb_to_hsv: non-finite input pixel")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = np.max(img, axis=-1)
    minc = np.min(img, axis=-1)
    chroma = maxc - minc
    v = maxc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, chroma / np.where(maxc > 0, maxc, 1), 0.0)
        safe_c = np.where(chroma > 0, chroma, 1)
        h_r = np.mod((g - b) / safe_c, 6.0)
        h_g = (b - r) / safe_c + 2.0
        h_b = (r - g) / safe_c + 4.0
    # same tie priority as the usual scalar implementations: r, then g, then b
    h = np.where(r == maxc, h_r, np.where(g == maxc, h_g, h_b))
    h = np.where(chroma > 0, h / 6.0, 0.0)
    h = np.mod(h, 1.0)
    return np.stack([h, s, v], axis=-1).astype(img.dtype, copy=False)


def hsv_to_rgb(img):
    """Inverse hexcone conversion; output clamped to [0, 1]."""
    img = _float(img)
    if img.shape[-1] != 3:
        raise InvalidInputError(f"expected trailing dimension 3, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("hsv_to_rgb: non-finite input")
    h, s, v = img[..., 0], img[..., 1], img[..., 2]
    h6 = np.mod(h, 1.0) * 6.0
    sector = np.floor(h6)
    f = h6 - sector
    sector = sector.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(sector, choices_r)
    g = np.choose(sector, choices_g)
    b = np.choose(sector, choices_b)
    out = np.stack([r, g, b], axis=-1)
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def split_channels(img):
    img = check_image(img)
    return img[..., 0].copy(), img[..., 1].copy(), img[..., 2].copy()


def merge_channels(a, b, c):
    a, b, c = (np.asarray(p) for p in (a, b, c))
    if not (a.ndim == b.ndim == c.ndim == 2) or not (a.shape == b.shape == c.shape):
        raise InvalidInputError(
            f"merge_channels: mismatched planes {a.shape}, {b.shape}, {c.shape}")
    return np.stack([a, b, c], axis=-1)


# ---------------------------------------------------------------------------
# resampling

def resample_matrix(n_in, n_out):
    """Dense ``(n_out, n_in)`` 1-D bilinear resampling operator.

    Half-pixel centres, clamp-to-edge. For downsampling the triangle filter
    is widened by the scale factor so every input sample contributes (area
    averaging); for upsampling it is plain linear interpolation.
    """
    if n_in <= 0 or n_out <= 0:
        raise InvalidInputError("resample sizes must be positive")
    scale = n_in / n_out
    support = max(scale, 1.0)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) * scale - 0.5
        lo = int(np.floor(centre - support)) + 1
        hi = int(np.ceil(centre + support))
        for j in range(lo, hi):
            w = 1.0 - abs(j - centre) / support
            if w > 0:
                mat[i, min(max(j, 0), n_in - 1)] += w
        mat[i] /= mat[i].sum()
    return mat


_RESAMPLE_CACHE = {}


def _cached_matrix(n_in, n_out):
    key = (n_in, n_out)
    if key not in _RESAMPLE_CACHE:
        _RESAMPLE_CACHE[key] = resample_matrix(n_in, n_out)
    return _RESAMPLE_CACHE[key]


def resize(x, height, width=None):
    """Bilinear resize of a plane ``(H, W)`` or image ``(H, W, C)``."""
    width = height if width is None else width
    x = _float(x)
    if x.ndim not in (2, 3):
        raise InvalidInputError(f"resize expects a plane or an image, got {x.shape}")
    if x.shape[0] == height and x.shape[1] == width:
        return x.copy()
    ry = _cached_matrix(x.shape[0], height)
    rx = _cached_matrix(x.shape[1], width)
    if x.ndim == 2:
        return ry @ x @ rx.T
    tmp = np.einsum("ij,jkc->ikc", ry, x)
    return np.einsum("ikc,lk->ilc", tmp, rx)


def resize_adjoint(grad, in_height, in_width=None):
    """Transpose of :func:`resize` applied to a gradient at the output size."""
    in_width = in_height if in_width is None else in_width
    grad = np.asarray(grad, dtype=np.float64)
    ry = _cached_matrix(in_height, grad.shape[0])
    rx = _cached_matrix(in_width, grad.shape[1])
    if grad.ndim == 2:
        return ry.T @ grad @ rx
    tmp = np.einsum("ji,jkc->ikc", ry, grad)
    return np.einsum("ikc,kl->ilc", tmp, rx)


# ---------------------------------------------------------------------------
# masks

@dataclass(frozen=True)
class FaceMask:
    """Per-pixel photometric weights ``W >= 0`` and skin indicator ``G``."""

    weights: np.ndarray
    skin: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        g = np.asarray(self.skin, dtype=np.float64)
        if w.ndim != 2 or g.shape != w.shape:
            raise InvalidInputError(f"mask planes must be matching 2-D arrays, got {w.shape} and {g.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidInputError("mask weights must be finite and non-negative")
        if not np.all((g == 0) | (g == 1)):
            raise InvalidInputError("skin mask must be binary")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "skin", g)

    @classmethod
    def from_weights(cls, weights, skin=None):
        weights = np.asarray(weights, dtype=np.float64)
        if skin is None:
            skin = (weights > 0).astype(np.float64)
        return cls(weights, skin)

    @property
    def shape(self):
        return self.weights.shape


def load_mask(weights_path, skin_path=None):
    """Grayscale PNG weights (value/255) plus optional binary skin PNG."""
    w = _read_png(weights_path)
    if w.ndim == 3:
        w = w[..., 0]
    w = w.astype(np.float64) / 255.0 if w.dtype == np.uint8 else w.astype(np.float64) / 65535.0
    g = None
    if skin_path is not None:
        g = _read_png(skin_path)
        if g.ndim == 3:
            g = g[..., 0]
        g = (g > 0).astype(np.float64)
    return FaceMask.from_weights(w, g)


# ---------------------------------------------------------------------------
# PNG I/O

def _read_png(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head != b"\x89PNG\r\n\x1a\n":
        raise FormatError(f"{path}: not a PNG file", section="signature", offset=0)
    data = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FormatError(f"{path}: malformed PNG", section="body")
    if data.dtype not in (np.uint8, np.uint16):
        raise FormatError(f"{path}: unsupported bit depth {data.dtype}", section="IHDR")
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = data[..., :3]
        data = data[..., ::-1]
    return np.ascontiguousarray(data)


def load_image(path):
    """Read an 8- or 16-bit PNG as a float64 ``(H, W, 3)`` image in [0, 1]."""
    data = _read_png(path)
    scale = 255.0 if data.dtype == np.uint8 else 65535.0
    img = data.astype(np.float64) / scale
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img


def load_plane(path):
    data = _read_png(path)
    scale = 255.0 if data.dtype == np.uint8 else 65535.0
    if data.ndim == 3:
        data = data[..., 0]
    return data.astype(np.float64) / scale


def save_image(img, path, bits=8):
    """Write an image or plane as PNG, clamping to [0, 1] and rounding half up."""
    if bits not in (8, 16):
        raise FormatError(f"unsupported bit depth {bits}")
    img = _float(img)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise InvalidInputError(f"cannot save array of shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("save_image: non-finite pixels")
    maxv = 2 ** bits - 1
    q = np.floor(np.clip(img, 0.0, 1.0) * maxv + 0.5)
    q = q.astype(np.uint8 if bits == 8 else np.uint16)
    if q.ndim == 3:
        q = q[..., ::-1]
    path = os.fspath(path)
    if not cv2.imwrite(path, np.ascontiguousarray(q)):
        raise OSError(f"could not write {path}")
