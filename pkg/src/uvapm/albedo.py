"""Decode coefficients to albedo maps and fuse coarse colour with V-channel detail."""
import json

import numpy as np

from .errors import InvalidInputError
from .uvcore import (check_image, check_plane, hsv_to_rgb, merge_channels, resize,
                     resize_adjoint, rgb_to_hsv)


def _coeffs(values, n, name):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size != n:
        raise InvalidInputError(f"{name} has {values.size} values, expected {n}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return values


def decode_coarse(model, alpha_c):
    """``mean + basis @ alpha`` per channel, merged into a ``d x d`` RGB map.

    The result is not clamped.
    """
    k = model.rank
    alpha_c = _coeffs(alpha_c, 3 * k, "alpha_c")
    d = model.resolution
    planes = [ch.reconstruct(alpha_c[i * k:(i + 1) * k]).reshape(d, d)
              for i, ch in enumerate(model.channels)]
    return merge_channels(*planes)


def decode_detail(basis, alpha_d):
    """Signed V offsets ``mean + basis @ alpha_d`` at the detail resolution."""
    alpha_d = _coeffs(alpha_d, basis.rank, "alpha_d")
    d = basis.resolution
    return basis.reconstruct(alpha_d).reshape(d, d)


def fuse(coarse, detail):
    """Add ``detail`` to the V channel of the upsampled coarse map.

    H and S come from the coarse map; V + detail is clamped to [0, 1]
    before converting back to RGB.
    """
    coarse = check_image(coarse, "coarse albedo")
    detail = check_plane(detail, "detail")
    if detail.shape[0] < coarse.shape[0] or detail.shape[1] < coarse.shape[1]:
        raise InvalidInputError(
            f"detail {detail.shape} is smaller than coarse map {coarse.shape[:2]}")
    up = resize(coarse, detail.shape[0], detail.shape[1])
    hsv = rgb_to_hsv(up)
    v = np.clip(hsv[..., 2] + detail, 0.0, 1.0)
    return hsv_to_rgb(merge_channels(hsv[..., 0], hsv[..., 1], v))


def fuse_vjp(up, detail, grad_out):
    """Vector-Jacobian product of the V-shift fusion at full resolution.

    ``up`` is the coarse map already at the detail resolution. Uses the
    hexcone identity ``out = up * V' / V`` (``V = max(up)``) so the
    derivative is closed-form. Clamps contribute a zero subgradient.
    Returns ``(grad_up, grad_detail)``.
    """
    up = np.asarray(up, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    m = up.max(axis=-1)
    arg = up.argmax(axis=-1)
    vsum = m + detail
    vprime = np.clip(vsum, 0.0, 1.0)
    live = ((vsum > 0.0) & (vsum < 1.0)).astype(np.float64)

    pos = m > 0
    safe_m = np.where(pos, m, 1.0)
    ratio = np.where(pos, vprime / safe_m, 0.0)
    raw = up * ratio[..., None]
    unclipped = ((raw >= 0.0) & (raw <= 1.0)).astype(np.float64)
    g_pos = g * unclipped

    grad_up = g_pos * ratio[..., None]
    dratio_dm = np.where(pos, live / safe_m - vprime / safe_m ** 2, 0.0)
    grad_m = np.sum(g_pos * up, axis=-1) * dratio_dm
    grad_detail = np.where(pos, np.sum(g_pos * up, axis=-1) * live / safe_m, 0.0)

    # achromatic black pixels: output is (V', V', V')
    neg = ~pos
    gsum = np.sum(g * unclipped, axis=-1)
    grad_m = np.where(neg, gsum * live, grad_m)
    grad_detail = np.where(neg, gsum * live, grad_detail)

    np.put_along_axis(grad_up, arg[..., None],
                      np.take_along_axis(grad_up, arg[..., None], axis=-1) + grad_m[..., None],
                      axis=-1)
    return grad_up, grad_detail


def generate(model, basis, alpha_c, alpha_d=None, resolution=None):
    """Coarse-to-fine albedo map from coefficients.

    Without a detail basis the coarse map is upsampled to ``resolution``
    (default: model resolution) and returned unfused.
    """
    coarse = decode_coarse(model, alpha_c)
    if basis is None:
        size = resolution or model.resolution
        return resize(coarse, size)
    if alpha_d is None:
        alpha_d = np.zeros(basis.rank)
    return fuse(coarse, decode_detail(basis, alpha_d))


class AlbedoPipeline:
    """Differentiable ``(alpha_c, alpha_d) -> albedo`` map used while fitting.

    Works in float64 copies of the model arrays. ``forward`` caches the
    intermediates that ``backward`` needs.
    """

    def __init__(self, model, basis=None):
        self.model = model
        self.basis = basis
        self.d = model.resolution
        self.k = model.rank
        self.m = basis.rank if basis is not None else 0
        self.resolution = basis.resolution if basis is not None else self.d
        self._means = [ch.mean.astype(np.float64) for ch in model.channels]
        self._bases = [ch.basis.astype(np.float64) for ch in model.channels]
        if basis is not None:
            self._dmean = basis.mean.astype(np.float64)
            self._dbasis = basis.basis.astype(np.float64)
        self._cache = None

    def forward(self, alpha_c, alpha_d=None):
        alpha_c = _coeffs(alpha_c, 3 * self.k, "alpha_c")
        d, k = self.d, self.k
        coarse = np.stack([(self._means[i] + self._bases[i] @ alpha_c[i * k:(i + 1) * k]).reshape(d, d)
                           for i in range(3)], axis=-1)
        if self.basis is None:
            self._cache = None
            return coarse
        alpha_d = np.zeros(self.m) if alpha_d is None else _coeffs(alpha_d, self.m, "alpha_d")
        detail = (self._dmean + self._dbasis @ alpha_d).reshape(self.resolution, self.resolution)
        up = resize(coarse, self.resolution)
        out = fuse(coarse, detail)
        self._cache = (up, detail)
        return out

    def backward(self, grad_albedo):
        """Gradients ``(d/d alpha_c, d/d alpha_d)`` of a scalar given ``d/d albedo``."""
        d, k = self.d, self.k
        if self.basis is None:
            grad_coarse = np.asarray(grad_albedo, dtype=np.float64)
            grad_d = np.zeros(0)
        else:
            up, detail = self._cache
            grad_up, grad_detail = fuse_vjp(up, detail, grad_albedo)
            grad_coarse = resize_adjoint(grad_up, d)
            grad_d = self._dbasis.T @ grad_detail.reshape(-1)
        grad_c = np.concatenate([self._bases[i].T @ grad_coarse[..., i].reshape(-1) for i in range(3)])
        return grad_c, grad_d


def save_coeffs(path, alpha_c, alpha_d=None, **extra):
    payload = {"alpha_c": [float(x) for x in np.asarray(alpha_c).reshape(-1)]}
    if alpha_d is not None:
        payload["alpha_d"] = [float(x) for x in np.asarray(alpha_d).reshape(-1)]
    payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_coeffs(path):
    """Read ``{"alpha_c": [...], "alpha_d": [...]}``; ``alpha_d`` may be absent."""
    with open(path) as fh:
        payload = json.load(fh)
    if "alpha_c" not in payload:
        raise InvalidInputError(f"{path}: missing 'alpha_c'")
    alpha_c = np.asarray(payload["alpha_c"], dtype=np.float64)
    alpha_d = payload.get("alpha_d")
    if alpha_d is not None:
        alpha_d = np.asarray(alpha_d, dtype=np.float64)
    return alpha_c, alpha_d
