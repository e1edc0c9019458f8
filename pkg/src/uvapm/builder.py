"""Per-channel PCA albedo model and V-channel residual detail basis."""
from dataclasses import dataclass, field
import logging
import os
import struct

import numpy as np

from . import _binio
from .errors import FormatError, InsufficientDataError, InvalidInputError, InvalidRankError
from .uvcore import check_image, check_plane, load_image, resize, rgb_to_hsv

log = logging.getLogger(__name__)

MODEL_MAGIC = b"UVAPM1"
DETAIL_MAGIC = b"UVDET1"
FORMAT_VERSION = 1
CHANNEL_NAMES = ("R", "G", "B")

# eigenvalues below this fraction of the largest are treated as zero rank
_RANK_RTOL = 1e-12


def normalize_signs(basis):
    """Flip columns so each column's largest-magnitude entry is positive."""
    basis = np.array(basis, copy=True)
    if basis.size == 0:
        return basis
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def snapshot_pca(data, k):
    """PCA of ``data`` (N samples x D dims) through the N x N Gram matrix.

    Returns ``(mean, basis, singular_values, total_variance)`` in float64.
    ``basis`` holds the top left singular vectors of the centred data as
    columns; components with numerically zero variance are dropped, so the
    returned rank may be below ``k``.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"expected an (N, D) data matrix, got {x.shape}")
    n, dim = x.shape
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {n}")
    if k < 0 or k > min(n - 1, dim):
        raise InvalidRankError(f"rank {k} outside [0, {min(n - 1, dim)}] for N={n}, D={dim}")
    mean = x.mean(axis=0)
    xc = x - mean
    gram = xc @ xc.T
    gram = 0.5 * (gram + gram.T)
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    total_variance = float(np.sum(xc * xc) / (n - 1))
    top = evals[0] if evals.size else 0.0
    keep = int(np.sum(evals[:k] > max(top, 0.0) * _RANK_RTOL)) if top > 0 else 0
    sv = np.sqrt(np.maximum(evals[:keep], 0.0))
    basis = (xc.T @ evecs[:, :keep]) / sv
    # one Gram-Schmidt pass tightens orthogonality lost to the division by sv
    if keep:
        basis, r = np.linalg.qr(basis)
        basis = basis * np.sign(np.diag(r))
    return mean, normalize_signs(basis), sv, total_variance


@dataclass(frozen=True, eq=False)
class ChannelBasis:
    """Mean plus orthonormal basis for one square plane of size ``d x d``."""

    resolution: int
    mean: np.ndarray
    basis: np.ndarray
    singular_values: np.ndarray
    total_variance: float = 0.0
    n_samples: int = 0

    def __post_init__(self):
        d = int(self.resolution)
        mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        basis = np.asarray(self.basis, dtype=np.float32)
        if basis.ndim == 1:
            basis = basis.reshape(-1, 0 if basis.size == 0 else 1)
        sv = np.asarray(self.singular_values, dtype=np.float32).reshape(-1)
        if mean.size != d * d or basis.shape[0] != d * d or basis.shape[1] != sv.size:
            raise InvalidInputError(
                f"inconsistent basis shapes: d={d}, mean={mean.shape}, basis={basis.shape}, sv={sv.shape}")
        object.__setattr__(self, "resolution", d)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "singular_values", sv)
        object.__setattr__(self, "total_variance", float(self.total_variance))
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def rank(self):
        return self.basis.shape[1]

    def explained_variance_ratio(self):
        if self.total_variance <= 0 or self.n_samples < 2:
            return np.zeros(self.rank)
        return self.singular_values.astype(np.float64) ** 2 / (self.n_samples - 1) / self.total_variance

    def project(self, flat):
        return self.basis.T.astype(np.float64) @ (np.asarray(flat, dtype=np.float64) - self.mean)

    def reconstruct(self, coeffs):
        return self.mean + self.basis.astype(np.float64) @ np.asarray(coeffs, dtype=np.float64)

    def equals(self, other):
        return (type(self) is type(other)
                and self.resolution == other.resolution
                and self.n_samples == other.n_samples
                and self.total_variance == other.total_variance
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.basis, other.basis)
                and np.array_equal(self.singular_values, other.singular_values))


class DetailBasis(ChannelBasis):
    """PCA basis over V-channel residual planes at the detail resolution."""


@dataclass(frozen=True, eq=False)
class UVAPMModel:
    channels: tuple = field()

    def __post_init__(self):
        chans = tuple(self.channels)
        if len(chans) != 3:
            raise InvalidInputError("UVAPMModel needs exactly three channels (R, G, B)")
        if len({c.resolution for c in chans}) != 1 or len({c.rank for c in chans}) != 1:
            raise InvalidInputError("all channels must share resolution and rank")
        object.__setattr__(self, "channels", chans)

    @property
    def resolution(self):
        return self.channels[0].resolution

    @property
    def rank(self):
        return self.channels[0].rank

    @property
    def n_coeffs(self):
        return 3 * self.rank

    def mean_image(self):
        d = self.resolution
        return np.stack([c.mean.reshape(d, d) for c in self.channels], axis=-1).astype(np.float64)

    def equals(self, other):
        return isinstance(other, UVAPMModel) and all(
            a.equals(b) for a, b in zip(self.channels, other.channels))


# ---------------------------------------------------------------------------
# building

def _stack_images(images):
    if len(images) < 2:
        raise InsufficientDataError(f"need at least 2 images, got {len(images)}")
    imgs = [check_image(im) for im in images]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise InvalidInputError(f"images have mixed resolutions: {sorted(shapes)}")
    h, w, _ = imgs[0].shape
    if h != w:
        raise InvalidInputError(f"images must be square, got {h}x{w}")
    return np.stack(imgs).astype(np.float64), h


def build_uvapm(images, k):
    """Build the per-channel PCA albedo model from ``d x d`` UV images.

    Each of R, G, B is unfolded row-first and decomposed independently.
    If the data supports fewer than ``k`` components the model rank is
    clamped to the smallest rank achieved across channels.
    """
    stack, d = _stack_images(images)
    n = stack.shape[0]
    if k < 0 or k > min(n - 1, d * d):
        raise InvalidRankError(f"k={k} exceeds min(N-1, d^2) = {min(n - 1, d * d)}")
    results = [snapshot_pca(stack[..., c].reshape(n, -1), k) for c in range(3)]
    rank = min(r[1].shape[1] for r in results)
    if rank < k:
        log.warning("requested rank %d but data supports %d; clamping", k, rank)
    channels = tuple(
        ChannelBasis(d, mean, basis[:, :rank], sv[:rank], total_variance=tv, n_samples=n)
        for mean, basis, sv, tv in results)
    return UVAPMModel(channels)


def encode_coarse(img, model):
    """Least-squares coarse coefficients, channel-major (R block, G block, B block)."""
    img = check_image(img)
    d = model.resolution
    if img.shape[:2] != (d, d):
        raise InvalidInputError(f"image is {img.shape[:2]}, model resolution is {d}")
    return np.concatenate([ch.project(img[..., c].reshape(-1))
                           for c, ch in enumerate(model.channels)])


def reconstruct_coarse(img, model):
    d = model.resolution
    coeffs = encode_coarse(img, model)
    k = model.rank
    return np.stack([ch.reconstruct(coeffs[c * k:(c + 1) * k]).reshape(d, d)
                     for c, ch in enumerate(model.channels)], axis=-1)


def extract_residuals(images, model, d_detail):
    """V-channel residual planes between each image and its coarse reconstruction.

    The coarse map is rebuilt at the model resolution, upsampled bilinearly
    to ``d_detail`` and compared in V against the original resampled to
    ``d_detail``.
    """
    d = model.resolution
    if d_detail < d:
        raise InvalidInputError(f"detail resolution {d_detail} is below model resolution {d}")
    out = []
    for img in images:
        img = check_image(img)
        if img.shape[0] < d or img.shape[1] < d:
            raise InvalidInputError(f"image {img.shape[:2]} is below model resolution {d}")
        coarse = reconstruct_coarse(resize(img, d), model)
        up = resize(coarse, d_detail)
        v_orig = rgb_to_hsv(resize(img, d_detail))[..., 2]
        v_coarse = rgb_to_hsv(up)[..., 2]
        out.append(v_orig - v_coarse)
    return out


def build_detail_basis(residuals, m):
    if len(residuals) < 2:
        raise InsufficientDataError(f"need at least 2 residual planes, got {len(residuals)}")
    planes = [check_plane(r) for r in residuals]
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise InvalidInputError(f"residual planes have mixed resolutions: {sorted(shapes)}")
    h, w = planes[0].shape
    if h != w:
        raise InvalidInputError(f"residual planes must be square, got {h}x{w}")
    n = len(planes)
    if m < 0 or m > min(n - 1, h * w):
        raise InvalidRankError(f"m={m} exceeds min(N-1, d^2) = {min(n - 1, h * w)}")
    mean, basis, sv, tv = snapshot_pca(np.stack(planes).reshape(n, -1), m)
    if basis.shape[1] < m:
        log.warning("requested detail rank %d but data supports %d; clamping", m, basis.shape[1])
    return DetailBasis(h, mean, basis, sv, total_variance=tv, n_samples=n)


def encode_detail(residual, basis):
    residual = check_plane(residual)
    d = basis.resolution
    if residual.shape != (d, d):
        raise InvalidInputError(f"residual is {residual.shape}, detail resolution is {d}")
    return basis.project(residual.reshape(-1))


def list_pngs(image_dir):
    """PNG paths in ``image_dir``; lexicographic order defines sample order."""
    if not os.path.isdir(image_dir):
        raise FileNotFoundError(f"no such directory: {image_dir}")
    names = sorted(n for n in os.listdir(image_dir) if n.lower().endswith(".png"))
    return [os.path.join(image_dir, n) for n in names]


def load_dataset(image_dir, resolution):
    """Load every PNG in a directory, resampled to ``resolution``."""
    return [resize(load_image(p), resolution) for p in list_pngs(image_dir)]


# ---------------------------------------------------------------------------
# serialization

def _pack_channel(ch):
    return (struct.pack("<d", ch.total_variance)
            + _binio.f32(ch.mean)
            + _binio.f32(ch.singular_values)
            + _binio.f32_colmajor(ch.basis))


def _unpack_channel(reader, d, k, n, name, cls):
    tv, = reader.unpack("<d", f"{name} statistics")
    mean = reader.floats(d * d, f"{name} mean")
    sv = reader.floats(k, f"{name} singular values")
    basis = reader.floats(d * d * k, f"{name} basis").reshape((d * d, k), order="F")
    return cls(d, mean, basis, sv, total_variance=tv, n_samples=n)


def model_to_bytes(obj):
    if isinstance(obj, UVAPMModel):
        magic, chans = MODEL_MAGIC, obj.channels
    elif isinstance(obj, DetailBasis):
        magic, chans = DETAIL_MAGIC, (obj,)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    first = chans[0]
    head = magic + struct.pack("<HIII", FORMAT_VERSION, first.resolution, first.rank, first.n_samples)
    return head + b"".join(_pack_channel(c) for c in chans)


def model_from_bytes(data, name="<bytes>"):
    reader = _binio.Reader(data, name)
    magic = reader.take(6, "magic")
    if magic not in (MODEL_MAGIC, DETAIL_MAGIC):
        raise FormatError(f"{name}: bad magic {magic!r}", section="magic", offset=0)
    version, d, k, n = reader.unpack("<HIII", "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: unsupported version {version}", section="header", offset=6)
    if magic == MODEL_MAGIC:
        chans = tuple(_unpack_channel(reader, d, k, n, f"channel {c}", ChannelBasis)
                      for c in CHANNEL_NAMES)
        reader.finish()
        return UVAPMModel(chans)
    basis = _unpack_channel(reader, d, k, n, "detail", DetailBasis)
    reader.finish()
    return basis


def save_model(obj, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(obj))


def load_model(path):
    """Load a ``UVAPM1`` albedo model or a ``UVDET1`` detail basis."""
    with open(path, "rb") as fh:
        data = fh.read()
    return model_from_bytes(data, name=os.fspath(path))
