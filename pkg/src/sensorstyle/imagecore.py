"""Pixel containers, color-space math, geometric warps, and kernel builders.

An image is a plain numpy array of shape (H, W, 3), dtype float32, RGB channel
order, sRGB-encoded values in [0, 1]. A Lab image has the same layout with
channels L in [0, 100] and a/b unnormalized (roughly +-128). Kernels are
(size, size) float32 arrays that sum to 1.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from . import _kernels
from ._kernels import (
    LAB_CUT,
    LAB_F_OFFSET,
    LAB_F_SLOPE,
    RGB_TO_XYZ,
    WHITE_X,
    WHITE_Z,
    XYZ_TO_RGB,
)
from .errors import ImageDecodeError, InvalidArgumentError

Image = np.ndarray


def validate_image(img: np.ndarray, name: str = "image") -> None:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"{name}: expected (H, W, 3) array")
    if img.dtype != np.float32:
        raise InvalidArgumentError(f"{name}: expected float32, got {img.dtype}")
    if not np.isfinite(img).all():
        raise InvalidArgumentError(f"{name}: contains non-finite values")


def as_image(arr) -> Image:
    """Coerce array-like data to a valid float32 [0,1] image."""
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgumentError("as_image: expected (H, W, 3) data")
    return np.clip(img, 0.0, 1.0)


def _srgb_decode(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.04045, ((x + 0.055) / 1.055) ** 2.4, x / 12.92)


def _srgb_encode(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0031308, 1.055 * x ** (1.0 / 2.4) - 0.055, 12.92 * x)


def to_lab(img: Image) -> np.ndarray:
    """sRGB [0,1] -> CIE L*a*b* (D65), float32 output."""
    validate_image(img)
    lin = _srgb_decode(img.astype(np.float64))
    xyz = lin.reshape(-1, 3) @ RGB_TO_XYZ.T
    xyz[:, 0] /= WHITE_X
    xyz[:, 2] /= WHITE_Z
    f = np.where(xyz > LAB_CUT, np.cbrt(xyz), LAB_F_SLOPE * xyz + LAB_F_OFFSET)
    lab = np.empty_like(f)
    lab[:, 0] = 116.0 * f[:, 1] - 16.0
    lab[:, 1] = 500.0 * (f[:, 0] - f[:, 1])
    lab[:, 2] = 200.0 * (f[:, 1] - f[:, 2])
    return lab.reshape(img.shape).astype(np.float32)


def from_lab(lab: np.ndarray) -> Image:
    """Inverse of to_lab; out-of-gamut results clamp to [0, 1]."""
    if not isinstance(lab, np.ndarray) or lab.ndim != 3 or lab.shape[2] != 3:
        raise InvalidArgumentError("from_lab: expected (H, W, 3) array")
    flat = lab.reshape(-1, 3).astype(np.float64)
    fy = (flat[:, 0] + 16.0) / 116.0
    fx = fy + flat[:, 1] / 500.0
    fz = fy - flat[:, 2] / 200.0
    f = np.stack([fx, fy, fz], axis=1)
    t = f ** 3
    xyz = np.where(t > LAB_CUT, t, (f - LAB_F_OFFSET) / LAB_F_SLOPE)
    xyz[:, 0] *= WHITE_X
    xyz[:, 2] *= WHITE_Z
    lin = xyz @ XYZ_TO_RGB.T
    srgb = _srgb_encode(np.clip(lin, 0.0, None))
    return np.clip(srgb, 0.0, 1.0).reshape(lab.shape).astype(np.float32)


def gaussian_kernel_1d(sigma: float, size: int = 9) -> np.ndarray:
    if not sigma > 0:
        raise InvalidArgumentError(f"gaussian kernel: sigma must be > 0, got {sigma}")
    if size < 3 or size % 2 == 0:
        raise InvalidArgumentError(f"gaussian kernel: size must be odd and >= 3, got {size}")
    c = (size - 1) / 2.0
    d = np.arange(size, dtype=np.float64) - c
    w = np.exp(-(d * d) / (2.0 * float(sigma) ** 2))
    return (w / w.sum()).astype(np.float32)


def gaussian_kernel(sigma: float, size: int = 9) -> np.ndarray:
    """Normalized 2-D Gaussian, equal to the outer product of the 1-D kernel."""
    k1 = gaussian_kernel_1d(sigma, size).astype(np.float64)
    k2 = np.outer(k1, k1)
    return (k2 / k2.sum()).astype(np.float32)


def _pixel_coeffs(transform: np.ndarray, width: int, height: int):
    """Fold a normalized-coordinate 2x3 affine into pixel-space sampling
    coefficients src = (axx*x + axy*y + bx, ayx*x + ayy*y + by).

    Normalized coordinates put (0,0) at the image center with x spanning
    [-0.5, 0.5] over the width and y over the height. Composing in float64
    keeps the identity transform bit-exact.
    """
    t = np.asarray(transform, dtype=np.float64)
    if t.shape != (2, 3):
        raise InvalidArgumentError(f"warp: transform must be 2x3, got {t.shape}")
    a, b, c = t[0]
    d, e, f = t[1]
    det = a * e - b * d
    if abs(det) < 1e-12:
        raise InvalidArgumentError("warp: transform is singular")
    ia, ib = e / det, -b / det
    id_, ie = -d / det, a / det
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    r = width / height
    axx = ia
    axy = ib * r
    bx = cx - ia * cx - ib * r * cy - width * (ia * c + ib * f)
    ayx = id_ / r
    ayy = ie
    by = cy - id_ / r * cx - ie * cy - height * (id_ * c + ie * f)
    return axx, axy, bx, ayx, ayy, by


def warp_affine_channel(channel: np.ndarray, transform: np.ndarray) -> np.ndarray:
    """Bilinear warp of one channel by a 2x3 affine in normalized coordinates.

    The output at (x, y) samples the input at transform^-1(x, y); out-of-bounds
    samples replicate the border.
    """
    ch = np.asarray(channel, dtype=np.float32)
    if ch.ndim != 2:
        raise InvalidArgumentError("warp: channel must be 2-D")
    h, w = ch.shape
    coeffs = _pixel_coeffs(transform, w, h)
    out = np.empty_like(ch)
    _kernels.warp_bilinear(np.ascontiguousarray(ch), *coeffs, out)
    return out


def resize_and_crop(img: Image, shorter_side: int, crop: int) -> Image:
    """Bilinear resize so min(width, height) == shorter_side, then center crop."""
    validate_image(img)
    if crop > shorter_side:
        raise InvalidArgumentError(f"resize_and_crop: crop {crop} > shorter side {shorter_side}")
    h, w = img.shape[:2]
    if h <= w:
        nh = shorter_side
        nw = max(1, round(w * shorter_side / h))
    else:
        nw = shorter_side
        nh = max(1, round(h * shorter_side / w))
    resized = _resample_axis(_resample_axis(img, nh, axis=0), nw, axis=1)
    oy = (nh - crop) // 2
    ox = (nw - crop) // 2
    return np.ascontiguousarray(resized[oy:oy + crop, ox:ox + crop])


def _resample_axis(img: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = img.shape[axis]
    if n_out == n_in:
        return img
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(pos).astype(np.int64)
    frac = (pos - i0).astype(np.float32)
    frac[i0 < 0] = 0.0
    frac[i0 >= n_in - 1] = 0.0
    i0 = np.clip(i0, 0, n_in - 1)
    i1 = np.clip(i0 + 1, 0, n_in - 1)
    a = np.take(img, i0, axis=axis)
    b = np.take(img, i1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = n_out
    f = frac.reshape(shape)
    return (a * (1.0 - f) + b * f).astype(np.float32)


def decode_image(data: bytes) -> Image:
    """Decode PNG/JPEG bytes to a float32 [0,1] RGB image.

    Grayscale inputs are replicated to 3 channels; alpha channels are dropped.
    """
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc
    return (arr.astype(np.float32) / 255.0)


def encode_image(img: Image, format: str = "png") -> bytes:
    """Encode a float32 [0,1] image to PNG or JPEG bytes (8-bit channels)."""
    validate_image(img)
    fmt = format.lower()
    if fmt not in ("png", "jpeg", "jpg"):
        raise InvalidArgumentError(f"encode_image: unsupported format {format!r}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(q, mode="RGB").save(buf, format="JPEG" if fmt in ("jpeg", "jpg") else "PNG")
    return buf.getvalue()


def load_image(path) -> Image:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc
    try:
        return decode_image(data)
    except ImageDecodeError as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc


def save_image(path, img: Image, format: str = "png") -> None:
    data = encode_image(img, format=format)
    with open(path, "wb") as fh:
        fh.write(data)


def probe_image_size(path):
    """Read (width, height) from the file header without decoding pixels."""
    try:
        with PILImage.open(path) as im:
            return im.width, im.height
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc


def to_planar(img: Image) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def to_hwc(planar: np.ndarray) -> Image:
    return np.ascontiguousarray(planar.transpose(1, 2, 0))
