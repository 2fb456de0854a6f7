"""The five sensor-effect augmentations and their fixed composition order.

Composition order is chromatic aberration -> blur -> exposure -> noise ->
color shift. Every op is pure: given the same image, parameters, and seeded
generator it returns a bit-identical result, and apply_pipeline is
bit-identical to chaining the five public ops by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels, imagecore
from ._kernels import CONTRAST_A
from .errors import InvalidArgumentError

BLUR_WINDOW = 9
_NOISE_BLOCK_ROWS = 64

# Valid range for each of the 17 free scalars, keyed by dotted name. The
# learner squashes onto these, profiles validate against them.
PARAM_RANGES: dict[str, tuple[float, float]] = {
    "chrom.g_scale": (0.9, 1.1),
    "chrom.r_tx": (-0.05, 0.05),
    "chrom.r_ty": (-0.05, 0.05),
    "chrom.g_tx": (-0.05, 0.05),
    "chrom.g_ty": (-0.05, 0.05),
    "chrom.b_tx": (-0.05, 0.05),
    "chrom.b_ty": (-0.05, 0.05),
    "blur.sigma": (0.0, 3.0),
    "exposure.delta_s": (-2.0, 2.0),
    "noise.poiss_r": (0.0, 0.1),
    "noise.poiss_g": (0.0, 0.1),
    "noise.poiss_b": (0.0, 0.1),
    "noise.gauss_r": (0.0, 0.1),
    "noise.gauss_g": (0.0, 0.1),
    "noise.gauss_b": (0.0, 0.1),
    "color.shift_a": (-0.5, 0.5),
    "color.shift_b": (-0.5, 0.5),
}
PARAM_NAMES = list(PARAM_RANGES)

# Values that make every effect a no-op (blur sigma -> delta kernel).
IDENTITY_VALUES: dict[str, float] = {name: 0.0 for name in PARAM_NAMES}
IDENTITY_VALUES["chrom.g_scale"] = 1.0
IDENTITY_VALUES["blur.sigma"] = 1e-6


def _check_range(name: str, value: float) -> None:
    lo, hi = PARAM_RANGES[name]
    if name == "blur.sigma":
        if not (value > lo and value <= hi):
            raise InvalidArgumentError(f"{name}: {value} outside ({lo}, {hi}]")
        return
    if not (lo <= value <= hi):
        raise InvalidArgumentError(f"{name}: {value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ChromAbParams:
    g_scale: float = 1.0
    r_tx: float = 0.0
    r_ty: float = 0.0
    g_tx: float = 0.0
    g_ty: float = 0.0
    b_tx: float = 0.0
    b_ty: float = 0.0

    def validate(self) -> None:
        for f in fields(self):
            _check_range(f"chrom.{f.name}", getattr(self, f.name))

    @property
    def is_identity(self) -> bool:
        return self.g_scale == 1.0 and all(
            getattr(self, n) == 0.0 for n in ("r_tx", "r_ty", "g_tx", "g_ty", "b_tx", "b_ty")
        )


@dataclass(frozen=True)
class BlurParams:
    sigma: float
    window: int = BLUR_WINDOW

    def validate(self) -> None:
        _check_range("blur.sigma", self.sigma)
        if self.window < 3 or self.window % 2 == 0:
            raise InvalidArgumentError(f"blur.window: must be odd and >= 3, got {self.window}")


@dataclass(frozen=True)
class ExposureParams:
    delta_s: float
    contrast_a: float = CONTRAST_A

    def validate(self) -> None:
        _check_range("exposure.delta_s", self.delta_s)


@dataclass(frozen=True)
class NoiseParams:
    poiss_r: float = 0.0
    poiss_g: float = 0.0
    poiss_b: float = 0.0
    gauss_r: float = 0.0
    gauss_g: float = 0.0
    gauss_b: float = 0.0

    def validate(self) -> None:
        for f in fields(self):
            _check_range(f"noise.{f.name}", getattr(self, f.name))

    @property
    def is_zero(self) -> bool:
        return all(getattr(self, f.name) == 0.0 for f in fields(self))


@dataclass(frozen=True)
class ColorParams:
    shift_a: float = 0.0
    shift_b: float = 0.0

    def validate(self) -> None:
        _check_range("color.shift_a", self.shift_a)
        _check_range("color.shift_b", self.shift_b)


@dataclass(frozen=True)
class SensorParams:
    chrom: ChromAbParams
    blur: BlurParams
    exposure: ExposureParams
    noise: NoiseParams
    color: ColorParams

    def validate(self) -> None:
        self.chrom.validate()
        self.blur.validate()
        self.exposure.validate()
        self.noise.validate()
        self.color.validate()

    @classmethod
    def identity(cls) -> "SensorParams":
        return cls.from_flat(np.array([IDENTITY_VALUES[n] for n in PARAM_NAMES]))

    @classmethod
    def from_flat(cls, values) -> "SensorParams":
        v = [float(x) for x in values]
        if len(v) != len(PARAM_NAMES):
            raise InvalidArgumentError(f"expected {len(PARAM_NAMES)} values, got {len(v)}")
        d = dict(zip(PARAM_NAMES, v))
        return cls(
            chrom=ChromAbParams(
                g_scale=d["chrom.g_scale"],
                r_tx=d["chrom.r_tx"], r_ty=d["chrom.r_ty"],
                g_tx=d["chrom.g_tx"], g_ty=d["chrom.g_ty"],
                b_tx=d["chrom.b_tx"], b_ty=d["chrom.b_ty"],
            ),
            blur=BlurParams(sigma=d["blur.sigma"]),
            exposure=ExposureParams(delta_s=d["exposure.delta_s"]),
            noise=NoiseParams(
                poiss_r=d["noise.poiss_r"], poiss_g=d["noise.poiss_g"], poiss_b=d["noise.poiss_b"],
                gauss_r=d["noise.gauss_r"], gauss_g=d["noise.gauss_g"], gauss_b=d["noise.gauss_b"],
            ),
            color=ColorParams(shift_a=d["color.shift_a"], shift_b=d["color.shift_b"]),
        )

    def to_flat(self) -> np.ndarray:
        d = {
            "chrom.g_scale": self.chrom.g_scale,
            "chrom.r_tx": self.chrom.r_tx, "chrom.r_ty": self.chrom.r_ty,
            "chrom.g_tx": self.chrom.g_tx, "chrom.g_ty": self.chrom.g_ty,
            "chrom.b_tx": self.chrom.b_tx, "chrom.b_ty": self.chrom.b_ty,
            "blur.sigma": self.blur.sigma,
            "exposure.delta_s": self.exposure.delta_s,
            "noise.poiss_r": self.noise.poiss_r, "noise.poiss_g": self.noise.poiss_g,
            "noise.poiss_b": self.noise.poiss_b,
            "noise.gauss_r": self.noise.gauss_r, "noise.gauss_g": self.noise.gauss_g,
            "noise.gauss_b": self.noise.gauss_b,
            "color.shift_a": self.color.shift_a, "color.shift_b": self.color.shift_b,
        }
        return np.array([d[n] for n in PARAM_NAMES], dtype=np.float64)


def _channel_transforms(p: ChromAbParams):
    return (
        np.array([[1.0, 0.0, p.r_tx], [0.0, 1.0, p.r_ty]]),
        np.array([[p.g_scale, 0.0, p.g_tx], [0.0, p.g_scale, p.g_ty]]),
        np.array([[1.0, 0.0, p.b_tx], [0.0, 1.0, p.b_ty]]),
    )


def _chrom_planar(planar: np.ndarray, p: ChromAbParams, out: np.ndarray) -> np.ndarray:
    h, w = planar.shape[1:]
    for c, tf in enumerate(_channel_transforms(p)):
        coeffs = imagecore._pixel_coeffs(tf, w, h)
        _kernels.warp_bilinear(planar[c], *coeffs, out[c])
    return out


def apply_chromatic_aberration(img: np.ndarray, p: ChromAbParams) -> np.ndarray:
    """Warp red/blue by their translations and green by scale-about-center
    plus translation, all bilinear with replicate borders."""
    imagecore.validate_image(img)
    p.validate()
    if p.is_identity:
        return img.copy()
    planar = imagecore.to_planar(img)
    out = np.empty_like(planar)
    _chrom_planar(planar, p, out)
    return imagecore.to_hwc(out)


def _kernel_is_delta(k1: np.ndarray) -> bool:
    c = k1.size // 2
    return k1[c] == 1.0 and not np.any(k1[:c]) and not np.any(k1[c + 1:])


def _blur_planar(planar: np.ndarray, k1: np.ndarray, out: np.ndarray,
                 tmp: np.ndarray, scratch: np.ndarray) -> np.ndarray:
    for c in range(planar.shape[0]):
        _kernels.blur_h(planar[c], k1, tmp, scratch)
        _kernels.blur_v(tmp, k1, out[c])
    return out


def apply_blur(img: np.ndarray, p: BlurParams) -> np.ndarray:
    """Separable convolution with the normalized Gaussian kernel, replicate
    border. Equivalent to dense convolution with gaussian_kernel(sigma, window)."""
    imagecore.validate_image(img)
    p.validate()
    k1 = imagecore.gaussian_kernel_1d(p.sigma, p.window)
    if _kernel_is_delta(k1):
        return img.copy()
    planar = imagecore.to_planar(img)
    out = np.empty_like(planar)
    h, w = planar.shape[1:]
    tmp = np.empty((h, w), dtype=np.float32)
    scratch = np.empty(w + k1.size - 1, dtype=np.float32)
    _blur_planar(planar, k1, out, tmp, scratch)
    return imagecore.to_hwc(out)


def _exposure_k(p: ExposureParams) -> np.float32:
    return np.float32(math.exp(-p.contrast_a * p.delta_s))


def apply_exposure(img: np.ndarray, p: ExposureParams) -> np.ndarray:
    """Re-expose through the sigmoid intensity model: invert it, shift the
    latent light level by delta_s, and re-apply."""
    imagecore.validate_image(img)
    p.validate()
    out = np.empty_like(img)
    _kernels.exposure_flat(img, _exposure_k(p), out)
    return out


def _noise_stds(p: NoiseParams):
    sp = np.array([p.poiss_r, p.poiss_g, p.poiss_b], dtype=np.float32)
    sg = np.array([p.gauss_r, p.gauss_g, p.gauss_b], dtype=np.float32)
    return sp, sg


def apply_noise(img: np.ndarray, p: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    """Add heteroscedastic sensor noise: per-pixel variance poiss*v + gauss,
    clamped to [0, 1]. All-zero parameters return the image unchanged without
    consuming the generator."""
    imagecore.validate_image(img)
    p.validate()
    if p.is_zero:
        return img.copy()
    sp, sg = _noise_stds(p)
    h, w = img.shape[:2]
    out = np.empty_like(img)
    for y0 in range(0, h, _NOISE_BLOCK_ROWS):
        y1 = min(y0 + _NOISE_BLOCK_ROWS, h)
        z = rng.standard_normal((y1 - y0, w, 3), dtype=np.float32)
        _kernels.noise_hwc(img[y0:y1], z, sp, sg, out[y0:y1])
    return out


def _color_shifts(p: ColorParams):
    # a* shift moves the Lab f_x term, b* shift moves f_z (L and Y unchanged).
    fx_shift = np.float32(p.shift_a * 128.0 / 500.0)
    fz_shift = np.float32(-p.shift_b * 128.0 / 200.0)
    return fx_shift, fz_shift


def apply_color_shift(img: np.ndarray, p: ColorParams) -> np.ndarray:
    """Translate a*/b* in Lab by shift*128 and convert back, clamping to gamut.
    Zero shifts return the image unchanged."""
    imagecore.validate_image(img)
    p.validate()
    if p.shift_a == 0.0 and p.shift_b == 0.0:
        return img.copy()
    fx_shift, fz_shift = _color_shifts(p)
    out = np.empty_like(img)
    _kernels.color_hwc(img, fx_shift, fz_shift, out)
    return out


_DUMMY_Z = np.zeros((1, 1, 3), dtype=np.float32)
_ZERO3 = np.zeros(3, dtype=np.float32)


def apply_pipeline(img: np.ndarray, p: SensorParams, rng: np.random.Generator) -> np.ndarray:
    """Apply all five effects in order. Bit-identical to chaining the public
    ops with the same generator state."""
    imagecore.validate_image(img)
    p.validate()

    planar = imagecore.to_planar(img)
    h, w = planar.shape[1:]

    if not p.chrom.is_identity:
        warped = np.empty_like(planar)
        _chrom_planar(planar, p.chrom, warped)
        planar = warped

    k1 = imagecore.gaussian_kernel_1d(p.blur.sigma, p.blur.window)
    if not _kernel_is_delta(k1):
        blurred = np.empty_like(planar)
        tmp = np.empty((h, w), dtype=np.float32)
        scratch = np.empty(w + k1.size - 1, dtype=np.float32)
        _blur_planar(planar, k1, blurred, tmp, scratch)
        planar = blurred

    k_exp = _exposure_k(p.exposure)
    noise_active = not p.noise.is_zero
    color_active = p.color.shift_a != 0.0 or p.color.shift_b != 0.0
    sp, sg = _noise_stds(p.noise) if noise_active else (_ZERO3, _ZERO3)
    fx_shift, fz_shift = _color_shifts(p.color)

    out = np.empty((h, w, 3), dtype=np.float32)
    rp, gp, bp = planar[0], planar[1], planar[2]
    if noise_active:
        for y0 in range(0, h, _NOISE_BLOCK_ROWS):
            y1 = min(y0 + _NOISE_BLOCK_ROWS, h)
            z = rng.standard_normal((y1 - y0, w, 3), dtype=np.float32)
            _kernels.stage_fused(rp, gp, bp, z, y0, k_exp, True, sp, sg, True,
                                 fx_shift, fz_shift, color_active, out)
    else:
        _kernels.stage_fused(rp, gp, bp, _DUMMY_Z, 0, k_exp, True, sp, sg, False,
                             fx_shift, fz_shift, color_active, out)
    return out
