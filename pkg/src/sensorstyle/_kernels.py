"""Numba-compiled per-pixel kernels and the colorimetry constants they share.

Everything here is private. The public ops in imagecore/augment wrap these
kernels; apply_pipeline additionally fuses the exposure+noise+color stage.
Bit-identity between the fused pipeline and manual op chaining relies on the
inlined scalar cores below being the single implementation of each effect.

sRGB transfer curves go through 65536-entry tables (nearest lookup, max error
~8e-6 in sRGB units); the Lab cube root uses a linearly interpolated table
(max error ~2e-8) because nearest lookup would amplify to ~1e-3 through the
steep encode slope near black. Scalar powf is not SIMD-vectorized on this
target, which makes direct evaluation ~25x slower than the tables.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# sRGB (IEC 61966-2-1) primaries -> CIE XYZ, D65 white. White point is taken
# as the exact row sums so that (1,1,1) maps to L=100, a=b=0 identically.
RGB_TO_XYZ = np.array(
    [
        [0.41239079926595934, 0.357584339383878, 0.1804807884018343],
        [0.21263900587151027, 0.715168678767756, 0.07219231536073371],
        [0.01933081871559182, 0.11919477979462598, 0.9505321522496607],
    ],
    dtype=np.float64,
)
WHITE_X = float(RGB_TO_XYZ[0].sum())
WHITE_Y = float(RGB_TO_XYZ[1].sum())
WHITE_Z = float(RGB_TO_XYZ[2].sum())
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)

# CIE Lab segmented transfer: f(t) = cbrt(t) above LAB_CUT, linear below.
LAB_CUT = 216.0 / 24389.0
LAB_KAPPA = 24389.0 / 27.0
LAB_F_SLOPE = LAB_KAPPA / 116.0
LAB_F_OFFSET = 16.0 / 116.0

# Exposure clamp: 0.255/255 in normalized units. The low bound is the largest
# float32 strictly below decimal 0.001 so that the v=0 identity deviation
# stays <= 1e-3 rather than 1e-3 plus half an ulp.
EXPOSURE_LO = float(np.nextafter(np.float32(0.001), np.float32(0.0)))
EXPOSURE_HI = 0.999
CONTRAST_A = 0.85

_LUT_N = 1 << 16


def _srgb_decode_f64(x):
    return np.where(x > 0.04045, ((x + 0.055) / 1.055) ** 2.4, x / 12.92)


def _srgb_encode_f64(x):
    return np.where(x > 0.0031308, 1.055 * x ** (1.0 / 2.4) - 0.055, 12.92 * x)


_grid = np.linspace(0.0, 1.0, _LUT_N, dtype=np.float64)
_DEC_LUT = _srgb_decode_f64(_grid).astype(np.float32)
_ENC_LUT = _srgb_encode_f64(_grid).astype(np.float32)
_CBRT_LO = LAB_CUT
_CBRT_HI = 1.0
_CBRT_LUT = (np.linspace(_CBRT_LO, _CBRT_HI, _LUT_N, dtype=np.float64) ** (1.0 / 3.0)).astype(
    np.float32
)

_LUT_SCALE = np.float32(_LUT_N - 1)
_CBRT_SCALE = np.float32((_LUT_N - 1) / (_CBRT_HI - _CBRT_LO))

_F32_CUT = np.float32(LAB_CUT)
_F32_FS = np.float32(LAB_F_SLOPE)
_F32_FO = np.float32(LAB_F_OFFSET)
_F32_EXPO_LO = np.float32(EXPOSURE_LO)
_F32_EXPO_HI = np.float32(EXPOSURE_HI)

_MX0 = np.float32(RGB_TO_XYZ[0, 0] / WHITE_X)
_MX1 = np.float32(RGB_TO_XYZ[0, 1] / WHITE_X)
_MX2 = np.float32(RGB_TO_XYZ[0, 2] / WHITE_X)
_MY0 = np.float32(RGB_TO_XYZ[1, 0])
_MY1 = np.float32(RGB_TO_XYZ[1, 1])
_MY2 = np.float32(RGB_TO_XYZ[1, 2])
_MZ0 = np.float32(RGB_TO_XYZ[2, 0] / WHITE_Z)
_MZ1 = np.float32(RGB_TO_XYZ[2, 1] / WHITE_Z)
_MZ2 = np.float32(RGB_TO_XYZ[2, 2] / WHITE_Z)

_IR0 = np.float32(XYZ_TO_RGB[0, 0] * WHITE_X)
_IR1 = np.float32(XYZ_TO_RGB[0, 1])
_IR2 = np.float32(XYZ_TO_RGB[0, 2] * WHITE_Z)
_IG0 = np.float32(XYZ_TO_RGB[1, 0] * WHITE_X)
_IG1 = np.float32(XYZ_TO_RGB[1, 1])
_IG2 = np.float32(XYZ_TO_RGB[1, 2] * WHITE_Z)
_IB0 = np.float32(XYZ_TO_RGB[2, 0] * WHITE_X)
_IB1 = np.float32(XYZ_TO_RGB[2, 1])
_IB2 = np.float32(XYZ_TO_RGB[2, 2] * WHITE_Z)


@njit(cache=True, inline="always")
def _lut_nn(lut, v):
    i = int(v * _LUT_SCALE + np.float32(0.5))
    if i < 0:
        i = 0
    elif i >= _LUT_N:
        i = _LUT_N - 1
    return lut[i]


@njit(cache=True, inline="always")
def _cbrt_lut(t):
    u = (t - _F32_CUT) * _CBRT_SCALE
    i = int(u)
    if i < 0:
        i = 0
        u = np.float32(0.0)
    elif i >= _LUT_N - 1:
        i = _LUT_N - 2
        u = np.float32(_LUT_N - 1)
    f = u - np.float32(i)
    return _CBRT_LUT[i] + (_CBRT_LUT[i + 1] - _CBRT_LUT[i]) * f


@njit(cache=True, inline="always")
def _expo_px(v, k_exp):
    if v < _F32_EXPO_LO:
        v = _F32_EXPO_LO
    elif v > _F32_EXPO_HI:
        v = _F32_EXPO_HI
    return v / (v + (np.float32(1.0) - v) * k_exp)


@njit(cache=True, inline="always")
def _noise_px(v, zv, sp, sg):
    r = v + np.sqrt(sp * v + sg) * zv
    if r < 0.0:
        return np.float32(0.0)
    if r > 1.0:
        return np.float32(1.0)
    return r


@njit(cache=True, inline="always")
def _color_px(r, g, b, fx_shift, fz_shift):
    rl = _lut_nn(_DEC_LUT, r)
    gl = _lut_nn(_DEC_LUT, g)
    bl = _lut_nn(_DEC_LUT, b)
    xr = _MX0 * rl + _MX1 * gl + _MX2 * bl
    y = _MY0 * rl + _MY1 * gl + _MY2 * bl
    zr = _MZ0 * rl + _MZ1 * gl + _MZ2 * bl
    fx = _cbrt_lut(xr) if xr > _F32_CUT else _F32_FS * xr + _F32_FO
    fz = _cbrt_lut(zr) if zr > _F32_CUT else _F32_FS * zr + _F32_FO
    fx = fx + fx_shift
    fz = fz + fz_shift
    xr2 = fx * fx * fx
    if xr2 <= _F32_CUT:
        xr2 = (fx - _F32_FO) / _F32_FS
    zr2 = fz * fz * fz
    if zr2 <= _F32_CUT:
        zr2 = (fz - _F32_FO) / _F32_FS
    r2 = _IR0 * xr2 + _IR1 * y + _IR2 * zr2
    g2 = _IG0 * xr2 + _IG1 * y + _IG2 * zr2
    b2 = _IB0 * xr2 + _IB1 * y + _IB2 * zr2
    if r2 < 0.0:
        r2 = np.float32(0.0)
    elif r2 > 1.0:
        r2 = np.float32(1.0)
    if g2 < 0.0:
        g2 = np.float32(0.0)
    elif g2 > 1.0:
        g2 = np.float32(1.0)
    if b2 < 0.0:
        b2 = np.float32(0.0)
    elif b2 > 1.0:
        b2 = np.float32(1.0)
    return _lut_nn(_ENC_LUT, r2), _lut_nn(_ENC_LUT, g2), _lut_nn(_ENC_LUT, b2)


@njit(cache=True)
def blur_h(src, k, out, scratch):
    h, w = src.shape
    r = k.size // 2
    for y in range(h):
        row = src[y]
        for i in range(r):
            scratch[i] = row[0]
            scratch[w + r + i] = row[w - 1]
        for x in range(w):
            scratch[r + x] = row[x]
        orow = out[y]
        k0 = k[0]
        for x in range(w):
            orow[x] = k0 * scratch[x]
        for j in range(1, k.size):
            kj = k[j]
            for x in range(w):
                orow[x] += kj * scratch[x + j]
    return out


@njit(cache=True)
def blur_v(src, k, out):
    h, w = src.shape
    r = k.size // 2
    for y in range(h):
        orow = out[y]
        yy0 = y - r
        if yy0 < 0:
            yy0 = 0
        elif yy0 >= h:
            yy0 = h - 1
        k0 = k[0]
        row0 = src[yy0]
        for x in range(w):
            orow[x] = k0 * row0[x]
        for j in range(1, k.size):
            yy = y + j - r
            if yy < 0:
                yy = 0
            elif yy >= h:
                yy = h - 1
            row = src[yy]
            kj = k[j]
            for x in range(w):
                orow[x] += kj * row[x]
    return out


@njit(cache=True)
def warp_bilinear(src, axx, axy, bx, ayx, ayy, by, out):
    # out(x, y) = bilinear sample of src at the affine pixel-space position;
    # replicate border. Coefficients are float64 so identity stays exact.
    h, w = src.shape
    for y in range(h):
        xs_base = axy * y + bx
        ys_base = ayy * y + by
        for x in range(w):
            xs = axx * x + xs_base
            ys = ayx * x + ys_base
            x0 = int(np.floor(xs))
            y0 = int(np.floor(ys))
            fx = np.float32(xs - x0)
            fy = np.float32(ys - y0)
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            y0c = min(max(y0, 0), h - 1)
            y1c = min(max(y0 + 1, 0), h - 1)
            one = np.float32(1.0)
            top = src[y0c, x0c] * (one - fx) + src[y0c, x1c] * fx
            bot = src[y1c, x0c] * (one - fx) + src[y1c, x1c] * fx
            out[y, x] = top * (one - fy) + bot * fy
    return out


@njit(cache=True)
def exposure_flat(src, k_exp, out):
    s = src.ravel()
    o = out.ravel()
    for i in range(s.size):
        o[i] = _expo_px(s[i], k_exp)
    return out


@njit(cache=True)
def noise_hwc(src, z, sp, sg, out):
    h, w, _ = src.shape
    for y in range(h):
        for x in range(w):
            out[y, x, 0] = _noise_px(src[y, x, 0], z[y, x, 0], sp[0], sg[0])
            out[y, x, 1] = _noise_px(src[y, x, 1], z[y, x, 1], sp[1], sg[1])
            out[y, x, 2] = _noise_px(src[y, x, 2], z[y, x, 2], sp[2], sg[2])
    return out


@njit(cache=True)
def color_hwc(src, fx_shift, fz_shift, out):
    h, w, _ = src.shape
    for y in range(h):
        for x in range(w):
            r, g, b = _color_px(src[y, x, 0], src[y, x, 1], src[y, x, 2], fx_shift, fz_shift)
            out[y, x, 0] = r
            out[y, x, 1] = g
            out[y, x, 2] = b
    return out


@njit(cache=True)
def stage_fused(rp, gp, bp, z, y0, k_exp, do_expo, sp, sg, do_noise, fx_shift, fz_shift, do_color, out):
    # Fused exposure -> noise -> color over rows [y0, y0+z.shape[0]) of the
    # planar channels, writing interleaved HWC output. z is indexed relative
    # to y0 exactly as the standalone noise op consumes its per-block draws.
    rows = z.shape[0] if do_noise else out.shape[0] - y0
    w = rp.shape[1]
    for yy in range(rows):
        y = y0 + yy
        for x in range(w):
            r = rp[y, x]
            g = gp[y, x]
            b = bp[y, x]
            if do_expo:
                r = _expo_px(r, k_exp)
                g = _expo_px(g, k_exp)
                b = _expo_px(b, k_exp)
            if do_noise:
                r = _noise_px(r, z[yy, x, 0], sp[0], sg[0])
                g = _noise_px(g, z[yy, x, 1], sp[1], sg[1])
                b = _noise_px(b, z[yy, x, 2], sp[2], sg[2])
            if do_color:
                r, g, b = _color_px(r, g, b, fx_shift, fz_shift)
            out[y, x, 0] = r
            out[y, x, 1] = g
            out[y, x, 2] = b
    return out


def warm_up():
    """Compile every kernel on a tiny input (first-call latency control)."""
    ch = np.zeros((4, 4), dtype=np.float32)
    img = np.zeros((4, 4, 3), dtype=np.float32)
    z = np.zeros((4, 4, 3), dtype=np.float32)
    k = np.full(3, 1.0 / 3.0, dtype=np.float32)
    sp = np.zeros(3, dtype=np.float32)
    scratch = np.empty(4 + 2, dtype=np.float32)
    blur_h(ch, k, ch.copy(), scratch)
    blur_v(ch, k, ch.copy())
    warp_bilinear(ch, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, ch.copy())
    exposure_flat(img, np.float32(1.0), img.copy())
    noise_hwc(img, z, sp, sp, img.copy())
    color_hwc(img, np.float32(0.0), np.float32(0.0), img.copy())
    stage_fused(ch, ch, ch, z, 0, np.float32(1.0), True, sp, sp, True,
                np.float32(0.0), np.float32(0.0), True, img.copy())
