"""Mapping between unbounded optimizer coordinates and valid sensor parameters.

Each of the 17 scalars owns a fixed valid range. The squash is an affine+tanh
map onto that range: squash(x) = c + h*tanh((x - c)/h) with c the range center
and h the half-width. It is close to the identity deep inside the range and
saturates smoothly at the edges, so any real-valued optimizer state yields a
valid parameter vector.
"""

from __future__ import annotations

import numpy as np

from .augment import IDENTITY_VALUES, PARAM_NAMES, PARAM_RANGES

LO = np.array([PARAM_RANGES[n][0] for n in PARAM_NAMES])
HI = np.array([PARAM_RANGES[n][1] for n in PARAM_NAMES])
CENTER = (LO + HI) / 2.0
HALF = (HI - LO) / 2.0

N_PARAMS = len(PARAM_NAMES)

# atanh argument clip for converting boundary values (e.g. zero noise) into
# raw coordinates: +-0.999 keeps the squash slope ~1.3e-3 there, so boundary
# initialized parameters stay responsive to the optimizer instead of freezing.
_ATANH_CLIP = 0.999


def squash(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return CENTER + HALF * np.tanh((raw - CENTER) / HALF)


def squash_slope(raw: np.ndarray) -> np.ndarray:
    """d squash / d raw (the tanh sech^2 factor)."""
    raw = np.asarray(raw, dtype=np.float64)
    t = np.tanh((raw - CENTER) / HALF)
    return 1.0 - t * t


def unsquash(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    u = np.clip((values - CENTER) / HALF, -_ATANH_CLIP, _ATANH_CLIP)
    return CENTER + HALF * np.arctanh(u)


def squash_scalar(x: float, lo: float, hi: float) -> float:
    c = (lo + hi) / 2.0
    h = (hi - lo) / 2.0
    return float(c + h * np.tanh((x - c) / h))


def identity_raw() -> np.ndarray:
    """Raw coordinates whose squash is (as close as representable to) the
    identity parameter set."""
    return unsquash(np.array([IDENTITY_VALUES[n] for n in PARAM_NAMES]))


def sample_squashed_gaussian(mu: np.ndarray, sigma: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
    """squash(mu + sigma*z) with one standard normal per parameter."""
    z = rng.standard_normal(N_PARAMS)
    return squash(np.asarray(mu, dtype=np.float64) + np.asarray(sigma, dtype=np.float64) * z)
