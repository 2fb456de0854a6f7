"""Sensor profile persistence, validation, shipped profiles, and sampling.

A profile stores one distribution per free scalar: gaussian (mu, sigma) in
natural parameter units or uniform (lo, hi). Serialization is canonical JSON
(sorted keys, two-space indent, shortest round-trip floats), so saving the
same profile twice yields byte-identical files.

Three profiles ship with the toolkit: two learned sensor-transfer runs
(gta2cityscapes, gta2kitti) and the hand-chosen domain-randomization ranges
(randomization). Source values that fall outside a parameter's valid range
are clamped and recorded verbatim under raw_overrides.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import paramspace
from .augment import PARAM_NAMES, PARAM_RANGES, SensorParams
from .errors import ProfileError

SCHEMA_VERSION = 1
PROFILE_SUFFIX = ".sensorprofile.json"


@dataclass
class ParamDistribution:
    mode: str  # "gaussian" | "uniform"
    mu: float | None = None
    sigma: float | None = None
    lo: float | None = None
    hi: float | None = None

    def validate(self, name: str, has_override: bool) -> None:
        rlo, rhi = PARAM_RANGES[name]
        if self.mode == "gaussian":
            if self.mu is None or self.sigma is None:
                raise ProfileError(f"{name}: gaussian needs mu and sigma")
            if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
                raise ProfileError(f"{name}: non-finite distribution values")
            if self.sigma < 0:
                raise ProfileError(f"{name}: sigma must be >= 0")
            if not (rlo <= self.mu <= rhi) and not has_override:
                raise ProfileError(
                    f"{name}: mu {self.mu} outside [{rlo}, {rhi}] without raw_override"
                )
        elif self.mode == "uniform":
            if self.lo is None or self.hi is None:
                raise ProfileError(f"{name}: uniform needs lo and hi")
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                raise ProfileError(f"{name}: non-finite distribution values")
            if self.lo > self.hi:
                raise ProfileError(f"{name}: lo > hi")
            if (self.lo < rlo or self.hi > rhi) and not has_override:
                raise ProfileError(
                    f"{name}: range [{self.lo}, {self.hi}] outside [{rlo}, {rhi}] "
                    "without raw_override"
                )
        else:
            raise ProfileError(f"{name}: unknown mode {self.mode!r}")

    def describe(self) -> str:
        if self.mode == "gaussian":
            return f"{self.mu} ± {self.sigma}"
        return f"uniform [{self.lo}, {self.hi}]"


@dataclass
class SensorProfile:
    name: str
    params: dict[str, ParamDistribution]
    metadata: dict = field(default_factory=dict)
    raw_overrides: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ProfileError(f"unknown schema_version {self.schema_version}")
        for name in PARAM_NAMES:
            if name not in self.params:
                raise ProfileError(f"{name}: missing")
            self.params[name].validate(name, has_override=name in self.raw_overrides)

    def to_json_dict(self) -> dict:
        grouped: dict[str, dict] = {}
        for name in PARAM_NAMES:
            group, key = name.split(".", 1)
            dist = self.params[name]
            if dist.mode == "gaussian":
                entry = {"mode": "gaussian", "mu": dist.mu, "sigma": dist.sigma}
            else:
                entry = {"mode": "uniform", "lo": dist.lo, "hi": dist.hi}
            grouped.setdefault(group, {})[key] = entry
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "params": grouped,
            "metadata": self.metadata,
            "raw_overrides": self.raw_overrides,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SensorProfile":
        if not isinstance(doc, dict):
            raise ProfileError("profile document must be a JSON object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ProfileError(f"unknown schema_version {version!r}")
        grouped = doc.get("params")
        if not isinstance(grouped, dict):
            raise ProfileError("params: missing")
        params: dict[str, ParamDistribution] = {}
        for name in PARAM_NAMES:
            group, key = name.split(".", 1)
            entry = grouped.get(group, {}).get(key)
            if entry is None:
                raise ProfileError(f"{name}: missing")
            mode = entry.get("mode")
            if mode == "gaussian":
                if "mu" not in entry or "sigma" not in entry:
                    raise ProfileError(f"{name}: gaussian needs mu and sigma")
                params[name] = ParamDistribution(mode="gaussian",
                                                 mu=float(entry["mu"]),
                                                 sigma=float(entry["sigma"]))
            elif mode == "uniform":
                if "lo" not in entry or "hi" not in entry:
                    raise ProfileError(f"{name}: uniform needs lo and hi")
                params[name] = ParamDistribution(mode="uniform",
                                                 lo=float(entry["lo"]),
                                                 hi=float(entry["hi"]))
            else:
                raise ProfileError(f"{name}: unknown mode {mode!r}")
        profile = cls(
            name=str(doc.get("name", "")),
            params=params,
            metadata=dict(doc.get("metadata", {})),
            raw_overrides=dict(doc.get("raw_overrides", {})),
            schema_version=version,
        )
        profile.validate()
        return profile


def dumps_profile(profile: SensorProfile) -> str:
    profile.validate()
    return json.dumps(profile.to_json_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def loads_profile(text: str) -> SensorProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"invalid JSON: {exc}") from exc
    return SensorProfile.from_json_dict(doc)


def save_profile(profile: SensorProfile, path) -> None:
    data = dumps_profile(profile)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(data)


def load_profile(path) -> SensorProfile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ProfileError(f"{path}: {exc}") from exc
    try:
        return loads_profile(text)
    except ProfileError as exc:
        raise ProfileError(f"{path}: {exc}") from exc


def _g(mu: float, sigma: float) -> ParamDistribution:
    return ParamDistribution(mode="gaussian", mu=mu, sigma=sigma)


def _u(lo: float, hi: float) -> ParamDistribution:
    return ParamDistribution(mode="uniform", lo=lo, hi=hi)


def _clamped(name: str, mu: float, sigma: float, overrides: dict) -> ParamDistribution:
    lo, hi = PARAM_RANGES[name]
    if mu < lo or mu > hi:
        overrides[name] = mu
        mu = min(max(mu, lo), hi)
    return _g(mu, sigma)


def builtin_profiles() -> dict[str, SensorProfile]:
    """The two shipped learned profiles plus the domain-randomization ranges."""
    cs_overrides: dict = {}
    gta2cityscapes = SensorProfile(
        name="gta2cityscapes",
        params={
            "chrom.g_scale": _g(0.999, 2.398e-5),
            "chrom.r_tx": _g(0.004, 6.221e-5),
            "chrom.r_ty": _g(0.007, 5.511e-5),
            "chrom.g_tx": _g(0.005, 1.111e-5),
            "chrom.g_ty": _g(0.006, 4.718e-5),
            "chrom.b_tx": _g(0.006, 5.793e-5),
            "chrom.b_ty": _clamped("chrom.b_ty", -5.052, 1.16e-4, cs_overrides),
            "blur.sigma": _g(0.718, 1.34e-13),
            "exposure.delta_s": _g(-0.273, 0.0249),
            "noise.poiss_r": _g(1.0e-6, 1.382e-18),
            "noise.poiss_g": _g(1.15e-2, 7.913e-5),
            "noise.poiss_b": _g(6.8e-4, 4.608e-6),
            "noise.gauss_r": _g(1.0e-6, 1.382e-18),
            "noise.gauss_g": _clamped("noise.gauss_g", 5.41, 4.249e-4, cs_overrides),
            "noise.gauss_b": _g(1.0e-6, 1.382e-18),
            "color.shift_a": _g(-0.002, 5.239e-4),
            "color.shift_b": _g(-0.0116, 4.727e-4),
        },
        metadata={
            "source_dataset": "gta-sim10k",
            "target_dataset": "cityscapes",
            "extractor_id": "vgg16-imagenet",
            "seed": None,
            "iterations": None,
            "created_at": None,
        },
        raw_overrides=cs_overrides,
    )

    gta2kitti = SensorProfile(
        name="gta2kitti",
        params={
            "chrom.g_scale": _g(1.001, 6.425e-5),
            "chrom.r_tx": _g(1.134e-4, 9.416e-5),
            "chrom.r_ty": _g(-0.0013, 6.874e-5),
            "chrom.g_tx": _g(-4.67e-4, 5.65e-5),
            "chrom.g_ty": _g(-0.0014, 7.228e-5),
            "chrom.b_tx": _g(-0.003, 1.245e-4),
            "chrom.b_ty": _g(-5.16e-5, 1.096e-4),
            "blur.sigma": _g(0.941, 5.173e-7),
            "exposure.delta_s": _g(0.0823, 0.003),
            "noise.poiss_r": _g(3.07e-2, 1.295e-3),
            "noise.poiss_g": _g(2.62e-2, 1.111e-3),
            "noise.poiss_b": _g(4.47e-2, 1.187e-3),
            "noise.gauss_r": _g(9.5e-3, 3.713e-4),
            "noise.gauss_g": _g(4.5e-3, 2.005e-4),
            "noise.gauss_b": _g(2.65e-2, 1.111e-3),
            "color.shift_a": _g(-0.0131, 5.426e-4),
            "color.shift_b": _g(-0.0882, 3.25e-3),
        },
        metadata={
            "source_dataset": "gta-sim10k",
            "target_dataset": "kitti",
            "extractor_id": "vgg16-imagenet",
            "seed": None,
            "iterations": None,
            "created_at": None,
        },
    )

    # Human-chosen uniform ranges. The a/b entries were published in
    # unnormalized Lab units (+-10); stored normalized (/128) with the raw
    # range kept for reference. The published kernel-size range 3-11 is not
    # applied: the blur window stays fixed at 9 and only sigma varies.
    randomization = SensorProfile(
        name="randomization",
        params={
            "chrom.g_scale": _u(0.998, 1.002),
            "chrom.r_tx": _u(-0.003, 0.003),
            "chrom.r_ty": _u(-0.003, 0.003),
            "chrom.g_tx": _u(-0.003, 0.003),
            "chrom.g_ty": _u(-0.003, 0.003),
            "chrom.b_tx": _u(-0.003, 0.003),
            "chrom.b_ty": _u(-0.003, 0.003),
            "blur.sigma": _u(0.0, 3.0),
            "exposure.delta_s": _u(-0.6, 1.2),
            "noise.poiss_r": _u(0.0, 0.05),
            "noise.poiss_g": _u(0.0, 0.05),
            "noise.poiss_b": _u(0.0, 0.05),
            "noise.gauss_r": _u(0.0, 0.05),
            "noise.gauss_g": _u(0.0, 0.05),
            "noise.gauss_b": _u(0.0, 0.05),
            "color.shift_a": _u(-10.0 / 128.0, 10.0 / 128.0),
            "color.shift_b": _u(-10.0 / 128.0, 10.0 / 128.0),
        },
        metadata={
            "source_dataset": "any",
            "target_dataset": "domain-randomization",
            "extractor_id": None,
            "seed": None,
            "iterations": None,
            "created_at": None,
        },
        raw_overrides={
            "color.shift_a": [-10.0, 10.0],
            "color.shift_b": [-10.0, 10.0],
            "blur.window": [3.0, 11.0],
        },
    )

    out = {"gta2cityscapes": gta2cityscapes, "gta2kitti": gta2kitti,
           "randomization": randomization}
    for p in out.values():
        p.validate()
    return out


def sample_param_vector(profile: SensorProfile, rng: np.random.Generator) -> np.ndarray:
    values = np.empty(len(PARAM_NAMES))
    for i, name in enumerate(PARAM_NAMES):
        dist = profile.params[name]
        lo, hi = PARAM_RANGES[name]
        if dist.mode == "gaussian":
            z = rng.standard_normal()
            values[i] = paramspace.squash_scalar(dist.mu + dist.sigma * z, lo, hi)
        else:
            v = rng.uniform(dist.lo, dist.hi)
            if name == "blur.sigma" and v <= 0.0:
                v = 1e-9  # open lower bound
            values[i] = v
    return values


def sample_from_profile(profile: SensorProfile, rng: np.random.Generator,
                        n: int) -> list[SensorParams]:
    """n independent parameter draws; every draw satisfies all invariants."""
    if n < 1:
        raise ProfileError("sample_from_profile: n must be >= 1")
    profile.validate()
    out = []
    for _ in range(n):
        params = SensorParams.from_flat(sample_param_vector(profile, rng))
        params.validate()
        out.append(params)
    return out


def profile_table(profile: SensorProfile) -> str:
    """Aligned text table of every parameter's distribution."""
    lines = [f"profile: {profile.name}"]
    meta = profile.metadata
    if meta.get("source_dataset") or meta.get("target_dataset"):
        lines.append(f"transfer: {meta.get('source_dataset')} -> {meta.get('target_dataset')}")
    lines.append("")
    width = max(len(n) for n in PARAM_NAMES)
    for name in PARAM_NAMES:
        lines.append(f"{name:<{width}}  {profile.params[name].describe()}")
        if name in profile.raw_overrides:
            lines.append(f"{'':<{width}}  (source value {profile.raw_overrides[name]}, clamped)")
    extras = {k: v for k, v in profile.raw_overrides.items() if k not in profile.params}
    for k, v in extras.items():
        lines.append(f"{k:<{width}}  (source value {v}, not applied)")
    return "\n".join(lines)
