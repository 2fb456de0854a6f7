"""Image-directory ingestion, deterministic sampling, and batch augmentation.

Augmentation seeding is per (image, draw): a SplitMix-style mix of the global
seed, the FNV-1a hash of the relative path, and the draw index. Output bytes
are therefore independent of worker count, scheduling order, and resumption.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imagecore, profiles
from .augment import PARAM_NAMES, SensorParams, apply_pipeline
from .errors import DatasetError, EmptyDatasetError, ImageDecodeError

log = logging.getLogger(__name__)

DEFAULT_EXTENSIONS = ("png", "jpg", "jpeg")
PARAMS_LOG_NAME = "augment_params.csv"

_MASK64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def per_draw_seed(global_seed: int, relpath: str, draw_index: int) -> int:
    s = splitmix64(global_seed & _MASK64)
    s = splitmix64(s ^ fnv1a64(relpath))
    return splitmix64(s ^ (draw_index & _MASK64))


@dataclass
class ManifestEntry:
    relpath: str
    width: int
    height: int


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    content_hash: str
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def scan_dataset(directory, extensions=DEFAULT_EXTENSIONS) -> DatasetManifest:
    """Recursive scan in lexicographic relative-path order; dimensions come
    from the file headers. Undecodable files are skipped with a warning."""
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"{directory}: not found or not a directory")
    exts = {e.lower().lstrip(".") for e in extensions}
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower().lstrip(".") in exts),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    entries: list[ManifestEntry] = []
    skipped = 0
    for p in paths:
        rel = p.relative_to(root).as_posix()
        try:
            w, h = imagecore.probe_image_size(p)
        except ImageDecodeError as exc:
            skipped += 1
            log.warning("skipping undecodable file: %s", exc)
            continue
        entries.append(ManifestEntry(relpath=rel, width=w, height=h))
    if not entries:
        raise EmptyDatasetError(f"{directory}: empty dataset (no decodable images)")
    digest = hashlib.sha256()
    for e in entries:
        digest.update(f"{e.relpath}\t{e.width}\t{e.height}\n".encode("utf-8"))
    return DatasetManifest(root=root, entries=entries,
                           content_hash=digest.hexdigest(), skipped=skipped)


def load_native(manifest: DatasetManifest, index: int) -> np.ndarray:
    entry = manifest.entries[index]
    return imagecore.load_image(manifest.root / entry.relpath)


def load_for_features(manifest: DatasetManifest, index: int,
                      shorter_side: int = 256, crop: int = 224) -> np.ndarray:
    """Decode and standardize to the feature-extractor input size."""
    return imagecore.resize_and_crop(load_native(manifest, index), shorter_side, crop)


@dataclass
class AugmentSummary:
    images_written: int
    params_log_path: Path
    output_dir: Path
    skipped: int = 0


_worker_profiles: dict[str, profiles.SensorProfile] = {}


def _profile_from_json(profile_json: str) -> profiles.SensorProfile:
    prof = _worker_profiles.get(profile_json)
    if prof is None:
        prof = profiles.loads_profile(profile_json)
        _worker_profiles[profile_json] = prof
    return prof


def _augment_one(args):
    root_str, relpath, out_str, draw_index, global_seed, profile_json = args
    prof = _profile_from_json(profile_json)
    seed = per_draw_seed(global_seed, relpath, draw_index)
    rng = np.random.default_rng(seed)
    values = profiles.sample_param_vector(prof, rng)
    from .augment import SensorParams

    params = SensorParams.from_flat(values)
    img = imagecore.load_image(Path(root_str) / relpath)
    aug = apply_pipeline(img, params, rng)
    rel = Path(relpath)
    out_path = Path(out_str) / rel.parent / f"{rel.stem}__aug{draw_index}.png"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    imagecore.save_image(out_path, aug)
    return relpath, draw_index, [float(v) for v in values]


def augment_dataset(manifest: DatasetManifest, profile: profiles.SensorProfile,
                    out_dir, count_per_image: int = 1, seed: int = 0,
                    workers: int = 1) -> AugmentSummary:
    """Write count_per_image augmented copies of every image at native
    resolution, plus a CSV log of every parameter draw."""
    if count_per_image < 1:
        raise DatasetError("count_per_image must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"{out_dir}: {exc}") from exc

    profile_json = profiles.dumps_profile(profile)
    tasks = [
        (str(manifest.root), e.relpath, str(out), k, seed, profile_json)
        for e in manifest.entries
        for k in range(count_per_image)
    ]

    rows = []
    try:
        if workers <= 1:
            for t in tasks:
                rows.append(_augment_one(t))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_augment_one, tasks, chunksize=4):
                    rows.append(row)
    except (OSError, DatasetError, ImageDecodeError) as exc:
        raise DatasetError(
            f"augmentation aborted after {len(rows)} of {len(tasks)} outputs: {exc}"
        ) from exc

    rows.sort(key=lambda r: (r[0], r[1]))
    log_path = out / PARAMS_LOG_NAME
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["relative_path", "draw_index", *PARAM_NAMES])
        for relpath, k, values in rows:
            writer.writerow([relpath, k, *[repr(v) for v in values]])
    return AugmentSummary(images_written=len(rows), params_log_path=log_path, output_dir=out)
