"""Convolutional feature extraction and the Gram-matrix style distance.

Weight files use the STYLEFX1 binary format (little-endian):

    magic "STYLEFX1" (8 bytes)
    u32 version = 1
    f32 x6 input normalization: meanR, meanG, meanB, stdR, stdG, stdB
    u32 layer_count
    per layer: u8 kind (0 = conv3x3+relu, 1 = maxpool2x2)
      conv layers append: u32 in_ch, u32 out_ch,
                          f32 weights in [out][in][ky][kx] order, f32 bias[out]

Conv layers are stride 1 with zero padding 1 (spatial size preserved); pool
layers are 2x2 max with stride 2. Inference is CPU numpy (im2col + BLAS).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ExtractorFormatError, InvalidArgumentError
from .imagecore import validate_image

MAGIC = b"STYLEFX1"
FORMAT_VERSION = 1
KIND_CONV = 0
KIND_POOL = 1
DEFAULT_WORKING_SIZE = 224
DEFAULT_STYLE_LAYERS = 10


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out, in, 3, 3) float32
    bias: np.ndarray     # (out,) float32

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


class PoolLayer:
    """2x2 max pool, stride 2."""

    def __repr__(self) -> str:  # pragma: no cover
        return "PoolLayer()"


@dataclass
class FeatureExtractor:
    layers: list
    mean: np.ndarray  # (3,) float32
    std: np.ndarray   # (3,) float32
    working_size: int = DEFAULT_WORKING_SIZE
    source_id: str = "unknown"

    @property
    def conv_count(self) -> int:
        return sum(1 for l in self.layers if isinstance(l, ConvLayer))

    @property
    def pool_count(self) -> int:
        return sum(1 for l in self.layers if isinstance(l, PoolLayer))

    def validate(self) -> None:
        if not self.layers:
            raise ExtractorFormatError("empty extractor")
        chain = 3
        saw_conv = False
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                if layer.weights.ndim != 4 or layer.weights.shape[2:] != (3, 3):
                    raise ExtractorFormatError(f"layer {i}: conv weights must be (out, in, 3, 3)")
                if layer.in_channels != chain:
                    raise ExtractorFormatError(
                        f"layer {i}: expects {layer.in_channels} input channels, "
                        f"previous layer provides {chain}"
                    )
                if layer.bias.shape != (layer.out_channels,):
                    raise ExtractorFormatError(f"layer {i}: bias shape mismatch")
                if not np.isfinite(layer.weights).all() or not np.isfinite(layer.bias).all():
                    raise ExtractorFormatError(f"layer {i}: non-finite weights")
                chain = layer.out_channels
                saw_conv = True
            elif not isinstance(layer, PoolLayer):
                raise ExtractorFormatError(f"layer {i}: unknown layer type {type(layer)!r}")
        if not saw_conv:
            raise ExtractorFormatError("extractor has no conv layers")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0
        self.context = "header"

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ExtractorFormatError(f"unexpected EOF in {self.context}")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f32s(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)


def parse_extractor(data: bytes, source_id: str = "unknown") -> FeatureExtractor:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ExtractorFormatError("bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ExtractorFormatError(f"unsupported version {version}")
    norm = r.f32s(6)
    std = norm[3:6]
    if np.any(std <= 0):
        raise ExtractorFormatError("normalization std must be positive")
    layer_count = r.u32()
    if layer_count == 0:
        raise ExtractorFormatError("empty extractor")
    layers: list = []
    for i in range(layer_count):
        r.context = f"layer {i}"
        kind = r.u8()
        if kind == KIND_POOL:
            layers.append(PoolLayer())
        elif kind == KIND_CONV:
            in_ch = r.u32()
            out_ch = r.u32()
            if in_ch == 0 or out_ch == 0 or in_ch > 65536 or out_ch > 65536:
                raise ExtractorFormatError(f"layer {i}: implausible channel counts {in_ch}->{out_ch}")
            w = r.f32s(out_ch * in_ch * 9).reshape(out_ch, in_ch, 3, 3)
            b = r.f32s(out_ch)
            layers.append(ConvLayer(weights=w, bias=b))
        else:
            raise ExtractorFormatError(f"layer {i}: unknown layer kind {kind}")
    if r.off != len(data):
        raise ExtractorFormatError(f"{len(data) - r.off} trailing bytes after layer {layer_count - 1}")
    fx = FeatureExtractor(layers=layers, mean=norm[0:3], std=std, source_id=source_id)
    fx.validate()
    return fx


def load_extractor(path) -> FeatureExtractor:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ExtractorFormatError(f"{path}: {exc}") from exc
    digest = hashlib.sha256(data).hexdigest()[:12]
    try:
        return parse_extractor(data, source_id=f"stylefx1:{digest}")
    except ExtractorFormatError as exc:
        raise ExtractorFormatError(f"{path}: {exc}") from exc


def serialize_extractor(fx: FeatureExtractor) -> bytes:
    fx.validate()
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    norm = np.concatenate([fx.mean, fx.std]).astype("<f4")
    parts.append(norm.tobytes())
    parts.append(struct.pack("<I", len(fx.layers)))
    for layer in fx.layers:
        if isinstance(layer, PoolLayer):
            parts.append(struct.pack("<B", KIND_POOL))
        else:
            parts.append(struct.pack("<B", KIND_CONV))
            parts.append(struct.pack("<II", layer.in_channels, layer.out_channels))
            parts.append(layer.weights.astype("<f4").tobytes())
            parts.append(layer.bias.astype("<f4").tobytes())
    return b"".join(parts)


def write_extractor(fx: FeatureExtractor, path) -> None:
    data = serialize_extractor(fx)
    with open(path, "wb") as fh:
        fh.write(data)


_TESTBANK_STAGES = [(3, 16), (16, 16), "pool", (16, 32), (32, 32), "pool", (32, 64), (64, 64)]
_testbank_cache: FeatureExtractor | None = None


def builtin_extractor() -> FeatureExtractor:
    """Deterministic random-feature extractor used when no weight file is given.

    Conv kernels are rows of a seeded random orthonormal basis scaled by
    sqrt(2); random conv features carry enough texture statistics for the
    style distance to be a usable training signal without any pretrained
    weights.
    """
    global _testbank_cache
    if _testbank_cache is not None:
        return _testbank_cache
    rng = np.random.default_rng(0)
    layers: list = []
    for stage in _TESTBANK_STAGES:
        if stage == "pool":
            layers.append(PoolLayer())
            continue
        in_ch, out_ch = stage
        a = rng.standard_normal((in_ch * 9, out_ch))
        q, r = np.linalg.qr(a)
        q = q * np.where(np.diag(r) >= 0, 1.0, -1.0)  # canonical signs, LAPACK-variant stable
        w = (q.T * np.sqrt(2.0)).reshape(out_ch, in_ch, 3, 3).astype(np.float32)
        layers.append(ConvLayer(weights=w, bias=np.zeros(out_ch, dtype=np.float32)))
    fx = FeatureExtractor(
        layers=layers,
        mean=np.array([0.5, 0.5, 0.5], dtype=np.float32),
        std=np.array([0.25, 0.25, 0.25], dtype=np.float32),
        source_id="builtin-testbank",
    )
    fx.validate()
    _testbank_cache = fx
    return fx


def _conv3x3_relu(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """x (C, H, W) float32 -> (out, H, W), zero pad 1, fused ReLU."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=np.float32)
    xp[:, 1:-1, 1:-1] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    wmat = layer.weights.reshape(layer.out_channels, c * 9).T  # (C*9, out)
    out = np.empty((layer.out_channels, h, w), dtype=np.float32)
    # chunk rows so the materialized patch matrix stays modest
    block = max(1, (8 << 20) // max(1, w * c * 9 * 4))
    for y0 in range(0, h, block):
        y1 = min(y0 + block, h)
        patch = windows[:, y0:y1].transpose(1, 2, 0, 3, 4).reshape((y1 - y0) * w, c * 9)
        res = patch @ wmat
        res += layer.bias
        np.maximum(res, 0.0, out=res)
        out[:, y0:y1] = res.reshape(y1 - y0, w, layer.out_channels).transpose(2, 0, 1)
    return out


def _maxpool2x2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, :h2 * 2, :w2 * 2].reshape(c, h2, 2, w2, 2).max(axis=(2, 4))


def extract_features(fx: FeatureExtractor, img: np.ndarray) -> list[np.ndarray]:
    """Run the extractor, returning every conv+relu output in order."""
    validate_image(img)
    ws = fx.working_size
    if img.shape[0] != ws or img.shape[1] != ws:
        raise InvalidArgumentError(
            f"extract_features: expected {ws}x{ws} input, got {img.shape[0]}x{img.shape[1]}"
        )
    x = ((img - fx.mean) / fx.std).astype(np.float32).transpose(2, 0, 1)
    x = np.ascontiguousarray(x)
    maps: list[np.ndarray] = []
    for layer in fx.layers:
        if isinstance(layer, PoolLayer):
            x = _maxpool2x2(x)
        else:
            x = _conv3x3_relu(x, layer)
            maps.append(x)
    return maps


def gram(feature_map: np.ndarray) -> np.ndarray:
    """G = F F^T / (C*H*W) with F the (C, H*W) unrolled feature map."""
    if feature_map.ndim != 3:
        raise InvalidArgumentError("gram: expected (C, H, W) feature map")
    c, h, w = feature_map.shape
    f = feature_map.reshape(c, h * w)
    g = f @ f.T
    g /= np.float32(c * h * w)
    return g


def gram_stack(fx: FeatureExtractor, img: np.ndarray,
               num_layers: int = DEFAULT_STYLE_LAYERS) -> list[np.ndarray]:
    """Gram matrices of the first num_layers conv outputs (truncated to the
    layers the extractor actually has)."""
    maps = extract_features(fx, img)
    return [gram(m) for m in maps[:num_layers]]


def style_distance_from_grams(grams_a: list[np.ndarray], grams_b: list[np.ndarray]) -> float:
    if len(grams_a) != len(grams_b):
        raise InvalidArgumentError("gram stacks have different depths")
    total = 0.0
    for ga, gb in zip(grams_a, grams_b):
        d = ga.astype(np.float64) - gb.astype(np.float64)
        total += float(np.sum(d * d))
    return total


def style_distance(fx: FeatureExtractor, a: np.ndarray, b: np.ndarray,
                   num_layers: int = DEFAULT_STYLE_LAYERS) -> float:
    """Sum over layers of the squared Frobenius distance between Gram matrices."""
    return style_distance_from_grams(gram_stack(fx, a, num_layers), gram_stack(fx, b, num_layers))
