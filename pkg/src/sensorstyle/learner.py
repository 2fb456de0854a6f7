"""Fits sensor-parameter distributions that minimize the style distance
between augmented source images and target images.

The optimizer is SPSA (simultaneous perturbation stochastic approximation):
two objective evaluations per step under a random sign perturbation give an
unbiased descent direction without any backpropagation through the feature
extractor or the augmentation functions. Both evaluations of a step share one
evaluation seed (common random numbers), so the difference isolates the
effect of the parameter perturbation from sampling noise.

Two parameterizations are supported:

  distribution (default)  theta = 17 raw means + 17 log sigmas; parameters are
                          sampled as squash(mu + sigma * z).
  generator               theta = weights of a two-layer tanh network mapping
                          a 200-dim uniform noise vector to the 17 raw values.
                          Higher variance under SPSA; provided for fidelity.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field

import numpy as np

from . import paramspace, profiles, stylefeat
from .augment import PARAM_NAMES, SensorParams, apply_pipeline
from .errors import InvalidArgumentError
from .stylefeat import FeatureExtractor, gram_stack, style_distance_from_grams

log = logging.getLogger(__name__)

NOISE_DIM = 200
GENERATOR_HIDDEN = 64

SPSA_ALPHA = 0.602
SPSA_GAMMA = 0.101


@dataclass
class LearnConfig:
    iterations: int = 2000
    batch_size: int = 1
    # None selects deterministic gradient-magnitude calibration; an explicit
    # value is used verbatim as the a0 of the decay schedule.
    step_size: float | None = None
    layers: int = stylefeat.DEFAULT_STYLE_LAYERS
    seed: int = 0
    mode: str = "distribution"
    c0: float = 0.05
    smoothing_window: int = 100
    initial_move: float = 0.08
    calibration_probes: int = 8
    move_clip: float = 0.25
    log_every: int = 100

    def validate(self) -> None:
        if self.iterations < 0:
            raise InvalidArgumentError("iterations must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        if self.mode not in ("distribution", "generator"):
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")
        if self.c0 <= 0:
            raise InvalidArgumentError("c0 must be > 0")


@dataclass
class LearnerState:
    mode: str
    theta: np.ndarray
    seed: int
    a0: float
    c0: float
    step_count: int = 0
    move_clip: float = 0.25
    loss_history: list = field(default_factory=list)  # (step, raw, smoothed)
    rejected_steps: int = 0
    _window: deque = field(default_factory=lambda: deque(maxlen=100))

    @property
    def smoothed_loss(self) -> float:
        return float(np.mean(self._window)) if self._window else math.nan


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed & 0xFFFFFFFFFFFFFFFF, *key)))


def init_theta(mode: str, seed: int) -> np.ndarray:
    """Start at the identity parameter set with mild sampling spread."""
    raw0 = paramspace.identity_raw()
    if mode == "distribution":
        # raw sigma 0.2 == value-space sigma of 0.1*range through the squash
        # slope at center.
        log_sigma = np.full(paramspace.N_PARAMS, math.log(0.2))
        return np.concatenate([raw0, log_sigma])
    if mode == "generator":
        rng = _rng_for(seed, 0xF00D)
        w1 = rng.standard_normal((GENERATOR_HIDDEN, NOISE_DIM)) * (0.5 / math.sqrt(NOISE_DIM))
        b1 = np.zeros(GENERATOR_HIDDEN)
        w2 = rng.standard_normal((paramspace.N_PARAMS, GENERATOR_HIDDEN)) * 0.02
        b2 = raw0
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def _unpack_generator(theta: np.ndarray):
    n1 = GENERATOR_HIDDEN * NOISE_DIM
    w1 = theta[:n1].reshape(GENERATOR_HIDDEN, NOISE_DIM)
    b1 = theta[n1:n1 + GENERATOR_HIDDEN]
    o = n1 + GENERATOR_HIDDEN
    n2 = paramspace.N_PARAMS * GENERATOR_HIDDEN
    w2 = theta[o:o + n2].reshape(paramspace.N_PARAMS, GENERATOR_HIDDEN)
    b2 = theta[o + n2:]
    return w1, b1, w2, b2


def sample_param_values(theta: np.ndarray, rng: np.random.Generator, mode: str) -> np.ndarray:
    if mode == "distribution":
        mu = theta[:paramspace.N_PARAMS]
        sigma = np.exp(theta[paramspace.N_PARAMS:])
        return paramspace.sample_squashed_gaussian(mu, sigma, rng)
    w1, b1, w2, b2 = _unpack_generator(theta)
    eta = rng.uniform(-1.0, 1.0, NOISE_DIM)
    hidden = np.tanh(w1 @ eta + b1)
    return paramspace.squash(w2 @ hidden + b2)


def sample_params(state: LearnerState, rng: np.random.Generator) -> SensorParams:
    return SensorParams.from_flat(sample_param_values(state.theta, rng, state.mode))


def objective(state: LearnerState, synth_batch, real_batch, fx: FeatureExtractor,
              rng: np.random.Generator, layers: int = stylefeat.DEFAULT_STYLE_LAYERS) -> float:
    """Mean style distance between freshly augmented synthetic images and the
    paired real images."""
    if len(synth_batch) == 0 or len(real_batch) == 0 or len(synth_batch) != len(real_batch):
        raise InvalidArgumentError("objective: batches must be nonempty and equal length")
    total = 0.0
    for synth, real in zip(synth_batch, real_batch):
        params = sample_params(state, rng)
        aug = apply_pipeline(synth, params, rng)
        total += stylefeat.style_distance(fx, aug, real, layers)
    return total / len(synth_batch)


def spsa_step(state: LearnerState, objective_fn) -> tuple[LearnerState, float]:
    """One SPSA update. objective_fn(theta, eval_key) must be deterministic in
    (theta, eval_key); both evaluations of the step share eval_key.

    Non-finite evaluations reject the step: the perturbation size is halved
    and the evaluation retried a few times, then the update is skipped.
    """
    k = state.step_count
    rng = _rng_for(state.seed, k, 1)
    delta = rng.integers(0, 2, size=state.theta.size).astype(np.float64) * 2.0 - 1.0
    eval_key = (state.seed, k, 2)
    a_k = state.a0 / (1.0 + k) ** SPSA_ALPHA
    c_k = state.c0 / (1.0 + k) ** SPSA_GAMMA

    raw_loss = math.nan
    for attempt in range(3):
        f_plus = objective_fn(state.theta + c_k * delta, eval_key)
        f_minus = objective_fn(state.theta - c_k * delta, eval_key)
        if math.isfinite(f_plus) and math.isfinite(f_minus):
            ghat = (f_plus - f_minus) / (2.0 * c_k) * delta
            update = np.clip(a_k * ghat, -state.move_clip, state.move_clip)
            state.theta = state.theta - update
            raw_loss = 0.5 * (f_plus + f_minus)
            break
        state.rejected_steps += 1
        log.warning("step %d: non-finite objective, halving perturbation (attempt %d)",
                    k, attempt + 1)
        c_k *= 0.5
    else:
        raw_loss = state.loss_history[-1][1] if state.loss_history else math.nan

    state._window.append(raw_loss)
    state.step_count = k + 1
    state.loss_history.append((k, raw_loss, state.smoothed_loss))
    return state, raw_loss


def calibrate_step_size(objective_fn, theta0: np.ndarray, seed: int, c0: float,
                        probes: int, initial_move: float) -> float:
    """Spall's rule: size a0 so the first update moves each coordinate by
    about initial_move raw units, using the median probed gradient magnitude.

    With a Rademacher perturbation every component of one gradient estimate
    has the same magnitude |f+ - f-| / (2 c0), so each probe yields one scalar.
    """
    mags = []
    for p in range(probes):
        rng = _rng_for(seed, p, 3)
        delta = rng.integers(0, 2, size=theta0.size).astype(np.float64) * 2.0 - 1.0
        eval_key = (seed, p, 4)
        f_plus = objective_fn(theta0 + c0 * delta, eval_key)
        f_minus = objective_fn(theta0 - c0 * delta, eval_key)
        if math.isfinite(f_plus) and math.isfinite(f_minus):
            mags.append(abs(f_plus - f_minus) / (2.0 * c0))
    med = float(np.median(mags)) if mags else 0.0
    if med <= 0.0:
        return initial_move
    return initial_move / med


class _GramCache:
    """LRU cache of target-image gram stacks (the extractor is fixed, so the
    target side of the distance never changes)."""

    def __init__(self, images, fx: FeatureExtractor, layers: int, maxsize: int = 512):
        self.images = images
        self.fx = fx
        self.layers = layers
        self.maxsize = maxsize
        self._cache: OrderedDict[int, list] = OrderedDict()

    def __call__(self, idx: int):
        if idx in self._cache:
            self._cache.move_to_end(idx)
            return self._cache[idx]
        grams = gram_stack(self.fx, self.images[idx], self.layers)
        self._cache[idx] = grams
        if len(self._cache) > self.maxsize:
            self._cache.popitem(last=False)
        return grams


def _check_dataset(images, what: str, working_size: int) -> None:
    if len(images) == 0:
        raise InvalidArgumentError(f"empty dataset: no {what} images")
    for i, img in enumerate(images):
        if img.shape[0] != working_size or img.shape[1] != working_size:
            raise InvalidArgumentError(
                f"{what} image {i}: expected {working_size}x{working_size}, "
                f"got {img.shape[1]}x{img.shape[0]}"
            )


def train(synth_images, real_images, fx: FeatureExtractor, config: LearnConfig,
          source_name: str = "", target_name: str = ""):
    """Run the full training loop and distill the final state into a profile.

    synth_images/real_images are sequences of working-size float32 images.
    Returns (SensorProfile, loss_history) with loss_history entries
    (step, raw_loss, smoothed_loss).
    """
    config.validate()
    fx.validate()
    _check_dataset(synth_images, "synthetic", fx.working_size)
    _check_dataset(real_images, "real", fx.working_size)

    theta0 = init_theta(config.mode, config.seed)
    real_grams = _GramCache(real_images, fx, config.layers)

    def image_objective(theta: np.ndarray, eval_key) -> float:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=eval_key))
        total = 0.0
        for _ in range(config.batch_size):
            si = int(rng.integers(0, len(synth_images)))
            ri = int(rng.integers(0, len(real_images)))
            values = sample_param_values(theta, rng, config.mode)
            aug = apply_pipeline(synth_images[si], SensorParams.from_flat(values), rng)
            ga = gram_stack(fx, aug, config.layers)
            total += style_distance_from_grams(ga, real_grams(ri))
        return total / config.batch_size

    if config.step_size is not None:
        a0 = float(config.step_size)
    else:
        a0 = calibrate_step_size(image_objective, theta0, config.seed, config.c0,
                                 config.calibration_probes, config.initial_move)
        log.info("calibrated step size a0=%.3e", a0)

    state = LearnerState(mode=config.mode, theta=theta0, seed=config.seed,
                         a0=a0, c0=config.c0, move_clip=config.move_clip,
                         _window=deque(maxlen=config.smoothing_window))
    for k in range(config.iterations):
        spsa_step(state, image_objective)
        if config.log_every and (k + 1) % config.log_every == 0:
            log.info("step %d/%d loss=%.6g smoothed=%.6g",
                     k + 1, config.iterations, state.loss_history[-1][1], state.smoothed_loss)

    profile = state_to_profile(state, config, fx, source_name, target_name)
    return profile, list(state.loss_history)


def state_to_profile(state: LearnerState, config: LearnConfig, fx: FeatureExtractor,
                     source_name: str = "", target_name: str = ""):
    """Distill learner state into value-space gaussian distributions."""
    if state.mode == "distribution":
        raw_mu = state.theta[:paramspace.N_PARAMS]
        sigma_raw = np.exp(state.theta[paramspace.N_PARAMS:])
        mu_vals = paramspace.squash(raw_mu)
        sigma_vals = sigma_raw * paramspace.squash_slope(raw_mu)
    else:
        rng = _rng_for(state.seed, 5)
        draws = np.stack([sample_param_values(state.theta, rng, state.mode) for _ in range(1024)])
        mu_vals = draws.mean(axis=0)
        sigma_vals = draws.std(axis=0)

    params = {
        name: profiles.ParamDistribution(mode="gaussian", mu=float(m), sigma=float(s))
        for name, m, s in zip(PARAM_NAMES, mu_vals, sigma_vals)
    }
    metadata = {
        "source_dataset": source_name,
        "target_dataset": target_name,
        "extractor_id": fx.source_id,
        "seed": config.seed,
        "iterations": state.step_count,
        "mode": state.mode,
        "step_size": state.a0,
    }
    return profiles.SensorProfile(name=f"learned-{source_name or 'source'}2{target_name or 'target'}",
                                  params=params, metadata=metadata)


def write_loss_csv(history, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "raw_loss", "smoothed_loss"])
        for step, raw, smoothed in history:
            writer.writerow([step, repr(float(raw)), repr(float(smoothed))])
