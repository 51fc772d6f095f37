"""Training-time augmentation with label-reassignment semantics.

Three operator families:

* photography noise (motion blur, low resolution, sensor noise) — artifacts
  any capture device produces; the sample's label is preserved;
* print artifacts (color distortion, halftone) and display artifacts (moiré,
  specular reflection, color banding) — artifacts of recapturing a face from
  paper or a screen; applying one turns the sample into a Spoof and marks
  every patch Spoof.

Patch-level mixing replaces random patches of a spoof image with co-located
patches of a live image (image label stays Spoof; replaced patches are
labeled Live), giving the patch-level loss genuinely mixed supervision.

All functions are pure: they never mutate their inputs, and every random
decision comes from the passed-in generator.  `sample_rng` derives a stream
from (seed, sample_id, epoch) so outcomes are independent of worker
scheduling and trivially reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ContractError, ShapeError
from .imageops import bilinear_resize, clip01, luminance, rotate_reflect
from .labels import LIVE, SPOOF, UNLABELED

CATEGORY_PHOTO = "photography-noise"
CATEGORY_PRINT = "print-artifact"
CATEGORY_DISPLAY = "display-artifact"

# Second-grating constants for the moiré interference pattern.
_MOIRE_FREQ_RATIO = 1.08
_MOIRE_ANGLE_OFFSET_DEG = 4.0


@dataclass
class ImageSample:
    """One image with its labels and an append-only augmentation provenance."""

    pixels: np.ndarray  # (C, H, W) float64 in [0, 1]
    label: int  # LIVE or SPOOF
    domain: str
    sample_id: str
    subject_id: str = ""
    patch_labels: np.ndarray | None = None  # per model patch, row-major
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.label not in (LIVE, SPOOF):
            raise ContractError(f"sample label must be Live or Spoof, got {self.label}")
        if self.label == LIVE and self.patch_labels is not None:
            if np.any(self.patch_labels == SPOOF):
                raise ContractError(
                    f"sample {self.sample_id}: Live image carries Spoof patch labels"
                )


def _check_probability(name, p):
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {p}")


def _check_range(name, lo, hi):
    if not lo < hi:
        raise ConfigError(f"{name} range must satisfy lo < hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class AugConfig:
    """Probabilities and parameter ranges for every operator."""

    p_fas_aug: float = 0.2
    p_pda: float = 0.2
    p_pda_patch: float = 0.5
    patch_size: int = 8  # must match the model's patch grid
    blur_length: tuple = (3.0, 9.0)
    blur_angle: tuple = (0.0, 180.0)
    downscale: tuple = (1.5, 4.0)
    noise_sigma: tuple = (0.01, 0.05)
    color_shift: tuple = (0.05, 0.25)
    halftone_pitch: tuple = (3.0, 8.0)
    moire_frequency: tuple = (0.1, 0.45)
    moire_angle: tuple = (0.0, 180.0)
    moire_amplitude: tuple = (0.05, 0.2)
    reflection_gain: tuple = (0.2, 0.6)
    banding_levels: tuple = (6, 16)
    brightness: tuple = (0.8, 1.2)
    rotation_degrees: float = 10.0
    seed: int = 0

    def __post_init__(self):
        _check_probability("p_fas_aug", self.p_fas_aug)
        _check_probability("p_pda", self.p_pda)
        _check_probability("p_pda_patch", self.p_pda_patch)
        for name in ("blur_length", "blur_angle", "downscale", "noise_sigma",
                     "color_shift", "halftone_pitch", "moire_frequency",
                     "moire_angle", "moire_amplitude", "reflection_gain",
                     "banding_levels", "brightness"):
            lo, hi = getattr(self, name)
            _check_range(name, lo, hi)


def sample_rng(seed: int, sample_id: str, epoch: int) -> np.random.Generator:
    """Generator keyed by (seed, sample_id, epoch): schedule-independent."""
    digest = hashlib.blake2b(sample_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little"), int(epoch)]
    )


# -- photography-noise operators (label-preserving) ---------------------------


def motion_blur(pixels: np.ndarray, length: float, angle_deg: float) -> np.ndarray:
    """Convolve with a normalized line kernel (shaky-hand streak)."""
    n = max(3, int(np.ceil(length)) | 1)  # odd kernel size
    kernel = np.zeros((n, n))
    theta = np.deg2rad(angle_deg)
    steps = 4 * n
    center = (n - 1) / 2.0
    for t in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, steps):
        y, x = center + t * np.sin(theta), center + t * np.cos(theta)
        iy, ix = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - iy, x - ix
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if 0 <= iy + dy < n and 0 <= ix + dx < n:
                    kernel[iy + dy, ix + dx] += wy * wx
    kernel /= kernel.sum()
    return clip01(ndimage.convolve(pixels, kernel[None], mode="reflect"))


def low_resolution(pixels: np.ndarray, factor: float) -> np.ndarray:
    """Downscale then upscale back: loss of high-frequency detail."""
    _, h, w = pixels.shape
    small_h, small_w = max(1, round(h / factor)), max(1, round(w / factor))
    return clip01(bilinear_resize(bilinear_resize(pixels, small_h, small_w), h, w))


def sensor_noise(pixels: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return clip01(pixels + rng.normal(0.0, sigma, size=pixels.shape))


# -- print-artifact operators (label -> Spoof) ---------------------------------


def color_distortion(pixels: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Random near-identity color matrix plus channel offsets (print cast)."""
    matrix = np.eye(3) + strength * rng.uniform(-1.0, 1.0, size=(3, 3))
    offset = 0.5 * strength * rng.uniform(-1.0, 1.0, size=(3, 1, 1))
    return clip01(np.tensordot(matrix, pixels, axes=(1, 0)) + offset)


def halftone(pixels: np.ndarray, pitch: float) -> np.ndarray:
    """Clustered-dot screen: periodic ink dots modulated by local luminance."""
    _, h, w = pixels.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    screen = 0.5 + 0.5 * np.cos(2 * np.pi * xx / pitch) * np.cos(2 * np.pi * yy / pitch)
    lum = luminance(pixels)
    ink = 1.0 / (1.0 + np.exp(-(screen - lum) * 8.0))
    return clip01(pixels * (1.0 - 0.8 * ink[None]) + 0.05 * (1.0 - ink[None]))


# -- display-artifact operators (label -> Spoof) --------------------------------


def moire_pattern(shape: tuple[int, int], frequency: float, angle_deg: float,
                  amplitude: float) -> np.ndarray:
    """Two interfering sinusoidal gratings; the second is detuned in both
    frequency and angle, which is what produces the beating pattern."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta1 = np.deg2rad(angle_deg)
    theta2 = np.deg2rad(angle_deg + _MOIRE_ANGLE_OFFSET_DEG)
    f2 = frequency * _MOIRE_FREQ_RATIO
    g1 = np.sin(2 * np.pi * frequency * (xx * np.cos(theta1) + yy * np.sin(theta1)))
    g2 = np.sin(2 * np.pi * f2 * (xx * np.cos(theta2) + yy * np.sin(theta2)))
    return 0.5 * amplitude * (g1 + g2)


def moire(pixels: np.ndarray, frequency: float, angle_deg: float, amplitude: float) -> np.ndarray:
    """Additive-in-luminance interference pattern; amplitude 0 is identity."""
    if not 0.0 <= amplitude <= 0.5:
        raise ContractError(f"moire amplitude must be in [0, 0.5], got {amplitude}")
    if amplitude == 0.0:
        return pixels.copy()
    pattern = moire_pattern(pixels.shape[1:], frequency, angle_deg, amplitude)
    return clip01(pixels + pattern[None])


def specular_reflection(pixels: np.ndarray, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Additive gaussian highlight at a random position (screen glare)."""
    _, h, w = pixels.shape
    cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
    sigma = rng.uniform(0.08, 0.2) * max(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    blob = gain * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return clip01(pixels + blob[None])


def color_banding(pixels: np.ndarray, levels: int) -> np.ndarray:
    """Quantize each channel to a small number of levels (display banding)."""
    if levels < 2:
        raise ContractError(f"banding needs >= 2 levels, got {levels}")
    return np.rint(pixels * (levels - 1)) / (levels - 1)


# -- operator table -------------------------------------------------------------


def _draw(rng, lo_hi):
    return rng.uniform(lo_hi[0], lo_hi[1])


def _apply_motion_blur(pixels, cfg, rng):
    params = {"length": _draw(rng, cfg.blur_length), "angle": _draw(rng, cfg.blur_angle)}
    return motion_blur(pixels, params["length"], params["angle"]), params


def _apply_low_resolution(pixels, cfg, rng):
    params = {"factor": _draw(rng, cfg.downscale)}
    return low_resolution(pixels, params["factor"]), params


def _apply_sensor_noise(pixels, cfg, rng):
    params = {"sigma": _draw(rng, cfg.noise_sigma)}
    return sensor_noise(pixels, params["sigma"], rng), params


def _apply_color_distortion(pixels, cfg, rng):
    params = {"strength": _draw(rng, cfg.color_shift)}
    return color_distortion(pixels, params["strength"], rng), params


def _apply_halftone(pixels, cfg, rng):
    params = {"pitch": _draw(rng, cfg.halftone_pitch)}
    return halftone(pixels, params["pitch"]), params


def _apply_moire(pixels, cfg, rng):
    params = {
        "frequency": _draw(rng, cfg.moire_frequency),
        "angle": _draw(rng, cfg.moire_angle),
        "amplitude": _draw(rng, cfg.moire_amplitude),
    }
    return moire(pixels, params["frequency"], params["angle"], params["amplitude"]), params


def _apply_specular_reflection(pixels, cfg, rng):
    params = {"gain": _draw(rng, cfg.reflection_gain)}
    return specular_reflection(pixels, params["gain"], rng), params


def _apply_color_banding(pixels, cfg, rng):
    params = {"levels": int(rng.integers(int(cfg.banding_levels[0]), int(cfg.banding_levels[1]) + 1))}
    return color_banding(pixels, params["levels"]), params


# name -> (category, implementation); order is fixed and part of determinism.
OPERATORS = {
    "motion_blur": (CATEGORY_PHOTO, _apply_motion_blur),
    "low_resolution": (CATEGORY_PHOTO, _apply_low_resolution),
    "sensor_noise": (CATEGORY_PHOTO, _apply_sensor_noise),
    "color_distortion": (CATEGORY_PRINT, _apply_color_distortion),
    "halftone": (CATEGORY_PRINT, _apply_halftone),
    "moire": (CATEGORY_DISPLAY, _apply_moire),
    "specular_reflection": (CATEGORY_DISPLAY, _apply_specular_reflection),
    "color_banding": (CATEGORY_DISPLAY, _apply_color_banding),
}

ARTIFACT_CATEGORIES = (CATEGORY_PRINT, CATEGORY_DISPLAY)


def apply_operator(sample: ImageSample, name: str, cfg: AugConfig,
                   rng: np.random.Generator) -> ImageSample:
    """Apply one named operator with parameters drawn from cfg ranges."""
    category, fn = OPERATORS[name]
    pixels, params = fn(sample.pixels, cfg, rng)
    label_after = SPOOF if category in ARTIFACT_CATEGORIES else sample.label
    patch_labels = sample.patch_labels
    if category in ARTIFACT_CATEGORIES and patch_labels is not None:
        patch_labels = np.full_like(patch_labels, SPOOF)
    record = {
        "op": name,
        "category": category,
        "params": params,
        "label_before": int(sample.label),
        "label_after": int(label_after),
    }
    return replace(
        sample,
        pixels=pixels,
        label=label_after,
        patch_labels=patch_labels,
        provenance=sample.provenance + [record],
    )


def valid_operators(label: int) -> list[str]:
    """Operators applicable to a sample currently carrying `label`.

    Every operator is valid for both labels: photography noise preserves the
    label, artifact operators reassign Live to Spoof (and are idempotent in
    label on Spoof inputs).  The hook exists so a restricted policy can be
    swapped in without touching the selection logic.
    """
    return list(OPERATORS)


def apply_fas_aug(sample: ImageSample, rng: np.random.Generator,
                  cfg: AugConfig) -> ImageSample:
    """With probability p_fas_aug, apply one uniformly-chosen operator."""
    if not (0.0 <= sample.pixels.min() and sample.pixels.max() <= 1.0):
        raise ContractError(f"sample {sample.sample_id}: pixels outside [0, 1]")
    if rng.random() >= cfg.p_fas_aug:
        return sample
    names = valid_operators(sample.label)
    name = names[int(rng.integers(0, len(names)))]
    return apply_operator(sample, name, cfg, rng)


# -- patch-level live/spoof mixing ---------------------------------------------


def _patch_grid(pixels: np.ndarray, patch_size: int) -> tuple[int, int]:
    _, h, w = pixels.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch_size {patch_size}")
    return h // patch_size, w // patch_size


def apply_pda(spoof: ImageSample, live: ImageSample, rng: np.random.Generator,
              cfg: AugConfig) -> ImageSample:
    """Replace random patches of a spoof image with the live image's patches.

    Image label stays Spoof; replaced patch positions are labeled Live, the
    rest Spoof.  Patch geometry comes from cfg.patch_size.
    """
    if spoof.label != SPOOF or live.label != LIVE:
        raise ContractError(
            f"patch mixing needs (Spoof, Live) inputs, got ({spoof.label}, {live.label})"
        )
    if spoof.pixels.shape != live.pixels.shape:
        raise ShapeError(
            f"geometry mismatch: {spoof.pixels.shape} vs {live.pixels.shape}"
        )
    gh, gw = _patch_grid(spoof.pixels, cfg.patch_size)
    num_patches = gh * gw
    replaced = rng.random(num_patches) < cfg.p_pda_patch

    c, h, w = spoof.pixels.shape
    ps = cfg.patch_size
    # (C,H,W) -> (P, C, ps, ps) views of both images, then masked copy.
    def as_patches(px):
        return px.reshape(c, gh, ps, gw, ps).transpose(1, 3, 0, 2, 4).reshape(num_patches, c, ps, ps)

    mixed = as_patches(spoof.pixels).copy()
    mixed[replaced] = as_patches(live.pixels)[replaced]
    pixels = (
        mixed.reshape(gh, gw, c, ps, ps).transpose(2, 0, 3, 1, 4).reshape(c, h, w)
    )
    patch_labels = np.where(replaced, LIVE, SPOOF).astype(np.int64)
    record = {
        "op": "pda",
        "category": "patch-mix",
        "params": {"replaced": int(replaced.sum()), "num_patches": num_patches,
                   "live_source": live.sample_id},
        "label_before": int(spoof.label),
        "label_after": SPOOF,
    }
    return replace(
        spoof,
        pixels=pixels,
        label=SPOOF,
        patch_labels=patch_labels,
        provenance=spoof.provenance + [record],
    )


# -- standard photometric/geometric augmentations --------------------------------


def _flip_patch_labels(patch_labels: np.ndarray, gh: int, gw: int) -> np.ndarray:
    return patch_labels.reshape(gh, gw)[:, ::-1].reshape(-1).copy()


def horizontal_flip(sample: ImageSample, patch_size: int) -> ImageSample:
    """Mirror pixels left-right; patch labels are mirrored with them."""
    pixels = sample.pixels[:, :, ::-1].copy()
    patch_labels = sample.patch_labels
    if patch_labels is not None:
        gh, gw = _patch_grid(pixels, patch_size)
        patch_labels = _flip_patch_labels(patch_labels, gh, gw)
    record = {"op": "flip", "category": "standard", "params": {},
              "label_before": int(sample.label), "label_after": int(sample.label)}
    return replace(sample, pixels=pixels, patch_labels=patch_labels,
                   provenance=sample.provenance + [record])


def standard_augs(sample: ImageSample, rng: np.random.Generator, cfg: AugConfig,
                  allow_rotation: bool = True) -> ImageSample:
    """Horizontal flip (p=0.5), rotation, multiplicative brightness.

    Flip mirrors patch labels along with the pixels (correspondence is a
    clean permutation).  Rotation breaks patch-pixel correspondence, so it
    marks all patch labels Unlabeled; callers that need to keep patch labels
    pass allow_rotation=False.
    """
    if rng.random() < 0.5:
        sample = horizontal_flip(sample, cfg.patch_size)
    pixels = sample.pixels
    patch_labels = sample.patch_labels
    records = []

    if allow_rotation and cfg.rotation_degrees > 0:
        degrees = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
        pixels = clip01(rotate_reflect(pixels, degrees))
        if patch_labels is not None:
            patch_labels = np.full_like(patch_labels, UNLABELED)
        records.append({"op": "rotation", "category": "standard",
                        "params": {"degrees": degrees},
                        "label_before": int(sample.label), "label_after": int(sample.label)})

    factor = rng.uniform(cfg.brightness[0], cfg.brightness[1])
    pixels = clip01(pixels * factor)
    records.append({"op": "brightness", "category": "standard",
                    "params": {"factor": factor},
                    "label_before": int(sample.label), "label_after": int(sample.label)})

    return replace(sample, pixels=pixels, patch_labels=patch_labels,
                   provenance=sample.provenance + records)


# -- full pipeline ----------------------------------------------------------------


def augment_sample(sample: ImageSample, live_pool: list[ImageSample],
                   rng: np.random.Generator, cfg: AugConfig) -> ImageSample:
    """Artifact synthesis, then patch mixing, then standard augmentations.

    Patch mixing only triggers for Spoof samples (with probability p_pda)
    and draws a live partner uniformly from live_pool.  Rotation is skipped
    for patch-mixed samples so their patch labels survive.
    """
    out = apply_fas_aug(sample, rng, cfg)
    pda_mixed = False
    if out.label == SPOOF and live_pool and rng.random() < cfg.p_pda:
        partner = live_pool[int(rng.integers(0, len(live_pool)))]
        out = apply_pda(out, partner, rng, cfg)
        pda_mixed = True
    return standard_augs(out, rng, cfg, allow_rotation=not pda_mixed)
