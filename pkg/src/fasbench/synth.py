"""Synthetic multi-domain live/spoof dataset generator.

Renders procedural "faces" (a soft elliptical head with eyes and mouth) under
domain-specific capture conditions — background palette, illumination,
color response, sensor noise — so that domains are visibly distinct and
cross-domain evaluation is meaningful.  Spoof samples are the same rendering
passed through the domain's recapture recipe (artifact operators from the
augmentation module), mirroring how a print or replay attack is a recaptured
live image.

Everything is keyed off (seed, domain, subject, frame), so generation is
deterministic and parallelizable per subject.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .augment import OPERATORS
from .data import DatasetManifest, ManifestRecord, write_manifest
from .errors import ConfigError, DataError
from .imageops import clip01, write_png
from .labels import LIVE, SPOOF

_ATTACK_NAMES = {"color_distortion": "print", "color_distortion_fixed": "print",
                 "halftone": "print", "moire": "replay",
                 "specular_reflection": "replay", "color_banding": "replay"}

# Per-frame capture wobble of the live camera: auto-exposure (one scalar
# gain) and auto-white-balance (per-channel gains) drift between frames.
# Spoofs are derived from the live frame, so both classes share this spread;
# it is what keeps first-order color statistics from separating the classes
# trivially.
_EXPOSURE_JITTER = 0.08
_WB_JITTER = 0.06
# Half-width of the recapture auto-exposure exponent around full correction.
# Symmetric around 1.0, so the spoof's residual brightness shift is zero-mean
# and only the operators' color casts survive as a first-order class signal.
_EXP_SPREAD = 0.25


@dataclass(frozen=True)
class DomainRecipe:
    """Capture conditions plus the spoof recapture pipeline for one domain."""

    name: str
    background: tuple  # two RGB corners of a vertical gradient
    illumination: float
    light_tilt: float  # lateral illumination gradient strength
    color_response: tuple  # row-major 3x3 camera color matrix
    sensor_sigma: float
    # (operator name, fixed params) applied in order to make a spoof.  Aside
    # from the final brightness correction, the spoof is a deterministic
    # function of its live frame — the same live->spoof relationship the
    # artifact augmentation reproduces at training time.
    spoof_ops: tuple

    def color_matrix(self) -> np.ndarray:
        return np.asarray(self.color_response, dtype=np.float64).reshape(3, 3)


def _default_domains() -> tuple[DomainRecipe, ...]:
    ident = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)

    def mat(*rows):
        return tuple(v for row in rows for v in row)

    return (
        DomainRecipe(
            name="A",
            background=((0.26, 0.26, 0.30), (0.34, 0.34, 0.38)),
            illumination=1.0,
            light_tilt=0.15,
            color_response=ident,
            sensor_sigma=0.012,
            spoof_ops=(
                ("halftone", {"pitch": 3.2}),
                ("moire", {"frequency": 0.27, "angle": 20.0, "amplitude": 0.14}),
                ("color_distortion_fixed", {"gains": (1.05, 0.99, 0.96), "offset": 0.02}),
            ),
        ),
        DomainRecipe(
            name="B",
            background=((0.31, 0.29, 0.27), (0.39, 0.37, 0.35)),
            illumination=0.9,
            light_tilt=-0.2,
            color_response=mat((0.95, 0.05, 0.0), (0.03, 0.97, 0.0), (0.0, 0.06, 0.94)),
            sensor_sigma=0.014,
            spoof_ops=(
                ("halftone", {"pitch": 4.0}),
                ("moire", {"frequency": 0.36, "angle": 75.0, "amplitude": 0.11}),
                ("color_distortion_fixed", {"gains": (0.975, 1.00, 1.03), "offset": 0.0}),
            ),
        ),
        DomainRecipe(
            name="C",
            background=((0.24, 0.26, 0.24), (0.32, 0.34, 0.32)),
            illumination=1.08,
            light_tilt=0.05,
            color_response=mat((1.02, 0.0, 0.03), (0.0, 0.96, 0.04), (0.02, 0.0, 1.0)),
            sensor_sigma=0.008,
            spoof_ops=(
                ("color_banding", {"levels": 9}),
                ("moire", {"frequency": 0.31, "angle": 130.0, "amplitude": 0.13}),
                ("specular_reflection", {"gain": 0.35}),
                ("color_distortion_fixed", {"gains": (1.04, 1.00, 0.96), "offset": 0.0}),
            ),
        ),
        DomainRecipe(
            name="D",
            background=((0.32, 0.31, 0.30), (0.40, 0.39, 0.38)),
            illumination=0.95,
            light_tilt=0.3,
            color_response=mat((0.98, 0.04, 0.0), (0.02, 1.0, 0.02), (0.0, 0.03, 0.97)),
            sensor_sigma=0.016,
            spoof_ops=(
                ("moire", {"frequency": 0.24, "angle": 55.0, "amplitude": 0.15}),
                ("halftone", {"pitch": 5.5}),
                ("color_distortion_fixed", {"gains": (0.975, 1.02, 1.03), "offset": -0.02}),
            ),
        ),
    )


@dataclass(frozen=True)
class SynthConfig:
    num_domains: int = 4
    subjects_per_domain: int = 6
    frames_per_subject: int = 6  # live frames; the same count of spoof frames
    image_size: int = 32
    seed: int = 0
    domains: tuple = field(default_factory=_default_domains)
    # Documented distinguishability floor: minimum pairwise distance between
    # per-domain mean colors.
    min_domain_separation: float = 0.015

    def __post_init__(self):
        if self.num_domains < 2:
            raise ConfigError("cross-domain protocols need at least 2 domains")
        if self.num_domains > len(self.domains):
            raise ConfigError(
                f"only {len(self.domains)} domain recipes available, "
                f"asked for {self.num_domains}"
            )
        if self.subjects_per_domain < 2:
            raise ConfigError("need >= 2 subjects per domain for subject-disjoint splits")
        if self.frames_per_subject < 1:
            raise ConfigError("frames_per_subject must be >= 1")

    def active_domains(self) -> tuple:
        return tuple(self.domains[: self.num_domains])

    def to_dict(self) -> dict:
        return {
            "num_domains": self.num_domains,
            "subjects_per_domain": self.subjects_per_domain,
            "frames_per_subject": self.frames_per_subject,
            "image_size": self.image_size,
            "seed": self.seed,
        }


# -- face rendering -------------------------------------------------------------------


def _soft_disk(yy, xx, cy, cx, ry, rx, softness=1.8):
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return expit(-(d - 1.0) * softness * 4.0)


def _render_live(size: int, identity: dict, recipe: DomainRecipe,
                 rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)

    bg0 = np.asarray(recipe.background[0])
    bg1 = np.asarray(recipe.background[1])
    img = bg0[:, None, None] + (bg1 - bg0)[:, None, None] * yy[None]

    # Head: soft ellipse filled with the subject's skin tone.
    jitter = identity["frame_jitter"]
    cy, cx = identity["cy"] + jitter[0], identity["cx"] + jitter[1]
    head = _soft_disk(yy, xx, cy, cx, identity["ry"], identity["rx"])
    skin = np.asarray(identity["skin"])
    img = img * (1.0 - head[None]) + skin[:, None, None] * head[None]

    # Eyes: two dark blobs, symmetric about the face axis.
    eye_dy = identity["eye_dy"]
    eye_dx = identity["eye_dx"]
    eye_r = identity["eye_r"]
    for side in (-1.0, 1.0):
        eye = _soft_disk(yy, xx, cy - eye_dy, cx + side * eye_dx, eye_r, eye_r, softness=3.0)
        img = img * (1.0 - 0.75 * eye[None])

    # Mouth: a wide shallow dark ellipse.
    mouth = _soft_disk(yy, xx, cy + identity["mouth_dy"], cx,
                       identity["mouth_ry"], identity["mouth_rx"], softness=3.0)
    mouth_color = np.asarray(identity["mouth_color"])
    img = img * (1.0 - mouth[None]) + mouth_color[:, None, None] * mouth[None]

    # Domain capture conditions: illumination with a lateral gradient,
    # camera color response, then per-frame auto-exposure/auto-white-balance
    # wobble, then sensor noise.  The per-frame wobble is what keeps the
    # live-vs-spoof color statistics overlapping (the spoof pipeline is a
    # deterministic function of the live frame).
    light = recipe.illumination * (1.0 + recipe.light_tilt * (xx - 0.5))
    img = img * light[None]
    img = np.tensordot(recipe.color_matrix(), img, axes=(1, 0))
    exposure = rng.uniform(1.0 - _EXPOSURE_JITTER, 1.0 + _EXPOSURE_JITTER)
    gains = exposure * (1.0 + rng.uniform(-_WB_JITTER, _WB_JITTER, size=3))
    img = img * gains[:, None, None]
    img = img + rng.normal(0.0, recipe.sensor_sigma, size=img.shape)
    return clip01(img)


def _apply_fixed_color_distortion(pixels: np.ndarray, gains, offset) -> np.ndarray:
    out = pixels * np.asarray(gains)[:, None, None] + offset
    return clip01(out)


def _render_spoof(live_pixels: np.ndarray, recipe: DomainRecipe,
                  rng: np.random.Generator) -> np.ndarray:
    """Recapture pipeline: artifact operators with domain-fixed parameters."""
    out = live_pixels
    for op_name, params in recipe.spoof_ops:
        if op_name == "color_distortion_fixed":
            out = _apply_fixed_color_distortion(out, params["gains"], params["offset"])
        elif op_name == "moire":
            from .augment import moire

            # Small per-frame phase variation comes from jittering the angle.
            angle = params["angle"] + rng.uniform(-3.0, 3.0)
            out = moire(out, params["frequency"], angle, params["amplitude"])
        elif op_name == "halftone":
            from .augment import halftone

            out = halftone(out, params["pitch"])
        elif op_name == "color_banding":
            from .augment import color_banding

            out = color_banding(out, params["levels"])
        elif op_name == "specular_reflection":
            from .augment import specular_reflection

            # Glare position/extent vary per frame (rng is frame-keyed).
            out = specular_reflection(out, params["gain"], rng)
        elif op_name in OPERATORS:
            raise ConfigError(f"operator {op_name} needs explicit parameter plumbing")
        else:
            raise ConfigError(f"unknown spoof operator {op_name}")
    # Recapture auto-exposure: pull overall brightness back toward the live
    # frame (all channels scaled equally, so color ratios keep the operators'
    # casts).  The exponent is symmetric around full correction, making the
    # residual brightness shift zero-mean.  No other spoof-side randomness:
    # a spoof is otherwise a deterministic function of its live frame, the
    # same relationship the artifact augmentation teaches at train time.
    live_mean = live_pixels.mean()
    out_mean = out.mean()
    ratio = float(np.clip(live_mean / max(out_mean, 1e-6), 0.25, 4.0))
    exponent = rng.uniform(1.0 - _EXP_SPREAD, 1.0 + _EXP_SPREAD)
    return clip01(out * ratio**exponent)


def _identity_params(rng: np.random.Generator) -> dict:
    skin_base = rng.uniform(0.45, 0.8)
    return {
        "cy": rng.uniform(0.42, 0.55),
        "cx": rng.uniform(0.45, 0.55),
        "ry": rng.uniform(0.28, 0.38),
        "rx": rng.uniform(0.22, 0.30),
        "skin": (skin_base, skin_base * rng.uniform(0.75, 0.9), skin_base * rng.uniform(0.55, 0.75)),
        "eye_dy": rng.uniform(0.08, 0.14),
        "eye_dx": rng.uniform(0.08, 0.13),
        "eye_r": rng.uniform(0.03, 0.05),
        "mouth_dy": rng.uniform(0.12, 0.18),
        "mouth_ry": rng.uniform(0.025, 0.045),
        "mouth_rx": rng.uniform(0.08, 0.14),
        "mouth_color": (rng.uniform(0.35, 0.55), rng.uniform(0.15, 0.25), rng.uniform(0.15, 0.25)),
        "frame_jitter": (0.0, 0.0),
    }


# -- probe oracles ---------------------------------------------------------------------


def channel_mean_probe_auc(images: list[np.ndarray], labels: list[int]) -> float:
    """AUC of a linear (LDA-direction) probe on per-channel pixel means.

    Measures how separable Live/Spoof are from trivial color statistics: the
    task must be learnable (> chance) but not solvable by color alone.
    """
    feats = np.stack([img.mean(axis=(1, 2)) for img in images])
    labels = np.asarray(labels)
    live, spoof = feats[labels == LIVE], feats[labels == SPOOF]
    if len(live) == 0 or len(spoof) == 0:
        raise DataError("probe needs both classes")
    pooled = np.cov(np.concatenate([live - live.mean(0), spoof - spoof.mean(0)]).T)
    direction = np.linalg.pinv(pooled + 1e-9 * np.eye(3)) @ (live.mean(0) - spoof.mean(0))
    scores = feats @ direction
    from .metrics import ScoreRecord, auc

    records = [
        ScoreRecord(f"p{i}", float(s), int(l), "probe")
        for i, (s, l) in enumerate(zip(scores, labels))
    ]
    return auc(records)


def domain_mean_separation(per_domain_means: dict[str, np.ndarray]) -> float:
    names = sorted(per_domain_means)
    dists = [
        float(np.linalg.norm(per_domain_means[a] - per_domain_means[b]))
        for i, a in enumerate(names)
        for b in names[i + 1 :]
    ]
    return min(dists)


# -- generation --------------------------------------------------------------------------


def synth_generate(cfg: SynthConfig, out_dir, probe_check: bool = True) -> DatasetManifest:
    """Render the dataset under out_dir and write manifest.jsonl.

    Deterministic from cfg.seed.  With probe_check, runs two oracles after
    generation: per-domain mean-color separation above the configured floor,
    and a within-domain channel-mean probe with AUC in (0.7, 0.95).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ManifestRecord] = []
    domain_pixel_sums: dict[str, np.ndarray] = {}
    domain_pixel_counts: dict[str, int] = {}
    probe_images: dict[str, list[np.ndarray]] = {}
    probe_labels: dict[str, list[int]] = {}

    for recipe in cfg.active_domains():
        probe_images[recipe.name] = []
        probe_labels[recipe.name] = []
        domain_pixel_sums[recipe.name] = np.zeros(3)
        domain_pixel_counts[recipe.name] = 0
        for subject in range(cfg.subjects_per_domain):
            subject_id = f"{recipe.name}-subj{subject:02d}"
            id_rng = np.random.default_rng([cfg.seed, hash_name(recipe.name), subject])
            identity = _identity_params(id_rng)
            for frame in range(cfg.frames_per_subject):
                frame_rng = np.random.default_rng(
                    [cfg.seed, hash_name(recipe.name), subject, frame]
                )
                jitter = frame_rng.uniform(-0.02, 0.02, size=2)
                framed = dict(identity, frame_jitter=(jitter[0], jitter[1]))
                live_px = _render_live(cfg.image_size, framed, recipe, frame_rng)
                spoof_px = _render_spoof(live_px, recipe, frame_rng)

                for kind, label, px in (("live", LIVE, live_px), ("attack", SPOOF, spoof_px)):
                    rel = f"{recipe.name}/{subject_id}-{kind}-f{frame}.png"
                    write_png(out_dir / rel, px)
                    attack = ""
                    if label == SPOOF:
                        families = []
                        for op, _ in recipe.spoof_ops:
                            family = _ATTACK_NAMES.get(op, op.split("_")[0])
                            if family not in families:
                                families.append(family)
                        attack = "+".join(families)
                    records.append(
                        ManifestRecord(
                            sample_id=f"{subject_id}-{kind}#f{frame}",
                            path=rel,
                            label=label,
                            domain=recipe.name,
                            subject_id=subject_id,
                            attack_type=attack,
                        )
                    )
                    domain_pixel_sums[recipe.name] += px.mean(axis=(1, 2))
                    domain_pixel_counts[recipe.name] += 1
                    probe_images[recipe.name].append(px)
                    probe_labels[recipe.name].append(label)

    domain_names = [r.name for r in cfg.active_domains()]
    write_manifest(out_dir / "manifest.jsonl", records, domains=domain_names)

    if probe_check:
        means = {
            name: domain_pixel_sums[name] / domain_pixel_counts[name]
            for name in domain_names
        }
        separation = domain_mean_separation(means)
        if separation < cfg.min_domain_separation:
            raise DataError(
                f"domains not distinguishable: mean-color separation {separation:.4f} "
                f"< floor {cfg.min_domain_separation}"
            )
        for name in domain_names:
            probe = channel_mean_probe_auc(probe_images[name], probe_labels[name])
            if not 0.7 < probe < 0.95:
                raise DataError(
                    f"domain {name}: channel-mean probe AUC {probe:.3f} outside (0.7, 0.95) "
                    "— task degenerate or trivially color-separable"
                )

    from .data import read_manifest

    return read_manifest(out_dir / "manifest.jsonl")


def hash_name(name: str) -> int:
    """Stable small integer from a string (for seed sequences)."""
    import hashlib

    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=4).digest(), "little")
