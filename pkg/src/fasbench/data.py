"""Dataset plumbing: manifests, preprocessing, fixed-interval frame sampling.

A manifest is a UTF-8 JSONL file: a versioned header line declaring the
label/domain vocabularies, then one canonical-JSON record per sample.  Image
paths are relative to the manifest's directory.  Canonical serialization
makes write -> read -> write byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .imageops import bilinear_resize, read_png
from .labels import LIVE, SPOOF, label_name, parse_label

MANIFEST_FORMAT = "fas-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    path: str  # relative to the manifest file
    label: int
    domain: str
    subject_id: str
    attack_type: str = ""

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "path": self.path,
            "label": label_name(self.label),
            "domain": self.domain,
            "subject_id": self.subject_id,
            "attack_type": self.attack_type,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        return cls(
            sample_id=d["sample_id"],
            path=d["path"],
            label=parse_label(d["label"]),
            domain=d["domain"],
            subject_id=d["subject_id"],
            attack_type=d.get("attack_type", ""),
        )


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path  # directory image paths are relative to
    domains: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        if not self.domains:
            self.domains = sorted({r.domain for r in self.records})
        self.validate()

    def validate(self):
        seen = set()
        vocab = set(self.domains)
        for r in self.records:
            if r.sample_id in seen:
                raise DataError(f"duplicate sample_id {r.sample_id}")
            seen.add(r.sample_id)
            if r.domain not in vocab:
                raise DataError(
                    f"sample {r.sample_id}: domain {r.domain!r} not in declared vocabulary"
                )

    def image_path(self, record: ManifestRecord) -> Path:
        return self.root / record.path

    def load_image(self, record: ManifestRecord) -> np.ndarray:
        return read_png(self.image_path(record))

    def by_domain(self, domains) -> "DatasetManifest":
        wanted = {domains} if isinstance(domains, str) else set(domains)
        missing = wanted - set(self.domains)
        if missing:
            raise DataError(f"unknown domains requested: {sorted(missing)}")
        return DatasetManifest(
            records=[r for r in self.records if r.domain in wanted],
            root=self.root,
            domains=sorted(wanted),
        )

    def counts(self) -> dict:
        live = sum(1 for r in self.records if r.label == LIVE)
        return {"total": len(self.records), "live": live, "spoof": len(self.records) - live}

    def __len__(self):
        return len(self.records)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(path, records: list[ManifestRecord], domains: list[str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    domains = sorted(domains if domains is not None else {r.domain for r in records})
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "labels": [label_name(SPOOF), label_name(LIVE)],
        "domains": domains,
        "count": len(records),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_canonical(header) + "\n")
        for r in records:
            fh.write(_canonical(r.to_dict()) + "\n")


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a manifest (format={header.get('format')!r})")
    if header.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {header.get('version')}")
    records = [ManifestRecord.from_dict(json.loads(line)) for line in lines[1:] if line]
    if header.get("count") != len(records):
        raise DataError(
            f"{path}: header count {header.get('count')} != {len(records)} records"
        )
    manifest = DatasetManifest(records=records, root=path.parent, domains=header["domains"])
    if check_files:
        for r in records:
            if not manifest.image_path(r).exists():
                raise DataError(f"missing image file: {manifest.image_path(r)}")
    return manifest


# -- preprocessing -----------------------------------------------------------------

_STD_FLOOR = 1e-6


class Preprocessor:
    """Bilinear resize + per-channel standardization.

    Statistics must be fitted on (or explicitly given from) the training
    split only; `fitted_domains` records where they came from so protocol
    runs can assert no test-domain leakage.
    """

    def __init__(self, image_size: int, mean=None, std=None, fitted_domains=None):
        self.image_size = int(image_size)
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)
        self.fitted_domains = sorted(fitted_domains) if fitted_domains else []

    def resize(self, pixels: np.ndarray) -> np.ndarray:
        if pixels.shape[1:] == (self.image_size, self.image_size):
            return pixels
        return bilinear_resize(pixels, self.image_size, self.image_size)

    def fit(self, images, domains) -> "Preprocessor":
        """Accumulate channel statistics over resized [0,1] images."""
        total = np.zeros(3)
        total_sq = np.zeros(3)
        count = 0
        for img in images:
            resized = self.resize(img)
            total += resized.sum(axis=(1, 2))
            total_sq += (resized**2).sum(axis=(1, 2))
            count += resized.shape[1] * resized.shape[2]
        if count == 0:
            raise DataError("cannot fit preprocessing statistics on zero images")
        self.mean = total / count
        var = np.maximum(total_sq / count - self.mean**2, 0.0)
        self.std = np.maximum(np.sqrt(var), _STD_FLOOR)
        self.fitted_domains = sorted({domains} if isinstance(domains, str) else set(domains))
        return self

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        if self.mean is None or self.std is None:
            raise ConfigError("preprocessor statistics not fitted")
        resized = self.resize(pixels)
        return (resized - self.mean[:, None, None]) / self.std[:, None, None]

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "fitted_domains": self.fitted_domains,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(d["image_size"], mean=d["mean"], std=d["std"],
                   fitted_domains=d["fitted_domains"])


# -- frame sampling ------------------------------------------------------------------


def sample_frame_indices(n: int, k: int = 5) -> list[int]:
    """k fixed-interval indices into n frames, anchored at frame 0.

    Uses round(i*(n-1)/(k-1)); duplicate indices (n < k) are removed in order.
    """
    if n < 1:
        raise DataError("empty video")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k == 1:
        return [0]
    raw = [round(i * (n - 1) / (k - 1)) for i in range(k)]
    seen = set()
    out = []
    for idx in raw:
        if idx not in seen:
            seen.add(idx)
            out.append(idx)
    return out


def sample_frames(frames: list, k: int = 5) -> list:
    """The frames at sample_frame_indices positions."""
    return [frames[i] for i in sample_frame_indices(len(frames), k)]
