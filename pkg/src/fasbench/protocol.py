"""Cross-domain protocol harness: leave-one-out and limited-source suites.

A protocol leg trains on its source domains, calibrates the operating
threshold at the EER point of the source-domain scores, then scores the
held-out domain.  Suites iterate legs and add an "Avg." row.  Every leg
writes a score file, a rendered report, a training log, and a checkpoint
under its own directory; reruns with the same config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetManifest
from .errors import ConfigError, ProtocolError
from .metrics import MetricsReport, compute_report, eer_threshold, write_scores
from .trainer import TrainConfig, TrainResult, score_records, train

MODE_LEAVE_ONE_OUT = "leave-one-out"
MODE_LIMITED_SOURCE = "limited-source"


def config_fingerprint(payload: dict) -> str:
    """Short stable hash of a canonically serialized config dict."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(blob.encode("utf-8"), digest_size=8).hexdigest()


@dataclass(frozen=True)
class ProtocolSpec:
    train_domains: tuple
    test_domain: str
    mode: str = MODE_LEAVE_ONE_OUT
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "train_domains", tuple(sorted(self.train_domains)))
        if not self.train_domains:
            raise ConfigError("protocol needs at least one train domain")
        if self.test_domain in self.train_domains:
            raise ConfigError(
                f"test domain {self.test_domain!r} must not appear in train domains"
            )
        if self.mode not in (MODE_LEAVE_ONE_OUT, MODE_LIMITED_SOURCE):
            raise ConfigError(f"unknown protocol mode {self.mode!r}")
        if self.mode == MODE_LIMITED_SOURCE and len(self.train_domains) != 2:
            raise ConfigError(
                f"limited-source protocols train on exactly 2 domains, "
                f"got {len(self.train_domains)}"
            )
        if not self.name:
            object.__setattr__(
                self, "name", f"{''.join(self.train_domains)}-to-{self.test_domain}"
            )

    @property
    def label(self) -> str:
        return f"{''.join(self.train_domains)}->{self.test_domain}"

    def to_dict(self) -> dict:
        return {
            "train_domains": list(self.train_domains),
            "test_domain": self.test_domain,
            "mode": self.mode,
            "name": self.name,
        }


@dataclass
class ProtocolResult:
    spec: ProtocolSpec
    report: MetricsReport
    threshold: float
    fingerprint: str
    score_path: Path
    report_path: Path
    train_result: TrainResult = field(repr=False)

    def row(self) -> dict:
        return {
            "protocol": self.spec.label,
            "test_domain": self.spec.test_domain,
            "hter": self.report.hter,
            "auc": self.report.auc,
            "eer_threshold": self.threshold,
            "far": self.report.far,
            "frr": self.report.frr,
            "n_live": self.report.n_live,
            "n_spoof": self.report.n_spoof,
        }


def _check_domains(spec: ProtocolSpec, manifest: DatasetManifest) -> None:
    known = set(manifest.domains)
    wanted = set(spec.train_domains) | {spec.test_domain}
    missing = wanted - known
    if missing:
        raise ProtocolError(
            f"protocol {spec.label}: domains {sorted(missing)} not in manifest "
            f"(has {manifest.domains})"
        )


def run_protocol(spec: ProtocolSpec, manifest: DatasetManifest, cfg: TrainConfig,
                 out_dir) -> ProtocolResult:
    """Train one leg, calibrate tau on source-domain scores, score the target."""
    _check_domains(spec, manifest)
    leg_dir = Path(out_dir) / spec.name
    result = train(manifest, spec, cfg, leg_dir)

    train_scores = score_records(
        result.model, result.preproc, manifest,
        manifest.by_domain(list(spec.train_domains)).records,
    )
    tau = eer_threshold(train_scores)

    test_scores = score_records(
        result.model, result.preproc, manifest,
        manifest.by_domain(spec.test_domain).records,
    )
    score_path = leg_dir / "scores.csv"
    write_scores(score_path, test_scores)

    report = compute_report(test_scores, threshold=tau)
    fingerprint = config_fingerprint(
        {"protocol": spec.to_dict(), "train_config": cfg.to_dict()}
    )
    report_path = leg_dir / "report.txt"
    report_path.write_text(report.render(fingerprint=fingerprint), encoding="utf-8")
    return ProtocolResult(
        spec=spec, report=report, threshold=tau, fingerprint=fingerprint,
        score_path=score_path, report_path=report_path, train_result=result,
    )


# -- suites ----------------------------------------------------------------------------


def leave_one_out_specs(domains) -> list[ProtocolSpec]:
    domains = sorted(domains)
    if len(domains) < 2:
        raise ConfigError("leave-one-out needs at least 2 domains")
    return [
        ProtocolSpec(
            train_domains=tuple(d for d in domains if d != held_out),
            test_domain=held_out,
            mode=MODE_LEAVE_ONE_OUT,
        )
        for held_out in domains
    ]


def limited_source_specs(domains, sources=None) -> list[ProtocolSpec]:
    """Two-source protocols: the (alphabetically) first two domains by default."""
    domains = sorted(domains)
    if len(domains) < 3:
        raise ConfigError("limited-source needs at least 3 domains")
    sources = tuple(sorted(sources)) if sources else tuple(domains[:2])
    if len(sources) != 2:
        raise ConfigError(f"limited-source needs exactly 2 source domains, got {sources}")
    targets = [d for d in domains if d not in sources]
    if not targets:
        raise ConfigError("no target domains left for limited-source protocols")
    return [
        ProtocolSpec(train_domains=sources, test_domain=t, mode=MODE_LIMITED_SOURCE)
        for t in targets
    ]


def run_suite(specs: list[ProtocolSpec], manifest: DatasetManifest, cfg: TrainConfig,
              out_dir, suite_name: str) -> dict:
    """Run each leg, then write <suite_name>.json and <suite_name>.txt with Avg. row."""
    out_dir = Path(out_dir)
    results = [run_protocol(spec, manifest, cfg, out_dir) for spec in specs]
    rows = [r.row() for r in results]
    avg = {
        "protocol": "Avg.",
        "hter": sum(r["hter"] for r in rows) / len(rows),
        "auc": sum(r["auc"] for r in rows) / len(rows),
    }
    fingerprint = config_fingerprint(
        {"suite": suite_name, "legs": [s.to_dict() for s in specs],
         "train_config": cfg.to_dict()}
    )
    suite = {
        "suite": suite_name,
        "fingerprint": fingerprint,
        "rows": rows,
        "avg": avg,
    }
    json_path = out_dir / f"{suite_name}.json"
    json_path.write_text(
        json.dumps(suite, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    text_path = out_dir / f"{suite_name}.txt"
    text_path.write_text(render_suite(suite), encoding="utf-8")
    suite["json_path"] = json_path
    suite["text_path"] = text_path
    suite["results"] = results
    return suite


def render_suite(suite: dict) -> str:
    lines = [f"suite: {suite['suite']}", f"fingerprint: {suite['fingerprint']}", ""]
    header = f"{'protocol':<14} {'HTER':>12} {'AUC':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in suite["rows"]:
        lines.append(f"{row['protocol']:<14} {row['hter']:>12.9f} {row['auc']:>12.9f}")
    avg = suite["avg"]
    lines.append(f"{avg['protocol']:<14} {avg['hter']:>12.9f} {avg['auc']:>12.9f}")
    return "\n".join(lines) + "\n"


def leave_one_out_suite(manifest: DatasetManifest, cfg: TrainConfig, out_dir) -> dict:
    return run_suite(leave_one_out_specs(manifest.domains), manifest, cfg,
                     out_dir, "leave_one_out")


def limited_source_suite(manifest: DatasetManifest, cfg: TrainConfig, out_dir,
                         sources=None) -> dict:
    return run_suite(limited_source_specs(manifest.domains, sources), manifest,
                     cfg, out_dir, "limited_source")
