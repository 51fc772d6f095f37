"""Command-line entry point: synth | train | eval | benchmark | report.

Every command resolves its configuration in layers (package defaults, then
the --config JSON file, then explicit flags), canonicalizes the result, and
writes it as run_config.json next to its outputs.  A short fingerprint of
that canonical form names the run: identical inputs produce identical
fingerprints and byte-identical outputs.

Exit statuses: 0 success, 1 runtime/IO failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from .augment import AugConfig
from .data import DatasetManifest, read_manifest
from .errors import ConfigError, DataError, FasbenchError
from .labels import LIVE
from .metrics import compute_report, read_scores, roc_points
from .protocol import (
    MODE_LEAVE_ONE_OUT,
    ProtocolSpec,
    config_fingerprint,
    leave_one_out_suite,
    limited_source_suite,
    render_suite,
    run_protocol,
)
from .synth import SynthConfig, synth_generate
from .trainer import TrainConfig, score_records
from .vit import DESK_SCALE, PAPER_SCALE, TINY, ModelConfig, count_params

ENV_OUT = "FASBENCH_OUT"

MODEL_PRESETS = {"tiny": TINY, "desk": DESK_SCALE, "paper": PAPER_SCALE}


# -- config plumbing ---------------------------------------------------------------


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, given: dict, allowed: set) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown config key {unknown[0]!r} in section {section!r} "
            f"(allowed: {', '.join(sorted(allowed))})"
        )


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    _check_keys(str(path), cfg, {"synth", "train", "sources"})
    return cfg


def build_synth_config(section: dict, seed: int | None) -> SynthConfig:
    section = dict(section)
    allowed = set(SynthConfig().to_dict()) | {"min_domain_separation"}
    _check_keys("synth", section, allowed)
    if seed is not None:
        section["seed"] = seed
    return SynthConfig(**section)


def build_train_config(section: dict, seed: int | None) -> TrainConfig:
    section = dict(section)
    _check_keys("train", section, _field_names(TrainConfig))

    model = section.pop("model", "desk")
    if isinstance(model, str):
        if model not in MODEL_PRESETS:
            raise ConfigError(
                f"unknown model preset {model!r} "
                f"(choose from {', '.join(sorted(MODEL_PRESETS))} or give a field table)"
            )
        model_cfg = MODEL_PRESETS[model]
    else:
        _check_keys("train.model", model, _field_names(ModelConfig))
        model_cfg = ModelConfig.from_dict(model)

    aug = dict(section.pop("aug", {}))
    _check_keys("train.aug", aug, _field_names(AugConfig))
    aug = {k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()}
    aug.setdefault("patch_size", model_cfg.patch_size)

    if seed is not None:
        section["seed"] = seed
    return TrainConfig(model=model_cfg, aug=AugConfig(**aug), **section)


def parse_protocol(text: str) -> ProtocolSpec:
    """"ABC-to-D", "ABC->D", or "A,B,C->D" (single letters need no commas)."""
    for sep in ("->", "-to-"):
        if sep in text:
            left, right = text.split(sep, 1)
            if not left or not right:
                raise ConfigError(f"malformed protocol {text!r}")
            train = tuple(left.split(",")) if "," in left else tuple(left)
            return ProtocolSpec(
                train_domains=train, test_domain=right, mode=MODE_LEAVE_ONE_OUT
            )
    raise ConfigError(
        f"malformed protocol {text!r}: expected TRAIN-to-TEST, e.g. ABC-to-D"
    )


@dataclass
class RunConfig:
    """Fully-resolved configuration written next to every command's outputs."""

    command: str
    resolved: dict
    deterministic: bool = False

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "deterministic": self.deterministic,
            "resolved": self.resolved,
        }

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = dict(self.to_dict(), fingerprint=self.fingerprint)
        path = out_dir / "run_config.json"
        path.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return path


def resolve_out(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(ENV_OUT, "runs")) / default_name


def _load_manifest(path) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.jsonl"
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    return read_manifest(p)


def _resolve_tau(source: str | None) -> tuple[float | None, str | None]:
    """Threshold source: a float literal, or a report.txt path.

    A report path also yields the producing run's config fingerprint so the
    re-rendered report round-trips byte-for-byte.
    """
    if source is None:
        return None, None
    try:
        return float(source), None
    except ValueError:
        pass
    path = Path(source)
    if not path.exists():
        raise DataError(f"threshold source not found: {path}")
    text = path.read_text(encoding="utf-8")
    m = re.search(r"^eer_threshold\s+(\S+)", text, re.M)
    if m is None:
        raise ConfigError(f"{path}: no eer_threshold line to read a threshold from")
    fp = re.search(r"^config_fingerprint\s+(\S+)", text, re.M)
    return float(m.group(1)), fp.group(1) if fp else None


# -- commands ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    synth_cfg = build_synth_config(file_cfg.get("synth", {}), args.seed)
    rc = RunConfig(
        command="synth",
        resolved={"synth": synth_cfg.to_dict()},
        deterministic=args.deterministic,
    )
    out_dir = resolve_out(args, f"dataset-{rc.fingerprint}")
    rc.write(out_dir)
    manifest = synth_generate(synth_cfg, out_dir)
    lives = sum(1 for r in manifest.records if r.label == LIVE)
    print(f"dataset: {out_dir}")
    print(f"fingerprint: {rc.fingerprint}")
    print(f"domains: {', '.join(manifest.domains)}")
    print(
        f"records: {len(manifest)} total, {lives} live, {len(manifest) - lives} spoof"
    )
    return 0


def cmd_train(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    train_cfg = build_train_config(file_cfg.get("train", {}), args.seed)

    if args.dry_run:
        n = count_params(train_cfg.model)
        print("config OK")
        print(f"model parameters: {n:,}")
        return 0

    if not args.data or not args.protocol:
        raise ConfigError("train needs --data and --protocol (or --dry-run)")
    spec = parse_protocol(args.protocol)
    manifest = _load_manifest(args.data)
    rc = RunConfig(
        command="train",
        resolved={"train": train_cfg.to_dict(), "protocol": spec.to_dict()},
        deterministic=args.deterministic,
    )
    out_dir = resolve_out(args, f"train-{rc.fingerprint}")
    rc.write(out_dir)
    result = run_protocol(spec, manifest, train_cfg, out_dir)
    print(f"run directory: {out_dir / spec.name}")
    print(f"fingerprint: {rc.fingerprint}")
    print(result.report.render(fingerprint=result.fingerprint), end="")
    return 0


def cmd_benchmark(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    train_cfg = build_train_config(file_cfg.get("train", {}), args.seed)
    manifest = _load_manifest(args.data)
    resolved = {"mode": args.mode, "train": train_cfg.to_dict()}
    sources = file_cfg.get("sources")
    if args.mode == "lsd" and sources is not None:
        resolved["sources"] = sorted(sources)
    rc = RunConfig(
        command="benchmark", resolved=resolved, deterministic=args.deterministic
    )
    out_dir = resolve_out(args, f"{args.mode}-{rc.fingerprint}")
    rc.write(out_dir)
    if args.mode == "mico":
        suite = leave_one_out_suite(manifest, train_cfg, out_dir)
    else:
        suite = limited_source_suite(manifest, train_cfg, out_dir, sources=sources)
    print(f"suite directory: {out_dir}")
    print(f"fingerprint: {rc.fingerprint}")
    print(render_suite(suite), end="")
    return 0


def cmd_eval(args) -> int:
    if bool(args.scores) == bool(args.checkpoint):
        raise ConfigError("eval needs exactly one of --scores or --checkpoint")
    if args.scores:
        records = read_scores(args.scores)
    else:
        from .trainer import load_for_eval

        if not args.data:
            raise ConfigError("eval --checkpoint needs --data")
        manifest = _load_manifest(args.data)
        model, head, preproc, _state = load_for_eval(args.checkpoint)
        wanted = manifest.by_domain(args.domain) if args.domain else manifest
        records = score_records(model, preproc, manifest, wanted.records)
    tau, fingerprint = _resolve_tau(args.tau)
    report = compute_report(records, threshold=tau)
    print(report.render(fingerprint=fingerprint), end="")
    if args.roc:
        roc_path = Path(args.roc)
        roc_path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["far,tpr"] + [f"{a:.9f},{b:.9f}" for a, b in roc_points(records)]
        roc_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"roc series: {roc_path}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    path = Path(args.run)
    if path.is_dir():
        candidates = [p for p in sorted(path.glob("*.json")) if p.name != "run_config.json"]
        suites = []
        for p in candidates:
            try:
                payload = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                continue
            if isinstance(payload, dict) and "rows" in payload and "avg" in payload:
                suites.append(payload)
        if not suites:
            raise DataError(f"no suite summary (*.json with rows) found under {path}")
        for suite in suites:
            print(render_suite(suite), end="")
        return 0
    if not path.exists():
        raise DataError(f"summary file not found: {path}")
    suite = json.loads(path.read_text(encoding="utf-8"))
    print(render_suite(suite), end="")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults < file < flags)")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument(
        "--out", default=None, help=f"output directory (default: ${ENV_OUT} or ./runs)"
    )
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="record deterministic mode in the run config (outputs are always "
        "seed-deterministic; the flag pins that intent in the artifact)",
    )

    parser = argparse.ArgumentParser(
        prog="fasbench",
        description="Face anti-spoofing research bench: synthesize data, train, "
        "evaluate, and run cross-domain benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one protocol leg")
    p.add_argument("--data", help="dataset directory or manifest.jsonl")
    p.add_argument("--protocol", help="protocol leg, e.g. ABC-to-D")
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="validate config and print the parameter count without training",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "benchmark", parents=[common], help="run a full cross-domain suite"
    )
    p.add_argument("--data", required=True, help="dataset directory or manifest.jsonl")
    p.add_argument(
        "--mode",
        choices=("mico", "lsd"),
        default="mico",
        help="mico: leave-one-domain-out; lsd: two-source limited-domain",
    )
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("eval", parents=[common], help="score-file or checkpoint metrics")
    p.add_argument("--scores", help="scores.csv from a run")
    p.add_argument("--checkpoint", help="model checkpoint to score a dataset with")
    p.add_argument("--data", help="dataset for --checkpoint mode")
    p.add_argument("--domain", help="restrict --checkpoint scoring to one domain")
    p.add_argument(
        "--tau",
        default=None,
        help="decision threshold: a float, or a report.txt to reuse a "
        "calibrated threshold (default: EER point of the given scores)",
    )
    p.add_argument("--roc", help="also write plot-ready (FAR, 1-FRR) series to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="re-render a suite summary")
    p.add_argument("--run", required=True, help="suite directory or summary JSON")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FasbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
