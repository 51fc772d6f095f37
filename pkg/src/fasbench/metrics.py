"""Score-based metrics: EER threshold, FAR/FRR, HTER, ROC AUC, score files.

Conventions:  p_live is the probability the sample is Live.  A sample is
accepted (predicted Live) iff p_live > threshold.  FAR is the fraction of
Spoof samples accepted; FRR is the fraction of Live samples rejected.
Threshold candidates are the observed scores plus -inf/+inf sentinels, which
keeps every metric exactly reproducible by brute-force enumeration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, ProtocolError
from .labels import LIVE, SPOOF, label_name, parse_label


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    p_live: float
    true_label: int
    domain: str

    def __post_init__(self):
        if not np.isfinite(self.p_live):
            raise ProtocolError(f"non-finite score for sample {self.sample_id}")
        if self.true_label not in (LIVE, SPOOF):
            raise ProtocolError(f"bad label {self.true_label} for sample {self.sample_id}")


def _split_scores(records) -> tuple[np.ndarray, np.ndarray]:
    live = np.array([r.p_live for r in records if r.true_label == LIVE])
    spoof = np.array([r.p_live for r in records if r.true_label == SPOOF])
    if len(live) == 0 or len(spoof) == 0:
        raise ProtocolError(
            f"both classes required: got {len(live)} Live, {len(spoof)} Spoof"
        )
    return live, spoof


def far_frr(records, threshold: float) -> tuple[float, float]:
    """(fraction of Spoof accepted, fraction of Live rejected) at threshold."""
    live, spoof = _split_scores(records)
    far = float(np.count_nonzero(spoof > threshold)) / len(spoof)
    frr = float(np.count_nonzero(live <= threshold)) / len(live)
    return far, frr


def eer_threshold(records) -> float:
    """Threshold minimizing |FAR - FRR| over observed scores plus sentinels.

    Ties are broken toward smaller FAR, then smaller threshold.
    """
    live, spoof = _split_scores(records)
    candidates = np.concatenate([live, spoof, [-np.inf, np.inf]])
    candidates = np.unique(candidates)  # sorted ascending
    live_sorted = np.sort(live)
    spoof_sorted = np.sort(spoof)
    # FAR: spoof scores strictly above tau; FRR: live scores at or below tau.
    # Integer counts first, one division after — bit-identical to per-threshold
    # enumeration.
    far = (len(spoof) - np.searchsorted(spoof_sorted, candidates, side="right")) / len(spoof)
    frr = np.searchsorted(live_sorted, candidates, side="right") / len(live)
    gap = np.abs(far - frr)
    order = np.lexsort((candidates, far, gap))  # gap, then FAR, then tau
    return float(candidates[order[0]])


def auc(records) -> float:
    """Probability a random Live outscores a random Spoof (ties count half)."""
    live, spoof = _split_scores(records)
    ranks = rankdata(np.concatenate([live, spoof]))
    n_live, n_spoof = len(live), len(spoof)
    live_rank_sum = ranks[:n_live].sum()
    return float((live_rank_sum - n_live * (n_live + 1) / 2.0) / (n_live * n_spoof))


def roc_points(records) -> list[tuple[float, float]]:
    """(FAR, TPR) as the threshold sweeps from +inf down to -inf.

    Starts at (0, 0) and ends at (1, 1); both coordinates are nondecreasing.
    """
    live, spoof = _split_scores(records)
    thresholds = np.unique(np.concatenate([live, spoof]))[::-1]
    points = [(0.0, 0.0)]
    for tau in thresholds:
        far = float(np.count_nonzero(spoof > tau)) / len(spoof)
        tpr = float(np.count_nonzero(live > tau)) / len(live)
        points.append((far, tpr))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


@dataclass
class MetricsReport:
    eer_threshold: float
    far: float
    frr: float
    hter: float
    auc: float
    n_live: int
    n_spoof: int
    roc: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "eer_threshold": self.eer_threshold,
            "far": self.far,
            "frr": self.frr,
            "hter": self.hter,
            "auc": self.auc,
            "n_live": self.n_live,
            "n_spoof": self.n_spoof,
            "roc": [[float(a), float(b)] for a, b in self.roc],
        }

    def render(self, fingerprint: str | None = None) -> str:
        lines = [
            f"n_live          {self.n_live}",
            f"n_spoof         {self.n_spoof}",
            f"eer_threshold   {self.eer_threshold:.9f}",
            f"far             {self.far:.9f}",
            f"frr             {self.frr:.9f}",
            f"hter            {self.hter:.9f}",
            f"auc             {self.auc:.9f}",
            f"roc_points      {len(self.roc)}",
        ]
        if fingerprint is not None:
            lines.append(f"config_fingerprint  {fingerprint}")
        return "\n".join(lines) + "\n"


def compute_report(records, threshold: float | None = None) -> MetricsReport:
    """Full metric bundle; threshold defaults to the set's own EER point.

    For protocol results pass the threshold calibrated on the training set.
    """
    live, spoof = _split_scores(records)
    tau = eer_threshold(records) if threshold is None else float(threshold)
    far, frr = far_frr(records, tau)
    return MetricsReport(
        eer_threshold=tau,
        far=far,
        frr=frr,
        hter=(far + frr) / 2.0,
        auc=auc(records),
        n_live=len(live),
        n_spoof=len(spoof),
        roc=roc_points(records),
    )


def aggregate_by_video(records, key=None) -> list[ScoreRecord]:
    """Mean p_live per video group (default group: sample_id up to '#')."""
    if key is None:
        key = lambda r: r.sample_id.rsplit("#", 1)[0]
    groups: dict[str, list[ScoreRecord]] = {}
    order: list[str] = []
    for r in records:
        k = key(r)
        if k not in groups:
            groups[k] = []
            order.append(k)
        groups[k].append(r)
    out = []
    for k in order:
        members = groups[k]
        labels = {m.true_label for m in members}
        domains = {m.domain for m in members}
        if len(labels) > 1 or len(domains) > 1:
            raise ProtocolError(f"video group {k} mixes labels or domains")
        out.append(
            ScoreRecord(
                sample_id=k,
                p_live=float(np.mean([m.p_live for m in members])),
                true_label=members[0].true_label,
                domain=members[0].domain,
            )
        )
    return out


# -- score files -----------------------------------------------------------------

_SCORE_HEADER = ["sample_id", "domain", "true_label", "p_live"]


def write_scores(path, records) -> None:
    """CSV with fixed 9-decimal scores: reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SCORE_HEADER)
        for r in records:
            writer.writerow(
                [r.sample_id, r.domain, label_name(r.true_label), f"{r.p_live:.9f}"]
            )


def read_scores(path) -> list[ScoreRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"score file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _SCORE_HEADER:
            raise DataError(f"{path}: unexpected score-file header {header}")
        return [
            ScoreRecord(
                sample_id=row[0],
                domain=row[1],
                true_label=parse_label(row[2]),
                p_live=float(row[3]),
            )
            for row in reader
        ]
