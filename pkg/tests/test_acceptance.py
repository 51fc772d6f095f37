"""Acceptance gate: eight pass/fail criteria covering the whole pipeline.

Each test prints (and records for the run summary) exactly one line of the
form ``criterion N: PASS/FAIL — detail``.  The expensive criteria (5 and 6)
share one session-scoped benchmark matrix: the full training recipe and the
plain-classification ablation, each run over all four leave-one-domain-out
legs for five seeds.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fasbench.augment import (
    ARTIFACT_CATEGORIES,
    AugConfig,
    ImageSample,
    apply_fas_aug,
    apply_pda,
    augment_sample,
)
from fasbench.cli import main as cli_main
from fasbench.labels import LIVE, SPOOF
from fasbench.losses import PatchHead, constrain_features, l2_softmax_loss, total_loss
from fasbench.metrics import auc, eer_threshold, far_frr
from fasbench.protocol import leave_one_out_specs, run_protocol
from fasbench.synth import SynthConfig, synth_generate
from fasbench.tensor import (
    Tensor,
    add,
    clip_min,
    concat,
    div,
    exp,
    finite_diff_check,
    gelu,
    getitem,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    power,
    reshape,
    softmax,
    sqrt,
    sub,
    tmean,
    transpose,
    tsum,
)
from fasbench.trainer import TrainConfig, train
from fasbench.vit import PAPER_SCALE, TINY, VisionTransformer, count_params

SEEDS = (0, 1, 2, 3, 4)
CRIT5_SEEDS = (0, 1, 2)


# -- shared benchmark matrix (criteria 5 and 6) -------------------------------------


def _bench_cfg(recipe: str, seed: int) -> TrainConfig:
    common = dict(model=TINY, lr_head=3e-3, lr_encoder=1e-3,
                  max_epochs=60, patience=59, batch_size=32, seed=seed)
    if recipe == "full":
        return TrainConfig(aug=AugConfig(patch_size=8, p_fas_aug=0.6, p_pda=0.3),
                           use_apl=True, **common)
    return TrainConfig(aug=AugConfig(patch_size=8, p_fas_aug=0.0, p_pda=0.0),
                       use_apl=False, **common)


@pytest.fixture(scope="session")
def benchmark_matrix(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    t_data = time.time()
    manifest = synth_generate(SynthConfig(image_size=16, seed=0), root / "data")
    data_seconds = time.time() - t_data

    aucs: dict[tuple[str, int], list[float]] = {}
    seconds: dict[tuple[str, int], float] = {}
    for recipe in ("full", "plain"):
        for seed in SEEDS:
            t0 = time.time()
            legs = []
            for spec in leave_one_out_specs(manifest.domains):
                res = run_protocol(spec, manifest, _bench_cfg(recipe, seed),
                                   root / recipe / f"s{seed}")
                legs.append(res.report.auc)
            aucs[(recipe, seed)] = legs
            seconds[(recipe, seed)] = time.time() - t0
    return {"aucs": aucs, "seconds": seconds, "data_seconds": data_seconds}


# -- criterion 1: gradient suite -----------------------------------------------------


def test_criterion_1_gradient_suite(criterion_check):
    t0 = time.time()
    rng = np.random.default_rng(11)
    worst = 0.0

    def check(f, x):
        nonlocal worst
        rep = finite_diff_check(f, x)
        worst = max(worst, rep.max_rel_err)

    def scalarize(op):
        # Random projection makes the scalar sensitive to every output entry.
        return lambda x, c: tsum(mul(op(x), Tensor(c)))

    x34 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    xpos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    other = Tensor(rng.normal(size=(3, 4)))
    ln_gain = Tensor(rng.uniform(0.5, 1.5, size=4))
    ln_bias = Tensor(rng.normal(size=4))

    unary = [
        (exp, x34), (log, xpos), (sqrt, xpos), (gelu, x34),
        (lambda t: softmax(t, axis=-1), x34),
        (lambda t: log_softmax(t, axis=-1), x34),
        (lambda t: layer_norm(t, ln_gain, ln_bias), x34),
        (lambda t: clip_min(t, 0.1), xpos),  # data kept away from the kink
        (lambda t: add(t, other), x34),
        (lambda t: sub(other, t), x34),
        (lambda t: mul(t, other), x34),
        (lambda t: div(other, t), xpos),
        (lambda t: power(t, 1.7), xpos),
        (lambda t: reshape(t, (4, 3)), x34),
        (lambda t: transpose(t, (1, 0)), x34),
        (lambda t: getitem(t, (slice(1, 3), slice(None))), x34),
        (lambda t: concat([t, other], axis=0), x34),
        (lambda t: tsum(t, axis=0, keepdims=True), x34),
        (lambda t: tmean(t, axis=1, keepdims=True), x34),
    ]
    for op, x in unary:
        out_shape = op(x).shape
        c = rng.normal(size=out_shape)
        check(lambda t, _op=op, _c=c: tsum(mul(_op(t), Tensor(_c))), x)

    m_right = Tensor(rng.normal(size=(4, 2)))
    cmat = rng.normal(size=(3, 2))
    check(lambda t: tsum(mul(matmul(t, m_right), Tensor(cmat))), x34)
    m_left = Tensor(rng.normal(size=(2, 3)))
    cmat2 = rng.normal(size=(2, 4))
    check(lambda t: tsum(mul(matmul(m_left, t), Tensor(cmat2))), x34)

    # Composed tiny model: full forward + dual-level loss, gradients checked
    # against finite differences for a representative parameter of each kind.
    model = VisionTransformer(TINY, seed=0)
    head = PatchHead(TINY.embed_dim, alpha=10.0, seed=0)
    images = rng.uniform(0.0, 1.0, size=(2, 3, 16, 16))
    labels = np.array([SPOOF, LIVE])
    patch_labels = rng.integers(0, 2, size=(2, TINY.num_patches))

    def model_loss(_t):
        out = model.forward(images)
        return total_loss(out, labels, patch_labels, head).l_total

    for name in ("cls_token", "registers", "pos_embed", "patch_embed.bias",
                 "blocks.0.attn.wq", "blocks.0.ln1.gain", "blocks.1.mlp.b2",
                 "blocks.1.attn.wo", "norm.gain", "head.weight"):
        check(model_loss, model.params[name])
    check(model_loss, head.weight)

    elapsed = time.time() - t0
    passed = worst < 1e-6 and elapsed < 60.0
    criterion_check(1, passed,
                    f"max rel err {worst:.2e} (< 1e-6), runtime {elapsed:.1f}s (< 60s)")


# -- criterion 2: metric oracles ------------------------------------------------------


def _brute_far_frr(live, spoof, tau):
    return (float(np.count_nonzero(spoof > tau)) / len(spoof),
            float(np.count_nonzero(live <= tau)) / len(live))


def _brute_eer_threshold(live, spoof):
    """Scan every candidate threshold; tie-break (|FAR-FRR|, FAR, tau)."""
    cands = np.concatenate([np.unique(np.concatenate([live, spoof])),
                            [-np.inf, np.inf]])
    best = None
    for tau in cands:
        far, frr = _brute_far_frr(live, spoof, tau)
        key = (abs(far - frr), far, tau)
        if best is None or key < best:
            best = key
    return best[2]


def _brute_auc(live, spoof):
    grid = (live[:, None] > spoof[None, :]) + 0.5 * (live[:, None] == spoof[None, :])
    return float(grid.mean())


def test_criterion_2_metric_oracles(criterion_check):
    from fasbench.metrics import ScoreRecord

    r = np.random.default_rng(20260819)
    n_sets = 1000
    worst_auc = 0.0
    mismatches = 0
    for _ in range(n_sets):
        n_live = int(r.integers(1, 250))
        n_spoof = int(r.integers(1, 250))
        live = np.round(r.random(n_live), 2)  # 2-decimal scores force ties
        spoof = np.round(r.random(n_spoof), 2)
        recs = [ScoreRecord(f"l{i}", float(s), LIVE, "d") for i, s in enumerate(live)]
        recs += [ScoreRecord(f"s{i}", float(s), SPOOF, "d") for i, s in enumerate(spoof)]

        tau = eer_threshold(recs)
        far, frr = far_frr(recs, tau)
        bt = _brute_eer_threshold(live, spoof)
        bf, br = _brute_far_frr(live, spoof, tau)
        if not (tau == bt and far == bf and frr == br
                and (far + frr) / 2.0 == (bf + br) / 2.0):
            mismatches += 1
        worst_auc = max(worst_auc, abs(auc(recs) - _brute_auc(live, spoof)))

    passed = mismatches == 0 and worst_auc <= 1e-12
    criterion_check(2, passed,
                    f"{n_sets} score sets: {mismatches} threshold/FAR/FRR/HTER "
                    f"mismatches, max AUC deviation {worst_auc:.1e} (<= 1e-12)")


# -- criterion 3: loss analytics ------------------------------------------------------


def test_criterion_3_loss_analytics(criterion_check, tmp_path):
    rng = np.random.default_rng(5)

    head = PatchHead(embed_dim=8, alpha=10.0)
    head.weight.data[:] = 0.0
    head.bias.data[:] = 0.0
    feats = Tensor(rng.normal(size=(6, 8)))
    zero_gap = abs(float(l2_softmax_loss(feats, [0, 1, 1, 0, 1, 0], head).data)
                   - math.log(2.0))

    norm_gap = 0.0
    for alpha in (1.0, 10.0, 31.5):
        scaled = constrain_features(Tensor(rng.normal(size=(64, 16))), alpha)
        norms = np.linalg.norm(scaled.data, axis=-1)
        norm_gap = max(norm_gap, float(np.abs(norms - alpha).max()))

    manifest = synth_generate(
        SynthConfig(num_domains=2, subjects_per_domain=3, frames_per_subject=2,
                    image_size=16, seed=0),
        tmp_path / "data", probe_check=False)
    spec = leave_one_out_specs(manifest.domains)[0]
    cfg = TrainConfig(model=TINY, lr_head=1e-3, lr_encoder=3e-4, batch_size=8,
                      max_epochs=5, patience=4, val_fraction=0.34, seed=0,
                      aug=AugConfig(patch_size=8, p_fas_aug=0.5, p_pda=0.3))
    train(manifest, spec, cfg, tmp_path / "run")
    steps = [json.loads(line)
             for line in (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
             if json.loads(line)["kind"] == "step"]
    epochs_seen = {s["epoch"] for s in steps}
    sum_gap = max(abs(s["l_total"] - (s["l_class"] + s["l_apl"])) for s in steps)

    passed = (zero_gap < 1e-12 and norm_gap < 1e-6
              and epochs_seen == set(range(5)) and sum_gap < 1e-12)
    criterion_check(3, passed,
                    f"zero-weight loss−ln2 {zero_gap:.1e} (< 1e-12), norm−α "
                    f"{norm_gap:.1e} (< 1e-6), l_total−(l_class+l_apl) over "
                    f"{len(steps)} steps/5 epochs {sum_gap:.1e} (< 1e-12)")


# -- criterion 4: augmentation semantics ---------------------------------------------


def test_criterion_4_augmentation_semantics(criterion_check):
    rng = np.random.default_rng(99)
    cfg = AugConfig(patch_size=8, p_fas_aug=1.0, p_pda=0.2, p_pda_patch=0.5)
    n = 10_000
    num_patches = 4  # 16x16 image, 8x8 patches

    def fresh(label):
        return ImageSample(
            pixels=rng.uniform(0.0, 1.0, size=(3, 16, 16)),
            label=label, domain="d", sample_id=f"s{label}",
            patch_labels=np.full(num_patches, label, dtype=np.int64),
        )

    violations = 0
    applied = {"photography-noise": 0, "print-artifact": 0, "display-artifact": 0}
    for i in range(n):
        base = fresh(LIVE if i % 2 == 0 else SPOOF)
        out = apply_fas_aug(base, rng, cfg)
        record = out.provenance[-1]
        applied[record["category"]] += 1
        if record["category"] in ARTIFACT_CATEGORIES:
            ok = out.label == SPOOF and np.all(out.patch_labels == SPOOF)
        else:
            ok = (out.label == base.label
                  and np.array_equal(out.patch_labels, base.patch_labels))
        violations += 0 if ok else 1

    # Patch-replacement counts: Binomial(P patches, 0.5) chi-square.
    live = fresh(LIVE)
    spoof = fresh(SPOOF)
    counts = np.zeros(num_patches + 1, dtype=np.int64)
    for _ in range(n):
        mixed = apply_pda(spoof, live, rng, cfg)
        counts[mixed.provenance[-1]["params"]["replaced"]] += 1
    expected = np.array([math.comb(num_patches, k) * 0.5**num_patches
                         for k in range(num_patches + 1)]) * n
    chi2_patch = float(((counts - expected) ** 2 / expected).sum())
    crit_patch = stats.chi2.ppf(1 - 0.001, df=num_patches)

    # Per-sample mixing rate: Binomial(n, 0.2) chi-square (1 dof).
    pda_hits = 0
    pool = [live]
    quiet = AugConfig(patch_size=8, p_fas_aug=0.0, p_pda=0.2, p_pda_patch=0.5)
    for _ in range(n):
        out = augment_sample(spoof, pool, rng, quiet)
        pda_hits += any(rec["op"] == "pda" for rec in out.provenance)
    exp_hits = 0.2 * n
    chi2_rate = (pda_hits - exp_hits) ** 2 / (n * 0.2 * 0.8)
    crit_rate = stats.chi2.ppf(1 - 0.001, df=1)

    passed = (violations == 0 and min(applied.values()) > 0
              and chi2_patch < crit_patch and chi2_rate < crit_rate)
    criterion_check(4, passed,
                    f"{n} samples: {violations} label-semantics violations; "
                    f"patch-count chi2 {chi2_patch:.2f} (< {crit_patch:.2f}), "
                    f"mix-rate chi2 {chi2_rate:.2f} (< {crit_rate:.2f})")


# -- criteria 5 & 6: desk-scale generalization and ablation direction ----------------


def test_criterion_5_unseen_domain_auc(criterion_check, benchmark_matrix):
    aucs = benchmark_matrix["aucs"]
    legs = [a for s in CRIT5_SEEDS for a in aucs[("full", s)]]
    mean_auc = float(np.mean(legs))
    runtime = benchmark_matrix["data_seconds"] + sum(
        benchmark_matrix["seconds"][("full", s)] for s in CRIT5_SEEDS)
    passed = mean_auc >= 0.90 and runtime < 900.0
    criterion_check(5, passed,
                    f"mean unseen-domain AUC {mean_auc:.4f} (>= 0.90) over 4 legs x "
                    f"{len(CRIT5_SEEDS)} seeds, runtime {runtime:.0f}s (< 900s)")


def test_criterion_6_ablation_direction(criterion_check, benchmark_matrix):
    aucs = benchmark_matrix["aucs"]
    full = np.array([np.mean(aucs[("full", s)]) for s in SEEDS])
    plain = np.array([np.mean(aucs[("plain", s)]) for s in SEEDS])
    gap = float(full.mean() - plain.mean())
    passed = full.mean() >= plain.mean()
    criterion_check(6, passed,
                    f"full {full.mean():.4f} vs plain {plain.mean():.4f} over "
                    f"{len(SEEDS)} paired seeds: gap {gap:+.4f}, per-seed "
                    + " ".join(f"{g:+.3f}" for g in full - plain))


# -- criterion 7: structural full-scale checks ----------------------------------------


def test_criterion_7_structural_scale(criterion_check):
    n = count_params(PAPER_SCALE)
    rel = abs(n - 87e6) / 87e6
    geometry_ok = (PAPER_SCALE.image_size // PAPER_SCALE.patch_size == 16
                   and PAPER_SCALE.num_patches == 256
                   and PAPER_SCALE.seq_len == 1 + PAPER_SCALE.num_registers + 256
                   and PAPER_SCALE.depth == 12)

    model = VisionTransformer(TINY, seed=3)
    head = PatchHead(TINY.embed_dim, alpha=10.0, seed=1)
    rng = np.random.default_rng(0)
    images = rng.uniform(size=(2, 3, 16, 16))
    labels = np.array([SPOOF, LIVE])
    patch_labels = rng.integers(0, 2, size=(2, TINY.num_patches))
    out = model.forward(images)
    lb_default = total_loss(out, labels, patch_labels, head)
    lb_final = total_loss(out, labels, patch_labels, head,
                          block_index=TINY.depth - 1)
    lb_first = total_loss(out, labels, patch_labels, head, block_index=0)
    final_block_ok = (float(lb_default.l_apl.data) == float(lb_final.l_apl.data)
                      and float(lb_default.l_apl.data) != float(lb_first.l_apl.data))

    passed = rel <= 0.02 and geometry_ok and final_block_ok
    criterion_check(7, passed,
                    f"full-scale params {n/1e6:.1f}M (87M ±2%: dev {rel:.1%}), "
                    f"256 patches + 1 CLS + {PAPER_SCALE.num_registers} registers, "
                    f"patch weights sourced from the final block (12 of 12 at "
                    f"full scale)")


# -- criterion 8: benchmark determinism ----------------------------------------------


def test_criterion_8_benchmark_determinism(criterion_check, tmp_path):
    synth_generate(
        SynthConfig(num_domains=3, subjects_per_domain=3, frames_per_subject=2,
                    image_size=16, seed=0),
        tmp_path / "data", probe_check=False)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"train": {
        "model": "tiny", "lr_head": 1e-3, "lr_encoder": 3e-4, "batch_size": 8,
        "max_epochs": 2, "patience": 1, "val_fraction": 0.34,
        "aug": {"patch_size": 8, "p_fas_aug": 0.5, "p_pda": 0.3},
    }}))

    outs = []
    for name in ("one", "two"):
        out = tmp_path / name
        code = cli_main(["benchmark", "--config", str(cfg_path), "--seed", "0",
                         "--data", str(tmp_path / "data"), "--mode", "mico",
                         "--out", str(out)])
        assert code == 0
        outs.append(out)

    compared = 0
    identical = True
    for rel in sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*")
                      if p.suffix in (".csv", ".txt", ".json") and p.is_file()):
        a, b = outs[0] / rel, outs[1] / rel
        compared += 1
        if a.read_bytes() != b.read_bytes():
            identical = False
    passed = identical and compared >= 7  # >= 3 legs x (scores+report) + summary
    criterion_check(8, passed,
                    f"benchmark rerun: {compared} score/report/summary files "
                    f"byte-identical" if identical else
                    f"benchmark rerun: divergence among {compared} files")
