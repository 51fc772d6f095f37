"""Training loop: AdamW with two learning-rate groups, keyed-RNG data order,
validation-AUC early stopping, and resumable checkpoints.

Every random choice is keyed by (seed, sample_id, epoch) or (seed, epoch), so
a run is a pure function of its config and an interrupted run resumed from a
checkpoint continues exactly as the uninterrupted run would have.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugConfig, ImageSample, augment_sample, sample_rng
from .data import DatasetManifest, Preprocessor
from .errors import ConfigError, TrainError
from .labels import LIVE
from .losses import PatchHead, total_loss
from .metrics import ScoreRecord, auc
from .tensor import backward, no_grad
from .vit import DESK_SCALE, ModelConfig, VisionTransformer

_SPLIT_KEY = 101  # rng stream tag for the subject split
_SHUFFLE_KEY = 202  # rng stream tag for per-epoch batch order


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=lambda: DESK_SCALE)
    lr_head: float = 5e-5
    lr_encoder: float = 5e-6
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.2
    alpha: float = 10.0
    use_apl: bool = True
    apl_block: int | None = None  # None = final block
    aug: AugConfig = field(default_factory=AugConfig)
    seed: int = 0

    def __post_init__(self):
        if self.lr_head < 0 or self.lr_encoder < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 0 <= self.patience < self.max_epochs:
            raise ConfigError(
                f"patience must be in [0, max_epochs), got {self.patience}"
            )
        if not 0.0 < self.val_fraction <= 0.5:
            raise ConfigError(
                f"val_fraction must be in (0, 0.5], got {self.val_fraction}"
            )
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.aug.patch_size != self.model.patch_size:
            raise ConfigError(
                f"augmentation patch_size {self.aug.patch_size} must match "
                f"model patch_size {self.model.patch_size} so patch labels "
                "line up with the model's patch grid"
            )

    def to_dict(self) -> dict:
        d = {
            "model": self.model.to_dict(),
            "lr_head": self.lr_head,
            "lr_encoder": self.lr_encoder,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "val_fraction": self.val_fraction,
            "alpha": self.alpha,
            "use_apl": self.use_apl,
            "apl_block": self.apl_block,
            "seed": self.seed,
        }
        d["aug"] = {k: list(v) if isinstance(v, tuple) else v
                    for k, v in self.aug.__dict__.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model"))
        aug_d = {k: tuple(v) if isinstance(v, list) else v
                 for k, v in d.pop("aug").items()}
        return cls(model=model, aug=AugConfig(**aug_d), **d)


# -- optimizer -------------------------------------------------------------------------


class AdamW:
    """Decoupled weight decay: p <- p*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps).

    Each parameter belongs to one learning-rate group; decay and moment
    updates are otherwise uniform.  Gradients that are missing count as zero
    (the decay still applies); non-finite gradients abort with the parameter
    name.
    """

    def __init__(self, params: dict[str, Tensor], group_of: dict[str, str],
                 lrs: dict[str, float], weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        missing = set(params) - set(group_of)
        if missing:
            raise ConfigError(f"parameters without a group: {sorted(missing)}")
        unknown = {group_of[n] for n in params} - set(lrs)
        if unknown:
            raise ConfigError(f"groups without a learning rate: {sorted(unknown)}")
        self.params = params
        self.group_of = group_of
        self.lrs = dict(lrs)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainError(f"non-finite gradient in {name} at step {self.t}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g**2
            lr = self.lrs[self.group_of[name]]
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data * (1.0 - lr * self.weight_decay) - lr * m_hat / (
                np.sqrt(v_hat) + self.eps
            )

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.params:
            out[f"opt.m.{n}"] = self.m[n]
            out[f"opt.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for n in self.params:
            self.m[n] = np.array(arrays[f"opt.m.{n}"])
            self.v[n] = np.array(arrays[f"opt.v.{n}"])
        self.t = int(t)


# -- data plumbing ---------------------------------------------------------------------


def split_by_subject(records, val_fraction: float, seed: int):
    """Subject-disjoint (train_records, val_records) split.

    Subjects are shuffled with a seed-keyed rng; ceil-rounded val_fraction of
    them (at least one, never all) become the validation subjects.
    """
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < 2:
        raise ConfigError("need at least 2 subjects for a subject-disjoint split")
    rng = np.random.default_rng([seed, _SPLIT_KEY])
    order = rng.permutation(len(subjects))
    n_val = max(1, int(round(val_fraction * len(subjects))))
    if n_val >= len(subjects):
        n_val = len(subjects) - 1
    val_subjects = {subjects[i] for i in order[:n_val]}
    train = [r for r in records if r.subject_id not in val_subjects]
    val = [r for r in records if r.subject_id in val_subjects]
    if not train or not val:
        raise ConfigError("subject split produced an empty side")
    return train, val


def _load_samples(manifest: DatasetManifest, records, preproc: Preprocessor):
    """Records -> ImageSamples holding resized [0,1] pixels (not standardized)."""
    out = []
    for r in records:
        pixels = preproc.resize(manifest.load_image(r))
        out.append(
            ImageSample(pixels=pixels, label=r.label, domain=r.domain,
                        sample_id=r.sample_id, subject_id=r.subject_id)
        )
    return out


def score_records(model: VisionTransformer, preproc: Preprocessor,
                  manifest: DatasetManifest, records,
                  batch_size: int = 64) -> list[ScoreRecord]:
    """Un-augmented forward pass over records -> ScoreRecords (no gradients)."""
    scores = []
    with no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            images = np.stack([preproc(manifest.load_image(r)) for r in chunk])
            out = model.forward(images)
            for r, p in zip(chunk, out.p_live.data):
                scores.append(
                    ScoreRecord(sample_id=r.sample_id, domain=r.domain,
                                true_label=r.label, p_live=float(p))
                )
    return scores


# -- training --------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: VisionTransformer
    head: PatchHead
    preproc: Preprocessor
    history: list[dict]
    best_epoch: int
    best_val_auc: float
    stopped_epoch: int
    steps: int
    checkpoint_path: Path
    log_path: Path


def _snapshot(model: VisionTransformer, head: PatchHead) -> dict[str, np.ndarray]:
    arrays = {n: p.data.copy() for n, p in model.params.items()}
    arrays.update({n: p.data.copy() for n, p in head.params.items()})
    return arrays


def _restore(model: VisionTransformer, head: PatchHead,
             arrays: dict[str, np.ndarray]) -> None:
    for n, p in model.params.items():
        p.data = arrays[n].copy()
    for n, p in head.params.items():
        p.data = arrays[n].copy()


def _train_domains(spec, manifest: DatasetManifest) -> list[str]:
    """Accept a protocol spec (duck-typed .train_domains), a domain list, or None."""
    if spec is None:
        return list(manifest.domains)
    domains = getattr(spec, "train_domains", spec)
    return list(domains)


def train(manifest: DatasetManifest, spec, cfg: TrainConfig, out_dir,
          model: VisionTransformer | None = None,
          head: PatchHead | None = None,
          resume_from=None) -> TrainResult:
    """Run the full recipe on the spec's train domains; return the best model.

    Writes out_dir/train_log.jsonl (one record per step and per epoch),
    out_dir/train_state.ckpt (current weights plus optimizer state, refreshed
    every epoch — pass it as resume_from= to continue an interrupted run or
    extend a finished one with a larger max_epochs), and out_dir/model.ckpt
    (best-validation-AUC weights, written once training finishes).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / "model.ckpt"
    state_path = out_dir / "train_state.ckpt"

    domains = _train_domains(spec, manifest)
    train_manifest = manifest.by_domain(domains)
    train_records, val_records = split_by_subject(
        train_manifest.records, cfg.val_fraction, cfg.seed
    )

    preproc = Preprocessor(cfg.model.image_size)
    preproc.fit(
        (manifest.load_image(r) for r in train_records),
        domains=sorted({r.domain for r in train_records}),
    )

    train_samples = _load_samples(manifest, train_records, preproc)
    live_pool = [s for s in train_samples if s.label == LIVE]
    val_subjects = {r.subject_id for r in val_records}
    num_patches = cfg.model.num_patches

    if model is None:
        model = VisionTransformer(cfg.model, seed=cfg.seed)
    if head is None:
        head = PatchHead(cfg.model.embed_dim, alpha=cfg.alpha, seed=cfg.seed)
    all_params = dict(model.params)
    all_params.update(head.params)
    group_of = {n: "head" if n.startswith(("head.", "patch_head.")) else "encoder"
                for n in all_params}
    opt = AdamW(all_params, group_of,
                lrs={"head": cfg.lr_head, "encoder": cfg.lr_encoder},
                weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                beta2=cfg.beta2, eps=cfg.eps)

    start_epoch = 0
    global_step = 0
    best_val = -np.inf
    best_epoch = -1
    epochs_since = 0
    best_arrays = _snapshot(model, head)
    history: list[dict] = []
    log_mode = "w"

    if resume_from is not None:
        state, extra = _load_train_checkpoint(resume_from, model, head, opt)
        stored = dict(state["train_config"])
        current = cfg.to_dict()
        # The stopping-rule knobs (max_epochs, patience) may change on resume —
        # they never affect per-epoch computation, only where the run halts.
        # Everything that shapes a training step must match.
        for knob in ("max_epochs", "patience"):
            stored.pop(knob), current.pop(knob)
        if stored != current:
            raise ConfigError(
                "resume config differs from the checkpoint's training config"
            )
        start_epoch = state["epoch"] + 1
        global_step = state["step"]
        best_val = state["best_val_auc"]
        best_epoch = state["best_epoch"]
        epochs_since = state["epochs_since_improvement"]
        history = state["history"]
        best_arrays = {n: extra[f"best.{n}"] for n in all_params}
        log_mode = "a"

    log_fh = open(log_path, log_mode, encoding="utf-8")
    stopped_epoch = start_epoch - 1
    try:
        for epoch in range(start_epoch, cfg.max_epochs):
            if epochs_since > cfg.patience:
                break  # resumed from a state whose early stop had already fired
            stopped_epoch = epoch
            order = np.random.default_rng(
                [cfg.seed, _SHUFFLE_KEY, epoch]
            ).permutation(len(train_samples))
            sums = {"l_class": 0.0, "l_apl": 0.0, "l_total": 0.0}
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch_idx = order[start:start + cfg.batch_size]
                images = np.empty(
                    (len(batch_idx), 3, cfg.model.image_size, cfg.model.image_size)
                )
                labels = np.empty(len(batch_idx), dtype=np.int64)
                patch_labels = (
                    np.empty((len(batch_idx), num_patches), dtype=np.int64)
                    if cfg.use_apl else None
                )
                for row, idx in enumerate(batch_idx):
                    sample = train_samples[idx]
                    if sample.subject_id in val_subjects:
                        raise TrainError(
                            f"validation subject {sample.subject_id} leaked "
                            "into a training batch"
                        )
                    rng = sample_rng(cfg.seed, sample.sample_id, epoch)
                    augmented = augment_sample(sample, live_pool, rng, cfg.aug)
                    images[row] = preproc(augmented.pixels)
                    labels[row] = augmented.label
                    if patch_labels is not None:
                        if augmented.patch_labels is not None:
                            patch_labels[row] = augmented.patch_labels
                        else:
                            patch_labels[row] = np.full(
                                num_patches, augmented.label, dtype=np.int64
                            )
                out = model.forward(images)
                lb = total_loss(out, labels, patch_labels, head,
                                block_index=cfg.apl_block)
                values = lb.floats()
                if not all(np.isfinite(v) for v in values.values()):
                    raise TrainError(
                        f"non-finite loss at epoch {epoch} step {global_step}: {values}"
                    )
                opt.zero_grad()
                backward(lb.l_total)
                opt.step()
                global_step += 1
                n_batches += 1
                for k in sums:
                    sums[k] += values[k]
                log_fh.write(json.dumps(
                    {"kind": "step", "epoch": epoch, "step": global_step, **values}
                ) + "\n")

            val_auc = auc(score_records(model, preproc, manifest, val_records))
            improved = val_auc > best_val
            if val_auc >= best_val:
                # On ties keep the latest maximum: it is equally "best" by the
                # monitored metric and has trained longer.  Only a strict
                # improvement resets the patience counter, so a flat metric
                # still stops the run.
                best_val = val_auc
                best_epoch = epoch
                best_arrays = _snapshot(model, head)
            if improved:
                epochs_since = 0
            else:
                epochs_since += 1
            epoch_record = {
                "kind": "epoch",
                "epoch": epoch,
                "l_class": sums["l_class"] / n_batches,
                "l_apl": sums["l_apl"] / n_batches,
                "l_total": sums["l_total"] / n_batches,
                "val_auc": val_auc,
                "best_val_auc": best_val,
                "best_epoch": best_epoch,
                "improved": improved,
                "lr_head": cfg.lr_head,
                "lr_encoder": cfg.lr_encoder,
            }
            history.append(epoch_record)
            log_fh.write(json.dumps(epoch_record) + "\n")
            log_fh.flush()

            _save_train_checkpoint(
                state_path, model, head, opt, cfg, preproc,
                epoch=epoch, step=global_step, best_val_auc=best_val,
                best_epoch=best_epoch, epochs_since=epochs_since,
                history=history, best_arrays=best_arrays, completed=False,
            )
            if epochs_since > cfg.patience:
                break
    finally:
        log_fh.close()

    _restore(model, head, best_arrays)
    _save_train_checkpoint(
        ckpt_path, model, head, opt, cfg, preproc,
        epoch=stopped_epoch, step=global_step, best_val_auc=best_val,
        best_epoch=best_epoch, epochs_since=epochs_since,
        history=history, best_arrays=best_arrays, completed=True,
    )
    return TrainResult(
        model=model, head=head, preproc=preproc, history=history,
        best_epoch=best_epoch, best_val_auc=float(best_val),
        stopped_epoch=stopped_epoch, steps=global_step,
        checkpoint_path=ckpt_path, log_path=log_path,
    )


# -- checkpoint plumbing ---------------------------------------------------------------


def _save_train_checkpoint(path, model, head, opt, cfg, preproc, *, epoch, step,
                           best_val_auc, best_epoch, epochs_since, history,
                           best_arrays, completed) -> None:
    extra = {n: p.data for n, p in head.params.items()}
    extra.update(opt.state_arrays())
    extra.update({f"best.{n}": a for n, a in best_arrays.items()})
    train_state = {
        "epoch": epoch,
        "step": step,
        "best_val_auc": float(best_val_auc) if np.isfinite(best_val_auc) else None,
        "best_epoch": best_epoch,
        "epochs_since_improvement": epochs_since,
        "completed": completed,
        "train_config": cfg.to_dict(),
        "preprocessor": preproc.to_dict(),
        "history": history,
    }
    model.save_checkpoint(path, train_state=train_state, extra_arrays=extra)


def _load_train_checkpoint(path, model, head, opt):
    loaded, train_state, extra = VisionTransformer.load_checkpoint(path)
    if train_state is None or "train_config" not in train_state:
        raise ConfigError(f"{path}: not a training checkpoint")
    if train_state.get("completed"):
        raise ConfigError(
            f"{path}: holds final best weights, not a resumable state "
            "(resume from the run's train_state.ckpt instead)"
        )
    for n, p in model.params.items():
        p.data = loaded.params[n].data.copy()
    head.load_arrays({n: extra[n] for n in head.params})
    opt.load_state_arrays(extra, train_state["step"])
    if train_state["best_val_auc"] is None:
        train_state["best_val_auc"] = -np.inf
    return train_state, extra


def load_for_eval(path):
    """Checkpoint -> (model, PatchHead, Preprocessor, train_state)."""
    model, train_state, extra = VisionTransformer.load_checkpoint(path)
    if train_state is None or "train_config" not in train_state:
        raise ConfigError(f"{path}: not a training checkpoint")
    tcfg = TrainConfig.from_dict(train_state["train_config"])
    head = PatchHead(model.config.embed_dim, alpha=tcfg.alpha)
    head.load_arrays({n: extra[n] for n in head.params})
    preproc = Preprocessor.from_dict(train_state["preprocessor"])
    return model, head, preproc, train_state
