"""Two-level objective: global image loss plus attention-weighted patch loss.

The patch branch uses an L2-constrained softmax: features are rescaled to a
fixed norm alpha before the linear classifier, which makes the loss invariant
to feature magnitude.  The total objective is the plain (unweighted) sum of
the image-level and patch-level terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .labels import UNLABELED
from .tensor import (
    Tensor,
    add,
    clip_min,
    div,
    getitem,
    log_softmax,
    matmul,
    mul,
    reshape,
    sqrt,
    tmean,
    tsum,
)
from .vit import VitOutput, extract_patch_weights

# Squared-norm floor: keeps the norm at >= 1e-12 and zeroes the gradient for
# identically-zero features instead of dividing by zero.
_NORM_FLOOR_SQ = 1e-24

DEFAULT_ALPHA = 10.0


class PatchHead:
    """Linear classifier applied to norm-constrained features.

    Tracks how often a zero-norm feature hit the floor (diagnostic only).
    """

    def __init__(self, embed_dim: int, alpha: float = DEFAULT_ALPHA,
                 num_classes: int = 2, seed: int = 0):
        if alpha <= 0:
            raise ContractError(f"alpha must be positive, got {alpha}")
        rng = np.random.default_rng(seed)
        self.weight = Tensor(rng.normal(0.0, 0.02, size=(embed_dim, num_classes)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(num_classes), requires_grad=True)
        self.alpha = float(alpha)
        self.zero_norm_count = 0

    @property
    def params(self) -> dict[str, Tensor]:
        return {"patch_head.weight": self.weight, "patch_head.bias": self.bias}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.weight.data = np.array(arrays["patch_head.weight"])
        self.bias.data = np.array(arrays["patch_head.bias"])


def constrain_features(features: Tensor, alpha: float, head: PatchHead | None = None) -> Tensor:
    """Rescale each row of [..., D] to L2 norm alpha (norm floored at 1e-12)."""
    sumsq = tsum(mul(features, features), axis=-1, keepdims=True)
    if head is not None:
        head.zero_norm_count += int(np.count_nonzero(sumsq.data < _NORM_FLOOR_SQ))
    norm = sqrt(clip_min(sumsq, _NORM_FLOOR_SQ))
    return mul(div(features, norm), alpha)


def _per_row_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy per row, no reduction.  logits [N, C], labels [N]."""
    lp = log_softmax(logits, axis=-1)
    picked = getitem(lp, (np.arange(len(labels)), labels))
    return mul(picked, -1.0)


def l2_softmax_loss(features: Tensor, labels, head: PatchHead) -> Tensor:
    """Mean cross-entropy over norm-constrained features. features [N, D]."""
    labels = np.asarray(labels)
    scaled = constrain_features(features, head.alpha, head)
    logits = add(matmul(scaled, head.weight), head.bias)
    return tmean(_per_row_cross_entropy(logits, labels))


def class_loss(logits: Tensor, labels) -> Tensor:
    """Softmax cross-entropy on image-level logits, batch-averaged."""
    labels = np.asarray(labels)
    return tmean(_per_row_cross_entropy(logits, labels))


def apl_loss(patch_features: Tensor, patch_labels, weights: Tensor,
             head: PatchHead) -> Tensor:
    """Attention-weighted per-patch loss.

    patch_features [B, P, D]; patch_labels [B, P] with Unlabeled entries
    excluded; weights [B, P], each row on the probability simplex.  Weights
    are renormalized over the labeled positions of each image; an image with
    no labeled patches contributes zero.
    """
    patch_labels = np.asarray(patch_labels)
    b, p, d = patch_features.shape
    if weights.shape != (b, p):
        raise ContractError(f"weights shape {weights.shape} != {(b, p)}")
    if patch_labels.shape != (b, p):
        raise ContractError(f"patch_labels shape {patch_labels.shape} != {(b, p)}")
    row_sums = weights.data.sum(axis=-1)
    if np.abs(row_sums - 1.0).max() > 1e-4:
        raise ContractError(
            f"weight rows must sum to 1 (max deviation {np.abs(row_sums - 1.0).max():.2e})"
        )

    labeled = patch_labels != UNLABELED
    safe_labels = np.where(labeled, patch_labels, 0)
    flat = reshape(patch_features, (b * p, d))
    scaled = constrain_features(flat, head.alpha, head)
    logits = add(matmul(scaled, head.weight), head.bias)
    per_patch = reshape(_per_row_cross_entropy(logits, safe_labels.ravel()), (b, p))

    masked_w = mul(weights, Tensor(labeled.astype(np.float64)))
    denom = clip_min(tsum(masked_w, axis=-1, keepdims=True), 1e-12)
    renormed = div(masked_w, denom)
    per_image = tsum(mul(renormed, per_patch), axis=-1)
    return tmean(per_image)


@dataclass
class LossBreakdown:
    """The two objective terms and their sum, all scalar tensors on the graph."""

    l_class: Tensor
    l_apl: Tensor
    l_total: Tensor

    def floats(self) -> dict[str, float]:
        return {
            "l_class": float(self.l_class.data),
            "l_apl": float(self.l_apl.data),
            "l_total": float(self.l_total.data),
        }


def total_loss(out: VitOutput, labels, patch_labels, head: PatchHead,
               block_index: int | None = None) -> LossBreakdown:
    """Image-level loss plus patch-level loss, summed without weighting.

    patch_labels may be None (or entirely Unlabeled) to disable the patch
    term; l_total is always computed as l_class + l_apl in that order.
    """
    l_class = class_loss(out.logits, labels)
    if patch_labels is None or np.all(np.asarray(patch_labels) == UNLABELED):
        l_apl = Tensor(np.zeros(()))
    else:
        weights = extract_patch_weights(out, block_index)
        l_apl = apl_loss(out.patch_features, patch_labels, weights, head)
    return LossBreakdown(l_class=l_class, l_apl=l_apl, l_total=add(l_class, l_apl))
