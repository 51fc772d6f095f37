"""Vision transformer with a class token and learnable register tokens.

Sequence layout is [CLS, registers..., patches...].  The class token and the
patches receive learned positional embeddings; register tokens deliberately
carry none.  Blocks are pre-norm.  Every block's class-token attention row is
kept on the graph so downstream losses can weight patches by attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_container, save_container
from .errors import ConfigError, ContractError, ShapeError
from .labels import LIVE, SPOOF
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    concat,
    div,
    gelu,
    getitem,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    tmean,
    transpose,
    tsum,
)

IN_CHANNELS = 3
MLP_RATIO = 4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.  Defaults are the desk-scale model."""

    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    num_registers: int = 4
    num_classes: int = 2
    head_hidden: int | None = None

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_registers < 0:
            raise ConfigError("num_registers must be >= 0")
        if self.num_classes != 2:
            raise ConfigError("only binary classification heads are supported")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def seq_len(self) -> int:
        return 1 + self.num_registers + self.num_patches

    @property
    def patch_dim(self) -> int:
        return IN_CHANNELS * self.patch_size**2

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "num_heads": self.num_heads,
            "num_registers": self.num_registers,
            "num_classes": self.num_classes,
            "head_hidden": self.head_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# Matches the full-scale backbone family the desk-scale model miniaturizes.
PAPER_SCALE = ModelConfig(
    image_size=224,
    patch_size=14,
    embed_dim=768,
    depth=12,
    num_heads=12,
    num_registers=4,
)

TINY = ModelConfig(
    image_size=16, patch_size=8, embed_dim=32, depth=2, num_heads=4, num_registers=2
)
# Default for desk-scale experiments: small enough to train on a laptop CPU,
# big enough to show the attention/patch-label machinery doing real work.
DESK_SCALE = ModelConfig(
    image_size=32, patch_size=8, embed_dim=64, depth=4, num_heads=4, num_registers=4
)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape table for every parameter; computed without allocation."""
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (cfg.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (1 + cfg.num_patches, d),
    }
    if cfg.num_registers > 0:
        shapes["registers"] = (cfg.num_registers, d)
    hidden = MLP_RATIO * d
    for i in range(cfg.depth):
        p = f"blocks.{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{name}"] = (d,)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes[f"{p}.mlp.w1"] = (d, hidden)
        shapes[f"{p}.mlp.b1"] = (hidden,)
        shapes[f"{p}.mlp.w2"] = (hidden, d)
        shapes[f"{p}.mlp.b2"] = (d,)
    shapes["norm.gain"] = (d,)
    shapes["norm.bias"] = (d,)
    if cfg.head_hidden:
        shapes["head.w1"] = (d, cfg.head_hidden)
        shapes["head.b1"] = (cfg.head_hidden,)
        shapes["head.w2"] = (cfg.head_hidden, cfg.num_classes)
        shapes["head.b2"] = (cfg.num_classes,)
    else:
        shapes["head.weight"] = (d, cfg.num_classes)
        shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _init_array(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith((".bias", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo")):
        return np.zeros(shape)
    if name.endswith(".gain"):
        return np.ones(shape)
    return rng.normal(0.0, 0.02, size=shape)


@dataclass
class VitOutput:
    """Forward-pass bundle consumed by losses, metrics, and the trainer."""

    cls_features: Tensor  # [batch, embed_dim]
    patch_features: Tensor  # [batch, num_patches, embed_dim]
    cls_attention: list[Tensor]  # per block: [batch, heads, seq_len]
    logits: Tensor  # [batch, num_classes]
    p_live: Tensor  # [batch]
    num_registers: int
    num_patches: int
    full_attention: list[np.ndarray] | None = field(default=None, repr=False)


def patchify(images, patch_size: int) -> Tensor:
    """Split (C,H,W) or (B,C,H,W) into row-major flattened patches.

    Output is [num_patches, C*ps*ps] or [B, num_patches, C*ps*ps]; the
    transform is lossless (see unpatchify).
    """
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"patchify expects (C,H,W) or (B,C,H,W), got {x.shape}")
    c, h, w = x.shape[-3:]
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch_size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    if not batched:
        x = reshape(x, (1, c, h, w))
    b = x.shape[0]
    x = reshape(x, (b, c, gh, patch_size, gw, patch_size))
    x = transpose(x, (0, 2, 4, 1, 3, 5))  # [b, gh, gw, c, ps, ps]
    x = reshape(x, (b, gh * gw, c * patch_size * patch_size))
    return x if batched else reshape(x, (gh * gw, c * patch_size * patch_size))


def unpatchify(patches, patch_size: int, channels: int, height: int, width: int) -> Tensor:
    """Inverse of patchify for a single image's patch matrix."""
    x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=np.float64))
    gh, gw = height // patch_size, width // patch_size
    x = reshape(x, (1, gh, gw, channels, patch_size, patch_size))
    x = transpose(x, (0, 3, 1, 4, 2, 5))  # [1, c, gh, ps, gw, ps]
    return reshape(x, (channels, height, width))


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[..., D] @ w[D, E] + b[E], flattening leading axes for the matmul."""
    lead = x.shape[:-1]
    flat = reshape(x, (int(np.prod(lead)), x.shape[-1]))
    out = reshape(matmul(flat, w), lead + (w.shape[-1],))
    return add(out, b)


class VisionTransformer:
    """Encoder + binary head; conforms to the pluggable backbone contract."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                name: Tensor(_init_array(name, shape, rng), requires_grad=True)
                for name, shape in param_shapes(config).items()
            }
        else:
            expected = param_shapes(config)
            if set(params) != set(expected):
                missing = set(expected) - set(params)
                extra = set(params) - set(expected)
                raise ConfigError(f"parameter set mismatch: missing={missing} extra={extra}")
            params = {
                name: p if isinstance(p, Tensor) else Tensor(np.asarray(p), requires_grad=True)
                for name, p in params.items()
            }
        self.params = params

    # -- structure ---------------------------------------------------------

    def param_groups(self) -> dict[str, list[str]]:
        """Parameter names tagged by learning-rate group."""
        head = [n for n in self.params if n.startswith("head.")]
        encoder = [n for n in self.params if not n.startswith("head.")]
        return {"encoder": encoder, "head": head}

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward -----------------------------------------------------------

    def forward(self, images, collect_full_attention: bool = False) -> VitOutput:
        cfg = self.config
        p = self.params
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
        if x.ndim != 4 or x.shape[1:] != (IN_CHANNELS, cfg.image_size, cfg.image_size):
            raise ShapeError(
                f"expected images [batch, {IN_CHANNELS}, {cfg.image_size}, {cfg.image_size}], "
                f"got {x.shape}"
            )
        b = x.shape[0]
        d = cfg.embed_dim
        r = cfg.num_registers

        tokens = _linear(patchify(x, cfg.patch_size), p["patch_embed.weight"], p["patch_embed.bias"])
        tokens = add(tokens, getitem(p["pos_embed"], (slice(1, None),)))

        cls = broadcast_to(reshape(p["cls_token"], (1, 1, d)), (b, 1, d))
        cls = add(cls, getitem(p["pos_embed"], (slice(0, 1),)))
        parts = [cls]
        if r > 0:
            parts.append(broadcast_to(reshape(p["registers"], (1, r, d)), (b, r, d)))
        parts.append(tokens)
        seq = concat(parts, axis=1)

        cls_attention: list[Tensor] = []
        full_attention: list[np.ndarray] | None = [] if collect_full_attention else None
        for i in range(cfg.depth):
            seq = self._block(seq, i, cls_attention, full_attention)

        normed = layer_norm(seq, p["norm.gain"], p["norm.bias"])
        cls_features = getitem(normed, (slice(None), 0))
        patch_features = getitem(normed, (slice(None), slice(1 + r, None)))

        if cfg.head_hidden:
            hidden = gelu(_linear(cls_features, p["head.w1"], p["head.b1"]))
            logits = _linear(hidden, p["head.w2"], p["head.b2"])
        else:
            logits = _linear(cls_features, p["head.weight"], p["head.bias"])
        p_live = getitem(softmax(logits, axis=-1), (slice(None), LIVE))

        return VitOutput(
            cls_features=cls_features,
            patch_features=patch_features,
            cls_attention=cls_attention,
            logits=logits,
            p_live=p_live,
            num_registers=r,
            num_patches=cfg.num_patches,
            full_attention=full_attention,
        )

    def _block(self, seq, i, cls_attention, full_attention):
        cfg = self.config
        p = self.params
        b, s, d = seq.shape
        nh = cfg.num_heads
        dh = d // nh
        pre = f"blocks.{i}"

        h = layer_norm(seq, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])

        def heads(t):
            return transpose(reshape(t, (b, s, nh, dh)), (0, 2, 1, 3))

        q = heads(_linear(h, p[f"{pre}.attn.wq"], p[f"{pre}.attn.bq"]))
        k = heads(_linear(h, p[f"{pre}.attn.wk"], p[f"{pre}.attn.bk"]))
        v = heads(_linear(h, p[f"{pre}.attn.wv"], p[f"{pre}.attn.bv"]))

        scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = softmax(scores, axis=-1)  # [b, nh, s, s]
        cls_attention.append(getitem(attn, (slice(None), slice(None), 0)))
        if full_attention is not None:
            full_attention.append(attn.data.copy())

        ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (b, s, d))
        seq = add(seq, _linear(ctx, p[f"{pre}.attn.wo"], p[f"{pre}.attn.bo"]))

        h2 = layer_norm(seq, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
        mid = gelu(_linear(h2, p[f"{pre}.mlp.w1"], p[f"{pre}.mlp.b1"]))
        return add(seq, _linear(mid, p[f"{pre}.mlp.w2"], p[f"{pre}.mlp.b2"]))

    # -- persistence ---------------------------------------------------------

    def save_checkpoint(self, path, train_state: dict | None = None,
                        extra_arrays: dict[str, np.ndarray] | None = None) -> None:
        arrays = {f"param.{n}": p.data for n, p in self.params.items()}
        if extra_arrays:
            arrays.update(extra_arrays)
        meta = {"kind": "vit-checkpoint", "config": self.config.to_dict(),
                "train_state": train_state}
        save_container(path, arrays, meta)

    @classmethod
    def load_checkpoint(cls, path):
        """-> (model, train_state, extra_arrays)."""
        arrays, meta = load_container(path)
        config = ModelConfig.from_dict(meta["config"])
        params = {n[len("param."):]: Tensor(a, requires_grad=True)
                  for n, a in arrays.items() if n.startswith("param.")}
        extra = {n: a for n, a in arrays.items() if not n.startswith("param.")}
        return cls(config, params=params), meta.get("train_state"), extra


def extract_patch_weights(out: VitOutput, block_index: int | None = None) -> Tensor:
    """Per-patch weights from the class token's attention row of one block.

    Head-averaged, CLS/register positions dropped, renormalized to sum to 1
    per image.  Defaults to the final block.  Stays on the autodiff graph.
    """
    depth = len(out.cls_attention)
    if block_index is None:
        block_index = depth - 1
    if not 0 <= block_index < depth:
        raise ContractError(f"block index {block_index} out of range for depth {depth}")
    row = out.cls_attention[block_index]  # [batch, heads, seq]
    averaged = tmean(row, axis=1)  # [batch, seq]
    patches = getitem(averaged, (slice(None), slice(1 + out.num_registers, None)))
    total = tsum(patches, axis=-1, keepdims=True)
    return div(patches, total)


def predict(p_live, threshold: float):
    """Label decision: Live iff p_live > threshold (ties go to Spoof)."""
    if not 0.0 <= threshold <= 1.0:
        raise ContractError(f"threshold must be in [0, 1], got {threshold}")
    arr = p_live.data if isinstance(p_live, Tensor) else np.asarray(p_live)
    labels = np.where(arr > threshold, LIVE, SPOOF)
    return int(labels) if np.isscalar(arr) or arr.ndim == 0 else labels
