"""Inside the ViT: tokens, per-block class-token attention, register tokens.

Shows how the sequence is laid out, how much of the class token's attention
lands on registers versus patches at each block, and how the final block's
attention row becomes the patch-loss weighting.
"""

import numpy as np

from fasbench.vit import DESK_SCALE, VisionTransformer, extract_patch_weights


def main():
    cfg = DESK_SCALE
    model = VisionTransformer(cfg, seed=0)
    print(f"desk-scale model: {model.num_params():,} parameters")
    print(f"image {cfg.image_size}x{cfg.image_size}, patch {cfg.patch_size} -> "
          f"{cfg.num_patches} patch tokens")
    print(f"sequence = 1 CLS + {cfg.num_registers} registers + {cfg.num_patches} "
          f"patches = {cfg.seq_len} tokens\n")

    rng = np.random.default_rng(7)
    images = rng.uniform(size=(2, 3, cfg.image_size, cfg.image_size))
    out = model.forward(images)

    print("class-token attention mass per block (head-averaged, image 0):")
    print(f"{'block':>5} {'-> CLS':>8} {'-> registers':>13} {'-> patches':>11}")
    for i, attn in enumerate(out.cls_attention):
        row = attn.data[0].mean(axis=0)  # average heads -> [seq]
        to_cls = row[0]
        to_reg = row[1:1 + cfg.num_registers].sum()
        to_patch = row[1 + cfg.num_registers:].sum()
        print(f"{i:>5} {to_cls:>8.3f} {to_reg:>13.3f} {to_patch:>11.3f}")
    print("(each row sums to 1; registers give global mass a place to go\n"
          " that is not a patch, keeping patch attention interpretable)\n")

    weights = extract_patch_weights(out)  # final block, renormalized over patches
    w = weights.data[0].reshape(cfg.grid, cfg.grid)
    print("final-block patch weights, image 0 (rows of the patch grid):")
    for r in range(cfg.grid):
        print("   " + " ".join(f"{v:.3f}" for v in w[r]))
    print(f"sum = {w.sum():.6f} (renormalized over the {cfg.num_patches} patches)")

    print("\nthese weights multiply the per-patch loss: patches the class token")
    print("attends to get proportionally more say in the patch-level objective.")

    print(f"\nhead outputs: logits {tuple(out.logits.shape)}, "
          f"p_live {tuple(out.p_live.shape)} = {np.round(out.p_live.data, 3)}")


if __name__ == "__main__":
    main()
