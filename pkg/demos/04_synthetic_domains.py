"""Look at the two-domain synthetic benchmark: paired geometry, photometric gap.

Run: python3 demos/04_synthetic_domains.py
"""

import numpy as np

from copt.data_synth import SceneConfig, generate_sample

GLYPHS = " .#^="  # background, disk, square, triangle, bar


def ascii_mask(mask, step=2):
    return "\n".join(
        "".join(GLYPHS[v] if v < len(GLYPHS) else "?" for v in row[::step])
        for row in mask[::step]
    )


cfg = SceneConfig(seed=42)
src = generate_sample(cfg, "source", index=5)
tgt = generate_sample(cfg, "target", index=5)

print("Masks are drawn with integer geometry from a stream keyed only by the")
print("sample index, so matched indices agree across domains:")
print(f"  masks identical: {np.array_equal(src.mask, tgt.mask)}\n")
print(ascii_mask(src.mask))

print("\nThe gap is purely photometric. Per-channel means:")
print(f"  source: {src.image.data.mean(axis=(1, 2)).round(3)}")
print(f"  target: {tgt.image.data.mean(axis=(1, 2)).round(3)}")
print(f"  pixel-wise mean |difference|: {np.abs(src.image.data - tgt.image.data).mean():.3f}")

counts = np.bincount(src.mask.reshape(-1), minlength=cfg.n_classes)
print("\nclass pixel shares:", {cfg.class_names()[i]: f"{c / counts.sum():.1%}"
                                for i, c in enumerate(counts) if c})

print("\nGap knobs (SceneConfig): hue_angle rotates the target palette,")
print("noise_sigma adds Gaussian noise, brightness shifts it, texture_amp")
print("controls the checker modulation that only the source carries.")
