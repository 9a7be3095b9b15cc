"""Deterministic synthetic digit corpus for desk-scale experiments.

Renders the glyphs 0-9 at 28x28 with a bundled font, then perturbs each
sample with a seeded affine warp (shift, rotation, scale, shear), intensity
jitter, and pixel noise. Useful where the real handwritten-digit files are
not available; the output is written in the standard IDX container so the
normal ingestion path is exercised.

    python -m rvhash.synth --out DIR --count 12000 --seed 42
"""

from __future__ import annotations

import argparse
import os

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data import write_idx

SIZE = 28
N_CLASSES = 10


def _glyph_bank() -> np.ndarray:
    """Clean 28x28 float templates for digits 0..9."""
    font = ImageFont.load_default(size=22)
    bank = np.zeros((N_CLASSES, SIZE, SIZE), dtype=np.float64)
    for d in range(N_CLASSES):
        img = Image.new("L", (SIZE, SIZE), 0)
        draw = ImageDraw.Draw(img)
        left, top, right, bottom = draw.textbbox((0, 0), str(d), font=font)
        draw.text(
            ((SIZE - (right - left)) / 2 - left, (SIZE - (bottom - top)) / 2 - top),
            str(d),
            fill=255,
            font=font,
        )
        bank[d] = np.asarray(img, dtype=np.float64) / 255.0
    return bank


def _affine_sample(img: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Bilinear resampling of img at inverse-mapped coordinates."""
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([yy.ravel(), xx.ravel()]).astype(np.float64)
    src = matrix @ coords + offset[:, None]
    sy, sx = src[0], src[1]
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    out = np.zeros(h * w)
    for dy in (0, 1):
        for dx in (0, 1):
            yi, xi = y0 + dy, x0 + dx
            weight = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            out[valid] += weight[valid] * img[yi[valid], xi[valid]]
    return out.reshape(h, w)


def generate(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (images uint8 (count, 28, 28), labels uint8 (count,))."""
    rng = np.random.default_rng(np.uint64(seed))
    bank = _glyph_bank()
    labels = rng.integers(0, N_CLASSES, size=count).astype(np.uint8)
    images = np.empty((count, SIZE, SIZE), dtype=np.uint8)
    center = np.array([SIZE / 2, SIZE / 2])
    for i in range(count):
        angle = rng.uniform(-0.15, 0.15)
        scale = rng.uniform(0.90, 1.10)
        shear = rng.uniform(-0.08, 0.08)
        shift = rng.uniform(-2.0, 2.0, size=2)
        c, s = np.cos(angle), np.sin(angle)
        fwd = np.array([[c, -s], [s, c]]) @ np.array([[scale, shear * scale], [0.0, scale]])
        inv = np.linalg.inv(fwd)
        offset = center - inv @ (center + shift)
        warped = _affine_sample(bank[labels[i]], inv, offset)
        gain = rng.uniform(0.8, 1.0)
        noise = rng.normal(0.0, 0.05, size=(SIZE, SIZE))
        pixel = np.clip(warped * gain + noise, 0.0, 1.0)
        images[i] = np.round(pixel * 255.0).astype(np.uint8)
    return images, labels


def write_corpus(out_dir, count: int, seed: int) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    images, labels = generate(count, seed)
    images_path = os.path.join(out_dir, "digits-images-idx3-ubyte")
    labels_path = os.path.join(out_dir, "digits-labels-idx1-ubyte")
    write_idx(images_path, labels_path, images, labels)
    return images_path, labels_path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="generate a synthetic digit corpus (IDX files)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--count", type=int, default=12000)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)
    images_path, labels_path = write_corpus(args.out, args.count, args.seed)
    print(images_path)
    print(labels_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
