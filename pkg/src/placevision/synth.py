"""Seeded synthetic room-image generator for end-to-end testing.

Nine procedurally textured classes stand in for a non-redistributable
indoor dataset: three color palettes crossed with three texture
patterns (dots, stripes, checkers).  Classes inside one palette group
share their colors, so global color histograms alone confuse them while
local structure tells them apart; that keeps the composite-vs-color
benchmark meaningful.  Every image is derived deterministically from
(seed, class, sequence, index).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .image import GrayImage, Image, gaussian_blur, write_pnm

ROOM_LABELS = [
    "Corridor",
    "ElevatorArea",
    "LoungeArea",
    "PrinterRoom",
    "ProfessorOffice",
    "StudentOffice",
    "TechnicalRoom",
    "Toilet",
    "VisioConference",
]

# palette group: (background hsv, accent hsv); hue degrees.  Accent value
# sits well above background value so the grayscale plane keeps enough
# contrast for the keypoint detector.
_PALETTES = [
    ((10.0, 0.75, 0.35), (55.0, 0.85, 0.98)),
    ((130.0, 0.65, 0.32), (210.0, 0.8, 0.95)),
    ((280.0, 0.6, 0.35), (180.0, 0.7, 0.98)),
]
_PATTERNS = ["dots", "stripes", "checkers"]


def _cell_hash(iu: np.ndarray, iv: np.ndarray) -> np.ndarray:
    """Deterministic pseudo-random value in [0, 1) per pattern cell."""
    s = np.sin(iu * 12.9898 + iv * 78.233) * 43758.5453
    return s - np.floor(s)


def _hsv_to_rgb(h: float, s: float, v: float) -> Tuple[float, float, float]:
    c = v * s
    hp = (h % 360.0) / 60.0
    x = c * (1 - abs(hp % 2 - 1))
    r, g, b = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][int(hp) % 6]
    m = v - c
    return r + m, g + m, b + m


def _pattern_mask(
    kind: str, size: int, cell: float, phase: Tuple[float, float], angle: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Boolean accent mask plus a per-cell brightness factor.

    The per-cell factor breaks the periodicity: a perfectly regular
    checkerboard cancels its own blob responses at the pattern scale.
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    ca, sa = math.cos(angle), math.sin(angle)
    u = (xs * ca + ys * sa) / cell + phase[0]
    v = (-xs * sa + ys * ca) / cell + phase[1]
    iu, iv = np.floor(u), np.floor(v)
    factor = 0.72 + 0.28 * _cell_hash(iu, iv)
    if kind == "dots":
        du = u - iu - 0.5
        dv = v - iv - 0.5
        return (du * du + dv * dv) < 0.33**2, factor
    if kind == "stripes":
        # dashed stripes: plain stripes are pure edges, which the
        # detector's edge test rejects wholesale
        return ((u - iu) < 0.5) & ((v - iv) < 0.72), factor
    if kind == "checkers":
        return ((iu + iv) % 2) == 0, factor
    raise ValueError(f"unknown pattern {kind!r}")


def render_room_image(
    label_index: int, sequence: int, index: int, size: int = 96, seed: int = 7
) -> Image:
    """One synthetic view of a room class, deterministic in all arguments."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, label_index, sequence, index]))
    palette = _PALETTES[label_index // len(_PATTERNS)]
    pattern = _PATTERNS[label_index % len(_PATTERNS)]

    hue_jitter = rng.uniform(-12.0, 12.0)
    # sequences differ in illumination, like day/evening capture runs
    seq_gain = {1: 1.0, 2: 0.92, 3: 1.06}.get(sequence, 1.0)
    gain = np.clip(seq_gain * rng.uniform(0.94, 1.06), 0.5, 1.2)

    (bh, bs, bv), (ah, as_, av) = palette
    bg = _hsv_to_rgb(bh + hue_jitter, bs, min(bv * gain, 1.0))
    accent = _hsv_to_rgb(ah + hue_jitter, as_, min(av * gain, 1.0))

    cell = rng.uniform(13.0, 19.0)
    if pattern == "checkers":
        # a checker blob spans a whole cell, so smaller cells keep its
        # characteristic scale inside the detectable pyramid range
        cell *= 0.55
    phase = (rng.uniform(0, 1), rng.uniform(0, 1))
    angle = rng.uniform(-0.25, 0.25)
    mask, cell_factor = _pattern_mask(pattern, size, cell, phase, angle)

    raster = np.where(
        mask[:, :, None],
        np.array(accent)[None, None, :] * cell_factor[:, :, None],
        np.array(bg)[None, None, :],
    )
    raster = raster + rng.normal(0.0, 0.02, raster.shape)
    raster = np.clip(raster, 0.0, 1.0)
    # soften edges so gradients behave like a defocused camera
    soft = np.stack(
        [gaussian_blur(GrayImage(raster[:, :, c]), 0.8).intensities for c in range(3)], axis=-1
    )
    return Image(soft)


def generate_dataset(
    out_dir,
    classes: int = 9,
    per_class: int = 60,
    size: int = 96,
    seed: int = 7,
) -> Path:
    """Write PPM images plus a TSV manifest; returns the manifest path.

    Images divide evenly into sequences 1..3 per class, mirroring
    separate capture runs for train/test splits.
    """
    if not 1 <= classes <= len(ROOM_LABELS):
        raise ValueError(f"classes must be in [1, {len(ROOM_LABELS)}]")
    if per_class < 3:
        raise ValueError("need at least 3 images per class (one per sequence)")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows: List[str] = ["path\tlabel\tsequence"]
    per_seq = per_class // 3
    extra = per_class - per_seq * 3
    for li in range(classes):
        label = ROOM_LABELS[li]
        for seq in (1, 2, 3):
            count = per_seq + (1 if seq <= extra else 0)
            for idx in range(count):
                img = render_room_image(li, seq, idx, size=size, seed=seed)
                rel = f"images/{label}_s{seq}_{idx:03d}.ppm"
                write_pnm(img, out / rel)
                rows.append(f"{rel}\t{label}\t{seq}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest
