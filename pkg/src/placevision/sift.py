"""Scale-invariant keypoint detection and description.

The detector builds a Gaussian scale-space pyramid, takes differences of
adjacent blur levels, finds strict 26-neighbor extrema, refines them to
sub-pixel accuracy with a 3-D quadratic fit, rejects low-contrast and
edge responses, assigns gradient orientations, and samples a 4x4x8
gradient-orientation descriptor (128 values).  The color variant
computes the 128-vector independently per R/G/B plane and concatenates
to 384.

Coordinates: x is the column, y is the row, both in the base-image
frame; ``sigma`` is the absolute scale in that frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .image import GrayImage, Image, downsample2, gaussian_blur, to_grayscale

DESCRIPTOR_CELLS = 4
DESCRIPTOR_ORI_BINS = 8
DESCRIPTOR_SIZE = DESCRIPTOR_CELLS * DESCRIPTOR_CELLS * DESCRIPTOR_ORI_BINS  # 128
DESCRIPTOR_CLAMP = 0.2
ORI_HIST_BINS = 36
ORI_PEAK_RATIO = 0.8
MIN_OCTAVE_DIM = 8


@dataclass(frozen=True)
class SiftParams:
    octaves: int = 4
    scales_per_octave: int = 2  # 5 blur levels per octave
    sigma0: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    # the source text says 1.6x the keypoint scale here; 1.5 is the
    # canonical value, so it is exposed as a parameter
    orientation_sigma_factor: float = 1.5


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    sigma: float
    orientation: float  # radians in [0, 2*pi)
    octave: int
    layer: int

    def sort_key(self):
        return (self.octave, self.layer, self.y, self.x, self.orientation)


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    keypoint: Keypoint

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass
class ScaleSpace:
    """Per octave, scales_per_octave+3 blurred images at sigma0*k^i."""

    octaves: List[List[GrayImage]]
    sigma0: float
    scales_per_octave: int
    _gradients: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def k(self) -> float:
        return 2.0 ** (1.0 / self.scales_per_octave)

    def sigma_within(self, layer: float) -> float:
        return self.sigma0 * self.k**layer

    def sigma_abs(self, octave: int, layer: float) -> float:
        return self.sigma_within(layer) * (2.0**octave)

    def gradients(self, octave: int, layer: int):
        """Cached central-difference gradients (dx, dy) of a blur level."""
        key = (octave, layer)
        if key not in self._gradients:
            a = self.octaves[octave][layer].intensities
            dy, dx = np.gradient(a)
            self._gradients[key] = (dx, dy)
        return self._gradients[key]


@dataclass
class DoGPyramid:
    """Per octave, an (levels-1, h, w) stack of adjacent blur differences."""

    octaves: List[np.ndarray]
    sigma0: float
    scales_per_octave: int

    @property
    def k(self) -> float:
        return 2.0 ** (1.0 / self.scales_per_octave)


Candidate = Tuple[int, int, int, int]  # (octave, layer, y, x)


# ---------------------------------------------------------------------------
# pyramid construction
# ---------------------------------------------------------------------------

def build_scale_space(
    img: GrayImage, octaves: int = 4, scales_per_octave: int = 2, sigma0: float = 1.6
) -> ScaleSpace:
    """Gaussian pyramid: each octave halves resolution and doubles sigma.

    The base image is used at native resolution and treated as unblurred;
    the next octave is seeded by decimating the level at 2*sigma0.
    """
    if octaves < 1 or scales_per_octave < 1:
        raise ValueError("octaves and scales_per_octave must be >= 1")
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    if min(img.width, img.height) // (2 ** (octaves - 1)) < MIN_OCTAVE_DIM:
        raise ValueError(
            f"image {img.width}x{img.height} too small for {octaves} octaves"
        )
    k = 2.0 ** (1.0 / scales_per_octave)
    levels = scales_per_octave + 3
    pyramid: List[List[GrayImage]] = []
    base = img
    for _ in range(octaves):
        level_imgs = [gaussian_blur(base, sigma0)]
        for i in range(1, levels):
            s_prev = sigma0 * k ** (i - 1)
            s_next = sigma0 * k**i
            inc = math.sqrt(s_next**2 - s_prev**2)
            level_imgs.append(gaussian_blur(level_imgs[-1], inc))
        pyramid.append(level_imgs)
        # the level at 2*sigma0 seeds the next octave
        base = downsample2(level_imgs[scales_per_octave])
    return ScaleSpace(pyramid, sigma0, scales_per_octave)


def build_dog(ss: ScaleSpace) -> DoGPyramid:
    """Difference of adjacent blur levels, sign preserved."""
    stacks = []
    for levels in ss.octaves:
        arr = np.stack([im.intensities for im in levels])
        stacks.append(arr[1:] - arr[:-1])
    return DoGPyramid(stacks, ss.sigma0, ss.scales_per_octave)


# ---------------------------------------------------------------------------
# extrema detection and refinement
# ---------------------------------------------------------------------------

def detect_extrema(dog: DoGPyramid) -> List[Candidate]:
    """Strict extrema over the 3x3x3 neighborhood spanning adjacent layers.

    Plateaus produce nothing; border pixels and the first/last layer of
    each octave are excluded.
    """
    out: List[Candidate] = []
    for o, stack in enumerate(dog.octaves):
        n_layers, h, w = stack.shape
        if n_layers < 3 or h < 3 or w < 3:
            continue
        for l in range(1, n_layers - 1):
            center = stack[l, 1 : h - 1, 1 : w - 1]
            is_max = np.ones(center.shape, dtype=bool)
            is_min = np.ones(center.shape, dtype=bool)
            for dl in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if dl == 0 and dy == 0 and dx == 0:
                            continue
                        nb = stack[l + dl, 1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
                        is_max &= center > nb
                        is_min &= center < nb
                        if not is_max.any() and not is_min.any():
                            break
            ys, xs = np.nonzero(is_max | is_min)
            out.extend((o, l, int(y) + 1, int(x) + 1) for y, x in zip(ys, xs))
    out.sort()
    return out


def _quadratic_fit(stack: np.ndarray, l: int, y: int, x: int):
    """Gradient and Hessian of the DoG at a lattice point."""
    d = stack
    g = 0.5 * np.array(
        [
            d[l, y, x + 1] - d[l, y, x - 1],
            d[l, y + 1, x] - d[l, y - 1, x],
            d[l + 1, y, x] - d[l - 1, y, x],
        ]
    )
    c = d[l, y, x]
    dxx = d[l, y, x + 1] - 2 * c + d[l, y, x - 1]
    dyy = d[l, y + 1, x] - 2 * c + d[l, y - 1, x]
    dll = d[l + 1, y, x] - 2 * c + d[l - 1, y, x]
    dxy = 0.25 * (d[l, y + 1, x + 1] - d[l, y + 1, x - 1] - d[l, y - 1, x + 1] + d[l, y - 1, x - 1])
    dxl = 0.25 * (d[l + 1, y, x + 1] - d[l + 1, y, x - 1] - d[l - 1, y, x + 1] + d[l - 1, y, x - 1])
    dyl = 0.25 * (d[l + 1, y + 1, x] - d[l + 1, y - 1, x] - d[l - 1, y + 1, x] + d[l - 1, y - 1, x])
    hess = np.array([[dxx, dxy, dxl], [dxy, dyy, dyl], [dxl, dyl, dll]])
    return g, hess


def refine_keypoint(
    candidate: Candidate,
    dog: DoGPyramid,
    contrast_threshold: float = 0.03,
    edge_ratio: float = 10.0,
    max_steps: int = 5,
) -> Optional[Keypoint]:
    """Sub-pixel localization with contrast and edge-response rejection.

    Returns None for rejected candidates (rejection is not an error).
    """
    o, l, y, x = candidate
    stack = dog.octaves[o]
    n_layers, h, w = stack.shape
    offset = np.zeros(3)
    for _ in range(max_steps):
        g, hess = _quadratic_fit(stack, l, y, x)
        try:
            offset = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        l += int(round(offset[2]))
        if not (1 <= l < n_layers - 1 and 1 <= y < h - 1 and 1 <= x < w - 1):
            return None
    else:
        return None

    value = stack[l, y, x] + 0.5 * float(g @ offset)
    if abs(value) < contrast_threshold:
        return None
    # principal-curvature ratio test on the 2x2 spatial Hessian
    dxx, dyy, dxy = hess[0, 0], hess[1, 1], hess[0, 1]
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    r = edge_ratio
    if det <= 0 or tr * tr * r >= (r + 1) ** 2 * det:
        return None

    scale_factor = 2.0**o
    layer_ref = float(np.clip(l + offset[2], 0.0, n_layers))
    sigma = dog.sigma0 * dog.k**layer_ref * scale_factor
    return Keypoint(
        x=(x + float(offset[0])) * scale_factor,
        y=(y + float(offset[1])) * scale_factor,
        sigma=sigma,
        orientation=0.0,
        octave=o,
        layer=int(np.clip(int(round(layer_ref)), 1, n_layers - 1)),
    )


# ---------------------------------------------------------------------------
# orientation assignment
# ---------------------------------------------------------------------------

def _smooth_circular(hist: np.ndarray) -> np.ndarray:
    out = np.empty_like(hist)
    n = len(hist)
    for i in range(n):
        out[i] = (
            6 * hist[i]
            + 4 * (hist[i - 1] + hist[(i + 1) % n])
            + hist[i - 2]
            + hist[(i + 2) % n]
        ) / 16.0
    return out


def assign_orientations(
    kp: Keypoint, ss: ScaleSpace, sigma_factor: float = 1.5
) -> List[Keypoint]:
    """Dominant gradient directions around a refined keypoint.

    Builds a 36-bin magnitude-weighted orientation histogram in a
    Gaussian window of sigma_factor times the keypoint scale, then emits
    one oriented keypoint per smoothed peak within 80% of the maximum,
    with parabolic peak interpolation.
    """
    scale_factor = 2.0**kp.octave
    img = ss.octaves[kp.octave][kp.layer].intensities
    h, w = img.shape
    cx = kp.x / scale_factor
    cy = kp.y / scale_factor
    sigma_w = sigma_factor * (kp.sigma / scale_factor)
    radius = max(1, int(round(3.0 * sigma_w)))
    x0, x1 = int(round(cx)) - radius, int(round(cx)) + radius
    y0, y1 = int(round(cy)) - radius, int(round(cy)) + radius
    if x1 <= 0 or y1 <= 0 or x0 >= w - 1 or y0 >= h - 1:
        return []
    gx0, gy0 = max(x0, 1), max(y0, 1)
    gx1, gy1 = min(x1, w - 2), min(y1, h - 2)

    dx_img, dy_img = ss.gradients(kp.octave, kp.layer)
    win_dx = dx_img[gy0 : gy1 + 1, gx0 : gx1 + 1]
    win_dy = dy_img[gy0 : gy1 + 1, gx0 : gx1 + 1]
    yy, xx = np.mgrid[gy0 : gy1 + 1, gx0 : gx1 + 1]
    dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
    weights = np.exp(-dist2 / (2.0 * sigma_w**2)) * np.hypot(win_dx, win_dy)
    angles = np.arctan2(win_dy, win_dx) % (2.0 * math.pi)
    # nearest-bin voting: bin i is centered on angle i * (2pi/36)
    bins = np.rint(angles / (2.0 * math.pi) * ORI_HIST_BINS).astype(np.intp) % ORI_HIST_BINS
    hist = np.bincount(bins.ravel(), weights=weights.ravel(), minlength=ORI_HIST_BINS)

    smooth = _smooth_circular(hist)
    peak_max = smooth.max()
    if peak_max <= 0:
        return []
    out = []
    for i in range(ORI_HIST_BINS):
        left = smooth[i - 1]
        right = smooth[(i + 1) % ORI_HIST_BINS]
        if smooth[i] > left and smooth[i] > right and smooth[i] >= ORI_PEAK_RATIO * peak_max:
            denom = left - 2 * smooth[i] + right
            interp = i + (0.5 * (left - right) / denom if denom != 0 else 0.0)
            angle = (interp * (2.0 * math.pi / ORI_HIST_BINS)) % (2.0 * math.pi)
            out.append(replace(kp, orientation=angle))
    out.sort(key=lambda p: p.orientation)
    return out


# ---------------------------------------------------------------------------
# descriptor
# ---------------------------------------------------------------------------

def _bilinear(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    fy = ys - y0
    fx = xs - x0
    y1 = y0 + 1
    x1 = x0 + 1
    return (
        arr[y0, x0] * (1 - fy) * (1 - fx)
        + arr[y0, x1] * (1 - fy) * fx
        + arr[y1, x0] * fy * (1 - fx)
        + arr[y1, x1] * fy * fx
    )


def finalize_descriptor(raw: np.ndarray) -> Optional[np.ndarray]:
    """L2-normalize, clamp entries at 0.2, renormalize."""
    norm = np.linalg.norm(raw)
    if norm <= 0:
        return None
    v = np.minimum(raw / norm, DESCRIPTOR_CLAMP)
    return v / np.linalg.norm(v)


def _descriptor_from_plane(kp: Keypoint, ss: ScaleSpace) -> Optional[np.ndarray]:
    """Raw 128-bin gradient histogram for one image plane, or None if the
    sampling window leaves the image."""
    scale_factor = 2.0**kp.octave
    img = ss.octaves[kp.octave][kp.layer].intensities
    h, w = img.shape
    cx = kp.x / scale_factor
    cy = kp.y / scale_factor
    sigma_oct = kp.sigma / scale_factor

    n_samples = DESCRIPTOR_CELLS * 4  # 16x16 sample grid
    spacing = 3.0 * sigma_oct / 4.0
    half_extent = spacing * (n_samples - 1) / 2.0 * math.sqrt(2.0) + 1.0
    if cx - half_extent < 0 or cx + half_extent > w - 1:
        return None
    if cy - half_extent < 0 or cy + half_extent > h - 1:
        return None

    grid = (np.arange(n_samples) - (n_samples - 1) / 2.0) * spacing
    su, sv = np.meshgrid(grid, grid)
    cos_t, sin_t = math.cos(kp.orientation), math.sin(kp.orientation)
    xs = cx + su * cos_t - sv * sin_t
    ys = cy + su * sin_t + sv * cos_t

    dx_img, dy_img = ss.gradients(kp.octave, kp.layer)
    gdx = _bilinear(dx_img, ys, xs)
    gdy = _bilinear(dy_img, ys, xs)
    mag = np.hypot(gdx, gdy)
    rel_angle = (np.arctan2(gdy, gdx) - kp.orientation) % (2.0 * math.pi)

    # cell coordinates in [-0.5+..., 3.5-...]; trilinear scatter over a
    # (cells+2)^2 x bins tensor absorbs the border spill
    cu = su / (spacing * 4.0) + (DESCRIPTOR_CELLS - 1) / 2.0
    cv = sv / (spacing * 4.0) + (DESCRIPTOR_CELLS - 1) / 2.0
    gauss = np.exp(
        -(
            (cu - (DESCRIPTOR_CELLS - 1) / 2.0) ** 2
            + (cv - (DESCRIPTOR_CELLS - 1) / 2.0) ** 2
        )
        / (2.0 * (0.5 * DESCRIPTOR_CELLS) ** 2)
    )
    contrib = (mag * gauss).ravel()
    obin = rel_angle.ravel() / (2.0 * math.pi) * DESCRIPTOR_ORI_BINS

    r = cv.ravel()
    c = cu.ravel()
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    o0 = np.floor(obin).astype(np.intp)
    fr = r - r0
    fc = c - c0
    fo = obin - o0
    o0 %= DESCRIPTOR_ORI_BINS

    side = DESCRIPTOR_CELLS + 2
    tensor = np.zeros((side, side, DESCRIPTOR_ORI_BINS))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(
                    tensor,
                    (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % DESCRIPTOR_ORI_BINS),
                    contrib * wr * wc * wo,
                )
    return tensor[1:-1, 1:-1, :].ravel()


def compute_descriptor(kp: Keypoint, ss: ScaleSpace) -> Optional[Descriptor]:
    """128-value descriptor; None when the window leaves the image or the
    window carries no gradient energy."""
    raw = _descriptor_from_plane(kp, ss)
    if raw is None:
        return None
    values = finalize_descriptor(raw)
    if values is None:
        return None
    return Descriptor(values, kp)


# ---------------------------------------------------------------------------
# end-to-end extraction
# ---------------------------------------------------------------------------

def _detect_oriented_keypoints(gray: GrayImage, params: SiftParams):
    ss = build_scale_space(gray, params.octaves, params.scales_per_octave, params.sigma0)
    dog = build_dog(ss)
    keypoints = []
    for cand in detect_extrema(dog):
        kp = refine_keypoint(cand, dog, params.contrast_threshold, params.edge_ratio)
        if kp is not None:
            keypoints.extend(assign_orientations(kp, ss, params.orientation_sigma_factor))
    # refinement can converge two candidates onto the same point
    seen = set()
    unique = []
    for kp in sorted(keypoints, key=Keypoint.sort_key):
        key = (kp.octave, round(kp.x, 3), round(kp.y, 3), round(kp.sigma, 4), round(kp.orientation, 5))
        if key not in seen:
            seen.add(key)
            unique.append(kp)
    return ss, unique


def extract_sift(
    gray: GrayImage, params: SiftParams = SiftParams()
) -> List[Tuple[Keypoint, Descriptor]]:
    """Detect keypoints and compute descriptors; deterministic output order
    sorted by (octave, layer, y, x, orientation)."""
    ss, keypoints = _detect_oriented_keypoints(gray, params)
    out = []
    for kp in keypoints:
        desc = compute_descriptor(kp, ss)
        if desc is not None:
            out.append((kp, desc))
    return out


def extract_rgb_sift(
    img: Image, params: SiftParams = SiftParams()
) -> List[Tuple[Keypoint, Descriptor]]:
    """Keypoints from the grayscale plane; per keypoint one 128-vector per
    R/G/B channel, normalized separately and concatenated to 384."""
    gray = to_grayscale(img)
    ss_gray, keypoints = _detect_oriented_keypoints(gray, params)
    channel_spaces = [
        build_scale_space(
            GrayImage(img.pixels[:, :, c]),
            params.octaves,
            params.scales_per_octave,
            params.sigma0,
        )
        for c in range(3)
    ]
    out = []
    for kp in keypoints:
        blocks = []
        for ss_c in channel_spaces:
            raw = _descriptor_from_plane(kp, ss_c)
            if raw is None:
                blocks = None
                break
            block = finalize_descriptor(raw)
            # a flat channel has no gradients; keep its block at zero
            blocks.append(np.zeros(DESCRIPTOR_SIZE) if block is None else block)
        if blocks is None:
            continue
        full = np.concatenate(blocks)
        norm = np.linalg.norm(full)
        if norm <= 0:
            continue
        out.append((kp, Descriptor(full / norm, kp)))
    return out


# ---------------------------------------------------------------------------
# descriptor file format: little-endian binary + CSV debug dump
# ---------------------------------------------------------------------------

_DESC_MAGIC = b"PVSD"
_DESC_VERSION = 1


def write_descriptors(items: Sequence[Tuple[Keypoint, Descriptor]], path) -> None:
    dim = len(items[0][1].values) if items else DESCRIPTOR_SIZE
    chunks = [_DESC_MAGIC, struct.pack("<III", _DESC_VERSION, len(items), dim)]
    for kp, desc in items:
        if len(desc.values) != dim:
            raise ValueError("mixed descriptor dimensions in one file")
        chunks.append(struct.pack("<ffff", kp.x, kp.y, kp.sigma, kp.orientation))
        chunks.append(np.asarray(desc.values, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_descriptors(path) -> List[Tuple[Keypoint, Descriptor]]:
    data = Path(path).read_bytes()
    if data[:4] != _DESC_MAGIC:
        raise ValueError(f"{path}: not a descriptor file")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != _DESC_VERSION:
        raise ValueError(f"{path}: unsupported descriptor file version {version}")
    out = []
    pos = 16
    rec = 16 + 4 * dim
    if len(data) < pos + count * rec:
        raise ValueError(f"{path}: truncated descriptor file")
    for _ in range(count):
        x, y, sigma, orientation = struct.unpack_from("<ffff", data, pos)
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=pos + 16).astype(
            np.float64
        )
        kp = Keypoint(x, y, sigma, orientation, octave=0, layer=0)
        out.append((kp, Descriptor(values, kp)))
        pos += rec
    return out


def write_descriptors_csv(items: Sequence[Tuple[Keypoint, Descriptor]], path) -> None:
    lines = ["x,y,sigma,orientation," + ",".join(f"d{i}" for i in range(len(items[0][1].values)))] if items else ["x,y,sigma,orientation"]
    for kp, desc in items:
        head = f"{kp.x:.6f},{kp.y:.6f},{kp.sigma:.6f},{kp.orientation:.6f}"
        lines.append(head + "," + ",".join(f"{v:.9g}" for v in desc.values))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
