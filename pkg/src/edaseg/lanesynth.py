"""Procedural road scenes with pixel-exact six-class lane labels.

Classes: 0 undefined (ignored), 1 road, 2 double solid yellow, 3 single
dashed yellow, 4 single solid red, 5 single solid white.

All randomness comes from a SplitMix64 stream seeded per sample. Draw order
for one scene:

1. horizon fraction, vanishing-point offset
2. road bottom-left x, road bottom-right x
3. sky RGB, ground RGB, road gray level
4. lane count
5. per lane: class, bottom-x jitter, dash phase
6. brightness factor
7. per-pixel noise block (3 * H * W values, channel-major)
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from edaseg import pnm

NUM_CLASSES = 6
CLASS_NAMES = ("undefined", "road", "DS-Y", "SD-Y", "SS-R", "SS-W")
LANE_CLASSES = (2, 3, 4, 5)
COLORMAP = np.array([
    (0, 0, 0),
    (128, 64, 128),
    (255, 200, 0),
    (255, 255, 0),
    (255, 0, 0),
    (255, 255, 255),
], dtype=np.uint8)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return mix64(self.state)

    def uniform(self, lo=0.0, hi=1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0 ** -53)

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]`` (inclusive)."""
        return lo + self.next_u64() % (hi - lo + 1)

    def uniform_block(self, n: int) -> np.ndarray:
        """``n`` consecutive draws as float64 in [0, 1), vectorized."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
            z = np.uint64(self.state) + steps
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def sample_seed(dataset_seed: int, index: int) -> int:
    return mix64(dataset_seed + _GOLDEN * (index + 1))


@dataclass(frozen=True)
class SceneConfig:
    width: int = 144
    height: int = 96
    min_lanes: int = 2
    max_lanes: int = 5
    # dash period in inverse-depth units (1 at the image bottom), and on fraction
    dash_period: float = 0.5
    dash_duty: float = 0.5
    # marking width at the bottom row, in pixels per 144 columns of image width
    lane_width: float = 5.0
    horizon: tuple[float, float] = (0.30, 0.45)
    noise: float = 0.04
    brightness: float = 0.2

    def validate(self):
        if self.width % 8 or self.height % 8 or self.width <= 0 or self.height <= 0:
            raise ValueError(f"scene size {self.width}x{self.height} must be positive "
                             "multiples of 8")
        if not 1 <= self.min_lanes <= self.max_lanes:
            raise ValueError("lane count range must satisfy 1 <= min <= max")
        if not 0 < self.dash_duty < 1 or self.dash_period <= 0:
            raise ValueError("dash duty must lie in (0, 1) and period be positive")
        lo, hi = self.horizon
        if not 0 < lo <= hi < 0.9:
            raise ValueError(f"horizon range {self.horizon} must lie inside (0, 0.9)")
        if self.lane_width <= 0 or self.noise < 0 or not 0 <= self.brightness < 1:
            raise ValueError("lane width must be positive, noise non-negative, "
                             "brightness jitter in [0, 1)")
        return self


FULL_SIZE = SceneConfig(width=720, height=480)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1], multiples of 1/255
    label: np.ndarray  # (H, W) uint8 class ids
    seed: int = 0


def _lane_classes(rng: SplitMix64, n: int):
    classes = []
    for i in range(n):
        c = LANE_CLASSES[rng.integer(0, 3)]
        if i == 1 and c == classes[0]:
            c = LANE_CLASSES[(LANE_CLASSES.index(c) + 1 + rng.integer(0, 2)) % 4]
        classes.append(c)
    return classes


def paint_scene(seed: int, config: SceneConfig):
    """Noise-free image (uint8, HxWx3) and label map, plus the RNG for noise."""
    config.validate()
    rng = SplitMix64(seed)
    w, h = config.width, config.height
    horizon = h * rng.uniform(*config.horizon)
    vx = w * (0.5 + rng.uniform(-0.12, 0.12))
    road_l = w * rng.uniform(-0.35, 0.05)
    road_r = w * rng.uniform(0.95, 1.35)
    sky = [rng.integer(90, 170), rng.integer(140, 200), rng.integer(190, 250)]
    ground = [rng.integer(40, 110), rng.integer(70, 130), rng.integer(20, 70)]
    gray = rng.integer(60, 110)
    road_rgb = [gray, gray, gray + rng.integer(0, 10)]
    n_lanes = rng.integer(config.min_lanes, config.max_lanes)
    classes = _lane_classes(rng, n_lanes)
    lanes = []
    for i, c in enumerate(classes):
        pos = (i + 0.5) / n_lanes + rng.uniform(-0.08, 0.08) / n_lanes
        lanes.append((c, road_l + (road_r - road_l) * pos, rng.uniform(0, 1)))
    bright = 1.0 + rng.uniform(-config.brightness, config.brightness)

    ys = np.arange(h, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(w, dtype=np.float64)[None, :] + 0.5
    t = (ys - horizon) / (h - horizon)  # 0 at horizon, 1 at bottom row edge
    below = t > 0

    label = np.zeros((h, w), dtype=np.uint8)
    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = np.where(below[..., None], np.array(ground, np.uint8), np.array(sky, np.uint8))

    left = vx + (road_l - vx) * t
    right = vx + (road_r - vx) * t
    road = below & (xs >= left) & (xs <= right)
    label[road] = 1
    image[road] = road_rgb

    base = config.lane_width * w / 144.0
    tt = np.where(below, t, 1.0)
    depth = 1.0 / np.maximum(tt, 1e-6)
    visible = below & (t > 0.06)
    for c, bottom_x, phase in lanes:
        center = vx + (bottom_x - vx) * t
        if c == 2:
            strip = np.maximum(base * 0.6 * t, 1.0)
            gap = np.maximum(base * 0.5 * t, 1.0)
            off = np.abs(xs - center)
            mask = (off >= gap / 2) & (off <= gap / 2 + strip)
        else:
            half = np.maximum(base * t / 2, 0.5)
            mask = np.abs(xs - center) <= half
            if c == 3:
                mask &= np.mod(depth / config.dash_period + phase, 1.0) < config.dash_duty
        mask &= visible
        label[mask] = c
        image[mask] = COLORMAP[c]
    return image, label, rng, bright


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> Sample:
    image, label, rng, bright = paint_scene(seed, config)
    noise = rng.uniform_block(image.size).reshape(3, config.height, config.width)
    img = image.transpose(2, 0, 1).astype(np.float64) * bright
    img += (noise * 2 - 1) * config.noise * 255
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Sample(img.astype(np.float32) / 255, label, seed)


def generate_dataset(count: int, seed: int, config: SceneConfig = SceneConfig()):
    return [generate_scene(sample_seed(seed, i), config) for i in range(count)]


def render_prediction(label_map) -> np.ndarray:
    """RGB uint8 image (H, W, 3) from a class-id map."""
    label_map = np.asarray(label_map)
    if label_map.size and (label_map.min() < 0 or label_map.max() >= NUM_CLASSES):
        raise ValueError(f"class ids must lie in 0..{NUM_CLASSES - 1}")
    return COLORMAP[label_map]


def colors_to_labels(rgb) -> np.ndarray:
    """Inverse of ``render_prediction``; unknown colors raise."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    keys = (rgb[..., 0].astype(np.int64) << 16) | (rgb[..., 1].astype(np.int64) << 8) | rgb[..., 2]
    table = {(int(r) << 16) | (int(g) << 8) | int(b): i for i, (r, g, b) in enumerate(COLORMAP)}
    out = np.full(keys.shape, 255, dtype=np.uint8)
    for k, i in table.items():
        out[keys == k] = i
    if (out == 255).any():
        raise ValueError("image contains colors outside the class colormap")
    return out


# ---------------------------------------------------------------------------
# dataset directory I/O
# ---------------------------------------------------------------------------

def image_to_u8(image) -> np.ndarray:
    """(3, H, W) float in [0, 1] to (H, W, 3) uint8."""
    return np.clip(np.rint(np.asarray(image, np.float64) * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def u8_to_image(rgb) -> np.ndarray:
    return rgb.transpose(2, 0, 1).astype(np.float32) / 255


def write_dataset(directory, samples):
    images = os.path.join(directory, "images")
    labels = os.path.join(directory, "labels")
    os.makedirs(images, exist_ok=True)
    os.makedirs(labels, exist_ok=True)
    h, w = (samples[0].label.shape if samples else (0, 0))
    for i, s in enumerate(samples):
        pnm.write_ppm(os.path.join(images, f"{i:06d}.ppm"), image_to_u8(s.image))
        pnm.write_pgm(os.path.join(labels, f"{i:06d}.pgm"), s.label)
    with open(os.path.join(directory, "manifest.txt"), "w") as f:
        f.write(f"{len(samples)} {w} {h}\n")


def read_manifest(directory):
    path = os.path.join(directory, "manifest.txt")
    try:
        with open(path) as f:
            fields = f.read().split()
    except FileNotFoundError:
        raise ValueError(f"no manifest.txt in {directory}") from None
    if len(fields) != 3:
        raise ValueError(f"{path}: expected 'count width height'")
    return tuple(int(v) for v in fields)


def read_dataset(directory):
    count, w, h = read_manifest(directory)
    for sub, ext in (("images", ".ppm"), ("labels", ".pgm")):
        found = len([f for f in os.listdir(os.path.join(directory, sub)) if f.endswith(ext)]) \
            if os.path.isdir(os.path.join(directory, sub)) else 0
        if found != count:
            raise ValueError(f"manifest lists {count} samples but {sub}/ holds {found}")
    samples = []
    for i in range(count):
        ipath = os.path.join(directory, "images", f"{i:06d}.ppm")
        lpath = os.path.join(directory, "labels", f"{i:06d}.pgm")
        if not os.path.exists(ipath) or not os.path.exists(lpath):
            raise ValueError(f"sample {i}: missing image or label file")
        rgb = pnm.read_ppm(ipath)
        label = pnm.read_pgm(lpath)
        if label.max(initial=0) >= NUM_CLASSES:
            raise ValueError(f"sample {i}: label value {int(label.max())} exceeds {NUM_CLASSES - 1}")
        if rgb.shape[:2] != (h, w) or label.shape != (h, w):
            raise ValueError(f"sample {i}: size does not match manifest {w}x{h}")
        samples.append(Sample(u8_to_image(rgb), label, i))
    return samples
