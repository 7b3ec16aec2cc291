"""Synthetic "aging glyph" corpus, image-folder ingestion, splits and batching.

A glyph is a disc on a tinted, lightly textured background. Age controls
the disc radius, its brightness and the number of concentric dark rings;
hue, position, background level and texture play the role of identity.
"""
from __future__ import annotations

import colorsys
import csv
import logging
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

AGE_MAX = 120.0
AGE_GRID = np.arange(0.0, AGE_MAX + 0.25, 0.5)
MANIFEST = "manifest.csv"
MANIFEST_FIELDS = ["filename", "age", "hue", "offset_x", "offset_y", "background", "texture_seed"]

TEXTURE_AMPLITUDE = 0.05
RING_DEPTH = 0.3


@dataclass
class LabeledImage:
    image: np.ndarray  # float32 [3, H, W] in [0, 1]
    age: float

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise InvalidArgumentError(f"image must be [3,H,W], got {self.image.shape}")
        if not math.isfinite(self.age) or self.age < 0:
            raise InvalidArgumentError(f"age must be finite and >= 0, got {self.age}")


@dataclass(frozen=True)
class GlyphIdentity:
    hue: float = 0.0
    center_offset: tuple = (0.0, 0.0)
    background_level: float = 0.25
    texture_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hue < 1.0:
            raise InvalidArgumentError(f"hue must lie in [0,1), got {self.hue}")
        if any(abs(o) > 3.0 for o in self.center_offset):
            raise InvalidArgumentError(f"center offset must lie in [-3,3], got {self.center_offset}")
        if not 0.1 <= self.background_level <= 0.4:
            raise InvalidArgumentError(f"background level must lie in [0.1,0.4], got {self.background_level}")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "GlyphIdentity":
        return cls(
            hue=float(rng.uniform(0.0, 1.0)),
            center_offset=(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))),
            background_level=float(rng.uniform(0.1, 0.4)),
            texture_seed=int(rng.integers(0, 2**31 - 1)),
        )


@dataclass(frozen=True)
class AgeDistributionSpec:
    kind: str = "uniform"
    age_min: float = 0.0
    age_max: float = 100.0
    tail_exponent: float = 1.5

    def __post_init__(self):
        if self.kind not in ("uniform", "long_tailed", "truncated"):
            raise InvalidArgumentError(f"unknown age distribution kind {self.kind!r}")
        if not (0.0 <= self.age_min < self.age_max <= AGE_MAX):
            raise InvalidArgumentError(
                f"need 0 <= age_min < age_max <= {AGE_MAX:g}, got [{self.age_min}, {self.age_max}]"
            )
        if self.kind == "long_tailed" and not (math.isfinite(self.tail_exponent) and self.tail_exponent > 0):
            raise InvalidArgumentError("tail_exponent must be positive")

    @classmethod
    def parse(cls, text: str) -> "AgeDistributionSpec":
        """Parse ``kind:min:max[:exponent]``, e.g. ``long-tailed:20:80:1.5``."""
        parts = text.split(":")
        if len(parts) not in (3, 4):
            raise InvalidArgumentError(f"bad age spec {text!r}; expected kind:min:max[:exponent]")
        kind = parts[0].replace("-", "_")
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise InvalidArgumentError(f"bad number in age spec {text!r}") from None
        kw = dict(kind=kind, age_min=nums[0], age_max=nums[1])
        if len(nums) == 3:
            kw["tail_exponent"] = nums[2]
        return cls(**kw)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.age_min, self.age_max
        t = rng.uniform(0.0, 1.0, size=n)
        if self.kind == "uniform":
            return lo + (hi - lo) * t
        if self.kind == "long_tailed":
            # inverse CDF of density (1 + a - lo)^-p on [lo, hi]
            p, L = self.tail_exponent, 1.0 + hi - lo
            if abs(p - 1.0) < 1e-12:
                u = L**t
            else:
                u = (1.0 - t * (1.0 - L ** (1.0 - p))) ** (1.0 / (1.0 - p))
            return np.clip(lo + u - 1.0, lo, hi)
        # truncated: normal centred on the support, sd a quarter of its width
        from scipy.stats import truncnorm

        mid, sd = 0.5 * (lo + hi), 0.25 * (hi - lo)
        return truncnorm.ppf(t, (lo - mid) / sd, (hi - mid) / sd, loc=mid, scale=sd)


def glyph_radius(age: float, size: int) -> float:
    return (0.15 + 0.25 * age / AGE_MAX) * size


def glyph_brightness(age: float) -> float:
    return 0.9 - 0.35 * age / AGE_MAX


def ring_count(age: float) -> int:
    return int(math.floor(age / 12.0))


def _tint(hue):
    rgb = np.asarray(colorsys.hsv_to_rgb(hue, 0.6, 1.0))
    return 0.6 + 0.4 * rgb


def _texture(seed: int, size: int) -> np.ndarray:
    r = np.random.default_rng(seed)
    fx, fy = r.integers(1, 5, size=2)
    phase = r.uniform(0, 2 * np.pi)
    c = np.arange(size) + 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    return 1.0 + TEXTURE_AMPLITUDE * np.sin(2 * np.pi * (fx * xx + fy * yy) / size + phase)


def _disc_layers(ages, size, cx, cy):
    """Disc coverage and disc intensity for a vector of ages; shapes [A, H, W]."""
    ages = np.atleast_1d(np.asarray(ages, dtype=np.float64))
    c = np.arange(size) + 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    d = np.hypot(xx - cx, yy - cy)[None]
    r = glyph_radius(ages, size)[:, None, None]
    cover = np.clip(r - d + 0.5, 0.0, 1.0)
    value = np.broadcast_to(glyph_brightness(ages)[:, None, None], cover.shape).copy()
    kmax = int(ring_count(float(ages.max())))
    k = np.floor(ages / 12.0)
    ring = np.zeros_like(cover)
    for j in range(1, kmax + 1):
        active = (k >= j)[:, None, None]
        rho = r * j / (k[:, None, None] + 1.0)
        w = np.clip(1.0 - np.abs(d - rho), 0.0, 1.0)
        ring = np.where(active, np.maximum(ring, w), ring)
    return cover, value - RING_DEPTH * ring


def render_glyph(age: float, identity: GlyphIdentity, size: int = 32) -> np.ndarray:
    """Render one glyph as float32 ``[3, size, size]`` in [0, 1]."""
    if size < 16:
        raise InvalidArgumentError(f"size must be >= 16, got {size}")
    if not (0.0 <= age <= AGE_MAX) or not math.isfinite(age):
        raise InvalidArgumentError(f"age must lie in [0, {AGE_MAX:g}], got {age}")
    cx = size / 2 + identity.center_offset[0]
    cy = size / 2 + identity.center_offset[1]
    cover, disc = _disc_layers([age], size, cx, cy)
    bg = identity.background_level * _tint(identity.hue)[:, None, None] * _texture(identity.texture_seed, size)[None]
    img = (1.0 - cover) * bg + cover * disc
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _templates(ages, size, cx, cy, bg):
    cover, disc = _disc_layers(ages, size, cx, cy)
    return (1.0 - cover)[:, None] * bg[None, :, None, None] + (cover * disc)[:, None]


def _fit_ages(img, ages, size, cx, cy, bg):
    t = _templates(ages, size, cx, cy, bg)
    err = ((t - img[None]) ** 2).reshape(len(ages), -1).sum(axis=1)
    i = int(np.argmin(err))
    return float(ages[i]), float(err[i])


def recover_glyph_age(image) -> float:
    """Brute-force template match of a rendered glyph against the age grid.

    Background colour is read from the corners and the disc centre from the
    centroid of foreground pixels; the centre is then refined jointly with
    the age by local search.
    """
    img = np.asarray(image.detach().cpu() if torch.is_tensor(image) else image, dtype=np.float64)
    size = img.shape[-1]
    p = max(2, size // 16)
    corners = np.concatenate(
        [img[:, :p, :p], img[:, :p, -p:], img[:, -p:, :p], img[:, -p:, -p:]], axis=1
    ).reshape(3, -1)
    bg = corners.mean(axis=1)
    w = np.abs(img - bg[:, None, None]).sum(axis=0)
    w = np.where(w > 0.1, w, 0.0)
    c = np.arange(size) + 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    if w.sum() > 0:
        cx, cy = float((w * xx).sum() / w.sum()), float((w * yy).sum() / w.sum())
    else:
        cx = cy = size / 2
    age, _ = _fit_ages(img, AGE_GRID, size, cx, cy, bg)
    for step in (0.25, 0.05):
        best = None
        for dx in np.arange(-4, 5) * step:
            for dy in np.arange(-4, 5) * step:
                err = _fit_ages(img, [age], size, cx + dx, cy + dy, bg)[1]
                if best is None or err < best[0]:
                    best = (err, cx + dx, cy + dy)
        cx, cy = best[1], best[2]
        local = AGE_GRID[np.abs(AGE_GRID - age) <= 6.0]
        age, _ = _fit_ages(img, local, size, cx, cy, bg)
    return age


def generate_glyph_dataset(n: int, ages: AgeDistributionSpec, size: int = 32, seed: int = 0,
                           return_identities: bool = False):
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if not isinstance(ages, AgeDistributionSpec):
        raise InvalidArgumentError("ages must be an AgeDistributionSpec")
    rng = np.random.default_rng(seed)
    age_values = ages.sample(n, rng)
    ids = [GlyphIdentity.random(rng) for _ in range(n)]
    items = [LabeledImage(render_glyph(float(a), i, size), float(a)) for a, i in zip(age_values, ids)]
    return (items, ids) if return_identities else items


def _png_name(age, index):
    return f"{int(round(age))}_{index:05d}.png"


def save_image(image: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def export_glyph_dataset(items, identities, out_dir) -> Path:
    """Write ``<age>_<index>.png`` files plus ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for idx, (item, ident) in enumerate(zip(items, identities)):
            name = _png_name(item.age, idx)
            save_image(item.image, out / name)
            w.writerow([name, repr(float(item.age)), repr(ident.hue), repr(ident.center_offset[0]),
                        repr(ident.center_offset[1]), repr(ident.background_level), ident.texture_seed])
    return out


_AGE_PREFIX = re.compile(r"^(\d+)_.*\.png$", re.IGNORECASE)


def load_image(path, size: int | None = None) -> np.ndarray:
    """Decode a PNG, centre-crop to square, resize, scale to [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        s = min(w, h)
        left, top = (w - s) // 2, (h - s) // 2
        im = im.crop((left, top, left + s, top + s))
        if size is not None and s != size:
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_image_folder(directory, size: int | None = None, return_warnings: bool = False):
    """Load ``<age>_<anything>.png`` files; bad names and unreadable files are skipped.

    When a ``manifest.csv`` is present its (real-valued) ages override the
    integer filename prefix.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidArgumentError(f"not a directory: {directory}")
    manifest = {}
    mpath = directory / MANIFEST
    if mpath.exists():
        with open(mpath, newline="") as fh:
            for row in csv.DictReader(fh):
                manifest[row["filename"]] = float(row["age"])
    items, warnings = [], 0
    for name in sorted(os.listdir(directory)):
        if not name.lower().endswith(".png"):
            continue
        m = _AGE_PREFIX.match(name)
        if m is None:
            log.warning("skipping %s: no integer age prefix", directory / name)
            warnings += 1
            continue
        try:
            img = load_image(directory / name, size)
        except Exception as exc:  # PIL raises several unrelated types
            log.warning("skipping unreadable image %s: %s", directory / name, exc)
            warnings += 1
            continue
        items.append(LabeledImage(img, manifest.get(name, float(m.group(1)))))
    if not items:
        raise InvalidArgumentError(f"no valid images found in {directory}")
    return (items, warnings) if return_warnings else items


def split_80_20(dataset, seed: int = 0):
    n = len(dataset)
    if n < 5:
        raise InvalidArgumentError(f"need at least 5 items to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    k = math.ceil(0.8 * n)
    return [dataset[i] for i in perm[:k]], [dataset[i] for i in perm[k:]]


def stack(dataset, dtype=torch.float32):
    x = torch.from_numpy(np.stack([d.image for d in dataset])).to(dtype)
    y = torch.tensor([d.age for d in dataset], dtype=dtype)
    return x, y


def batch_iterator(dataset, batch_size: int, seed: int = 0, epochs: int | None = 1,
                   dtype=torch.float32):
    """Yield ``(images, ages)`` batches; reshuffled each epoch, short tail dropped.

    ``epochs=None`` iterates forever.
    """
    if batch_size < 1:
        raise InvalidArgumentError("batch_size must be >= 1")
    x, y = stack(dataset, dtype)
    n = len(dataset)
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = torch.from_numpy(rng.permutation(n))
        for s in range(0, n - batch_size + 1, batch_size):
            idx = perm[s:s + batch_size]
            yield x[idx], y[idx]
        epoch += 1
