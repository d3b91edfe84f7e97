"""Deterministic two-domain synthetic texture dataset.

Domain 0 is striped patterns with four orientation subcategories (0, 45,
90, 135 degrees); domain 1 is dot lattices with four radius subcategories.
Foreground/background colors come from per-subcategory palettes, so color
is the free "style" content while geometry carries the subcategory.
Subcategory labels are kept in the manifest but are never shown to
training; they exist so internal-domain evaluation has semantics to move.

Every sample is a pure function of (seed, domain, index): regenerating
with the same seed reproduces identical bytes.  Foreground colors are
bright (max channel >= 0.4) and backgrounds dark (max channel <= -0.3),
which makes the generating rule invertible: subcategories can be recovered
from pixels alone (orientation via directional gradient energy, radius via
bright-pixel fraction), and the two domains are linearly separable by a
single gradient-anisotropy statistic.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

IMAGE_SIZE = 32
DOMAIN_STRIPES = 0
DOMAIN_DOTS = 1
NUM_SUBCATS = 4

#: orientation (degrees) of the stripe gradient per subcategory
STRIPE_ANGLES = (0.0, 45.0, 90.0, 135.0)
#: dot radius in pixels per subcategory (lattice spacing is 8)
DOT_RADII = (1.5, 2.2, 3.0, 3.8)
_DOT_SPACING = 8
#: expected bright-pixel fraction per dot subcategory
DOT_FRACTIONS = tuple(np.pi * r * r / _DOT_SPACING ** 2 for r in DOT_RADII)

#: base foreground hue per subcategory, rotated by domain
_FG_HUES = (0.0, 0.25, 0.5, 0.75)


def _hsv_to_rgb(h, s, v):
    h = h % 1.0
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _sample_colors(rng, domain, subcat):
    # bright foreground / dark background, hue family fixed per subcategory
    hue = _FG_HUES[subcat] + 0.125 * domain + rng.uniform(-0.06, 0.06)
    fg = _hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0))
    bg = _hsv_to_rgb(hue + 0.5, rng.uniform(0.4, 1.0), rng.uniform(0.12, 0.3))
    to_signed = lambda c: np.array(c, dtype=np.float64) * 2.0 - 1.0
    return to_signed(fg), to_signed(bg)


def _stripe_mask(rng, subcat):
    theta = np.deg2rad(STRIPE_ANGLES[subcat])
    rows, cols = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    t = np.cos(theta) * cols + np.sin(theta) * rows
    freq = rng.choice([3, 4, 5])
    phase = rng.uniform(0, 2 * np.pi)
    return np.sin(2 * np.pi * freq * t / IMAGE_SIZE + phase) > 0


def _dot_mask(rng, subcat):
    r = DOT_RADII[subcat]
    ox, oy = rng.uniform(0, _DOT_SPACING, size=2)
    rows, cols = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    du = (cols - ox + _DOT_SPACING / 2) % _DOT_SPACING - _DOT_SPACING / 2
    dv = (rows - oy + _DOT_SPACING / 2) % _DOT_SPACING - _DOT_SPACING / 2
    return du * du + dv * dv <= r * r


def generate_sample(seed, domain, index):
    """One 3x32x32 image in [-1, 1] with its subcategory label."""
    subcat = index % NUM_SUBCATS
    rng = np.random.default_rng((seed, domain, index))
    fg, bg = _sample_colors(rng, domain, subcat)
    mask = _stripe_mask(rng, subcat) if domain == DOMAIN_STRIPES else _dot_mask(rng, subcat)
    img = np.where(mask[None, :, :], fg[:, None, None], bg[:, None, None])
    img = img + rng.normal(0.0, 0.03, img.shape)
    return np.clip(img, -1.0, 1.0).astype(np.float32), subcat


def infer_subcategory(image, domain):
    """Recover the subcategory from pixels using the generator's own rule."""
    img = np.asarray(image, dtype=np.float64)
    if domain == DOMAIN_DOTS:
        frac = float((img.max(axis=0) > 0.05).mean())
        return int(np.argmin([abs(frac - f) for f in DOT_FRACTIONS]))
    # stripes are constant along their line direction, so the quietest
    # gradient direction is perpendicular to the generating angle
    energies = _directional_energies(img)
    return (int(np.argmin(energies)) + 2) % NUM_SUBCATS


def _directional_energies(img):
    # mean absolute difference along the four stripe-gradient directions
    lum = img.mean(axis=0)
    e0 = np.abs(lum[:, 1:] - lum[:, :-1]).mean()              # gradient along x
    e45 = np.abs(lum[1:, 1:] - lum[:-1, :-1]).mean()          # down-right diagonal
    e90 = np.abs(lum[1:, :] - lum[:-1, :]).mean()             # gradient along y
    e135 = np.abs(lum[1:, :-1] - lum[:-1, 1:]).mean()         # down-left diagonal
    return np.array([e0, e45, e90, e135])


def anisotropy_statistic(image):
    """Spread of directional gradient energies; high for stripes, low for
    dots.  A single threshold on this value separates the two domains."""
    e = _directional_energies(np.asarray(image, dtype=np.float64))
    return float((e.max() - e.min()) / (e.mean() + 1e-12))


def _split_hash(index):
    # stable multiplicative hash; ~10% of indices land in the test split
    return (index * 2654435761) % (1 << 32) % 10 == 0


@dataclass
class SynthDataset:
    """In-memory dataset with a deterministic 90/10 train/test split."""

    images: np.ndarray      # (n, 3, 32, 32) float32 in [-1, 1]
    domains: np.ndarray     # (n,) int
    subcats: np.ndarray     # (n,) int, hidden from training
    train_mask: np.ndarray  # (n,) bool

    @property
    def train_indices(self):
        return np.nonzero(self.train_mask)[0]

    @property
    def test_indices(self):
        return np.nonzero(~self.train_mask)[0]

    @property
    def train_indices_by_domain(self):
        return {d: np.nonzero(self.train_mask & (self.domains == d))[0]
                for d in np.unique(self.domains)}

    def test_indices_for(self, domain):
        return np.nonzero(~self.train_mask & (self.domains == domain))[0]


def generate_dataset(seed, count_per_domain) -> SynthDataset:
    """Balanced two-domain dataset; a pure function of (seed, count)."""
    if count_per_domain < 32:
        raise ValueError(f"need at least 32 samples per domain for the "
                         f"controllability protocol, got {count_per_domain}")
    images, domains, subcats, train = [], [], [], []
    global_index = 0
    for domain in (DOMAIN_STRIPES, DOMAIN_DOTS):
        for i in range(count_per_domain):
            img, sub = generate_sample(seed, domain, i)
            images.append(img)
            domains.append(domain)
            subcats.append(sub)
            train.append(not _split_hash(global_index))
            global_index += 1
    return SynthDataset(
        images=np.stack(images),
        domains=np.array(domains, dtype=np.int64),
        subcats=np.array(subcats, dtype=np.int64),
        train_mask=np.array(train, dtype=bool),
    )


# ---------------------------------------------------------------------------
# PNG and manifest I/O
# ---------------------------------------------------------------------------

def save_png(image, path):
    """Write a 3-channel [-1, 1] tensor as 8-bit RGB (round half up)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a (3, h, w) image, got shape {img.shape}")
    b = np.floor((img.astype(np.float64) + 1.0) * 127.5 + 0.5)
    b = np.clip(b, 0, 255).astype(np.uint8)
    Image.fromarray(b.transpose(1, 2, 0)).save(path)


def load_png(path):
    """Read an 8-bit RGB file back to a (3, h, w) float32 tensor in [-1, 1]."""
    with Image.open(path) as im:
        bands = im.getbands()
        if len(bands) != 3:
            raise ValueError(f"expected a 3-channel RGB file, got bands {bands} in {path}")
        arr = np.asarray(im, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0 * 2.0 - 1.0).transpose(2, 0, 1)


def write_dataset(dataset: SynthDataset, out_dir):
    """PNG files plus a plain-text manifest (path, domain, subcategory)."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i in range(len(dataset.images)):
        name = f"d{dataset.domains[i]}_{i:05d}.png"
        save_png(dataset.images[i], os.path.join(out_dir, name))
        lines.append(f"{name} {dataset.domains[i]} {dataset.subcats[i]}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(data_dir) -> SynthDataset:
    """Rebuild a dataset from a manifest directory; the train/test split is
    recomputed from the manifest line index."""
    manifest = os.path.join(data_dir, "manifest.txt")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest.txt in {data_dir}")
    images, domains, subcats, train = [], [], [], []
    with open(manifest) as f:
        for index, line in enumerate(ln for ln in f.read().splitlines() if ln.strip()):
            name, domain, subcat = line.split()
            images.append(load_png(os.path.join(data_dir, name)))
            domains.append(int(domain))
            subcats.append(int(subcat))
            train.append(not _split_hash(index))
    if not images:
        raise ValueError(f"empty manifest in {data_dir}")
    return SynthDataset(
        images=np.stack(images),
        domains=np.array(domains, dtype=np.int64),
        subcats=np.array(subcats, dtype=np.int64),
        train_mask=np.array(train, dtype=bool),
    )


def save_grid(images, path, cols=8):
    """Dump a batch of [-1, 1] images as one PNG grid for eyeballing."""
    imgs = np.asarray(images)
    if imgs.ndim != 4:
        raise ValueError("expected a batch of images")
    n = imgs.shape[0]
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    h, w = imgs.shape[2], imgs.shape[3]
    canvas = np.full((3, rows * h, cols * w), -1.0, dtype=np.float64)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[:, r * h:(r + 1) * h, c * w:(c + 1) * w] = imgs[i]
    save_png(canvas, path)
