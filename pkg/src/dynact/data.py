"""Dataset loading and synthesis.

MNIST comes from user-supplied IDX files (optionally gzipped); nothing here
touches the network. `synth_digits` renders a deterministic 28x28 digit-glyph
task of comparable shape for hermetic desk-scale runs, and `synth_blobs`
provides fast Gaussian-blob data for sanity oracles.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ContractError, DataError, FormatError
from .rng import DetRng, STREAM_DATA

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    """Immutable-by-convention sample container.

    `x` is either images [N,C,H,W] in [0,1] or features [N,D]; labels are
    int64 in [0, num_classes).
    """
    x: np.ndarray
    labels: np.ndarray
    split: str = "train"
    normalization: Optional[tuple] = None
    num_classes: int = field(default=0)

    def __post_init__(self):
        if self.x.shape[0] == 0:
            raise DataError("empty dataset")
        if self.x.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.x.shape[0]} samples but {self.labels.shape[0]} labels")
        if self.num_classes == 0:
            self.num_classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"labels outside [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def normalized_x(self) -> np.ndarray:
        if self.normalization is None:
            return self.x
        return normalize(self.x, *self.normalization)


def normalize(x: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if x.ndim == 4:
        mean = mean.reshape(1, -1, 1, 1)
        std = std.reshape(1, -1, 1, 1)
    return (x - mean) / std


def denormalize(x: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if x.ndim == 4:
        mean = mean.reshape(1, -1, 1, 1)
        std = std.reshape(1, -1, 1, 1)
    return x * std + mean


# -- IDX binary format ---------------------------------------------------------

def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            return gzip.decompress(fh.read())
        return fh.read()


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: expected magic {expected_magic}, found {magic}")
    ndim = magic % 256
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header < count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, split: str = "train",
                   normalization: Optional[tuple] = (MNIST_MEAN, MNIST_STD)) -> Dataset:
    """Parse an IDX image/label file pair into a [0,1]-scaled Dataset."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected 3 dims, found {images.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), split=split,
                   normalization=normalization, num_classes=10)


def save_idx_images(x: np.ndarray, path) -> None:
    """Write [N,1,H,W] floats in [0,1] back to the IDX image layout."""
    n, _, h, w = x.shape
    data = np.rint(x[:, 0] * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGES_MAGIC, n, h, w))
        fh.write(data.tobytes())


def save_idx_labels(labels: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", LABELS_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def locate_mnist(root: Optional[str] = None) -> Optional[dict]:
    """Find user-supplied MNIST IDX files (plain or .gz); None when absent."""
    candidates = []
    if root:
        candidates.append(root)
    if os.environ.get("DYNACT_MNIST"):
        candidates.append(os.environ["DYNACT_MNIST"])
    candidates.append(os.path.join(os.getcwd(), "data", "mnist"))
    for base in candidates:
        found = {}
        for key, fname in MNIST_FILES.items():
            for suffix in ("", ".gz"):
                p = os.path.join(base, fname + suffix)
                if os.path.isfile(p):
                    found[key] = p
                    break
        if len(found) == len(MNIST_FILES):
            return found
    return None


# -- synthetic data ------------------------------------------------------------

def synth_blobs(n: int, classes: int, dim: int, separation: float, seed: int) -> Dataset:
    """Gaussian blobs with unit covariance, one center per class.

    For classes <= dim the centers sit on scaled basis vectors with exact
    pairwise distance `separation`; otherwise they are drawn as random
    directions of length separation/sqrt(2).
    """
    if n < classes:
        raise ContractError(f"need at least one sample per class: n={n}, classes={classes}")
    rng = DetRng(seed, STREAM_DATA)
    if classes <= dim:
        centers = np.zeros((classes, dim))
        centers[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        dirs = rng.normal((classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centers = dirs * separation / np.sqrt(2.0)
    labels = np.arange(n, dtype=np.int64) % classes  # balanced within +-1
    x = centers[labels] + rng.normal((n, dim))
    perm = rng.permutation(n)
    return Dataset(x[perm], labels[perm], num_classes=classes)


# ten digit glyphs as polyline strokes in a unit box (x right, y down)
_GLYPH_STROKES = {
    0: [[(0.25, 0.1), (0.75, 0.1), (0.85, 0.35), (0.85, 0.65), (0.75, 0.9),
         (0.25, 0.9), (0.15, 0.65), (0.15, 0.35), (0.25, 0.1)]],
    1: [[(0.3, 0.25), (0.55, 0.1), (0.55, 0.9)], [(0.3, 0.9), (0.8, 0.9)]],
    2: [[(0.2, 0.25), (0.35, 0.1), (0.7, 0.1), (0.8, 0.3), (0.6, 0.55),
         (0.2, 0.9), (0.85, 0.9)]],
    3: [[(0.2, 0.15), (0.7, 0.1), (0.8, 0.3), (0.5, 0.5), (0.8, 0.7),
         (0.7, 0.9), (0.2, 0.85)]],
    4: [[(0.65, 0.9), (0.65, 0.1), (0.15, 0.65), (0.85, 0.65)]],
    5: [[(0.8, 0.1), (0.25, 0.1), (0.2, 0.45), (0.65, 0.4), (0.8, 0.6),
         (0.75, 0.85), (0.2, 0.9)]],
    6: [[(0.7, 0.1), (0.35, 0.3), (0.2, 0.6), (0.3, 0.9), (0.7, 0.9),
         (0.8, 0.65), (0.6, 0.5), (0.25, 0.6)]],
    7: [[(0.15, 0.12), (0.85, 0.1), (0.45, 0.9)], [(0.3, 0.5), (0.7, 0.5)]],
    8: [[(0.5, 0.5), (0.25, 0.35), (0.35, 0.1), (0.65, 0.1), (0.75, 0.35),
         (0.5, 0.5), (0.2, 0.7), (0.35, 0.9), (0.65, 0.9), (0.8, 0.7), (0.5, 0.5)]],
    9: [[(0.75, 0.4), (0.4, 0.5), (0.2, 0.35), (0.3, 0.1), (0.7, 0.1),
         (0.75, 0.4), (0.7, 0.9), (0.3, 0.9)]],
}


def _render_glyph(strokes, size: int = 28, width: float = 1.3,
                  jitter: Optional[np.ndarray] = None) -> np.ndarray:
    """Rasterize polyline strokes with a Gaussian pen onto a size x size canvas."""
    yy, xx = np.mgrid[0:size, 0:size]
    canvas = np.zeros((size, size))
    box = size * 0.72
    off = size * 0.14
    j = 0
    for line in strokes:
        pts = np.asarray(line, dtype=np.float64)
        if jitter is not None:
            pts = pts + jitter[j:j + len(pts)]
            j += len(pts)
        pts = pts * box + off
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            seg_len = max(abs(x1 - x0), abs(y1 - y0), 1e-6)
            steps = int(seg_len * 3) + 2
            ts = np.linspace(0.0, 1.0, steps)
            px = x0 + ts * (x1 - x0)
            py = y0 + ts * (y1 - y0)
            d2 = (xx[None] - px[:, None, None]) ** 2 + (yy[None] - py[:, None, None]) ** 2
            canvas = np.maximum(canvas, np.exp(-d2 / (2 * width ** 2)).max(axis=0))
    return canvas


_TEMPLATE_CACHE: dict[int, np.ndarray] = {}
_STYLES_PER_DIGIT = 4
_PEN_WIDTHS = (0.9, 1.15, 1.4, 1.7)


def _digit_templates(size: int = 28) -> np.ndarray:
    """[10, styles, size, size] prototypes: per-style pen width and a small
    deterministic jitter of the stroke control points (handwriting-like
    intra-class variation)."""
    if size not in _TEMPLATE_CACHE:
        jrng = DetRng(7, STREAM_DATA)
        all_digits = []
        for d in range(10):
            n_pts = sum(len(line) for line in _GLYPH_STROKES[d])
            styles = []
            for s in range(_STYLES_PER_DIGIT):
                jitter = jrng.normal((n_pts, 2), std=0.035)
                styles.append(_render_glyph(_GLYPH_STROKES[d], size,
                                            width=_PEN_WIDTHS[s], jitter=jitter))
            all_digits.append(np.stack(styles))
        _TEMPLATE_CACHE[size] = np.stack(all_digits)
    return _TEMPLATE_CACHE[size]


def synth_digits(n: int, seed: int, split: str = "train", size: int = 28,
                 noise: float = 0.12) -> Dataset:
    """Deterministic MNIST-shaped digit-glyph dataset.

    Each sample picks one of several per-class stroke styles, warps it with
    a random rotation, scale, shear and shift, jitters the stroke intensity,
    and adds Gaussian pixel noise. Train and test splits draw from disjoint
    sub-streams. Difficulty is calibrated so a small conv net lands in the
    same accuracy band as on an MNIST subset of equal size.
    """
    rng = DetRng(seed, STREAM_DATA).substream(0 if split == "train" else 1)
    templates = _digit_templates(size)
    labels = (np.arange(n, dtype=np.int64) % 10)
    labels = labels[rng.permutation(n)]

    style = (rng.next_u64(n) % np.uint64(_STYLES_PER_DIGIT)).astype(np.int64)
    angle = rng.uniform(n) * 0.46 - 0.23           # radians, ~ +-13 deg
    scl = 0.80 + rng.uniform(n) * 0.38             # 0.80 .. 1.18
    shear = rng.uniform(n) * 0.24 - 0.12
    tx = (rng.uniform(n) - 0.5) * 4.4              # pixels
    ty = (rng.uniform(n) - 0.5) * 4.4
    gain = 0.70 + rng.uniform(n) * 0.40
    pix_noise = rng.normal((n, size, size), std=noise)

    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    gx = (xx - c).ravel()
    gy = (yy - c).ravel()

    out = np.empty((n, size, size))
    cos, sin = np.cos(angle) / scl, np.sin(angle) / scl
    # inverse-map bilinear sampling, vectorized over the pixel grid per image
    for i in range(n):
        ux = gx - tx[i]
        uy = gy - ty[i]
        sx = cos[i] * ux + sin[i] * uy + shear[i] * uy + c
        sy = -sin[i] * ux + cos[i] * uy + c
        x0 = np.clip(np.floor(sx).astype(np.int64), 0, size - 2)
        y0 = np.clip(np.floor(sy).astype(np.int64), 0, size - 2)
        fx = np.clip(sx - x0, 0.0, 1.0)
        fy = np.clip(sy - y0, 0.0, 1.0)
        t = templates[labels[i], style[i]]
        img = (t[y0, x0] * (1 - fx) * (1 - fy) + t[y0, x0 + 1] * fx * (1 - fy)
               + t[y0 + 1, x0] * (1 - fx) * fy + t[y0 + 1, x0 + 1] * fx * fy)
        inside = (sx >= 0) & (sx <= size - 1) & (sy >= 0) & (sy <= size - 1)
        out[i] = (img * inside).reshape(size, size) * gain[i]
    out = np.clip(out + pix_noise, 0.0, 1.0)
    # fixed transform constants measured once on a large reference draw, so
    # train and test share the same normalization (MNIST-constant style)
    return Dataset(out[:, None, :, :], labels, split=split,
                   normalization=((0.20,), (0.267,)), num_classes=10)


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Seeded stratified sample without replacement, label shares kept."""
    if n > dataset.n:
        raise ContractError(f"subset size {n} exceeds dataset size {dataset.n}")
    rng = DetRng(seed, STREAM_DATA).substream(7)
    labels = dataset.labels
    classes = np.unique(labels)
    counts = {int(c): int((labels == c).sum()) for c in classes}
    quota = {c: n * cnt / dataset.n for c, cnt in counts.items()}
    take = {c: int(np.floor(q)) for c, q in quota.items()}
    short = n - sum(take.values())
    for c in sorted(quota, key=lambda c: (-(quota[c] - take[c]), c))[:short]:
        take[c] += 1
    picked = []
    for c in sorted(counts):
        idx = np.flatnonzero(labels == c)
        order = rng.permutation(len(idx))
        picked.append(idx[order[:take[c]]])
    sel = np.concatenate(picked)
    sel = sel[rng.permutation(len(sel))]
    return Dataset(dataset.x[sel], dataset.labels[sel], split=dataset.split,
                   normalization=dataset.normalization, num_classes=dataset.num_classes)
