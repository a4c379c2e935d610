"""Image ingestion, class balancing, the seeded stratified split, batching and a
synthetic blob-vs-noise corpus.

Datasets live in ``root/COVID/*.png`` (label 1) and ``root/Normal/*.png``
(label 0).
"""
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

log = logging.getLogger(__name__)

COVID, NORMAL = 1, 0
CLASS_DIRS = {"COVID": COVID, "Normal": NORMAL}
LABEL_NAMES = {COVID: "COVID", NORMAL: "Normal"}
LUMA = np.array([0.299, 0.587, 0.114])
BLOB_INDEX = "blobs.csv"


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (1, H, W) float32 in [0, 1]
    label: int
    source_path: str = ""


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int
    ratio: float
    train_idx: list = field(default_factory=list)
    test_idx: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# PNG and resampling


def read_png(path):
    """Decode a PNG to an (H, W) float64 grayscale array in [0, 1]."""
    with Image.open(path) as im:
        im.load()
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode in ("I;16", "I;16B", "I;16L"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode == "LA":
            return np.asarray(im.getchannel("L"), dtype=np.float64) / 255.0
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    return (rgb @ LUMA) / 255.0


def write_png(image, path):
    """Write an (H, W) or (H, W, 3) uint8 array as an 8-bit PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise TypeError(f"write_png needs uint8 pixels, got {arr.dtype}")
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got {arr.shape}")
    Image.fromarray(arr).save(path, format="PNG")


def to_uint8(x):
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _axis_weights(n_in, n_out):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img, size):
    """Bilinear resample of a 2-D array to ``size`` = (height, width)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = size
    if img.shape == (h, w):
        return img.copy()
    r0, r1, fr = _axis_weights(img.shape[0], h)
    c0, c1, fc = _axis_weights(img.shape[1], w)
    rows = img[r0] * (1 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1 - fc)[None, :] + rows[:, c1] * fc[None, :]


# ---------------------------------------------------------------------------
# loading


def load_image(path, size):
    """Read one PNG as a (1, H, W) float32 array resized to ``size``."""
    pix = np.clip(resize_bilinear(read_png(path), size), 0.0, 1.0)
    return pix.astype(np.float32)[None]


def _try_load(args):
    path, label, size = args
    try:
        return LabeledImage(load_image(path, size), label, str(path))
    except (OSError, ValueError, SyntaxError) as e:
        log.warning("skipping unreadable image %s: %s", path, e)
        return None


def load_dataset(root, size=(64, 64), workers=1):
    """Load ``root/COVID`` and ``root/Normal`` PNGs into a list of ``LabeledImage``.

    Unreadable files are skipped with a warning. A missing or empty class
    directory raises ``DataError``. Output order is fixed (class directory,
    then file name) regardless of ``workers``.
    """
    root = Path(root)
    jobs = []
    for dirname, label in CLASS_DIRS.items():
        d = root / dirname
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png") if d.is_dir() else []
        if not files:
            raise DataError(f"class directory {d} is missing or has no PNG files")
        jobs += [(p, label, tuple(size)) for p in files]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            loaded = list(ex.map(_try_load, jobs))
    else:
        loaded = [_try_load(j) for j in jobs]
    pool = [im for im in loaded if im is not None]
    skipped = len(loaded) - len(pool)
    if skipped:
        log.warning("%d of %d images could not be read", skipped, len(loaded))
    for label, name in LABEL_NAMES.items():
        if not any(im.label == label for im in pool):
            raise DataError(f"no readable images for class {name}")
    return pool


def to_arrays(images, dtype=np.float32):
    x = np.stack([im.pixels for im in images]).astype(dtype, copy=False)
    y = np.array([im.label for im in images], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# balancing and splitting


def _indices_by_label(pool):
    by = {}
    for i, im in enumerate(pool):
        by.setdefault(im.label, []).append(i)
    return dict(sorted(by.items()))


def balance(pool, per_class, seed):
    """Keep exactly ``per_class`` images of every class, sampled without replacement."""
    rng = np.random.default_rng(seed)
    chosen = []
    for label, idx in _indices_by_label(pool).items():
        if len(idx) < per_class:
            raise DataError(f"class {LABEL_NAMES.get(label, label)} has {len(idx)} images, need {per_class}")
        pick = rng.choice(len(idx), size=per_class, replace=False)
        chosen += [idx[k] for k in pick]
    return [pool[i] for i in sorted(chosen)]


def _train_counts(sizes, ratio):
    eps = 1e-9
    total = math.floor(sum(sizes.values()) * ratio + eps)
    quota = {c: n * ratio for c, n in sizes.items()}
    counts = {c: math.floor(q + eps) for c, q in quota.items()}
    # hand leftover train slots to the largest fractional remainders
    spare = total - sum(counts.values())
    for c in sorted(quota, key=lambda c: (-(quota[c] - counts[c]), c))[:spare]:
        counts[c] += 1
    return counts


def split(pool, ratio=0.7, seed=0):
    """Seeded, stratified train/test split.

    The train set gets floor(len(pool) * ratio) images; each class contributes
    floor(n_c * ratio) of them, with leftover slots going to the classes with
    the largest fractional remainder.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if not pool:
        raise DataError("cannot split an empty pool")
    by = _indices_by_label(pool)
    counts = _train_counts({c: len(i) for c, i in by.items()}, ratio)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label, idx in by.items():
        perm = [idx[k] for k in rng.permutation(len(idx))]
        k = counts[label]
        train_idx += perm[:k]
        test_idx += perm[k:]
    train_idx.sort()
    test_idx.sort()
    return DatasetSplit(
        train=[pool[i] for i in train_idx],
        test=[pool[i] for i in test_idx],
        seed=seed,
        ratio=ratio,
        train_idx=train_idx,
        test_idx=test_idx,
    )


def write_manifest(split_, path):
    """Tab-separated ``path, label, split`` index of every image in the split."""
    with open(path, "w", newline="") as fh:
        for part, images in (("train", split_.train), ("test", split_.test)):
            for im in images:
                fh.write(f"{im.source_path}\t{im.label}\t{part}\n")


class BatchIterator:
    """Seeded mini-batches of indices into ``n`` samples.

    Each epoch draws its own permutation from (seed, epoch), so batch order
    depends only on the seed. A trailing batch of one sample is always dropped
    because batch normalization cannot train on it.
    """

    def __init__(self, n, batch_size=32, seed=0, drop_last=False):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.drop_last = drop_last

    def epoch(self, epoch):
        perm = np.random.default_rng([self.seed, epoch]).permutation(self.n)
        for start in range(0, self.n, self.batch_size):
            idx = perm[start : start + self.batch_size]
            if len(idx) < 2 or (self.drop_last and len(idx) < self.batch_size):
                break
            yield idx

    def __len__(self):
        full, tail = divmod(self.n, self.batch_size)
        return full + (1 if tail >= 2 and not self.drop_last else 0)


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class Blob:
    cx: float
    cy: float
    rx: float
    ry: float

    @property
    def bbox(self):
        """(x0, y0, x1, y1) in pixel coordinates, x along columns."""
        return (self.cx - self.rx, self.cy - self.ry, self.cx + self.rx, self.cy + self.ry)


MIN_SYNTH_SIZE = 16


def synth_image(label, index, size, seed):
    """One synthetic image in [0, 1] and its blob (None for label 0)."""
    rng = np.random.default_rng([seed, label, index])
    coarse = rng.normal(0.45, 0.05, size=(8, 8))
    img = resize_bilinear(coarse, (size, size)) + rng.normal(0.0, 0.02, size=(size, size))
    blob = None
    if label == COVID:
        rx, ry = rng.uniform(0.10, 0.17, size=2) * size
        margin = max(rx, ry) + 1
        cx, cy = rng.uniform(margin, size - 1 - margin, size=2)
        yy, xx = np.mgrid[0:size, 0:size]
        d2 = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        img = img + 0.5 * np.clip(1.0 - d2, 0.0, None)
        blob = Blob(float(cx), float(cy), float(rx), float(ry))
    return np.clip(img, 0.0, 1.0), blob


def synth_generate(n_per_class, size, seed, out):
    """Write a blob-vs-noise corpus under ``out`` and return {file name: Blob}.

    Blob bounding boxes are also written to ``out/blobs.csv``.
    """
    if size < MIN_SYNTH_SIZE:
        raise ValueError(f"synthetic image size must be >= {MIN_SYNTH_SIZE}, got {size}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out = Path(out)
    blobs = {}
    for dirname, label in CLASS_DIRS.items():
        d = out / dirname
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            img, blob = synth_image(label, i, size, seed)
            rel = f"{dirname}/{dirname.lower()}_{i:05d}.png"
            write_png(to_uint8(img), out / rel)
            if blob is not None:
                blobs[rel] = blob
    with open(out / BLOB_INDEX, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "cx", "cy", "rx", "ry"])
        for rel, b in blobs.items():
            w.writerow([rel, repr(b.cx), repr(b.cy), repr(b.rx), repr(b.ry)])
    return blobs


def read_blobs(root):
    """Blob table written by ``synth_generate``, keyed by path relative to ``root``."""
    out = {}
    with open(Path(root) / BLOB_INDEX, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["file"].replace("/", os.sep)] = Blob(
                float(row["cx"]), float(row["cy"]), float(row["rx"]), float(row["ry"])
            )
    return out
