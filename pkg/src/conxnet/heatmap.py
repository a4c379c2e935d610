"""Grad-CAM heat maps over the last block and their colour overlay."""
import csv
from dataclasses import dataclass

import numpy as np

from .data import COVID, NORMAL, resize_bilinear, to_uint8, write_png
from .errors import ShapeError, StateError
from .tensor import reduce

CLASS_CODES = {"covid": COVID, "normal": NORMAL}


def _ramp():
    t = np.linspace(0.0, 1.0, 256)
    rgb = np.stack([t, 1.0 - np.abs(2.0 * t - 1.0), 1.0 - t], axis=1)
    return np.rint(rgb * 255.0).astype(np.uint8)


# 256-entry blue -> red lookup table; entry 255 is pure red (255, 0, 0)
COLOR_RAMP = _ramp()


@dataclass
class ActivationMap:
    values: np.ndarray  # (h, w) in [0, 1]
    block: int
    target: int


def _target_code(target):
    if isinstance(target, str):
        try:
            return CLASS_CODES[target.lower()]
        except KeyError:
            raise ValueError(f"unknown class {target!r}; use 'covid' or 'normal'") from None
    if target not in (COVID, NORMAL):
        raise ValueError(f"target class must be 0 or 1, got {target}")
    return int(target)


def grad_cam(model, image, target=COVID):
    """Class-activation map for one (1, 1, H, W) image.

    The class score is the pre-sigmoid logit for COVID and its negation for
    Normal. Channel weights are the spatial mean of the score's gradient with
    respect to the last block's pre-pool activations.
    """
    if model.training:
        raise StateError("grad_cam needs a model in eval mode")
    image = np.asarray(image)
    if image.ndim != 4 or image.shape[0] != 1:
        raise ShapeError(f"grad_cam takes a single (1, 1, H, W) image, got {image.shape}")
    code = _target_code(target)
    feat_name = model.LAST_BLOCK_FEATURES
    pool_name = feat_name.replace(".bn", ".pool")
    logit = model.logits(image)
    feats = model.outputs[feat_name][0].astype(np.float64)
    seed = np.full_like(logit, 1.0 if code == COVID else -1.0)
    grads = model.backward(seed, start="fc2", stop=pool_name)[0].astype(np.float64)
    weights = reduce("mean", grads, (1, 2))
    cam = np.maximum(np.tensordot(weights, feats, axes=(0, 0)), 0.0)
    peak = cam.max()
    values = cam / peak if peak > 0 else np.zeros_like(cam)
    return ActivationMap(values, block=int(feat_name[5]), target=code)


def upsample(amap, size):
    return np.clip(resize_bilinear(amap.values, size), 0.0, 1.0)


def hot_centroid(values, quantile=0.9):
    """(x, y) centroid of the positive cells at or above the given quantile; None for an all-zero map."""
    values = np.asarray(values)
    if not np.any(values > 0):
        return None
    ys, xs = np.nonzero((values >= np.quantile(values, quantile)) & (values > 0))
    return float(xs.mean()), float(ys.mean())


def overlay(image, amap, alpha=0.4):
    """Blend a grayscale image with the colour-mapped heat map; returns (H, W, 3) uint8.

    Per pixel the ramp colour is mixed in with weight ``alpha * m``, where m is
    the upsampled map value, so a zero map leaves the image unchanged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.dtype == np.uint8:
        gray = img.astype(np.float64)
    else:
        gray = to_uint8(img).astype(np.float64)
    m = upsample(amap, gray.shape)
    color = COLOR_RAMP[np.rint(m * 255).astype(np.int64)].astype(np.float64)
    w = (alpha * m)[..., None]
    out = (1.0 - w) * gray[..., None] + w * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def write_overlay(image, amap, path, alpha=0.4):
    write_png(overlay(image, amap, alpha), path)


def write_map_csv(amap, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in amap.values:
            w.writerow([repr(float(v)) for v in row])
