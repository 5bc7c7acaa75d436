"""Deterministic image preprocessing: disc-centered ROI cropping, background
removal, bilinear resizing and the training-time augmentation pipeline.

All operations take and return 8-bit RGB arrays (HxWx3 uint8) and are pure
functions of their inputs plus any random draws supplied by the caller, so
they parallelize across images without shared state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .detections import DiscDetection

ROI_SCALE = 3.0  # crop side = 3 * (w + h) / 2
DEFAULT_BG_TAU = 10

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class AugmentParams:
    """Augmentation draw ranges; ``seed`` feeds the caller's generator chain."""

    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    rot_lo: float = -10.0
    rot_hi: float = 10.0
    sat_lo: float = 0.95
    sat_hi: float = 1.05
    bright_lo: float = 0.95
    bright_hi: float = 1.05
    hue_lo: float = 0.95
    hue_hi: float = 1.05
    seed: int = 0


def roi_side(w: float, h: float) -> int:
    """Square crop side for a disc of size (w, h): 3*(w+h)/2, rounded to the
    nearest pixel with ties away from zero."""
    return int(np.floor(ROI_SCALE * (w + h) / 2.0 + 0.5))


def crop_roi(image: np.ndarray, det: DiscDetection) -> np.ndarray:
    """Square crop centered on the detected disc, zero-padded at the image
    border so the disc stays centered."""
    if det.w <= 0 or det.h <= 0:
        raise ValueError(f"invalid detection: nonpositive size ({det.w}, {det.h})")
    image = _require_rgb(image)
    side = roi_side(det.w, det.h)
    cx = int(np.floor(det.cx + 0.5))
    cy = int(np.floor(det.cy + 0.5))
    x0 = cx - side // 2
    y0 = cy - side // 2
    out = np.zeros((side, side, 3), dtype=np.uint8)
    h, w, _ = image.shape
    sx0, sx1 = max(x0, 0), min(x0 + side, w)
    sy0, sy1 = max(y0, 0), min(y0 + side, h)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = image[sy0:sy1, sx0:sx1]
    return out


def remove_background(image: np.ndarray, tau: int = DEFAULT_BG_TAU) -> np.ndarray:
    """Zero the border-connected near-black region (max channel < tau).

    Dark pixels not connected (4-connectivity) to the image border are left
    untouched; so is everything at or above the threshold.
    """
    image = _require_rgb(image)
    dark = image.max(axis=2) < tau
    if not dark.any():
        return image.copy()
    labels, count = ndimage.label(dark, structure=_CROSS)
    border = np.unique(np.concatenate([
        labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]]))
    border = border[border != 0]
    if border.size == 0:
        return image.copy()
    out = image.copy()
    out[np.isin(labels, border)] = 0
    return out


def resize_bilinear(image: np.ndarray, target: int) -> np.ndarray:
    """Resize to target x target with half-pixel-center bilinear sampling."""
    if target <= 0:
        raise ValueError("resize target must be positive")
    return _resize(image, target, target)


def _resize(image: np.ndarray, th: int, tw: int) -> np.ndarray:
    image = _require_rgb(image)
    h, w, _ = image.shape
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    gx, gy = np.meshgrid(xs, ys)
    sampled = _bilinear_sample(image.astype(np.float64), gx, gy)
    return np.clip(np.rint(sampled), 0, 255).astype(np.uint8)


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample float image at fractional coords; out-of-bounds reads are zero."""
    h, w = image.shape[:2]
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]

    def fetch(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = image[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return vals * inside[..., None]

    top = fetch(y0, x0) * (1 - fx) + fetch(y0, x0 + 1) * fx
    bot = fetch(y0 + 1, x0) * (1 - fx) + fetch(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counterclockwise about the image center; bilinear, zero fill."""
    image = _require_rgb(image)
    if degrees == 0.0:
        return image.copy()
    h, w, _ = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xx - cx, yy - cy
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    sampled = _bilinear_sample(image.astype(np.float64), src_x, src_y)
    return np.clip(np.rint(sampled), 0, 255).astype(np.uint8)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV for float arrays in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    spread = maxc - minc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, spread / np.where(maxc > 0, maxc, 1.0), 0.0)
        safe = np.where(spread > 0, spread, 1.0)
        rc = (maxc - r) / safe
        gc = (maxc - g) / safe
        bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc,
                 np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def color_jitter(image: np.ndarray, sat: float, bright: float, hue: float) -> np.ndarray:
    """Scale saturation and brightness (clamped to [0, 1]) and hue
    (multiplicative, modulo 1) in HSV space."""
    image = _require_rgb(image)
    if sat == 1.0 and bright == 1.0 and hue == 1.0:
        return image.copy()
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] * hue) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * sat, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * bright, 0.0, 1.0)
    rgb = hsv_to_rgb(hsv)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class AugmentDraws:
    """The six random draws one augmentation consumes, in draw order."""

    u_flip_h: float
    u_flip_v: float
    rot_deg: float
    sat: float
    bright: float
    hue: float

    @classmethod
    def sample(cls, rng: np.random.Generator, params: AugmentParams) -> "AugmentDraws":
        # Always consume exactly six draws so generator streams stay aligned.
        return cls(u_flip_h=float(rng.random()),
                   u_flip_v=float(rng.random()),
                   rot_deg=float(rng.uniform(params.rot_lo, params.rot_hi)),
                   sat=float(rng.uniform(params.sat_lo, params.sat_hi)),
                   bright=float(rng.uniform(params.bright_lo, params.bright_hi)),
                   hue=float(rng.uniform(params.hue_lo, params.hue_hi)))

    @classmethod
    def identity(cls) -> "AugmentDraws":
        return cls(1.0, 1.0, 0.0, 1.0, 1.0, 1.0)


def augment(image: np.ndarray, params: AugmentParams, draws: AugmentDraws) -> np.ndarray:
    """Apply, in fixed order: horizontal flip, vertical flip, rotation about
    the center (bilinear, zero fill), then saturation/brightness/hue scaling.

    Identity draws short-circuit each stage exactly, so all-identity draws
    reproduce the input bit for bit.
    """
    image = _require_rgb(image)
    out = image
    if draws.u_flip_h < params.p_flip_h:
        out = out[:, ::-1, :]
    if draws.u_flip_v < params.p_flip_v:
        out = out[::-1, :, :]
    if draws.rot_deg != 0.0:
        out = rotate(np.ascontiguousarray(out), draws.rot_deg)
    out = color_jitter(np.ascontiguousarray(out), draws.sat, draws.bright, draws.hue)
    return out


def _require_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 RGB image, got shape {image.shape}")
    return image
