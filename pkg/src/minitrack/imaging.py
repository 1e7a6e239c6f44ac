"""Image helpers: float grayscale frames, replicated-edge crops, resizing.

Frames are handled internally as float64 grayscale arrays in [0, 1]. Crops
near borders replicate edge pixels rather than inventing background content.
"""

from __future__ import annotations

import numpy as np
import cv2

from .errors import GeometryError


def to_gray_float(frame: np.ndarray) -> np.ndarray:
    """uint8 (H,W) or (H,W,3) -> float64 (H,W) in [0,1]. Float input passes through."""
    if frame.ndim == 3:
        frame = cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return np.asarray(frame, dtype=np.float64)


def resize(img: np.ndarray, out_size: int) -> np.ndarray:
    """Bilinear resize of a square (H,W) float image to (out_size, out_size)."""
    if img.shape[0] == out_size and img.shape[1] == out_size:
        return img.copy()
    return cv2.resize(img, (out_size, out_size), interpolation=cv2.INTER_LINEAR)


def crop_replicate(img: np.ndarray, x0: int, y0: int, side: int) -> np.ndarray:
    """Integer crop of a (side, side) window, replicating edges out of bounds."""
    if side <= 0:
        raise GeometryError(f"crop side must be positive, got {side}")
    h, w = img.shape[:2]
    xs = np.clip(np.arange(x0, x0 + side), 0, w - 1)
    ys = np.clip(np.arange(y0, y0 + side), 0, h - 1)
    return img[np.ix_(ys, xs)]


def square_patch(
    img: np.ndarray, box: tuple[float, float, float, float], context: float, out_size: int
) -> np.ndarray:
    """Square crop around ``box`` with a relative context margin, resized.

    The crop side is sqrt(w*h) * (1 + context) centered on the box center.
    """
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise GeometryError(f"degenerate box {box}")
    side = int(round(np.sqrt(w * h) * (1.0 + context)))
    side = max(side, 2)
    cx, cy = x + w / 2.0, y + h / 2.0
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    return resize(crop_replicate(img, x0, y0, side), out_size)


def clamp_box(
    box: tuple[float, float, float, float], width: int, height: int
) -> tuple[float, float, float, float]:
    """Clamp a box so it lies inside the frame, preserving size where possible."""
    x, y, w, h = box
    w = min(w, width)
    h = min(h, height)
    x = min(max(x, 0.0), width - w)
    y = min(max(y, 0.0), height - h)
    return (x, y, w, h)


def encode_png(frame: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", frame)
    if not ok:
        raise GeometryError("PNG encoding failed")
    return buf.tobytes()


def decode_png(data: bytes) -> np.ndarray:
    arr = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise GeometryError("PNG decoding failed")
    return arr
