"""Integer-pixel footprints of continuous image rectangles."""

import numpy as np

from . import kernels


def pixel_boxes(rects, width: int, height: int) -> np.ndarray:
    """Inclusive (col0, row0, col1, row1) pixel boxes covering each rect.

    Pixel (c, r) spans [c, c+1) x [r, r+1); a rect touches every pixel its
    closed extent meets. Rects partly outside the image are clipped; rects
    entirely outside are dropped.
    """
    rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
    boxes = np.floor(rects).astype(np.int64)
    visible = (boxes[:, 2] >= 0) & (boxes[:, 3] >= 0) & (boxes[:, 0] < width) & (boxes[:, 1] < height)
    boxes = boxes[visible]
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0, width - 1)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0, height - 1)
    return boxes


def multiplicity(rects, width: int, height: int) -> np.ndarray:
    """(H, W) count of rects touching each pixel."""
    return kernels.rect_multiplicity(pixel_boxes(rects, width, height), width, height)


def point_rects(uv) -> np.ndarray:
    """Degenerate rects for single sample points, one per (u, v)."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    return np.concatenate([uv, uv], axis=1)
