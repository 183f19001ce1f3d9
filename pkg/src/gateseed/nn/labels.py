"""Grid label encoding and prediction decoding.

The image is split into R rows x C columns; the cell containing a gate centre
holds the centre offset from the cell's top-left corner (in cell units), the
normalised distance and orientation, and confidence 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..camera import GateObservation

GRID_ROWS, GRID_COLS, GRID_FEATURES = 4, 3, 5
D_MAX = 12.0


@dataclass(frozen=True)
class GateLabel:
    u: float
    v: float
    d: float
    theta: float

    def to_dict(self) -> dict:
        return {"u": self.u, "v": self.v, "d": self.d, "theta": self.theta}


class LabelError(ValueError):
    pass


def validate_labels(labels, image_dims: tuple[int, int]) -> None:
    """``image_dims`` is (width, height)."""
    width, height = image_dims
    for k, g in enumerate(labels):
        if not (0.0 <= g.u < width and 0.0 <= g.v < height):
            raise LabelError(f"gate {k}: centre ({g.u}, {g.v}) outside {width}x{height} image")
        if not g.d > 0:
            raise LabelError(f"gate {k}: distance must be positive, got {g.d}")
        if not (-math.pi < g.theta <= math.pi):
            raise LabelError(f"gate {k}: theta {g.theta} outside (-pi, pi]")


def cell_size(image_dims, grid=(GRID_ROWS, GRID_COLS)) -> tuple[float, float]:
    width, height = image_dims
    rows, cols = grid
    return width / cols, height / rows


def encode_grid_labels(labels, image_dims=(160, 120), d_max: float = D_MAX, grid=(GRID_ROWS, GRID_COLS)):
    """Return ``(target, mask, collisions)``.

    target: (R, C, 5) float32; mask: (R, C) bool occupancy. When two gates fall
    into one cell the nearer one wins and ``collisions`` counts the losers.
    """
    validate_labels(labels, image_dims)
    rows, cols = grid
    cw, ch = cell_size(image_dims, grid)
    target = np.zeros((rows, cols, GRID_FEATURES), dtype=np.float32)
    mask = np.zeros((rows, cols), dtype=bool)
    best_d = np.full((rows, cols), np.inf)
    collisions = 0
    for g in labels:
        col = min(int(g.u // cw), cols - 1)
        row = min(int(g.v // ch), rows - 1)
        if mask[row, col]:
            collisions += 1
            if g.d >= best_d[row, col]:
                continue
        best_d[row, col] = g.d
        mask[row, col] = True
        target[row, col] = (
            (g.u - col * cw) / cw,
            (g.v - row * ch) / ch,
            min(g.d / d_max, 1.0),
            min(max(g.theta / (math.pi / 2), -1.0), 1.0),
            1.0,
        )
    return target, mask, collisions


def decode_predictions(pred, conf_thresh: float = 0.5, image_dims=(160, 120), d_max: float = D_MAX) -> list[GateObservation]:
    """Cells with confidence >= ``conf_thresh`` as observations, most confident first."""
    if not (0.0 <= conf_thresh <= 1.0):
        raise ValueError(f"confidence threshold must be in [0, 1], got {conf_thresh}")
    pred = np.asarray(pred, dtype=np.float64)
    rows, cols, _ = pred.shape
    cw, ch = cell_size(image_dims, (rows, cols))
    found = []
    for r in range(rows):
        for c in range(cols):
            x, y, dn, tn, conf = pred[r, c]
            if conf < conf_thresh:
                continue
            found.append(
                GateObservation(
                    u=c * cw + x * cw,
                    v=r * ch + y * ch,
                    distance=min(max(dn, 0.0), 1.0) * d_max,
                    yaw=tn * math.pi / 2,
                    confidence=float(conf),
                )
            )
    # stable sort keeps raster order among equal confidences
    found.sort(key=lambda o: -o.confidence)
    return found
