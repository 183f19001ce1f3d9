"""Image primitives: grayscale, morphology, the pencil filter, edge filters
and the photometric/blur perturbations used by the robustness sweeps.

Images are plain ``numpy.uint8`` arrays, ``(H, W)`` for intensity images and
``(H, W, 3)`` for RGB. Every operation is pure and returns a new array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "ImageError",
    "StructuringElement",
    "ellipse",
    "validate_image",
    "to_grayscale",
    "ensure_gray",
    "dilate",
    "pencil_filter",
    "sobel_filter",
    "canny_filter",
    "gaussian_kernel",
    "scale_intensity",
    "apply_motion_blur",
    "motion_blur_kernel",
    "apply_filter",
    "FILTERS",
    "read_image",
    "write_image",
]

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()


class ImageError(ValueError):
    """Raised for malformed images or out-of-range filter arguments."""


@dataclass(frozen=True)
class StructuringElement:
    """Boolean neighbourhood mask centred on the origin pixel."""

    kind: str
    width: int
    height: int
    mask: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width % 2 == 0 or self.height % 2 == 0:
            raise ImageError(f"structuring element dims must be odd and >= 1, got {self.width}x{self.height}")
        if self.mask.shape != (self.height, self.width):
            raise ImageError("mask shape does not match element dims")
        if not self.mask[self.height // 2, self.width // 2]:
            raise ImageError("structuring element must contain its centre")

    def offsets(self) -> list[tuple[int, int]]:
        """(dy, dx) offsets of every member cell."""
        cy, cx = self.height // 2, self.width // 2
        ys, xs = np.nonzero(self.mask)
        return [(int(y - cy), int(x - cx)) for y, x in zip(ys, xs)]


def ellipse(width: int = 5, height: int | None = None) -> StructuringElement:
    """Discrete ellipse inscribed in a ``width x height`` box.

    A cell belongs to the element when its centre lies inside the ellipse
    with semi-axes ``(width/2, height/2)``. For 3x3 this is the full square,
    for 5x5 the square without its four corners.
    """
    height = width if height is None else height
    if width < 1 or height < 1 or width % 2 == 0 or height % 2 == 0:
        raise ImageError(f"ellipse dims must be odd and >= 1, got {width}x{height}")
    ry, rx = height / 2.0, width / 2.0
    ys = np.arange(height) - height // 2
    xs = np.arange(width) - width // 2
    mask = (ys[:, None] / ry) ** 2 + (xs[None, :] / rx) ** 2 <= 1.0
    return StructuringElement("ellipse", width, height, mask)


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 2:
        pass
    elif img.ndim == 3 and img.shape[2] in (1, 3):
        if img.shape[2] == 1:
            img = img[:, :, 0]
    else:
        raise ImageError(f"invalid image shape {img.shape}; expected (H, W) or (H, W, 3)")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError("image must be non-empty")
    return img


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma, rounded half up."""
    img = validate_image(img)
    if img.ndim != 3:
        raise ImageError(f"to_grayscale needs a 3-channel image, got shape {img.shape}")
    # integer weights in thousandths: exact, so .5 ties round up reliably
    rgb = img.astype(np.int32)
    acc = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((acc + 500) // 1000).astype(np.uint8)


def ensure_gray(img: np.ndarray) -> np.ndarray:
    img = validate_image(img)
    return to_grayscale(img) if img.ndim == 3 else img


def _pad_edge(img: np.ndarray, py: int, px: int) -> np.ndarray:
    return np.pad(img, ((py, py), (px, px)), mode="edge")


def dilate(img: np.ndarray, elem: StructuringElement | None = None) -> np.ndarray:
    """Grey-level dilation: max over the element's members, edge-clamped."""
    img = validate_image(img)
    if img.ndim != 2:
        raise ImageError("dilate expects a 1-channel image")
    elem = elem or ellipse(5)
    py, px = elem.height // 2, elem.width // 2
    padded = _pad_edge(img, py, px)
    h, w = img.shape
    out = np.zeros_like(img)
    for dy, dx in elem.offsets():
        window = padded[py + dy : py + dy + h, px + dx : px + dx + w]
        np.maximum(out, window, out=out)
    return out


def pencil_filter(img: np.ndarray, elem: StructuringElement | None = None) -> np.ndarray:
    """Ratio of the grey image to its dilation, scaled to 0..255.

    Pixels whose dilated value is 0 map to 255; all others to
    ``int(255 * G / P)`` (truncation).
    """
    gray = ensure_gray(img)
    dil = dilate(gray, elem)
    g = gray.astype(np.int32)
    p = dil.astype(np.int32)
    # floor division equals int() truncation here: operands are non-negative
    ratio = (255 * g) // np.maximum(p, 1)
    return np.where(p == 0, 255, ratio).astype(np.uint8)


def _correlate(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Edge-clamped 2-D correlation in float64."""
    kh, kw = kernel.shape
    py, px = kh // 2, kw // 2
    padded = _pad_edge(gray.astype(np.float64), py, px)
    h, w = gray.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            if kernel[i, j] != 0.0:
                out += kernel[i, j] * padded[i : i + h, j : j + w]
    return out


def _sobel_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _correlate(gray, SOBEL_X), _correlate(gray, SOBEL_Y)


def sobel_filter(img: np.ndarray) -> np.ndarray:
    gray = ensure_gray(img)
    gx, gy = _sobel_gradients(gray)
    mag = np.hypot(gx, gy)
    return np.clip(_round_half_up(mag), 0, 255).astype(np.uint8)


def gaussian_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    # direction of the gradient folded into [0, 180)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros((h, w), dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    # (dy, dx) of the "forward" neighbour along the gradient, per sector
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros((h, w), dtype=bool)
    for s, (dy, dx) in steps.items():
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        # asymmetric comparison: of two equal neighbours only one survives
        keep |= (sector == s) & (mag > bwd) & (mag >= fwd)
    return np.where(keep, mag, 0.0)


def _hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    strong = nms >= high
    weak = (nms >= low) & ~strong
    edges = strong.copy()
    h, w = nms.shape
    stack = list(zip(*np.nonzero(strong)))
    while stack:
        y, x = stack.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and weak[ny, nx] and not edges[ny, nx]:
                    edges[ny, nx] = True
                    stack.append((ny, nx))
    return edges


def canny_filter(img: np.ndarray, low_thresh: float = 50.0, high_thresh: float = 150.0) -> np.ndarray:
    """Canny edges as a {0, 255} image.

    Gaussian 5x5 (sigma 1.4), Sobel gradients, 4-sector non-maximum
    suppression and 8-connected hysteresis on the gradient magnitude.
    """
    if not (0 <= low_thresh <= high_thresh <= 255):
        raise ImageError(f"thresholds must satisfy 0 <= low <= high <= 255, got ({low_thresh}, {high_thresh})")
    gray = ensure_gray(img)
    smooth = _correlate(gray, gaussian_kernel(5, 1.4))
    gx, gy = _correlate(smooth, SOBEL_X), _correlate(smooth, SOBEL_Y)
    mag = np.hypot(gx, gy)
    nms = _non_max_suppression(mag, gx, gy)
    edges = _hysteresis(nms, float(low_thresh), float(high_thresh))
    return np.where(edges, 255, 0).astype(np.uint8)


def scale_intensity(img: np.ndarray, s: float) -> np.ndarray:
    """Multiply every sample by ``s`` in (0, 1], rounding half up."""
    img = validate_image(img)
    if not (0.0 < s <= 1.0):
        raise ImageError(f"intensity scale must be in (0, 1], got {s}")
    if s == 1.0:
        return img.copy()
    return np.clip(_round_half_up(img.astype(np.float64) * s), 0, 255).astype(np.uint8)


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalised line kernel; taps bilinearly splatted along the direction."""
    if length < 1:
        raise ImageError(f"blur length must be >= 1, got {length}")
    half = (length - 1) / 2.0
    radius = int(math.ceil(half)) + 1
    size = 2 * radius + 1
    kernel = np.zeros((size, size), dtype=np.float64)
    c, s = math.cos(angle), math.sin(angle)
    for k in range(length):
        t = k - half
        x, y = radius + t * c, radius + t * s
        x0, y0 = math.floor(x + 1e-12), math.floor(y + 1e-12)
        fx, fy = x - x0, y - y0
        for yy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
                if wy * wx > 1e-12:
                    kernel[yy, xx] += wy * wx
    return kernel / kernel.sum()


def apply_motion_blur(img: np.ndarray, length: int, angle: float = 0.0) -> np.ndarray:
    img = validate_image(img)
    kernel = motion_blur_kernel(length, angle)
    if length == 1:
        return img.copy()
    if img.ndim == 2:
        out = _correlate(img, kernel[::-1, ::-1])
    else:
        out = np.stack([_correlate(img[..., ch], kernel[::-1, ::-1]) for ch in range(3)], axis=-1)
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def _no_filter(img: np.ndarray) -> np.ndarray:
    return ensure_gray(img)


FILTERS = {
    "pencil": pencil_filter,
    "sobel": sobel_filter,
    "canny": canny_filter,
    "none": _no_filter,
}


def apply_filter(kind: str, img: np.ndarray, **kwargs) -> np.ndarray:
    try:
        fn = FILTERS[kind]
    except KeyError:
        raise ImageError(f"unknown filter {kind!r}; choose from {sorted(FILTERS)}") from None
    return fn(img, **kwargs)


def read_image(path: str | Path) -> np.ndarray:
    """Read PNG / PGM / PPM into a uint8 array (grey or RGB)."""
    with PILImage.open(path) as im:
        if im.mode in ("L", "RGB"):
            arr = np.asarray(im)
        elif im.mode in ("1", "P", "I", "I;16", "F"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return np.ascontiguousarray(arr, dtype=np.uint8)


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write by extension: .png, .pgm (grey) or .ppm (RGB), binary variants."""
    img = validate_image(img)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm" and img.ndim != 2:
        raise ImageError("PGM needs a 1-channel image")
    if suffix == ".ppm" and img.ndim != 3:
        raise ImageError("PPM needs a 3-channel image")
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM"}.get(suffix)
    if fmt is None:
        raise ImageError(f"unsupported image extension {suffix!r}")
    PILImage.fromarray(np.ascontiguousarray(img)).save(path, format=fmt)
