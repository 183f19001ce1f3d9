"""Detection metrics and the perturbation benchmark.

MAE is averaged over occupied cells the model detected at the operating
threshold; occupied cells it missed are false negatives and are reported
through :func:`compute_fn_rate` instead.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import apply_motion_blur, scale_intensity
from .nn import D_MAX
from .pipeline import Detector, build_arrays

log = logging.getLogger(__name__)

CSV_FIELDS = ["model", "filter", "light_scale", "blur_len", "E_c", "E_d", "E_theta", "fn_rate", "fps", "n"]
PAPER_CONDITIONS = [(s, b) for b in (0, 7) for s in (1.0, 0.4, 0.2, 0.1)]


class NoGatesWarning(UserWarning):
    """FN rate requested on data without a single occupied cell."""


def _stack(preds, targets, masks):
    preds, targets, masks = np.asarray(preds), np.asarray(targets), np.asarray(masks, dtype=bool)
    if not (len(preds) == len(targets) == len(masks)):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(targets)} targets, {len(masks)} masks")
    if preds.shape != targets.shape or preds.shape[:-1] != masks.shape:
        raise ValueError(f"shape mismatch: {preds.shape}, {targets.shape}, {masks.shape}")
    return preds.astype(np.float64), targets.astype(np.float64), masks


def cell_errors(preds, targets, masks, conf_thresh: float = 0.5, d_max: float = D_MAX):
    """Per matched cell absolute errors ``(centre, distance m, angle rad)``."""
    p, t, m = _stack(preds, targets, masks)
    matched = m & (p[..., 4] >= conf_thresh)
    ec = np.abs(p[..., 0] - t[..., 0]) + np.abs(p[..., 1] - t[..., 1])
    ed = np.abs(np.clip(p[..., 2], 0.0, 1.0) - t[..., 2]) * d_max
    et = np.abs(p[..., 3] - t[..., 3]) * (math.pi / 2)
    return ec[matched], ed[matched], et[matched]


def compute_mae(preds, targets, masks, conf_thresh: float = 0.5, d_max: float = D_MAX) -> tuple[float, float, float]:
    """``(E_c, E_d, E_theta)``; zeros when no occupied cell was detected."""
    ec, ed, et = cell_errors(preds, targets, masks, conf_thresh, d_max)
    if ec.size == 0:
        return 0.0, 0.0, 0.0
    return float(ec.mean()), float(ed.mean()), float(et.mean())


def compute_fn_rate(preds, targets, masks, conf_thresh: float = 0.5) -> float:
    """Percentage of occupied cells whose predicted confidence is below threshold."""
    if not (0.0 <= conf_thresh <= 1.0):
        raise ValueError(f"confidence threshold must be in [0, 1], got {conf_thresh}")
    p, _, m = _stack(preds, targets, masks)
    total = int(m.sum())
    if total == 0:
        warnings.warn("no occupied cells; FN rate defined as 0", NoGatesWarning, stacklevel=2)
        return 0.0
    missed = int((m & (p[..., 4] < conf_thresh)).sum())
    return 100.0 * missed / total


def count_false_positives(preds, masks, conf_thresh: float = 0.5) -> int:
    p = np.asarray(preds)
    m = np.asarray(masks, dtype=bool)
    return int((~m & (p[..., 4] >= conf_thresh)).sum())


@dataclass
class EvalReport:
    model: str
    filter: str
    light_scale: float
    blur_len: int
    E_c: float = 0.0
    E_d: float = 0.0
    E_theta: float = 0.0
    fn_rate: float = 0.0
    fps: float | None = None
    n_samples: int = 0
    n_matched: int = 0
    false_positives: int = 0
    error: str | None = None
    errors: tuple = field(default=(), repr=False)  # per-cell arrays for plots

    @property
    def condition(self) -> tuple[float, int]:
        return self.light_scale, self.blur_len

    def csv_row(self) -> list[str]:
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"

        return [
            self.model, self.filter, f"{self.light_scale:g}", str(self.blur_len),
            num(self.E_c), num(self.E_d), num(self.E_theta), num(self.fn_rate), num(self.fps), str(self.n_samples),
        ]


def perturb(img: np.ndarray, light_scale: float, blur_len: int, blur_angle: float = 0.0) -> np.ndarray:
    out = scale_intensity(img, light_scale)
    if blur_len > 1:
        out = apply_motion_blur(out, blur_len, blur_angle)
    return out


def measure_fps(det: Detector, images, frames: int = 30) -> float:
    """Single-image filter + inference rate over ``frames`` frames."""
    images = list(images)[: max(1, frames)]
    det.infer(images[0])  # warm-up
    t0 = time.perf_counter()
    count = 0
    while count < frames:
        det.infer(images[count % len(images)])
        count += 1
    return count / (time.perf_counter() - t0)


def evaluate(det: Detector, samples, light_scale: float = 1.0, blur_len: int = 0, conf_thresh: float = 0.5,
             blur_angle: float = 0.0, fps_frames: int = 0) -> EvalReport:
    samples = list(samples)
    report = EvalReport(det.name, det.filter.kind, light_scale, blur_len)
    x, t, m = build_arrays(samples, det.filter, det.d_max, lambda im: perturb(im, light_scale, blur_len, blur_angle))
    preds = det.infer_batch(x)
    report.E_c, report.E_d, report.E_theta = compute_mae(preds, t, m, conf_thresh, det.d_max)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoGatesWarning)
        report.fn_rate = compute_fn_rate(preds, t, m, conf_thresh)
    report.errors = cell_errors(preds, t, m, conf_thresh, det.d_max)
    report.n_samples = len(samples)
    report.n_matched = int(report.errors[0].size)
    report.false_positives = count_false_positives(preds, m, conf_thresh)
    if fps_frames:
        imgs = [perturb(s.image, light_scale, blur_len, blur_angle) for s in samples[:fps_frames]]
        report.fps = measure_fps(det, imgs, fps_frames)
    return report


def run_benchmark(detectors, samples, conditions=PAPER_CONDITIONS, conf_thresh: float = 0.5,
                  out_dir: str | Path | None = None, fps_frames: int = 30, blur_angle: float = 0.0) -> list[EvalReport]:
    """Evaluate every detector under every (light_scale, blur_len) condition.

    A failing cell is recorded with its error message and the sweep goes on,
    so the report matrix is always complete. ``fps_frames=0`` skips timing,
    which makes the CSV byte-reproducible.
    """
    samples = list(samples)
    reports = []
    for det in detectors:
        for light, blur in conditions:
            try:
                rep = evaluate(det, samples, light, int(blur), conf_thresh, blur_angle, fps_frames)
            except Exception as exc:  # recorded per cell, sweep continues
                log.exception("benchmark cell %s @ (%s, %s) failed", det.name, light, blur)
                rep = EvalReport(det.name, det.filter.kind, light, int(blur), math.nan, math.nan, math.nan, math.nan,
                                 None, len(samples), error=f"{type(exc).__name__}: {exc}")
            reports.append(rep)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "benchmark.csv", reports)
        write_plots(out, reports)
    return reports


def write_csv(path: str | Path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_FIELDS)
        for r in reports:
            wr.writerow(r.csv_row())


def write_plots(out_dir: str | Path, reports) -> list[Path]:
    """One SVG per metric: box summaries of per-cell errors, bars for FN rate."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "gateseed"
    out_dir = Path(out_dir)
    labels = [f"{r.model}\n{r.light_scale:g}/{r.blur_len}" for r in reports]
    paths = []
    for k, (metric, unit) in enumerate([("E_c", "cell units"), ("E_d", "m"), ("E_theta", "rad")]):
        fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(reports)), 4))
        data = [r.errors[k] if r.errors and len(r.errors[k]) else np.zeros(1) for r in reports]
        ax.boxplot(data, showfliers=False)
        ax.set_xticks(range(1, len(labels) + 1), labels, fontsize=6)
        ax.set_ylabel(f"{metric} [{unit}]")
        ax.set_title(f"{metric} per condition (model / light / blur)")
        fig.tight_layout()
        p = out_dir / f"{metric}.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(reports)), 4))
    ax.bar(range(len(reports)), [0.0 if math.isnan(r.fn_rate) else r.fn_rate for r in reports])
    ax.set_xticks(range(len(labels)), labels, fontsize=6)
    ax.set_ylabel("FN rate [%]")
    fig.tight_layout()
    p = out_dir / "fn_rate.svg"
    fig.savefig(p, format="svg", metadata={"Date": None})
    plt.close(fig)
    paths.append(p)
    return paths
