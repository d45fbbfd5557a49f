"""Raw eye-tracking samples to binary patch masks.

The chain is ``detect_fixations -> render_heatmap -> downsample_heatmap ->
separated_mask | gathered_mask``.  Every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllSaccades,
    BadK,
    BadWindow,
    EmptyTrace,
    NoFixations,
    RoiOutOfBounds,
    ZeroDims,
)


@dataclass(frozen=True)
class GazeSample:
    t: float
    x: float
    y: float
    valid: bool = True


@dataclass
class GazeTrace:
    """Timestamped gaze samples in image pixel coordinates (x = column, y = row)."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    sample_rate: float = 0.0

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.valid) == n):
            raise ValueError("gaze trace columns differ in length")
        if n > 1 and np.any(np.diff(self.t) < 0):
            raise ValueError("gaze timestamps must be non-decreasing")

    @classmethod
    def from_samples(cls, samples: list[GazeSample], sample_rate: float = 0.0) -> GazeTrace:
        return cls(
            t=[s.t for s in samples],
            x=[s.x for s in samples],
            y=[s.y for s in samples],
            valid=[s.valid for s in samples],
            sample_rate=sample_rate,
        )

    def __len__(self) -> int:
        return len(self.t)

    def samples(self) -> list[GazeSample]:
        return [
            GazeSample(float(t), float(x), float(y), bool(v))
            for t, x, y, v in zip(self.t, self.x, self.y, self.valid)
        ]

    def only_valid(self) -> GazeTrace:
        keep = self.valid & np.isfinite(self.x) & np.isfinite(self.y)
        return GazeTrace(self.t[keep], self.x[keep], self.y[keep], self.valid[keep], self.sample_rate)


@dataclass(frozen=True)
class Fixation:
    cx: float
    cy: float
    start_ms: float
    end_ms: float

    @property
    def duration_ms(self) -> float:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class FixationConfig:
    dispersion_px: float = 35.0
    min_duration_ms: float = 100.0

    def __post_init__(self) -> None:
        if self.dispersion_px <= 0 or self.min_duration_ms <= 0:
            raise ValueError("dispersion_px and min_duration_ms must be > 0")


@dataclass
class Heatmap:
    """Dense attention raster, ``values[row, col]``."""

    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass
class GridHeatmap:
    values: np.ndarray

    @property
    def gw(self) -> int:
        return self.values.shape[1]

    @property
    def gh(self) -> int:
        return self.values.shape[0]


@dataclass
class PatchMask:
    """Binary selection over the patch grid, flattened row-major."""

    bits: np.ndarray
    gw: int
    gh: int
    variant: str = field(default="separated")

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        if self.bits.size != self.gw * self.gh:
            raise ValueError("mask length does not match grid")

    @property
    def k(self) -> int:
        return int(self.bits.sum())

    def grid(self) -> np.ndarray:
        return self.bits.reshape(self.gh, self.gw)


def _dispersion(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.ptp(x) + np.ptp(y))


def detect_fixations(
    trace: GazeTrace,
    cfg: FixationConfig = FixationConfig(),
    bounds: tuple[int, int] | None = None,
) -> list[Fixation]:
    """Dispersion-threshold (I-DT) fixation detection.

    Invalid samples are dropped first.  A window is grown from each start
    sample while ``ptp(x) + ptp(y) <= dispersion_px``; windows spanning at
    least ``min_duration_ms`` become fixations and detection resumes after
    them, otherwise the start sample is treated as a saccade sample.

    ``bounds=(width, height)`` clamps centroids into the image.
    """
    tr = trace.only_valid()
    n = len(tr)
    if n == 0:
        raise EmptyTrace("trace has no valid samples")
    t, x, y = tr.t, tr.x, tr.y
    fixations: list[Fixation] = []
    i = 0
    while i < n:
        # smallest window reaching the minimum duration
        j = int(np.searchsorted(t, t[i] + cfg.min_duration_ms, side="left"))
        if j >= n:
            break
        if _dispersion(x[i : j + 1], y[i : j + 1]) > cfg.dispersion_px:
            i += 1
            continue
        xmin, xmax = x[i : j + 1].min(), x[i : j + 1].max()
        ymin, ymax = y[i : j + 1].min(), y[i : j + 1].max()
        while j + 1 < n:
            nx, ny = x[j + 1], y[j + 1]
            d = (max(xmax, nx) - min(xmin, nx)) + (max(ymax, ny) - min(ymin, ny))
            if d > cfg.dispersion_px:
                break
            xmin, xmax = min(xmin, nx), max(xmax, nx)
            ymin, ymax = min(ymin, ny), max(ymax, ny)
            j += 1
        # shifted mean: exact when all samples coincide
        cx = float(x[i] + (x[i : j + 1] - x[i]).mean())
        cy = float(y[i] + (y[i : j + 1] - y[i]).mean())
        if bounds is not None:
            cx = min(max(cx, 0.0), bounds[0] - 1.0)
            cy = min(max(cy, 0.0), bounds[1] - 1.0)
        fixations.append(Fixation(cx, cy, float(t[i]), float(t[j])))
        i = j + 1
    if not fixations:
        raise AllSaccades("no window satisfies the dispersion/duration thresholds")
    return fixations


def render_heatmap(
    fixations: list[Fixation],
    width: int,
    height: int,
    sigma: float = 25.0,
    duration_weighted: bool = True,
) -> Heatmap:
    """Sum of isotropic Gaussians at fixation centroids, scaled to max 1."""
    if not fixations:
        raise NoFixations("cannot render a heatmap without fixations")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if width <= 0 or height <= 0:
        raise ZeroDims("heatmap dimensions must be positive")
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    cx = np.array([f.cx for f in fixations])
    cy = np.array([f.cy for f in fixations])
    w = np.array([f.duration_ms for f in fixations]) if duration_weighted else np.ones(len(fixations))
    # separable kernel: (F, H) x (F, W) -> (H, W)
    gy = np.exp(-((rows[None, :] - cy[:, None]) ** 2) / (2.0 * sigma**2))
    gx = np.exp(-((cols[None, :] - cx[:, None]) ** 2) / (2.0 * sigma**2))
    values = np.einsum("f,fh,fw->hw", w, gy, gx)
    peak = values.max()
    if peak > 0:
        values = values / peak
    return Heatmap(values)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input pixels overlapping output cell i, weighted by overlap."""
    edges = np.arange(n_out + 1, dtype=np.float64) * (n_in / n_out)
    lo = np.arange(n_in, dtype=np.float64)
    overlap = np.clip(
        np.minimum(edges[1:, None], lo[None, :] + 1) - np.maximum(edges[:-1, None], lo[None, :]),
        0.0,
        None,
    )
    return overlap / overlap.sum(axis=1, keepdims=True)


def downsample_heatmap(hm: Heatmap, gw: int = 14, gh: int = 14) -> GridHeatmap:
    """Area-weighted mean pooling onto a ``gh x gw`` grid, rescaled to max 1."""
    if gw <= 0 or gh <= 0 or hm.width == 0 or hm.height == 0:
        raise ZeroDims("grid and heatmap dimensions must be positive")
    grid = _area_weights(hm.height, gh) @ hm.values @ _area_weights(hm.width, gw).T
    peak = grid.max()
    if peak > 0:
        grid = grid / peak
    return GridHeatmap(grid)


def separated_mask(gh: GridHeatmap, k: int = 49) -> PatchMask:
    n = gh.gw * gh.gh
    if not 1 <= k <= n:
        raise BadK(f"k must lie in [1, {n}], got {k}")
    flat = gh.values.reshape(-1)
    # stable sort on the negated values: equal values keep row-major order
    order = np.argsort(-flat, kind="stable")
    bits = np.zeros(n, dtype=bool)
    bits[order[:k]] = True
    return PatchMask(bits, gh.gw, gh.gh, variant="separated")


def gathered_mask(gh: GridHeatmap, ww: int = 7, wh: int | None = None) -> PatchMask:
    wh = ww if wh is None else wh
    if not (1 <= ww <= gh.gw and 1 <= wh <= gh.gh):
        raise BadWindow(f"window {ww}x{wh} does not fit grid {gh.gw}x{gh.gh}")
    r, c = divmod(int(np.argmax(gh.values)), gh.gw)
    r0 = min(max(r - wh // 2, 0), gh.gh - wh)
    c0 = min(max(c - ww // 2, 0), gh.gw - ww)
    grid = np.zeros((gh.gh, gh.gw), dtype=bool)
    grid[r0 : r0 + wh, c0 : c0 + ww] = True
    return PatchMask(grid.reshape(-1), gh.gw, gh.gh, variant="gathered")


def make_mask(gh: GridHeatmap, variant: str, k: int = 49, window: int = 7) -> PatchMask | None:
    if variant == "separated":
        return separated_mask(gh, k)
    if variant == "gathered":
        return gathered_mask(gh, window, window)
    if variant == "none":
        return None
    raise ValueError(f"unknown mask variant {variant!r}")


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, edge clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an ``H x W`` or ``H x W x C`` array (float64 result)."""
    a = np.asarray(arr, dtype=np.float64)
    my = _bilinear_matrix(a.shape[0], out_h)
    mx = _bilinear_matrix(a.shape[1], out_w)
    if a.ndim == 2:
        return my @ a @ mx.T
    return np.einsum("oh,hwc,pw->opc", my, a, mx)


def crop_and_resize(
    image: np.ndarray,
    hm: Heatmap,
    roi: tuple[int, int, int, int],
    out_size: int = 224,
) -> tuple[np.ndarray, Heatmap]:
    """Crop ``roi = (x0, y0, width, height)`` from image and heatmap alike."""
    image = np.asarray(image)
    if image.shape[:2] != hm.values.shape:
        raise ValueError("image and heatmap dimensions differ")
    x0, y0, w, h = roi
    if x0 < 0 or y0 < 0 or w <= 0 or h <= 0 or x0 + w > image.shape[1] or y0 + h > image.shape[0]:
        raise RoiOutOfBounds(f"roi {roi} outside image of shape {image.shape[:2]}")
    img = image[y0 : y0 + h, x0 : x0 + w]
    hv = hm.values[y0 : y0 + h, x0 : x0 + w]
    if (h, w) != (out_size, out_size):
        resized = resize_bilinear(img, out_size, out_size)
        if np.issubdtype(image.dtype, np.integer):
            info = np.iinfo(image.dtype)
            resized = np.clip(np.rint(resized), info.min, info.max)
        img = resized.astype(image.dtype, copy=False)
        hv = resize_bilinear(hv, out_size, out_size)
    else:
        img = img.copy()
        hv = hv.copy()
    peak = hv.max()
    if peak > 0:
        hv = hv / peak
    return img, Heatmap(hv)
