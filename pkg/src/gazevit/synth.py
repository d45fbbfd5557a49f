"""Synthetic lesion images with a plantable corner-marker shortcut and lesion-aligned gaze.

The label depends only on the lesion texture frequency.  A bright square
marker in the top-left corner agrees with the label with probability
``rho_train`` on the train split and ``rho_test`` on the test split.  Gaze
traces fixate the lesion and never the marker; heatmaps are produced by
running those traces through the fixation pipeline.

Every record draws from its own generator seeded by ``(seed, split, index)``
so records can be generated in any order or in parallel.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleSpec
from .gaze import FixationConfig, GazeTrace, Heatmap, detect_fixations, render_heatmap
from .io import save_image_u8, write_eghm
from .training import DatasetManifest, Record

SPLIT_IDS = {"train": 0, "test": 1}


@dataclass(frozen=True)
class LesionSpec:
    radius_range: tuple[float, float] = (6.0, 9.0)
    intensity_range: tuple[float, float] = (0.45, 0.6)
    amplitude_range: tuple[float, float] = (0.2, 0.3)
    # texture frequency (cycles / px) per class: 1/2, 2 and 3 cycles per 8 px patch
    frequencies: tuple[float, ...] = (0.0625, 0.25, 0.375)
    # lesion centres are drawn uniformly from [lo, hi] * image_size on both axes
    center_range: tuple[float, float] = (0.36, 0.64)


@dataclass(frozen=True)
class ShortcutSpec:
    size_px: int = 6
    margin_px: int = 1
    intensity: float = 1.0
    rho_train: float = 0.95
    rho_test: float = 0.5


@dataclass(frozen=True)
class GazeSpec:
    fixations: int = 3
    jitter_px: float = 2.0
    sigma_px: float = 7.0
    sample_rate: float = 250.0
    duration_range_ms: tuple[float, float] = (150.0, 400.0)
    dispersion_px: float = 10.0
    min_duration_ms: float = 100.0


@dataclass(frozen=True)
class SynthSpec:
    """Defaults target 64 x 64 images with 8 px patches; see :meth:`for_size`."""

    image_size: int = 64
    patch_size: int = 8
    num_classes: int = 2
    n_train: int = 2000
    n_test: int = 500
    noise_std: float = 0.05
    lesion: LesionSpec = field(default_factory=LesionSpec)
    shortcut: ShortcutSpec = field(default_factory=ShortcutSpec)
    gaze: GazeSpec = field(default_factory=GazeSpec)

    @classmethod
    def for_size(cls, image_size: int, patch_size: int, **kw) -> SynthSpec:
        """Scale all pixel quantities of the 64 px defaults to ``image_size``."""
        s = image_size / 64.0
        base = cls()
        les, sc, gz = base.lesion, base.shortcut, base.gaze
        return replace(
            cls(image_size=image_size, patch_size=patch_size, **kw),
            lesion=replace(
                les,
                radius_range=tuple(r * s for r in les.radius_range),
                frequencies=tuple(f / s for f in les.frequencies),
            ),
            shortcut=replace(sc, size_px=max(1, round(sc.size_px * s)), margin_px=round(sc.margin_px * s)),
            gaze=replace(gz, jitter_px=gz.jitter_px * s, sigma_px=gz.sigma_px * s, dispersion_px=gz.dispersion_px * s),
        )

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    def marker_rect(self) -> tuple[int, int, int, int]:
        m, s = self.shortcut.margin_px, self.shortcut.size_px
        return m, m, m + s, m + s  # x0, y0, x1, y1 (exclusive)

    def marker_cells(self) -> np.ndarray:
        """Grid cells overlapped by the marker square, ``(grid, grid)`` bool."""
        x0, y0, x1, y1 = self.marker_rect()
        cells = np.zeros((self.grid, self.grid), dtype=bool)
        p = self.patch_size
        cells[y0 // p : (y1 - 1) // p + 1, x0 // p : (x1 - 1) // p + 1] = True
        return cells

    def validate(self) -> None:
        if self.image_size % self.patch_size:
            raise InfeasibleSpec("image_size must be divisible by patch_size")
        sc = self.shortcut
        if not (0 <= sc.rho_train <= 1 and 0 <= sc.rho_test <= 1):
            raise InfeasibleSpec("correlations must lie in [0, 1]")
        if self.num_classes > len(self.lesion.frequencies):
            raise InfeasibleSpec("not enough texture frequencies for num_classes")
        lo, hi = self.lesion.center_range
        r = self.lesion.radius_range[1]
        lx0 = lo * self.image_size - r
        lx1 = hi * self.image_size + r
        x0, y0, x1, y1 = self.marker_rect()
        if lx0 < 0 or lx1 > self.image_size:
            raise InfeasibleSpec("lesion placement region leaves the image")
        if lx0 < x1 and lx0 < y1:
            raise InfeasibleSpec("marker and lesion placement regions overlap")


@dataclass
class SynthRecord:
    record_id: int
    split: str
    index: int
    image: np.ndarray  # (H, W) float in [0, 1]
    label: int
    heatmap: Heatmap
    lesion_center: tuple[float, float]  # (x, y) px
    lesion_radius: float
    lesion_roi: np.ndarray  # (grid, grid) bool
    shortcut_present: bool
    fixations: list = field(default_factory=list)


def record_rng(seed: int, split: str, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, SPLIT_IDS[split], index, stream])


def marker_label(spec: SynthSpec) -> int:
    """The class the marker 'points to' (last class)."""
    return spec.num_classes - 1


def lesion_roi(spec: SynthSpec, cx: float, cy: float, r: float) -> np.ndarray:
    """Grid cells containing at least one lesion pixel centre."""
    yy, xx = np.mgrid[0 : spec.image_size, 0 : spec.image_size]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    g, p = spec.grid, spec.patch_size
    return inside.reshape(g, p, g, p).any(axis=(1, 3))


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bg = np.full((size, size), 0.3)
    for _ in range(4):
        bx, by = rng.uniform(0, size, 2)
        s = rng.uniform(0.15, 0.35) * size
        bg += rng.uniform(-0.1, 0.1) * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * s * s))
    return bg


def generate_gaze_trace(record: SynthRecord, spec: SynthSpec, seed: int) -> GazeTrace:
    """Raw samples: a saccade from the far side of the image, then fixation clusters on the lesion."""
    gz = spec.gaze
    rng = record_rng(seed, record.split, record.index, stream=1)
    dt = 1000.0 / gz.sample_rate
    cx, cy = record.lesion_center
    size = spec.image_size
    # entry point: the non-marker corner region farthest from the lesion
    corners = [(size * 0.85, size * 0.15), (size * 0.15, size * 0.85), (size * 0.85, size * 0.85)]
    ex, ey = max(corners, key=lambda c: (c[0] - cx) ** 2 + (c[1] - cy) ** 2)
    ts, xs, ys = [], [], []
    t = 0.0
    for frac in (0.0, 0.25, 0.5):
        ts.append(t)
        xs.append(ex + frac * (cx - ex))
        ys.append(ey + frac * (cy - ey))
        t += dt
    noise = gz.jitter_px / 4.0
    for _ in range(gz.fixations):
        if gz.jitter_px > 0:
            ang = rng.uniform(0, 2 * np.pi)
            rad = gz.jitter_px * np.sqrt(rng.uniform())
            fx, fy = cx + rad * np.cos(ang), cy + rad * np.sin(ang)
        else:
            fx, fy = cx, cy
        n = int(rng.uniform(*gz.duration_range_ms) / dt) + 1
        off = np.clip(rng.normal(0, noise, (n, 2)), -2 * noise, 2 * noise) if noise > 0 else np.zeros((n, 2))
        for k in range(n):
            ts.append(t)
            xs.append(fx + off[k, 0])
            ys.append(fy + off[k, 1])
            t += dt
    return GazeTrace(ts, xs, ys, np.ones(len(ts), dtype=bool), gz.sample_rate)


def make_record(spec: SynthSpec, seed: int, split: str, index: int) -> SynthRecord:
    """Generate one record from its own substream."""
    rng = record_rng(seed, split, index)
    size = spec.image_size
    les, sc = spec.lesion, spec.shortcut
    label = index % spec.num_classes
    rho = sc.rho_train if split == "train" else sc.rho_test
    agrees = bool(rng.uniform() < rho)
    is_marker_class = label == marker_label(spec)
    present = is_marker_class if agrees else not is_marker_class

    lo, hi = les.center_range
    cx, cy = rng.uniform(lo * size, hi * size, 2)
    r = rng.uniform(*les.radius_range)
    intensity = rng.uniform(*les.intensity_range)
    amp = rng.uniform(*les.amplitude_range)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    freq = les.frequencies[label]

    img = _background(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    alpha = np.clip(r - dist + 0.5, 0.0, 1.0)
    texture = intensity + amp * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    img = img * (1 - alpha) + texture * alpha
    img = img + rng.normal(0, spec.noise_std, img.shape)
    img = np.clip(img, 0.0, 1.0)
    if present:
        x0, y0, x1, y1 = spec.marker_rect()
        img[y0:y1, x0:x1] = sc.intensity

    rec = SynthRecord(
        record_id=index if split == "train" else spec.n_train + index,
        split=split,
        index=index,
        image=img,
        label=label,
        heatmap=Heatmap(np.zeros((size, size))),
        lesion_center=(float(cx), float(cy)),
        lesion_radius=float(r),
        lesion_roi=lesion_roi(spec, cx, cy, r),
        shortcut_present=present,
    )
    trace = generate_gaze_trace(rec, spec, seed)
    fix_cfg = FixationConfig(spec.gaze.dispersion_px, spec.gaze.min_duration_ms)
    rec.fixations = detect_fixations(trace, fix_cfg, bounds=(size, size))
    rec.heatmap = render_heatmap(rec.fixations, size, size, spec.gaze.sigma_px, duration_weighted=True)
    return rec


def _make_record_args(args: tuple) -> SynthRecord:
    return make_record(*args)


def generate_records(spec: SynthSpec, seed: int, workers: int = 1) -> list[SynthRecord]:
    spec.validate()
    jobs = [(spec, seed, "train", i) for i in range(spec.n_train)]
    jobs += [(spec, seed, "test", i) for i in range(spec.n_test)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_make_record_args, jobs, chunksize=32))
    return [make_record(*j) for j in jobs]


def generate_dataset(
    spec: SynthSpec, seed: int, out_dir: str | Path, workers: int = 1
) -> tuple[DatasetManifest, list[SynthRecord]]:
    """Write PNG images, EGHM heatmaps, ``manifest.json``, ``ground_truth.csv`` and ``lesion_roi.csv``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    records = generate_records(spec, seed, workers)
    manifest_records = []
    for rec in records:
        stem = f"{rec.split}_{rec.index:05d}"
        save_image_u8(out / "images" / f"{stem}.png", rec.image)
        write_eghm(out / "heatmaps" / f"{stem}.eghm", rec.heatmap.values)
        manifest_records.append(Record(f"images/{stem}.png", rec.label, rec.split, f"heatmaps/{stem}.eghm"))
    classes = [f"texture_{c}" for c in range(spec.num_classes)]
    manifest = DatasetManifest(classes, manifest_records, {}, out)
    manifest.save(out / "manifest.json")
    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "lesion_cx", "lesion_cy", "shortcut_present", "label"])
        for rec in records:
            w.writerow([rec.record_id, repr(rec.lesion_center[0]), repr(rec.lesion_center[1]), int(rec.shortcut_present), rec.label])
    with open(out / "lesion_roi.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "lesion_radius", "cells"])
        for rec in records:
            cells = " ".join(str(i) for i in np.flatnonzero(rec.lesion_roi))
            w.writerow([rec.record_id, repr(rec.lesion_radius), cells])
    return manifest, records


def read_lesion_rois(path: str | Path, grid: int) -> dict[int, np.ndarray]:
    rois = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            roi = np.zeros(grid * grid, dtype=bool)
            if row["cells"].strip():
                roi[[int(c) for c in row["cells"].split()]] = True
            rois[int(row["record_id"])] = roi.reshape(grid, grid)
    return rois
