"""File formats: gaze CSV, fixation CSV, EGHM heatmaps, PGM export, mask text, images."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .gaze import Fixation, GazeTrace, Heatmap, PatchMask

EGHM_MAGIC = b"EGHM"
GAZE_HEADER = ["t_ms", "x_px", "y_px", "valid"]
FIXATION_HEADER = ["cx", "cy", "start_ms", "end_ms", "duration_ms"]


def read_gaze_csv(path: str | Path) -> GazeTrace:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != GAZE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(GAZE_HEADER)}")
        rows = list(reader)
    return GazeTrace(
        t=[float(r["t_ms"]) for r in rows],
        x=[float(r["x_px"]) for r in rows],
        y=[float(r["y_px"]) for r in rows],
        valid=[r["valid"].strip() == "1" for r in rows],
    )


def write_gaze_csv(path: str | Path, trace: GazeTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAZE_HEADER)
        for t, x, y, v in zip(trace.t, trace.x, trace.y, trace.valid):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), int(v)])


def write_fixations_csv(path: str | Path, fixations: list[Fixation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXATION_HEADER)
        for f in fixations:
            w.writerow([repr(f.cx), repr(f.cy), repr(f.start_ms), repr(f.end_ms), repr(f.duration_ms)])


def read_fixations_csv(path: str | Path) -> list[Fixation]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            Fixation(float(r["cx"]), float(r["cy"]), float(r["start_ms"]), float(r["end_ms"]))
            for r in csv.DictReader(fh)
        ]


def write_eghm(path: str | Path, values: np.ndarray) -> None:
    """16-byte header (magic, u32 width, u32 height, u32 0) + float32 LE row-major."""
    values = np.asarray(values)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(EGHM_MAGIC + struct.pack("<III", w, h, 0))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_eghm(path: str | Path) -> Heatmap:
    raw = Path(path).read_bytes()
    if raw[:4] != EGHM_MAGIC:
        raise ValueError(f"{path}: not an EGHM file")
    w, h, _ = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw, dtype="<f4", count=w * h, offset=16)
    return Heatmap(data.reshape(h, w).astype(np.float64))


def write_pgm16(path: str | Path, values: np.ndarray) -> None:
    """Binary 16-bit PGM (P5), values scaled from [0, max] to [0, 65535]."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    peak = values.max()
    scaled = values / peak if peak > 0 else values
    data = np.rint(np.clip(scaled, 0, 1) * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_mask_txt(path: str | Path, mask: PatchMask) -> None:
    lines = [" ".join(str(int(b)) for b in row) for row in mask.grid()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mask_txt(path: str | Path) -> PatchMask:
    rows = [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    grid = np.array([[int(v) for v in row] for row in rows], dtype=bool)
    return PatchMask(grid.reshape(-1), gw=grid.shape[1], gh=grid.shape[0])


def load_image(path: str | Path) -> np.ndarray:
    """Read PNG/PGM as float32 ``H x W x C`` in [0, 1] (8-bit, 16-bit or RGB)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32)


def save_image_u8(path: str | Path, arr: np.ndarray) -> None:
    """Save a [0, 1] float ``H x W`` (grayscale) or ``H x W x 3`` array as 8-bit PNG."""
    data = np.rint(np.clip(np.asarray(arr, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    Image.fromarray(data).save(path, format="PNG")
