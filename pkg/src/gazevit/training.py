"""Dataset manifests, the optimisation loop and evaluation."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import dump_json, save_checkpoint
from .errors import EmptySplit, EmptyTrainSplit, MissingHeatmap
from .gaze import GridHeatmap, Heatmap, crop_and_resize, downsample_heatmap, make_mask
from .io import load_image, read_eghm
from .metrics import Metrics, compute_metrics, fmt
from .vit import GazeViT, ModelConfig, build_model

log = logging.getLogger(__name__)

HISTORY_HEADER = ["epoch", "split", "acc", "f1", "auc", "lr", "loss"]
MASK_VARIANTS = ("separated", "gathered", "none")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    base_lr: float = 1e-4
    warmup_epochs: int = 8
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mask_variant: str = "separated"
    min_lr: float = 0.0
    mask_k: int = 49
    window: int = 7
    augment: bool = True
    flip_p: float = 0.5
    max_shift_px: int = 8
    test_time_mask: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mask_variant not in MASK_VARIANTS:
            raise ValueError(f"mask_variant must be one of {MASK_VARIANTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Record:
    image: str
    label: int
    split: str
    heatmap: str | None = None


@dataclass
class DatasetManifest:
    classes: list[str]
    records: list[Record]
    oversample: dict[str, int] = field(default_factory=dict)
    root: Path = Path(".")

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        records = [
            Record(image=r["image"], label=int(r["label"]), split=r["split"], heatmap=r.get("heatmap"))
            for r in raw["records"]
        ]
        m = cls(list(raw["classes"]), records, {str(k): int(v) for k, v in raw.get("oversample", {}).items()}, path.parent)
        m.validate()
        return m

    def validate(self) -> None:
        for r in self.records:
            if not 0 <= r.label < len(self.classes):
                raise ValueError(f"label {r.label} out of range for {len(self.classes)} classes")
            if r.split not in ("train", "test"):
                raise ValueError(f"unknown split {r.split!r}")

    def to_json(self) -> dict:
        recs = []
        for r in self.records:
            d = {"image": r.image, "label": r.label, "split": r.split}
            if r.heatmap is not None:
                d["heatmap"] = r.heatmap
            recs.append(d)
        return {"classes": self.classes, "records": recs, "oversample": self.oversample}

    def save(self, path: str | Path) -> None:
        dump_json(Path(path), self.to_json())

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def repeat_factor(self, label: int) -> int:
        name = self.classes[label]
        return int(self.oversample.get(name, self.oversample.get(str(label), 1)))


@dataclass
class SplitData:
    images: np.ndarray  # (n, C, H, W) float32
    labels: np.ndarray
    heatmaps: np.ndarray | None  # (n, H, W) float64


def lr_schedule(step: float, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup from 0, then cosine decay reaching ``min_lr`` at the last step."""
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warm:
        return cfg.base_lr * step / warm
    span = max(total - 1 - warm, 1)
    p = min((step - warm) / span, 1.0)
    return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * (1 + math.cos(math.pi * p)) / 2


def load_split(manifest: DatasetManifest, split: str, config: ModelConfig, need_heatmaps: bool) -> SplitData:
    recs = manifest.split(split)
    size = config.image_size
    images, heatmaps = [], []
    for r in recs:
        img = load_image(manifest.root / r.image)
        if img.shape[2] != config.channels:
            img = np.repeat(img, 3, axis=2) if config.channels == 3 else img.mean(axis=2, keepdims=True)
        hm = None
        if r.heatmap is not None:
            hm = read_eghm(manifest.root / r.heatmap)
        elif need_heatmaps:
            raise MissingHeatmap(f"record {r.image} has no heatmap")
        if img.shape[:2] != (size, size):
            hm_in = hm if hm is not None else Heatmap(np.ones(img.shape[:2]))
            img, hm_out = crop_and_resize(img, hm_in, (0, 0, img.shape[1], img.shape[0]), size)
            hm = hm_out if hm is not None else None
        images.append(img.transpose(2, 0, 1))
        if need_heatmaps:
            heatmaps.append(hm.values)
    return SplitData(
        images=np.stack(images).astype(np.float32) if images else np.zeros((0, config.channels, size, size), np.float32),
        labels=np.array([r.label for r in recs], dtype=np.int64),
        heatmaps=np.stack(heatmaps) if need_heatmaps and heatmaps else None,
    )


def masks_from_heatmaps(heatmaps: np.ndarray, config: ModelConfig, cfg: TrainConfig) -> np.ndarray | None:
    if cfg.mask_variant == "none":
        return None
    g = config.grid
    out = np.empty((len(heatmaps), g * g), dtype=bool)
    for i, hm in enumerate(heatmaps):
        out[i] = make_mask(downsample_heatmap(Heatmap(hm), g, g), cfg.mask_variant, cfg.mask_k, cfg.window).bits
    return out


def augment_batch(
    images: np.ndarray, heatmaps: np.ndarray | None, rng: np.random.Generator, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray | None]:
    """Random horizontal flip and translation, applied identically to image and heatmap."""
    n, _, H, W = images.shape
    flips = rng.random(n) < cfg.flip_p
    s = cfg.max_shift_px
    shifts = rng.integers(-s, s + 1, size=(n, 2)) if s > 0 else np.zeros((n, 2), dtype=int)
    out_img = np.empty_like(images)
    out_hm = None if heatmaps is None else np.empty_like(heatmaps)
    for i in range(n):
        img = images[i, :, :, ::-1] if flips[i] else images[i]
        dy, dx = shifts[i]
        pad = np.pad(img, ((0, 0), (s, s), (s, s)), mode="edge")
        out_img[i] = pad[:, s + dy : s + dy + H, s + dx : s + dx + W]
        if heatmaps is not None:
            hm = heatmaps[i, :, ::-1] if flips[i] else heatmaps[i]
            hp = np.pad(hm, s, mode="constant")
            out_hm[i] = hp[s + dy : s + dy + H, s + dx : s + dx + W]
    return out_img, out_hm


def predict(model: GazeViT, images: np.ndarray, masks: np.ndarray | None, batch_size: int = 64) -> np.ndarray:
    """Softmax probabilities, computed in fixed-order batches without gradients."""
    model.eval()
    outs = []
    with torch.no_grad():
        for s in range(0, len(images), batch_size):
            x = torch.from_numpy(images[s : s + batch_size])
            m = None if masks is None else torch.from_numpy(masks[s : s + batch_size])
            outs.append(torch.softmax(model(x, m), dim=1).double().numpy())
    return np.concatenate(outs) if outs else np.zeros((0, model.config.num_classes))


def evaluate_arrays(
    model: GazeViT, data: SplitData, cfg: TrainConfig, masks: np.ndarray | None = None
) -> tuple[Metrics, float]:
    if len(data.labels) == 0:
        raise EmptySplit("evaluation split is empty")
    if masks is None and cfg.test_time_mask and cfg.mask_variant != "none":
        masks = masks_from_heatmaps(data.heatmaps, model.config, cfg)
    probs = predict(model, data.images, masks if cfg.test_time_mask else None, cfg.batch_size)
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(len(probs)), data.labels], 1e-300, None))))
    return compute_metrics(probs, data.labels, model.config.num_classes), loss


def evaluate(model: GazeViT, manifest: DatasetManifest, split: str = "test", cfg: TrainConfig = TrainConfig()) -> Metrics:
    need = cfg.test_time_mask and cfg.mask_variant != "none"
    data = load_split(manifest, split, model.config, need)
    return evaluate_arrays(model, data, cfg)[0]


@dataclass
class TrainResult:
    model: GazeViT
    history: list[dict]
    steps: int
    best_epoch: int
    best_dir: Path | None = None
    last_dir: Path | None = None
    best_state: dict | None = None


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for h in history:
            w.writerow([h["epoch"], h["split"], fmt(h["acc"]), fmt(h["f1"]), fmt(h["auc"]), fmt(h["lr"]), fmt(h["loss"])])


def train(
    manifest: DatasetManifest,
    config: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    train_data: SplitData | None = None,
    test_data: SplitData | None = None,
) -> TrainResult:
    """Train from scratch; writes ``best/``, ``last/`` and ``history.csv`` when ``out_dir`` is given.

    Preloaded ``train_data``/``test_data`` skip file loading (used by the
    ablation grid, which reuses one dataset for many runs).
    """
    need_hm = cfg.mask_variant != "none"
    if train_data is None:
        if not manifest.split("train"):
            raise EmptyTrainSplit("manifest has no train records")
        train_data = load_split(manifest, "train", config, need_hm)
    if len(train_data.labels) == 0:
        raise EmptyTrainSplit("manifest has no train records")
    if test_data is None and manifest.split("test"):
        test_data = load_split(manifest, "test", config, need_hm and cfg.test_time_mask)

    # oversampling by record repetition
    reps = np.array([manifest.repeat_factor(int(l)) for l in train_data.labels])
    index = np.repeat(np.arange(len(train_data.labels)), reps)
    steps_per_epoch = math.ceil(len(index) / cfg.batch_size)

    rng = np.random.default_rng(cfg.seed)
    model = build_model(config, cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=0.0, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    static_masks = None
    if need_hm and not cfg.augment:
        static_masks = masks_from_heatmaps(train_data.heatmaps, config, cfg)
    test_masks = None
    if test_data is not None and need_hm and cfg.test_time_mask:
        test_masks = masks_from_heatmaps(test_data.heatmaps, config, cfg)

    history: list[dict] = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = index[rng.permutation(len(index))]
        probs_all, labels_all, loss_sum = [], [], 0.0
        lr = 0.0
        for b in range(steps_per_epoch):
            sel = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            imgs = train_data.images[sel]
            hms = train_data.heatmaps[sel] if need_hm else None
            if cfg.augment:
                imgs, hms = augment_batch(imgs, hms, rng, cfg)
                masks = masks_from_heatmaps(hms, config, cfg) if need_hm else None
            else:
                masks = static_masks[sel] if static_masks is not None else None
            labels = torch.from_numpy(train_data.labels[sel])
            lr = lr_schedule(step, cfg, steps_per_epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            logits = model(torch.from_numpy(np.ascontiguousarray(imgs)), None if masks is None else torch.from_numpy(masks))
            loss = F.cross_entropy(logits, labels)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
            loss_sum += loss.item() * len(sel)
            probs_all.append(torch.softmax(logits.detach(), 1).double().numpy())
            labels_all.append(train_data.labels[sel])
        model._last_logits = None
        tm = compute_metrics(np.concatenate(probs_all), np.concatenate(labels_all), config.num_classes)
        history.append({"epoch": epoch, "split": "train", **tm.as_row(), "lr": lr, "loss": loss_sum / len(index)})
        if test_data is not None and len(test_data.labels):
            em, eloss = evaluate_arrays(model, test_data, cfg, test_masks)
            history.append({"epoch": epoch, "split": "test", **em.as_row(), "lr": lr, "loss": eloss})
            if em.acc > best_acc:
                best_acc, best_epoch = em.acc, epoch
                best_state = copy.deepcopy(model.state_dict())
            log.info("epoch %d train acc %.4f loss %.4f | test acc %.4f", epoch, tm.acc, loss_sum / len(index), em.acc)
        else:
            log.info("epoch %d train acc %.4f loss %.4f", epoch, tm.acc, loss_sum / len(index))
    model.eval()

    result = TrainResult(model, history, step, best_epoch, best_state=best_state)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"seed": cfg.seed, "train_config": cfg.to_dict(), "history": history}
        result.last_dir = save_checkpoint(out / "last", model, epoch=cfg.epochs, **meta)
        if best_state is not None:
            best = build_model(config, cfg.seed)
            best.load_state_dict(best_state)
            result.best_dir = save_checkpoint(out / "best", best, epoch=best_epoch, **meta)
        write_history(out / "history.csv", history)
    return result
