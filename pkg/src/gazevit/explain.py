"""Grad-CAM over patch tokens and a shortcut score for CAM mass inside a region."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimMismatch
from .vit import GazeViT, forward


@dataclass
class CamMap:
    values: np.ndarray  # (gh, gw) in [0, 1]
    target_class: int
    degenerate: bool = False
    upsampled: np.ndarray | None = None
    raw: np.ndarray | None = None  # rectified, before max-normalisation


def cam_from_gradients(activations: torch.Tensor, gradients: torch.Tensor) -> np.ndarray:
    """``relu(sum_d mean_pos(dlogit/dA_d) * A_d)`` for ``(P, D)`` activations, unnormalised."""
    weights = gradients.mean(dim=0)
    return torch.relu(activations @ weights).detach().double().numpy()


def grad_cam(
    model: GazeViT,
    image,
    mask=None,
    target_class: int | None = None,
    layer: int | None = None,
    upsample: bool = False,
) -> CamMap:
    """Grad-CAM for one image.

    The default target is the token sequence entering the last encoder layer
    (after re-injection, so every patch position is present).  The last
    layer's own patch outputs never reach the head, which reads the class row
    only, so they carry zero gradient.  ``layer=l`` with ``0 <= l < depth``
    selects the output of encoder layer ``l`` instead (0 = masked embeddings);
    positions absent there (dropped patches) get zero activation.
    Gradients are taken of the target logit only.
    """
    cfg = model.config
    model.eval()
    capture: dict = {}
    with torch.enable_grad():
        logits = forward(model, image, mask, capture=capture)
        if layer is None:
            z = capture.get("last_input", capture["masked"])
        elif 0 <= layer < cfg.depth:
            z = capture["layer_outputs"][layer - 1] if layer >= 1 else capture["masked"]
        else:
            raise ValueError(f"layer must be in [0, {cfg.depth - 1}]")
        if logits.shape[0] != 1:
            raise ValueError("grad_cam expects a single image")
        if target_class is None:
            target_class = int(logits[0].argmax())
        (grad,) = torch.autograd.grad(logits[0, target_class], z.tokens)
    model._last_logits = None

    kept = z.kept[0]
    acts = torch.zeros(cfg.num_patches, cfg.hidden_dim, dtype=z.tokens.dtype)
    grads = torch.zeros_like(acts)
    acts[kept] = z.tokens[0, 1:].detach()
    grads[kept] = grad[0, 1:]
    raw = cam_from_gradients(acts, grads).reshape(cfg.grid, cfg.grid)
    peak = raw.max()
    degenerate = not peak > 0
    values = np.zeros_like(raw) if degenerate else raw / peak
    up = None
    if upsample:
        t = torch.from_numpy(values)[None, None]
        up = F.interpolate(t, size=(cfg.image_size, cfg.image_size), mode="bilinear", align_corners=False)[0, 0].numpy()
    return CamMap(values, target_class, degenerate, up, raw)


def shortcut_score(cam: CamMap | np.ndarray, roi: np.ndarray) -> float:
    """Fraction of CAM mass inside ``roi`` (0 for an all-zero map)."""
    values = cam.values if isinstance(cam, CamMap) else np.asarray(cam, dtype=np.float64)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != values.shape:
        raise DimMismatch(f"roi shape {roi.shape} != cam shape {values.shape}")
    total = values.sum()
    if total <= 0:
        return 0.0
    return float(values[roi].sum() / total)


def overlay(image: np.ndarray, cam: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a [0,1] cam (already at image resolution) over a [0,1] image with viridis."""
    from matplotlib import colormaps

    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    heat = colormaps["viridis"](np.clip(cam, 0, 1))[:, :, :3]
    return (1 - alpha) * img + alpha * heat
