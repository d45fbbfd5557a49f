"""ViT-S backbone with gaze masking and initial-embedding re-injection.

Forward pipeline::

    patch_embed -> apply_mask -> layers 1..L-1 -> reinject -> layer L
                -> LayerNorm -> class-token row -> head

With ``mask=None`` and ``reinject_enabled=False`` this is a plain ViT.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigMismatch, MaskLengthMismatch, NoForwardState, ShapeMismatch
from .gaze import PatchMask

MASK_MODES = ("drop", "zero")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 1
    hidden_dim: int = 384
    depth: int = 12
    heads: int = 6
    mlp_ratio: int = 4
    num_classes: int = 3
    mask_mode: str = "drop"
    reinject_enabled: bool = True

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if self.depth < 0 or self.num_classes < 1:
            raise ValueError("depth must be >= 0 and num_classes >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def architecture(self) -> dict:
        """Fields that determine the parameter tensors (masking flags excluded)."""
        d = asdict(self)
        d.pop("mask_mode")
        d.pop("reinject_enabled")
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_count(config: ModelConfig) -> int:
    """Closed-form number of learnable scalars."""
    D, L, C = config.hidden_dim, config.depth, config.num_classes
    hidden = config.mlp_ratio * D
    per_layer = (
        2 * D  # LN1
        + 3 * D * D + 3 * D  # Q, K, V
        + D * D + D  # output projection
        + 2 * D  # LN2
        + D * hidden + hidden  # MLP in
        + hidden * D + D  # MLP out
    )
    return (
        config.patch_dim * D  # patch projection E, no bias
        + D  # class token
        + (config.num_patches + 1) * D  # position embedding
        + L * per_layer
        + 2 * D  # final LN
        + D * C + C  # head
    )


@dataclass
class TokenSequence:
    """Batched tokens ``(B, M+1, D)``; ``kept`` holds original patch indices of rows 1..M."""

    tokens: torch.Tensor
    kept: torch.Tensor

    @property
    def length(self) -> int:
        return self.tokens.shape[1]


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim, eps=1e-6)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim, eps=1e-6)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def attention(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, T, D = x.shape
        hd = D // self.heads
        q, k, v = self.qkv(x).reshape(B, T, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, T, D)
        return self.proj(out), attn

    def forward(self, x: torch.Tensor, attn_log: list | None = None) -> torch.Tensor:
        a, attn = self.attention(self.ln1(x))
        if attn_log is not None:
            attn_log.append(attn.detach())
        x = x + a
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


class GazeViT(nn.Module):
    """ViT / EG-ViT classifier.  Both modes share exactly the same parameters."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        D = config.hidden_dim
        self.patch_proj = nn.Linear(config.patch_dim, D, bias=False)
        self.cls_token = nn.Parameter(torch.zeros(D))
        self.pos_embed = nn.Parameter(torch.zeros(config.num_patches + 1, D))
        self.layers = nn.ModuleList(
            EncoderLayer(D, config.heads, config.mlp_ratio) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(D, eps=1e-6)
        self.head = nn.Linear(D, config.num_classes)
        self._last_logits: torch.Tensor | None = None
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.trunc_normal_(self.pos_embed, std=0.02, a=-0.04, b=0.04)
        nn.init.zeros_(self.cls_token)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(
        self,
        images: torch.Tensor,
        mask=None,
        *,
        shape_log: list | None = None,
        attn_log: list | None = None,
        capture: dict | None = None,
    ) -> torch.Tensor:
        return forward(self, images, mask, shape_log=shape_log, attn_log=attn_log, capture=capture)

    def backward(self, grad_logits: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
        """Backpropagate ``grad_logits`` (dLoss/dlogits) from the last forward call."""
        logits = self._last_logits
        if logits is None or not logits.requires_grad:
            raise NoForwardState("no retained forward pass to differentiate")
        self._last_logits = None
        if grad_logits is None:
            grad_logits = torch.ones_like(logits)
        params = dict(self.named_parameters())
        grads = torch.autograd.grad(logits, list(params.values()), grad_logits, allow_unused=True)
        return {
            name: torch.zeros_like(p) if g is None else g
            for (name, p), g in zip(params.items(), grads)
        }


def build_model(config: ModelConfig, seed: int = 0) -> GazeViT:
    torch.manual_seed(seed)
    return GazeViT(config)


def to_tensor_images(images, config: ModelConfig | None = None) -> torch.Tensor:
    """Accept ``(B,C,H,W)`` tensors or numpy ``H x W x C`` / ``B x H x W x C`` rasters."""
    if isinstance(images, np.ndarray):
        arr = images
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim == 3:
            arr = arr[None]
        images = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float()
    elif images.ndim == 3:
        images = images[None]
    if config is not None and images.shape[1] == 1 and config.channels == 3:
        images = images.expand(-1, 3, -1, -1)
    return images


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    """``(B, C, H, W) -> (B, N, P*P*C)``; patches row-major, pixels flattened (row, col, channel)."""
    B, C, H, W = images.shape
    gh, gw = H // patch, W // patch
    x = images.reshape(B, C, gh, patch, gw, patch).permute(0, 2, 4, 3, 5, 1)
    return x.reshape(B, gh * gw, patch * patch * C)


def patch_embed(images: torch.Tensor, model: GazeViT) -> TokenSequence:
    cfg = model.config
    images = to_tensor_images(images, cfg)
    if images.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ShapeMismatch(
            f"expected (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), got {tuple(images.shape)}"
        )
    images = images.to(model.pos_embed.dtype)
    B = images.shape[0]
    patches = patchify(images, cfg.patch_size) @ model.patch_proj.weight.T
    cls = model.cls_token.expand(B, 1, -1)
    tokens = torch.cat([cls, patches], dim=1) + model.pos_embed
    kept = torch.arange(cfg.num_patches).expand(B, -1)
    return TokenSequence(tokens, kept)


def as_mask_tensor(mask, batch: int, n: int) -> torch.Tensor:
    """Normalise masks (PatchMask, list of PatchMask, array, tensor) to bool ``(B, N)``."""
    if isinstance(mask, PatchMask):
        mask = mask.bits
    elif isinstance(mask, (list, tuple)) and mask and isinstance(mask[0], PatchMask):
        mask = np.stack([m.bits for m in mask])
    if isinstance(mask, np.ndarray):
        mask = torch.from_numpy(np.ascontiguousarray(mask))
    mask = mask.to(torch.bool)
    if mask.ndim == 1:
        mask = mask.expand(batch, -1)
    if mask.shape != (batch, n):
        raise MaskLengthMismatch(f"mask shape {tuple(mask.shape)} != ({batch}, {n})")
    return mask


def apply_mask(z0: TokenSequence, mask: torch.Tensor, mode: str = "drop") -> TokenSequence:
    B, T, D = z0.tokens.shape
    n = T - 1
    if z0.kept.shape[1] != n:
        raise ValueError("apply_mask expects an unmasked sequence")
    mask = as_mask_tensor(mask, B, n)
    if mode == "zero":
        patches = z0.tokens[:, 1:] * mask.unsqueeze(-1).to(z0.tokens.dtype)
        return TokenSequence(torch.cat([z0.tokens[:, :1], patches], dim=1), z0.kept)
    if mode != "drop":
        raise ValueError(f"unknown mask mode {mode!r}")
    counts = mask.sum(dim=1)
    k = int(counts[0])
    if k < 1 or bool((counts != k).any()):
        raise MaskLengthMismatch("drop mode needs the same positive k for every sample")
    # stable sort puts kept positions first, in ascending patch order
    kept = torch.argsort((~mask).to(torch.int8), dim=1, stable=True)[:, :k]
    rows = torch.gather(z0.tokens[:, 1:], 1, kept.unsqueeze(-1).expand(-1, -1, D))
    return TokenSequence(torch.cat([z0.tokens[:, :1], rows], dim=1), kept)


def encoder_layer_forward(z: TokenSequence, layer: EncoderLayer, attn_log: list | None = None) -> TokenSequence:
    return TokenSequence(layer(z.tokens, attn_log), z.kept)


def reinject(z_pre_last: TokenSequence, z0_full: TokenSequence, mask: torch.Tensor) -> TokenSequence:
    """Restore all N positions before the last layer.

    class row: taken from ``z_pre_last`` unchanged; masked patch: ``z0_full`` row;
    kept patch: ``z_pre_last`` row + ``z0_full`` row.
    """
    B, T, D = z0_full.tokens.shape
    n = T - 1
    mask = as_mask_tensor(mask, B, n)
    idx = z_pre_last.kept.unsqueeze(-1).expand(-1, -1, D)
    scattered = torch.zeros_like(z0_full.tokens[:, 1:]).scatter(1, idx, z_pre_last.tokens[:, 1:])
    scattered = scattered * mask.unsqueeze(-1).to(scattered.dtype)
    patches = z0_full.tokens[:, 1:] + scattered
    tokens = torch.cat([z_pre_last.tokens[:, :1], patches], dim=1)
    return TokenSequence(tokens, z0_full.kept)


def forward(
    model: GazeViT,
    images,
    mask=None,
    *,
    shape_log: list | None = None,
    attn_log: list | None = None,
    capture: dict | None = None,
) -> torch.Tensor:
    """Logits ``(B, num_classes)``.

    ``shape_log`` receives the token count seen by each encoder layer;
    ``capture`` receives ``z0``, ``masked``, ``pre_last``, ``last_input``,
    ``layer_outputs``, ``final``.
    """
    cfg = model.config
    z0 = patch_embed(images, model)
    B = z0.tokens.shape[0]
    full_mask = None if mask is None else as_mask_tensor(mask, B, cfg.num_patches)
    z = z0 if full_mask is None else apply_mask(z0, full_mask, cfg.mask_mode)
    if capture is not None:
        capture["z0"] = z0
        capture["masked"] = z
        capture["layer_outputs"] = []
    layers = list(model.layers)
    for layer in layers[:-1]:
        if shape_log is not None:
            shape_log.append(z.length)
        z = encoder_layer_forward(z, layer, attn_log)
        if capture is not None:
            capture["layer_outputs"].append(z)
    if layers:
        if cfg.reinject_enabled:
            if capture is not None:
                capture["pre_last"] = z
            ones = torch.ones(B, cfg.num_patches, dtype=torch.bool)
            z = reinject(z, z0, ones if full_mask is None else full_mask)
        if capture is not None:
            capture["last_input"] = z
        if shape_log is not None:
            shape_log.append(z.length)
        z = encoder_layer_forward(z, layers[-1], attn_log)
        if capture is not None:
            capture["layer_outputs"].append(z)
    if capture is not None:
        capture["final"] = z
    logits = model.head(model.norm(z.tokens[:, 0]))
    model._last_logits = logits if logits.requires_grad else None
    return logits


def load_vanilla_weights(source: GazeViT | dict, config: ModelConfig, source_config: ModelConfig | None = None) -> GazeViT:
    """Copy vanilla-ViT weights into an EG-ViT of ``config`` (identity mapping)."""
    if isinstance(source, GazeViT):
        source_config = source.config
        state = source.state_dict()
    else:
        state = source
        if source_config is None:
            raise ValueError("source_config is required when loading from a state dict")
    if source_config.architecture() != config.architecture():
        raise ConfigMismatch("source and target architectures differ")
    target = GazeViT(config)
    target.load_state_dict({k: v.detach().clone() for k, v in state.items()}, strict=True)
    return target


def vanilla_config(config: ModelConfig) -> ModelConfig:
    return replace(config, reinject_enabled=False)


def batch_masks(masks: Sequence[PatchMask | None]) -> torch.Tensor | None:
    if all(m is None for m in masks):
        return None
    return torch.from_numpy(np.stack([m.bits for m in masks]))
