"""
A planted shortcut
==================

Small version of the shortcut experiment.  In the training split a bright
corner marker agrees with the label 95% of the time; in the test split it
is a coin flip.  A model that leans on the marker drops to chance on test.
EG-ViT only sees gaze-selected patches in its first layers, and the gaze
never lands on the marker.

This script uses a reduced dataset, a smaller model and 15 epochs so it
finishes in a couple of minutes.  At this size both arms usually end up on
the marker (test accuracy near 0.5); the texture needs the full 2000-image,
30-epoch run of the acceptance suite before EG-ViT moves off the shortcut.
"""

from dataclasses import replace

import numpy as np
import torch

from gazevit.explain import grad_cam, shortcut_score
from gazevit.synth import SynthSpec, generate_records
from gazevit.training import DatasetManifest, SplitData, TrainConfig, evaluate_arrays, masks_from_heatmaps, train
from gazevit.vit import ModelConfig

spec = SynthSpec(n_train=600, n_test=200)
records = generate_records(spec, seed=0)


def split(name):
    rs = [r for r in records if r.split == name]
    data = SplitData(
        np.stack([r.image[None] for r in rs]).astype(np.float32),
        np.array([r.label for r in rs]),
        np.stack([r.heatmap.values for r in rs]),
    )
    return data, rs


train_data, _ = split("train")
test_data, test_records = split("test")
model_cfg = ModelConfig(image_size=64, patch_size=8, hidden_dim=64, depth=4, heads=4, num_classes=2)
base = TrainConfig(epochs=15, base_lr=5e-4, warmup_epochs=2, mask_k=16, window=4, max_shift_px=2)
manifest = DatasetManifest(["texture-a", "texture-b"], [], {})

for name, variant, reinject in [("vanilla", "none", False), ("eg-vit", "separated", True)]:
    cfg = replace(base, mask_variant=variant)
    model = train(manifest, replace(model_cfg, reinject_enabled=reinject), cfg, None, train_data, test_data).model
    tr = evaluate_arrays(model, train_data, cfg)[0].acc
    te = evaluate_arrays(model, test_data, cfg)[0].acc
    masks = masks_from_heatmaps(test_data.heatmaps, model.config, cfg)
    corner = [
        shortcut_score(grad_cam(model, torch.from_numpy(test_data.images[i : i + 1]), None if masks is None else masks[i : i + 1]), spec.marker_cells())
        for i, r in enumerate(test_records)
        if r.shortcut_present
    ]
    print(f"{name:8s} train {tr:.3f}  test {te:.3f}  CAM mass on marker {np.mean(corner):.3f}")
