"""
Masked forward pass and re-injection
====================================

The gaze mask shrinks the token sequence in every layer but the last.
Before the last layer the untouched patch embeddings are added back, so
the classifier still sees the whole image once.
"""

from dataclasses import replace

import numpy as np
import torch

from gazevit.vit import ModelConfig, build_model, forward, param_count

config = ModelConfig(hidden_dim=192, depth=6, heads=3, num_classes=3)
model = build_model(config, seed=0).eval()
print("parameters:", param_count(config))

image = torch.rand(1, 1, 224, 224)
mask = np.zeros(config.num_patches, bool)
mask[np.random.default_rng(1).choice(config.num_patches, 49, replace=False)] = True

tokens = []
with torch.no_grad():
    logits = forward(model, image, mask, shape_log=tokens)
print("tokens per layer:", tokens)  # 50 until the last layer, then 197

# switching re-injection off and passing an all-ones mask gives a plain ViT
plain = build_model(replace(config, reinject_enabled=False), seed=0).eval()
with torch.no_grad():
    a = forward(plain, image, np.ones(config.num_patches, bool))
    b = forward(plain, image)
print("all-ones mask == no mask:", torch.allclose(a, b, atol=1e-6))
