"""
From raw gaze samples to a patch mask
=====================================

A synthetic reader looks at one spot for a while, jumps, and looks at a
second spot.  We detect the fixations, render a heatmap, pool it onto the
14 x 14 patch grid and keep the hottest cells.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gazevit.gaze import (
    FixationConfig,
    GazeTrace,
    detect_fixations,
    downsample_heatmap,
    gathered_mask,
    render_heatmap,
    separated_mask,
)

rng = np.random.default_rng(0)

# 250 Hz samples: 600 ms near (70, 80), a saccade, 300 ms near (150, 140)
t = np.arange(0, 1000, 4.0)
x = np.where(t < 600, 70.0, 150.0) + rng.normal(0, 2, t.size)
y = np.where(t < 600, 80.0, 140.0) + rng.normal(0, 2, t.size)
trace = GazeTrace(t=t, x=x, y=y, valid=np.ones(t.size, bool))

fixations = detect_fixations(trace, FixationConfig(dispersion_px=35, min_duration_ms=100), bounds=(224, 224))
for f in fixations:
    print(f"fixation at ({f.cx:.1f}, {f.cy:.1f}) for {f.duration_ms:.0f} ms")

# longer fixations weigh more
heatmap = render_heatmap(fixations, 224, 224, sigma=20)
grid = downsample_heatmap(heatmap, 14, 14)

sep = separated_mask(grid, k=49)
gat = gathered_mask(grid, 7)
print("separated keeps", sep.k, "cells, gathered keeps", gat.k)

fig, axes = plt.subplots(1, 3, figsize=(9, 3))
axes[0].imshow(heatmap.values, cmap="magma")
axes[0].set_title("heatmap")
axes[1].imshow(sep.grid(), cmap="gray")
axes[1].set_title("separated, k=49")
axes[2].imshow(gat.grid(), cmap="gray")
axes[2].set_title("gathered, 7x7")
for ax in axes:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig("gaze_to_mask.png", dpi=100)
