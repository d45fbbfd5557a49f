import filecmp
import math
from dataclasses import replace

import numpy as np
import pytest

from gazevit.errors import InfeasibleSpec
from gazevit.gaze import FixationConfig, detect_fixations, downsample_heatmap, separated_mask
from gazevit.synth import (
    GazeSpec,
    ShortcutSpec,
    SynthSpec,
    generate_dataset,
    generate_gaze_trace,
    generate_records,
    make_record,
    marker_label,
    read_lesion_rois,
)
from gazevit.training import DatasetManifest


@pytest.fixture(scope="module")
def default_records():
    return generate_records(replace(SynthSpec(), n_train=200, n_test=200), seed=11)


def test_perfect_train_correlation():
    spec = replace(SynthSpec(n_train=100, n_test=0), shortcut=ShortcutSpec(rho_train=1.0))
    for rec in generate_records(spec, 0):
        assert rec.shortcut_present == (rec.label == marker_label(spec))


def test_marker_pixels_iff_present():
    spec = SynthSpec(n_train=40, n_test=0)
    x0, y0, x1, y1 = spec.marker_rect()
    for rec in generate_records(spec, 1):
        painted = np.all(rec.image[y0:y1, x0:x1] == spec.shortcut.intensity)
        assert painted == rec.shortcut_present


def test_decorrelated_test_split():
    n = 400
    spec = SynthSpec(n_train=0, n_test=n)
    recs = generate_records(spec, 3)
    agree = np.mean([r.shortcut_present == (r.label == marker_label(spec)) for r in recs])
    # binomial(n, 0.5): 3 sigma = 3 * sqrt(0.25 / n)
    assert abs(agree - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_labels_balanced_and_texture_only(default_records):
    labels = [r.label for r in default_records]
    assert np.bincount(labels).tolist() == [200, 200]


def test_heatmap_argmax_near_lesion(default_records):
    spec = SynthSpec()
    for rec in default_records:
        r, c = np.unravel_index(rec.heatmap.values.argmax(), rec.heatmap.values.shape)
        # fixation jitter plus half-pixel quantisation and centroid sample noise
        bound = spec.gaze.jitter_px + 1.0
        assert math.hypot(c - rec.lesion_center[0], r - rec.lesion_center[1]) <= bound


def test_mask_covers_lesion_and_avoids_marker(default_records):
    spec = SynthSpec()
    marker = spec.marker_cells().reshape(-1)
    for rec in default_records:
        m = separated_mask(downsample_heatmap(rec.heatmap, spec.grid, spec.grid), 16).bits
        assert m[rec.lesion_roi.reshape(-1)].all()
        assert not m[marker].any()


def test_mask_covers_lesion_at_224():
    spec = SynthSpec.for_size(224, 16, n_train=60, n_test=0)
    marker = spec.marker_cells().reshape(-1)
    for rec in generate_records(spec, 4):
        m = separated_mask(downsample_heatmap(rec.heatmap, 14, 14), 49).bits
        assert m[rec.lesion_roi.reshape(-1)].all()
        assert not m[marker].any()


def test_zero_jitter_single_cluster():
    spec = replace(SynthSpec(n_train=5, n_test=0), gaze=replace(GazeSpec(), jitter_px=0.0, fixations=1))
    for i in range(5):
        rec = make_record(spec, 0, "train", i)
        trace = generate_gaze_trace(rec, spec, 0)
        fixes = detect_fixations(trace, FixationConfig(spec.gaze.dispersion_px, spec.gaze.min_duration_ms))
        assert len(fixes) == 1
        assert (fixes[0].cx, fixes[0].cy) == rec.lesion_center


def test_infeasible_overlap():
    spec = SynthSpec(shortcut=ShortcutSpec(size_px=30))
    with pytest.raises(InfeasibleSpec):
        spec.validate()


def test_three_class_variant():
    spec = SynthSpec(num_classes=3, n_train=30, n_test=0)
    recs = generate_records(spec, 0)
    assert sorted(set(r.label for r in recs)) == [0, 1, 2]


def test_parallel_equals_serial():
    spec = SynthSpec(n_train=12, n_test=6)
    a = generate_records(spec, 5, workers=1)
    b = generate_records(spec, 5, workers=2)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.image, rb.image)
        np.testing.assert_array_equal(ra.heatmap.values, rb.heatmap.values)


def test_dataset_files_deterministic(tmp_path):
    spec = SynthSpec(n_train=6, n_test=4)
    generate_dataset(spec, 9, tmp_path / "a")
    generate_dataset(spec, 9, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("images", "heatmaps"):
        names = sorted(p.name for p in (tmp_path / "a" / sub).iterdir())
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub, names, shallow=False)
        assert not mismatch and not errors
    m = DatasetManifest.load(tmp_path / "a" / "manifest.json")
    assert len(m.split("train")) == 6 and len(m.split("test")) == 4
    header = (tmp_path / "a" / "ground_truth.csv").read_text().splitlines()[0]
    assert header == "record_id,lesion_cx,lesion_cy,shortcut_present,label"
    rois = read_lesion_rois(tmp_path / "a" / "lesion_roi.csv", spec.grid)
    assert len(rois) == 10 and all(r.any() for r in rois.values())
