"""Manifests, subject folds, augmentation, and the synthetic corpus."""

import numpy as np
import pytest

from aunet.data import (Manifest, SyntheticSpec, augment_image, center_crop,
                        default_regions, fold_assignments, load_manifest,
                        render_synthetic, split_manifest, subject_fold,
                        synth_generate, write_manifest)
from aunet.errors import ManifestError, ShapeError
from aunet.imageio import write_ppm


def make_corpus(tmp_path, rows, header="image,subject,au_1,au_2",
                with_images=True):
    lines = [header] + rows
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n")
    if with_images:
        for row in rows:
            name = row.split(",")[0]
            if name:
                write_ppm(tmp_path / name, np.zeros((4, 4, 3)))
    return path


# ---- manifest parsing ------------------------------------------------


def test_load_manifest_round_trip(tmp_path):
    labels = np.array([[1, 0], [0, 1], [1, 1]])
    names = ["a.ppm", "b.ppm", "c.ppm"]
    for name in names:
        write_ppm(tmp_path / name, np.zeros((4, 4, 3)))
    write_manifest(tmp_path / "manifest.csv", names, ["s0", "s1", "s0"], labels)
    man = load_manifest(tmp_path / "manifest.csv")
    assert man.n == 2
    assert man.image_names == names
    assert man.subjects == ["s0", "s1", "s0"]
    np.testing.assert_array_equal(man.labels, labels)
    assert man.load_image(0).shape == (4, 4, 3)


def test_load_manifest_rejects_bad_header(tmp_path):
    path = make_corpus(tmp_path, ["a.ppm,s0,1,0"], header="img,subject,au_1,au_2")
    with pytest.raises(ManifestError, match="header"):
        load_manifest(path)


def test_load_manifest_rejects_header_only(tmp_path):
    path = make_corpus(tmp_path, [])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_load_manifest_errors_carry_line_numbers(tmp_path):
    path = make_corpus(tmp_path, ["a.ppm,s0,1,0", "b.ppm,s1,1"])
    with pytest.raises(ManifestError, match="line 3"):
        load_manifest(path)


def test_load_manifest_rejects_non_binary_label(tmp_path):
    path = make_corpus(tmp_path, ["a.ppm,s0,1,2"])
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(path)


def test_load_manifest_rejects_empty_field(tmp_path):
    path = make_corpus(tmp_path, ["a.ppm,,1,0"])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_load_manifest_rejects_missing_image(tmp_path):
    path = make_corpus(tmp_path, ["ghost.ppm,s0,1,0"], with_images=False)
    with pytest.raises(ManifestError, match="ghost.ppm"):
        load_manifest(path)


# ---- subject folds ---------------------------------------------------


def test_subject_fold_stable_and_in_range():
    for k in (2, 3, 5):
        for s in ("subj0", "subj1", "x", ""):
            f = subject_fold(s, k)
            assert 0 <= f < k
            assert f == subject_fold(s, k)  # pure function of the name


def test_fold_assignments_reject_degenerate_k():
    with pytest.raises(ShapeError):
        fold_assignments(["a"], 1)


def test_split_manifest_partitions_by_subject(tmp_path):
    man = synth_generate(SyntheticSpec(count=12, n=2, l=8, subjects=4, seed=1),
                         tmp_path)
    k = 3
    train, ev = split_manifest(man, k, held_out=0)
    assert train.n == ev.n == 2
    assert len(train.image_names) + len(ev.image_names) == 12
    for s in train.subjects:
        assert subject_fold(s, k) != 0
    for s in ev.subjects:
        assert subject_fold(s, k) == 0
    # no subject straddles the split
    assert not (set(train.subjects) & set(ev.subjects))


# ---- augmentation ----------------------------------------------------


def test_center_crop_takes_middle_window():
    img = np.arange(36, dtype=np.float64).reshape(6, 6, 1)
    out = center_crop(img, 4)
    np.testing.assert_array_equal(out, img[1:5, 1:5])
    with pytest.raises(ShapeError):
        center_crop(img, 7)


def test_augment_without_margin_or_flip_is_center_crop():
    img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    rng = np.random.default_rng(1)
    out = augment_image(img, 6, margin=0, flip=False, rng=rng)
    np.testing.assert_array_equal(out, center_crop(img, 6))
    # no rng draws when augmentation is off
    assert rng.integers(0, 100) == np.random.default_rng(1).integers(0, 100)


def test_augment_crop_offsets_cover_margin_window():
    img = np.arange(100, dtype=np.float64).reshape(10, 10, 1)
    rng = np.random.default_rng(2)
    corners = set()
    for _ in range(200):
        out = augment_image(img, 6, margin=2, flip=False, rng=rng)
        corners.add(float(out[0, 0, 0]))
    # top-left pixel identifies the offset: row*10 + col for offsets 0..4
    expect = {float(r * 10 + c) for r in range(5) for c in range(5)}
    assert corners == expect


def test_augment_flip_reverses_columns():
    img = np.arange(16, dtype=np.float64).reshape(4, 4, 1)

    class FlipRng:
        def integers(self, *a, **k):
            return 0

        def random(self):
            return 0.0  # < 0.5 forces the flip

    out = augment_image(img, 4, margin=0, flip=True, rng=FlipRng())
    np.testing.assert_array_equal(out, img[:, ::-1])
    assert out.flags["C_CONTIGUOUS"]


def test_augment_rejects_undersized_image():
    with pytest.raises(ShapeError):
        augment_image(np.zeros((5, 5, 3)), 6, margin=0, flip=False,
                      rng=np.random.default_rng(0))


# ---- regions and rendering ------------------------------------------


def test_default_regions_disjoint_and_inside_unit_square():
    for n in (1, 2, 3, 4, 5, 9):
        regions = default_regions(n)
        assert len(regions) == n
        for y0, x0, y1, x1 in regions:
            assert 0.0 <= y0 < y1 <= 1.0
            assert 0.0 <= x0 < x1 <= 1.0
        for i in range(n):
            for j in range(i + 1, n):
                ay0, ax0, ay1, ax1 = regions[i]
                by0, bx0, by1, bx1 = regions[j]
                overlap_y = min(ay1, by1) - max(ay0, by0)
                overlap_x = min(ax1, bx1) - max(ax0, bx0)
                assert overlap_y <= 0 or overlap_x <= 0


def _region_interior(img, region, side):
    y0, x0, y1, x1 = region
    return img[int(y0 * side) + 1:int(y1 * side) - 1,
               int(x0 * side) + 1:int(x1 * side) - 1, 0]


def test_render_blob_lands_inside_its_region():
    spec = SyntheticSpec(n=2, l=32, noise=0.0, background=0.0)
    regions = spec.resolved_regions()
    rng = np.random.default_rng(3)
    img = render_synthetic(np.array([1, 0]), rng, spec)
    # active region holds a full-strength blob peak
    assert _region_interior(img, regions[0], 32).max() >= 0.8 * spec.blob_amp
    # the inactive output's blob is rendered away from its region
    assert _region_interior(img, regions[1], 32).max() < 0.5 * spec.blob_amp


def test_render_inactive_output_gets_off_region_blob():
    spec = SyntheticSpec(n=3, l=16, noise=0.0, background=0.3)
    regions = spec.resolved_regions()
    img = render_synthetic(np.zeros(3, dtype=int), np.random.default_rng(4), spec)
    for region in regions:
        assert _region_interior(img, region, 16).max() < 0.3 + 0.5 * spec.blob_amp
    # blobs exist, just not inside any region
    assert img.max() >= 0.3 + 0.8 * spec.blob_amp


def test_render_distractor_rate_zero_skips_inactive_blobs():
    spec = SyntheticSpec(n=3, l=16, noise=0.0, background=0.3,
                         distractor_rate=0.0)
    img = render_synthetic(np.zeros(3, dtype=int), np.random.default_rng(4), spec)
    assert np.allclose(img, 0.3)


def test_render_distractor_rate_is_a_coin_flip():
    # over many all-inactive renders, roughly half the outputs get a blob
    spec = SyntheticSpec(n=1, l=16, noise=0.0, background=0.2,
                         distractor_rate=0.5)
    rng = np.random.default_rng(11)
    hits = sum(
        render_synthetic(np.zeros(1, dtype=int), rng, spec).max() > 0.5
        for _ in range(200)
    )
    assert 70 <= hits <= 130


def test_synth_generate_rejects_bad_distractor_rate(tmp_path):
    spec = SyntheticSpec(count=2, n=1, l=8, distractor_rate=1.5)
    with pytest.raises(ShapeError):
        synth_generate(spec, tmp_path / "bad")


def test_render_output_range_and_shape_with_margin():
    spec = SyntheticSpec(n=3, l=16, margin=2, noise=0.05)
    img = render_synthetic(np.ones(3, dtype=int), np.random.default_rng(5), spec)
    assert img.shape == (20, 20, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0


# ---- generation ------------------------------------------------------


def test_synth_generate_is_seed_deterministic(tmp_path):
    spec = SyntheticSpec(count=6, n=2, l=8, seed=9)
    man1 = synth_generate(spec, tmp_path / "a")
    man2 = synth_generate(spec, tmp_path / "b")
    np.testing.assert_array_equal(man1.labels, man2.labels)
    assert man1.image_names == man2.image_names
    for i in range(6):
        b1 = (tmp_path / "a" / man1.image_names[i]).read_bytes()
        b2 = (tmp_path / "b" / man2.image_names[i]).read_bytes()
        assert b1 == b2
    m1 = (tmp_path / "a" / "manifest.csv").read_bytes()
    m2 = (tmp_path / "b" / "manifest.csv").read_bytes()
    assert m1 == m2


def test_synth_generate_different_seeds_differ(tmp_path):
    man1 = synth_generate(SyntheticSpec(count=6, n=2, l=8, seed=1), tmp_path / "a")
    man2 = synth_generate(SyntheticSpec(count=6, n=2, l=8, seed=2), tmp_path / "b")
    same_labels = np.array_equal(man1.labels, man2.labels)
    b1 = (tmp_path / "a" / "img_0000.ppm").read_bytes()
    b2 = (tmp_path / "b" / "img_0000.ppm").read_bytes()
    assert not (same_labels and b1 == b2)


def test_synth_generate_subject_cycle(tmp_path):
    man = synth_generate(SyntheticSpec(count=5, n=1, l=8, subjects=2), tmp_path)
    assert man.subjects == ["subj0", "subj1", "subj0", "subj1", "subj0"]


def test_synth_generate_validates_spec(tmp_path):
    with pytest.raises(ShapeError):
        synth_generate(SyntheticSpec(count=0), tmp_path)
    with pytest.raises(ShapeError):
        synth_generate(SyntheticSpec(n=2, regions=[(0, 0, 1, 1)]), tmp_path)
