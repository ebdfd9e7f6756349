import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from helpers import write_tree
from metadrn.data import pnm, synth
from metadrn.data.augment import affine, augment, hflip
from metadrn.data.episodes import (EpisodePlan, SegSample, default_split, epoch_iter, epoch_rng, load_dataset,
                                   sample_episode, write_dataset)


# ---- PNM ---------------------------------------------------------------

def test_pnm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    gray = rng.integers(0, 256, (5, 7), dtype=np.uint8)
    pnm.write_ppm(tmp_path / "a.ppm", rgb)
    pnm.write_pgm(tmp_path / "a.pgm", gray)
    np.testing.assert_array_equal(pnm.read_pnm(tmp_path / "a.ppm"), rgb)
    np.testing.assert_array_equal(pnm.read_pnm(tmp_path / "a.pgm"), gray)
    assert pnm.read_header(tmp_path / "a.ppm") == ("P6", 7, 5)


def test_pnm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x00\xff")
    np.testing.assert_array_equal(pnm.read_pnm(p), [[0, 255]])


def test_corrupt_magic_names_path_and_offset(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"P3\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(pnm.PNMError, match=r"bad\.ppm.*offset 0"):
        pnm.read_pnm(p)


def test_truncated_raster(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5 4 4 255\n\x00\x00")
    with pytest.raises(pnm.PNMError, match="truncated"):
        pnm.read_pnm(p)


def test_minmax_of_constant_is_zero():
    assert (pnm.minmax_uint8(np.full((3, 3), 2.5)) == 0).all()
    np.testing.assert_array_equal(pnm.minmax_uint8(np.array([0.0, 0.5, 1.0])), [0, 128, 255])


# ---- folder datasets ------------------------------------------------------

def test_twelve_class_tree(tmp_path):
    ds = load_dataset(write_tree(tmp_path / "t", 12, size=8))
    assert len(ds.classes) == 12
    assert ds.num_samples() == 120
    s = ds.get(ds.classes[0], 1)
    assert s.image.shape == (3, 8, 8) and s.image.dtype == np.float32
    assert set(np.unique(s.mask)) <= {0, 1}


def test_fss_shaped_tree_split(fss_tree):
    ds = load_dataset(fss_tree)
    assert [len(ds.classes_in(s)) for s in ("train", "val", "test")] == [700, 60, 240]
    assert len(set(ds.split.all())) == 1000


def test_default_split_is_seeded():
    names = [f"c{i}" for i in range(1000)]
    assert default_split(names, seed=3) == default_split(names, seed=3)
    assert default_split(names, seed=3).test != default_split(names, seed=4).test


def test_manifest_split(tmp_path):
    root = write_tree(tmp_path / "t", 4)
    man = tmp_path / "split.txt"
    man.write_text("class_0000 train\nclass_0001 train\n# comment\nclass_0002 val\nclass_0003 test\n")
    ds = load_dataset(root, manifest=man)
    assert ds.classes_in("test") == ["class_0003"]
    man.write_text("class_0000 train\n")
    with pytest.raises(ValueError, match="manifest"):
        load_dataset(root, manifest=man)


def test_missing_mask_is_reported(tmp_path):
    root = write_tree(tmp_path / "t", 2)
    (root / "class_0001" / "3_mask.pgm").unlink()
    with pytest.raises(FileNotFoundError, match="3_mask.pgm"):
        load_dataset(root)


def test_loader_rejects_corrupt_header(tmp_path):
    root = write_tree(tmp_path / "t", 2)
    (root / "class_0000" / "2.ppm").write_bytes(b"JUNK")
    with pytest.raises(pnm.PNMError, match="2.ppm"):
        load_dataset(root)


def test_short_class_warns(tmp_path, caplog):
    root = write_tree(tmp_path / "t", 2, per_class=6)
    with caplog.at_level(logging.WARNING):
        load_dataset(root)
    assert "expected 10" in caplog.text


def test_write_and_reload_round_trip(tmp_path, small_dataset):
    write_dataset(tmp_path / "d", small_dataset)
    ds = load_dataset(tmp_path / "d")
    cls = small_dataset.classes[3]
    a, b = small_dataset.get(cls, 4), ds.get(cls, 4)
    np.testing.assert_array_equal(a.mask, b.mask)
    np.testing.assert_allclose(a.image, b.image, atol=1 / 255 / 2 + 1e-7)


def test_lazy_loading(tmp_path):
    ds = load_dataset(write_tree(tmp_path / "t", 3))
    assert not ds.access_log
    ds.get("class_0001", 2)
    assert ds.access_log == {"class_0001"}


# ---- episodes -------------------------------------------------------------

def test_episode_disjointness_over_many_draws(small_dataset):
    rng = np.random.default_rng(0)
    for _ in range(1000):
        ep = sample_episode(small_dataset, "train", rng, queries=5)
        ids_s = {s.sample_id for s in ep.support}
        ids_q = {s.sample_id for s in ep.query}
        assert len(ep.support) == 1 and len(ep.query) == 5
        assert not ids_s & ids_q and len(ids_q) == 5
        assert ep.class_id in small_dataset.classes_in("train")


def test_sampling_is_deterministic(small_dataset):
    a = [sample_episode(small_dataset, "val", epoch_rng(5, 2)).episode_id for _ in range(3)]
    b = [sample_episode(small_dataset, "val", epoch_rng(5, 2)).episode_id for _ in range(3)]
    assert a == b


def test_test_queries_use_all_remaining(small_dataset):
    ep = sample_episode(small_dataset, "test", np.random.default_rng(1), queries=9)
    assert len(ep.query) == 9
    ep = sample_episode(small_dataset, "test", np.random.default_rng(1), queries=50)
    assert len(ep.query) == 9


def test_class_outside_split_rejected(small_dataset):
    with pytest.raises(ValueError):
        sample_episode(small_dataset, "train", np.random.default_rng(0), class_name=small_dataset.classes_in("test")[0])


def test_epoch_iter_batch_counts(fss_tree):
    ds = load_dataset(fss_tree)
    batches = list(epoch_iter(ds, "train", 5, np.random.default_rng(0), queries=1))
    assert len(batches) == 140
    assert sorted(ep.class_id for b in batches for ep in b) == ds.classes_in("train")


def test_epoch_iter_ragged_last_batch(small_dataset):
    batches = list(epoch_iter(small_dataset, "train", 3, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [3, 3, 2]


def test_epoch_iter_meta_batch_eight():
    ds = synth.synth_generate(num_classes=36, samples_per_class=3, size=8, seed=0, split_counts=(28, 4, 4))
    batches = list(epoch_iter(ds, "train", 8, np.random.default_rng(0), queries=1))
    assert len(batches) == 4 and len(batches[-1]) == 4


def test_epochs_reshuffle(small_dataset):
    order = [[ep.class_id for b in epoch_iter(small_dataset, "train", 2, epoch_rng(0, e)) for ep in b]
             for e in range(2)]
    assert order[0] != order[1]
    assert sorted(order[0]) == sorted(order[1])


def test_episode_plan_is_fixed(small_dataset):
    plan = EpisodePlan("test", 6, seed=3, queries=9)
    a = [e.episode_id for e in plan.episodes(small_dataset)]
    assert a == [e.episode_id for e in plan.episodes(small_dataset)]
    assert len(set(e.split(":")[0] for e in a)) == 2


# ---- augmentation ---------------------------------------------------------

def _sample(seed=0, size=16):
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), np.uint8)
    mask[3:10, 4:12] = 1
    return SegSample(rng.random((3, size, size)).astype(np.float32), mask, "c", 1)


def test_hflip_is_involution():
    s = _sample()
    t = hflip(hflip(s))
    np.testing.assert_array_equal(t.image, s.image)
    np.testing.assert_array_equal(t.mask, s.mask)
    np.testing.assert_array_equal(hflip(s).mask, s.mask[:, ::-1])


def test_identity_affine_is_exact():
    s = _sample()
    t = affine(s, 0.0, 1.0, 0.0)
    np.testing.assert_array_equal(t.image, s.image)
    np.testing.assert_array_equal(t.mask, s.mask)


def test_quarter_turn_rotates_mask():
    s = _sample(size=15)
    t = affine(s, 90.0, 1.0, 0.0)
    assert t.mask.sum() == s.mask.sum()
    assert any(np.array_equal(t.mask, np.rot90(s.mask, k)) for k in (1, 3))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_augmented_masks_binary_and_images_in_range(seed):
    rng = np.random.default_rng(seed)
    t = augment(_sample(seed % 7), rng)
    assert set(np.unique(t.mask)) <= {0, 1}
    assert t.mask.dtype == np.uint8
    assert t.image.min() >= 0.0 and t.image.max() <= 1.0
    assert t.image.shape == (3, 16, 16) and t.image.dtype == np.float32


def test_augment_is_deterministic():
    s = _sample()
    a, b = augment(s, np.random.default_rng(9)), augment(s, np.random.default_rng(9))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.mask, b.mask)


# ---- synthetic generator --------------------------------------------------

def test_synthetic_is_deterministic():
    a = synth.synth_generate(12, 10, 32, seed=7)
    b = synth.synth_generate(12, 10, 32, seed=7)
    assert a.split == b.split and a.num_samples() == 120
    for c in a.classes:
        for k in a.sample_ids(c):
            assert np.array_equal(a.get(c, k).image, b.get(c, k).image)
            assert np.array_equal(a.get(c, k).mask, b.get(c, k).mask)


def test_synthetic_foreground_fraction(small_dataset):
    for c in small_dataset.classes:
        for k in small_dataset.sample_ids(c):
            frac = small_dataset.get(c, k).mask.mean()
            assert 0.05 <= frac <= 0.6


def test_disk_masks_are_one_component():
    ds = synth.synth_generate(12, 10, 32, seed=7)
    disks = [c for c in ds.classes if c.startswith("disk")]
    assert disks
    four = ndimage.generate_binary_structure(2, 1)
    for c in disks:
        for k in ds.sample_ids(c):
            _, n = ndimage.label(ds.get(c, k).mask, structure=four)
            assert n == 1


def test_synthetic_size_must_divide_by_four():
    with pytest.raises(ValueError):
        synth.synth_generate(2, 2, 30)
