import json
import os

import numpy as np
import pytest

from lumiforge import captions as cap
from lumiforge.dataset import (DatasetError, DatasetManifest, IntegrityError, SampleNotFound, build_dataset,
                               count_videos, load_sample)
from lumiforge.grid import build_grid, linear_trajectory, save_trajectory
from lumiforge.render import build_subject


# -- captions --------------------------------------------------------------------

def test_caption_is_deterministic():
    s = build_subject(2)
    assert cap.generate_caption(s, 5) == cap.generate_caption(s, 5)


def test_caption_bank_is_varied():
    s = build_subject(2)
    assert len({cap.generate_caption(s, seed).text for seed in range(100)}) >= 20


def test_empty_bank_fails_at_construction():
    with pytest.raises(cap.CaptionError):
        cap.CaptionBank(base=())


def test_single_variant():
    base = cap.generate_caption(build_subject(0), 0)
    assert len(cap.augment_caption(base, 1, 0)) == 1


def test_variants_keep_the_subject():
    base = cap.generate_caption(build_subject(4), 0)
    person = base.slots["person"]
    for v in cap.augment_caption(base, 8, 3):
        assert person in v.text


def test_variants_are_deterministic():
    base = cap.generate_caption(build_subject(4), 0)
    assert cap.augment_caption(base, 8, 11) == cap.augment_caption(base, 8, 11)


def test_zero_variants_rejected():
    with pytest.raises(cap.CaptionError):
        cap.augment_caption(cap.generate_caption(build_subject(0), 0), 0, 0)


# -- dataset ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small(tmp_path_factory):
    g = build_grid()
    root = tmp_path_factory.mktemp("ds")
    paths = []
    for n, (a, b) in enumerate([((0, 28, 16), (32, 28, 16)), ((32, 28, 16), (0, 28, 16)),
                                ((16, 28, 0), (16, 28, 32)), ((0, 28, 0), (32, 28, 32))]):
        p = root / f"traj{n}.json"
        save_trajectory(linear_trajectory(g, a, b, 4), p)
        paths.append(p)
    m = build_dataset([0, 1], paths, 4, 32, root / "out", seed=3)
    return root, paths, m


def test_cartesian_product(small):
    _, _, m = small
    assert len(m.samples) == 8
    assert len({s["sample_id"] for s in m.samples}) == 8


def test_paper_scale_count():
    assert count_videos(65, 3400) > 220_000


def test_rebuild_is_byte_identical(small, tmp_path):
    root, paths, m = small
    m2 = build_dataset([0, 1], paths, 4, 32, tmp_path / "again", seed=3)
    assert m2.to_json() == m.to_json()
    a = (root / "out" / "manifest.json").read_bytes()
    assert a == (tmp_path / "again" / "manifest.json").read_bytes()


def test_sample_shapes(small):
    _, _, m = small
    s = load_sample(m, m.sample_ids[0])
    assert s.frames.shape == (4, 32, 32, 3)
    assert s.canvases.shape == (4, 32, 32, 1)
    assert s.caption and len(s.caption_variants) == 4


def test_unknown_sample(small):
    _, _, m = small
    with pytest.raises(SampleNotFound):
        load_sample(m, "nope")


def test_manifest_paths_are_relative(small):
    root, _, m = small
    doc = json.loads((root / "out" / "manifest.json").read_text())
    for s in doc["samples"]:
        for key in ("frames_dir", "canvases_dir", "trajectory_path"):
            assert not os.path.isabs(s[key])


def test_canvases_shared_across_subjects(small):
    _, _, m = small
    a = load_sample(m, "s000_t0002")
    b = load_sample(m, "s001_t0002")
    assert np.array_equal(a.canvases, b.canvases)
    assert not np.array_equal(a.frames, b.frames)


def test_missing_frame_is_an_integrity_error(small, tmp_path):
    _, paths, _ = small
    m = build_dataset([0], paths[:1], 4, 32, tmp_path / "broken", seed=0)
    s = m.samples[0]
    victim = m.root / s["frames_dir"] / "frame_00002.png"
    victim.unlink()
    with pytest.raises(IntegrityError, match="frame_00002.png"):
        load_sample(m, s["sample_id"])
    with pytest.raises(IntegrityError, match="frame_00002.png"):
        DatasetManifest.load(m.root, verify=True)


def test_refuses_to_clobber_foreign_directory(small, tmp_path):
    _, paths, _ = small
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "precious.txt").write_text("keep")
    with pytest.raises(DatasetError, match="refusing"):
        build_dataset([0], paths[:1], 4, 32, tmp_path / "x")
    assert (tmp_path / "x" / "precious.txt").read_text() == "keep"


def test_failed_build_leaves_no_partial_output(small, tmp_path):
    _, paths, _ = small
    with pytest.raises(Exception):
        build_dataset([0, -1], paths[:1], 4, 32, tmp_path / "bad")
    assert not (tmp_path / "bad").exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".bad.partial")]


def test_empty_inputs_rejected(tmp_path):
    with pytest.raises(DatasetError):
        build_dataset([], [], 4, 32, tmp_path / "e")
