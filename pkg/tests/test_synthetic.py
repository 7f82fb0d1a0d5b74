import filecmp

import numpy as np

from conftest import SMALL_LAYOUT
from slnscreen.corpus import load_manifest, load_patch_pixels
from slnscreen.synthetic import (
    SyntheticLayout,
    generate_synthetic_corpus,
    permute_case_labels,
    render_patch,
    sample_blobs,
    sample_slide_style,
)


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    stack = [cmp]
    while stack:
        c = stack.pop()
        if c.left_only or c.right_only or c.diff_files or c.funny_files:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        if mismatch or errors:
            return False
        stack.extend(c.subdirs.values())
    return True


def test_same_seed_is_byte_identical(tmp_path):
    generate_synthetic_corpus(tmp_path / "a", seed=4, layout=SMALL_LAYOUT)
    generate_synthetic_corpus(tmp_path / "b", seed=4, layout=SMALL_LAYOUT)
    generate_synthetic_corpus(tmp_path / "c", seed=5, layout=SMALL_LAYOUT)
    assert _same_tree(tmp_path / "a", tmp_path / "b")
    assert not _same_tree(tmp_path / "a", tmp_path / "c")


def test_small_corpus_is_valid(small_corpus):
    again = load_manifest(small_corpus.root / "manifest.jsonl", patches_per_slide=10)
    assert len(again.cases) == 12 and len(again.patches) == 240
    assert again.split_counts() == {"train": 160, "val": 40, "test": 40}
    px = load_patch_pixels(again.patch_path(next(iter(again.patches.values()))))
    assert px.shape == (100, 100, 3) and px.dtype == np.uint8


def test_default_layout_counts():
    layout = SyntheticLayout()
    assert sum(layout.cases_per_category) == 34
    assert sum(layout.cases_per_category) * 2 * layout.patches_per_slide == 2720


def test_blob_count_increases_with_category():
    rng = np.random.default_rng(0)
    means = []
    for dx in range(4):
        counts = [len(sample_blobs(rng, dx, sample_slide_style(rng).density)[1]) for _ in range(1000)]
        means.append(np.mean(counts))
    assert all(a < b for a, b in zip(means, means[1:])), means


def test_render_patch_shape_and_range():
    rng = np.random.default_rng(1)
    img = render_patch(rng, 3, sample_slide_style(rng))
    assert img.shape == (100, 100, 3) and img.dtype == np.uint8


def test_permuted_labels_keep_structure(small_corpus):
    null = permute_case_labels(small_corpus, seed=1)
    assert sorted(c.diagnosis for c in null.cases.values()) == sorted(c.diagnosis for c in small_corpus.cases.values())
    assert any(null.cases[c].diagnosis != small_corpus.cases[c].diagnosis for c in null.cases)
    for p in null.patches.values():
        assert p.observed_dx == null.case_of(p).diagnosis and p.split is None
        assert p.path == small_corpus.patches[p.patch_id].path
