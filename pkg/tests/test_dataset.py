import hashlib

import numpy as np
import pytest

from visionbeam.dataset import (
    BEAM_MMW,
    BLOCKAGE_MMW,
    DatasetManifest,
    generate_dataset,
    load_images,
    load_manifest,
    load_sample,
    read_labels,
    split_dataset,
    split_indices,
)
from visionbeam.scene import ABSENT


def tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def blockage_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("blk")
    generate_dataset("blockage", 40, 3, root)
    return root


class TestGenerate:
    def test_layout(self, blockage_dir):
        m = load_manifest(blockage_dir)
        assert m.sample_count == 40
        assert m.scenario == "blockage"
        assert m.image_dims == (64, 64, 3)
        assert m.mmw_config == BLOCKAGE_MMW
        assert len(list((blockage_dir / "channels").glob("*.bin"))) == 80
        assert (blockage_dir / "labels.csv").read_text().splitlines()[0] == "index,beam_label,link_status"

    def test_byte_identical_rerun(self, tmp_path):
        generate_dataset("beam", 12, 9, tmp_path / "a")
        generate_dataset("beam", 12, 9, tmp_path / "b")
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_seed_changes_data(self, tmp_path):
        generate_dataset("beam", 10, 1, tmp_path / "a")
        generate_dataset("beam", 10, 2, tmp_path / "b")
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")

    def test_sample_round_trip(self, blockage_dir):
        beams, statuses = read_labels(blockage_dir)
        for i in range(40):
            s = load_sample(blockage_dir, i)
            assert s.link_status == statuses[i]
            assert (s.beam_label is None) == (statuses[i] == ABSENT)
            assert s.mmw_channel.entries.shape == (128, 64)
            assert s.sub6_channel.entries.shape == (4, 64)

    def test_load_images(self, blockage_dir):
        imgs = load_images(blockage_dir, [0, 5])
        assert imgs.shape == (2, 64, 64, 3) and imgs.dtype == np.uint8

    def test_beam_config(self, tmp_path):
        m = generate_dataset("beam", 10, 0, tmp_path)
        assert m.mmw_config == BEAM_MMW
        assert m.codebook().size == 64

    def test_too_small(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset("beam", 9, 0, tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path)

    def test_manifest_json_round_trip(self, blockage_dir):
        m = load_manifest(blockage_dir)
        again = DatasetManifest.from_json(m.to_json())
        assert again.to_json() == m.to_json()


class TestSplit:
    def test_sizes(self):
        train, test = split_indices(5000, 0.7, 0)
        assert (len(train), len(test)) == (3500, 1500)

    def test_partition(self):
        train, test = split_indices(101, 0.7, 4)
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(101))

    def test_deterministic(self):
        a, b = split_indices(300, 0.7, 5), split_indices(300, 0.7, 5)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], split_indices(300, 0.7, 6)[0])

    def test_manifest_split(self, blockage_dir):
        train, test = split_dataset(load_manifest(blockage_dir), 0.7, 0)
        assert (len(train), len(test)) == (28, 12)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            split_indices(10, frac, 0)
