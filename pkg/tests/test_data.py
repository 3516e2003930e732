import dataclasses

import numpy as np
import pytest

from rolltune import DataFormatError, DatasetSpec, ValidationError, generate
from rolltune.data import describe, load, save

from oracles import nearest_prototype_rank1


def datasets_equal(a, b):
    return (np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
            and np.array_equal(a.splits, b.splits) and np.array_equal(a.cameras, b.cameras))


class TestGenerate:
    def test_same_seed_byte_identical(self, micro_spec):
        a, b = generate(micro_spec), generate(micro_spec)
        for split in ("source", "train", "query", "gallery"):
            assert datasets_equal(getattr(a, split), getattr(b, split))

    def test_different_seed_differs(self, micro_spec):
        a = generate(micro_spec)
        b = generate(dataclasses.replace(micro_spec, seed=micro_spec.seed + 1))
        assert not datasets_equal(a.train, b.train)

    def test_train_test_identities_disjoint(self, micro_data):
        train_ids = set(micro_data.train.labels.tolist())
        test_ids = set(micro_data.query.labels.tolist()) | set(
            micro_data.gallery.labels.tolist())
        assert not train_ids & test_ids

    def test_sample_counts_match_spec(self, micro_spec, micro_data):
        assert len(micro_data.source) == micro_spec.source_classes * micro_spec.source_samples
        assert len(micro_data.train) == micro_spec.target_train_ids * micro_spec.target_train_samples
        assert len(micro_data.query) == micro_spec.target_test_ids * micro_spec.query_per_id
        assert len(micro_data.gallery) == micro_spec.target_test_ids * micro_spec.gallery_per_id

    def test_every_test_identity_has_query_and_gallery(self, micro_data):
        assert set(micro_data.query.labels.tolist()) == set(
            micro_data.gallery.labels.tolist())

    def test_pixels_in_unit_range(self, micro_data):
        for split in ("source", "train", "query", "gallery"):
            ds = getattr(micro_data, split)
            assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
            assert ds.images.dtype == np.float32

    def test_labels_contiguous_for_training(self, micro_spec, micro_data):
        assert sorted(set(micro_data.train.labels.tolist())) == \
            list(range(micro_spec.target_train_ids))
        assert sorted(set(micro_data.source.labels.tolist())) == \
            list(range(micro_spec.source_classes))

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            generate(DatasetSpec(query_per_id=0))
        with pytest.raises(ValidationError):
            generate(DatasetSpec(image_shape=(3, 32, 16)))
        with pytest.raises(ValidationError):
            generate(DatasetSpec(noise_sigma=-1.0))

    def test_nearest_prototype_rank1_above_floor(self):
        """Raw-pixel matching solves the default task well but not fully."""
        accs = []
        for seed in range(5):
            d = generate(DatasetSpec(seed=seed))
            accs.append(nearest_prototype_rank1(d.query.images, d.query.labels,
                                                d.gallery.images, d.gallery.labels))
        assert min(accs) > 0.6
        assert max(accs) < 1.0


class TestRoundTrip:
    def test_save_load_bit_exact(self, micro_data, tmp_path):
        path = tmp_path / "train.ds"
        save(micro_data.train, path)
        assert datasets_equal(load(path), micro_data.train)

    def test_describe_header(self, micro_spec, micro_data, tmp_path):
        path = tmp_path / "query.ds"
        save(micro_data.query, path)
        info = describe(path)
        assert info["samples"] == len(micro_data.query)
        assert (info["channels"], info["height"], info["width"]) == micro_spec.image_shape
        assert info["identities"] == micro_spec.target_test_ids

    def test_truncated_file_reports_offset(self, micro_data, tmp_path):
        path = tmp_path / "trunc.ds"
        save(micro_data.train, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(DataFormatError, match="offset"):
            load(path)

    def test_bad_magic(self, micro_data, tmp_path):
        path = tmp_path / "bad.ds"
        save(micro_data.train, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            load(path)

    def test_unsupported_version(self, micro_data, tmp_path):
        path = tmp_path / "vers.ds"
        save(micro_data.train, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="version"):
            load(path)
