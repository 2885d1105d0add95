import json

import numpy as np
import pytest

from kercnn import data
from kercnn.data import SynthConfig, detections_from_gt, gen_synthetic, load_dataset, save_dataset
from kercnn.errors import ConfigError, ParseError, ValidationError
from kercnn.metrics import iou

SMALL = SynthConfig(n_train=60, n_val=20)


@pytest.fixture(scope="module")
def small():
    return gen_synthetic(SMALL, seed=3)


@pytest.fixture(scope="module")
def thousand():
    return gen_synthetic(SynthConfig(), seed=0, n_samples=1000)


def test_deterministic(small):
    again = gen_synthetic(SMALL, seed=3)
    for a, b in zip(small.samples, again.samples):
        assert a.feature_map.tobytes() == b.feature_map.tobytes()
        assert a.person_box == b.person_box and a.parts == b.parts
    other = gen_synthetic(SMALL, seed=4)
    assert other.samples[0].feature_map.tobytes() != small.samples[0].feature_map.tobytes()


def test_structure(small):
    cfg = SMALL
    assert small.n_parts == cfg.n_parts and small.n_attributes == cfg.n_attributes
    for s in small.samples:
        assert s.feature_map.shape == (cfg.channels, cfg.map_size, cfg.map_size)
        pb = s.person_box
        assert pb.x >= 0 and pb.y >= 0 and pb.x + pb.w < cfg.map_size and pb.y + pb.h < cfg.map_size
        assert cfg.min_parts <= len(s.parts) <= cfg.max_parts
        for p in s.parts:
            assert p.box.w > 0 and p.box.h > 0
            assert pb.x <= p.box.x and p.box.x + p.box.w <= pb.x + pb.w
            assert pb.y <= p.box.y and p.box.y + p.box.h <= pb.y + pb.h


def test_geometry_labels_match_predicates(small):
    for entry in small.rules["attributes"]:
        if entry["family"] != "geometry":
            continue
        j = entry["attribute"]
        for s in small.samples:
            for p in s.parts:
                expect = (p.part_class in entry["allowed_classes"]
                          and data.geometry_predicate(entry["predicate"], entry["parameter"],
                                                      p.box, s.person_box))
                assert (j in p.attributes) == expect


def test_relational_labels_depend_on_other_parts(small):
    for entry in small.rules["attributes"]:
        if entry["family"] != "relational":
            continue
        j, src = entry["attribute"], entry["source_class"]
        assert src not in entry["allowed_classes"]
        for s in small.samples:
            for u, p in enumerate(s.parts):
                if p.part_class not in entry["allowed_classes"]:
                    assert j not in p.attributes
                    continue
                fires = False
                for w, other in enumerate(s.parts):
                    if w == u or other.part_class != src:
                        continue
                    b = other.box
                    patch = s.feature_map[entry["channel"], int(b.y):int(b.y + b.h) + 1,
                                          int(b.x):int(b.x + b.w) + 1]
                    fires |= patch.mean() > entry["threshold"]
                # the planted value is bimodal, so the region mean recovers it despite noise
                assert (j in p.attributes) == bool(fires)


def test_positive_rates_within_band(thousand):
    lo, hi = SynthConfig().positive_band
    n = sum(len(s.parts) for s in thousand.samples)
    counts = np.zeros(thousand.n_attributes)
    for s in thousand.samples:
        for p in s.parts:
            for a in p.attributes:
                counts[a] += 1
    rates = counts / n
    assert np.all((rates >= lo) & (rates <= hi)), rates


def test_round_trip(tmp_path, small):
    path = tmp_path / "ds.json"
    save_dataset(small, path)
    back = load_dataset(path)
    assert back.part_names == small.part_names and back.attribute_names == small.attribute_names
    assert back.rules == json.loads(json.dumps(small.rules))
    for a, b in zip(small.samples, back.samples):
        assert a.feature_map.tobytes() == b.feature_map.tobytes()
        assert a.person_box == b.person_box and a.parts == b.parts


def test_saved_files_are_byte_stable(tmp_path, small):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    save_dataset(small, tmp_path / "a" / "ds.json")
    save_dataset(gen_synthetic(SMALL, seed=3), tmp_path / "b" / "ds.json")
    for name in ("ds.json", "ds.tensors"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def rewrite(tmp_path, small, mutate):
    path = tmp_path / "ds.json"
    save_dataset(small, path)
    doc = json.loads(path.read_text())
    mutate(doc)
    path.write_text(json.dumps(doc))
    return path


def test_out_of_range_attribute(tmp_path, small):
    def bad(doc):
        doc["samples"][2]["parts"][0]["attributes"] = [99]
    with pytest.raises(ValidationError, match="sample 2"):
        load_dataset(rewrite(tmp_path, small, bad))


def test_missing_vocab(tmp_path, small):
    with pytest.raises(ParseError, match="vocab"):
        load_dataset(rewrite(tmp_path, small, lambda d: d.pop("vocab")))


def test_missing_field_names_sample(tmp_path, small):
    def bad(doc):
        del doc["samples"][5]["person_box"]
    with pytest.raises(ValidationError, match="sample 5.*person_box"):
        load_dataset(rewrite(tmp_path, small, bad))


def test_infeasible_config():
    cfg = SynthConfig(person_w=(4, 5), person_h=(4, 5), min_parts=4, part_w_frac=(0.5, 0.6),
                      part_h_frac=(0.5, 0.6), n_train=3)
    with pytest.raises(ConfigError):
        gen_synthetic(cfg)
    with pytest.raises(ConfigError):
        SynthConfig(channels=4).validate()
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"bogus": 1})


def test_detections_without_jitter(small):
    dets = detections_from_gt(small, 0.0)
    for s, ds in zip(small.samples, dets):
        for p, d in zip(s.parts, ds):
            assert iou(p.box, d.box) == 1.0
            assert d.score == 1.0
            np.testing.assert_array_equal(d.c_u, np.eye(small.n_parts)[p.part_class])


def test_detections_with_jitter(small):
    def mean_iou(seed):
        dets = detections_from_gt(small, 0.2, seed)
        vals = [iou(p.box, d.box) for s, ds in zip(small.samples, dets) for p, d in zip(s.parts, ds)]
        return float(np.mean(vals[:100]))
    first = mean_iou(1)
    assert first == mean_iou(1) and first < 1.0
    for ds in detections_from_gt(small, 0.3, 1):
        for d in ds:
            d.validate()
    with pytest.raises(ConfigError):
        detections_from_gt(small, -0.1)
