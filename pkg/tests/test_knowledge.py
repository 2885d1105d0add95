import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kercnn.errors import ConfigError, ParseError, ValidationError
from kercnn.knowledge import (KnowledgeGraph, build_from_pairs, graph_to_dict, load_graph,
                              save_graph, uniform_graph)

PARTS = ("shirt", "skirt")
ATTRS = ("a1", "a2", "a3")


def example_graph():
    return build_from_pairs([(0, {0, 1}), (0, {0}), (1, {2})], PARTS, ATTRS)


def test_build_example():
    g = example_graph().g
    np.testing.assert_allclose(g, [[2 / 3, 1 / 3, 0], [0, 0, 1]], rtol=0, atol=1e-15)


def test_empty_corpus_and_unseen_class():
    assert np.all(build_from_pairs([], PARTS, ATTRS).g == 0)
    kg = build_from_pairs([(1, {0, 2})], PARTS, ATTRS)
    assert np.all(kg.g[0] == 0)
    assert kg.attributes_of(1) == [0, 2]


def test_empty_vocabulary():
    with pytest.raises(ConfigError):
        build_from_pairs([], [], ATTRS)


def test_out_of_range_annotation():
    with pytest.raises(ValidationError):
        build_from_pairs([(2, {0})], PARTS, ATTRS)


def test_round_trip(tmp_path):
    kg = example_graph()
    path = tmp_path / "kg.json"
    save_graph(kg, path)
    back = load_graph(path)
    assert back == kg and back.g.tobytes() == kg.g.tobytes()


def write_doc(tmp_path, mutate):
    doc = graph_to_dict(example_graph())
    mutate(doc)
    path = tmp_path / "kg.json"
    path.write_text(json.dumps(doc))
    return path


def test_row_summing_to_two_is_rejected(tmp_path):
    def double(doc):
        doc["g"][:3] = [1.0, 1.0, 0.0]
    with pytest.raises(ValidationError, match="row 0"):
        load_graph(write_doc(tmp_path, double))


def test_duplicate_part_name_is_rejected(tmp_path):
    def dup(doc):
        doc["part_names"] = ["shirt", "shirt"]
    with pytest.raises(ValidationError, match="duplicate"):
        load_graph(write_doc(tmp_path, dup))


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "kg.json"
    path.write_text('{"format": "kercnn-knowledge",\n  "g": [1, 2,,]}')
    with pytest.raises(ParseError) as info:
        load_graph(path)
    assert info.value.line == 2 and info.value.offset is not None


def test_wrong_format_tag(tmp_path):
    def tag(doc):
        doc["format"] = "other"
    with pytest.raises(ParseError):
        load_graph(write_doc(tmp_path, tag))


def test_entries_outside_unit_interval():
    with pytest.raises(ValidationError):
        KnowledgeGraph(np.array([[1.5, -0.5]]), ["p"], ["a", "b"])


def test_graph_is_read_only():
    kg = example_graph()
    with pytest.raises(ValueError):
        kg.g[0, 0] = 0.5


def test_uniform_graph():
    kg = uniform_graph(PARTS, ATTRS)
    np.testing.assert_allclose(kg.g, 1 / 3)


corpus = st.lists(st.tuples(st.integers(0, 3), st.frozensets(st.integers(0, 4), max_size=5)),
                  max_size=30)


@settings(max_examples=150, deadline=None)
@given(corpus, st.randoms(use_true_random=False))
def test_graph_properties(pairs, rnd):
    parts, attrs = [f"p{i}" for i in range(4)], [f"a{i}" for i in range(5)]
    kg = build_from_pairs(pairs, parts, attrs)
    for n in range(4):
        s = kg.g[n].sum()
        assert abs(s - 1) <= 1e-6 or np.all(kg.g[n] == 0)
    seen = {(p, a) for p, aa in pairs for a in aa}
    for n in range(4):
        for c in range(5):
            assert (kg.g[n, c] > 0) == ((n, c) in seen)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(build_from_pairs(shuffled, parts, attrs).g, kg.g, rtol=0, atol=1e-15)
