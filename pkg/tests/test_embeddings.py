import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2ac.embeddings import (
    EmbeddingMatrix,
    Encoder,
    ExampleRecord,
    encode,
    load_embeddings,
    lookup,
    parse_embeddings,
    save_embeddings,
)
from l2ac.errors import EmptyDocument, FormatError, ParseError, UnsupportedEncoder


@pytest.fixture
def small():
    return EmbeddingMatrix(3, ["a", "b"], ["x", "y"], [[1.0, 2.0, 3.0], [0.1, -0.2, 1e-300]])


def test_encode_is_deterministic_and_normalised():
    enc = Encoder("feature-hash", dim=32, seed=4)
    doc = "red wool scarf red".split()
    v1, v2 = encode(doc, enc), encode(doc, enc)
    assert v1.tobytes() == v2.tobytes()
    assert abs(np.linalg.norm(v1) - 1.0) <= 1e-12


def test_single_token_hits_one_bucket():
    v = encode(["a"], Encoder(dim=4, seed=0))
    assert np.count_nonzero(v) == 1
    assert v.max() == 1.0


def test_encode_same_across_processes():
    code = ("from l2ac.embeddings import Encoder, encode;"
            "print(encode('a b c d'.split(), Encoder(dim=8, seed=3)).tolist())")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert out.strip() == str(encode("a b c d".split(), Encoder(dim=8, seed=3)).tolist())


def test_encode_errors():
    with pytest.raises(EmptyDocument):
        encode([], Encoder())
    with pytest.raises(UnsupportedEncoder):
        encode(["a"], Encoder("precomputed", dim=4))


def test_load_small_file(tmp_path):
    path = tmp_path / "e.emb"
    path.write_text("#l2ac-emb v1 dim=3\n# a comment\nid1\tA\t1 2 3\n\nid2\tB\t4 5 6\n")
    m = load_embeddings(path)
    assert len(m) == 2 and m.dim == 3
    assert m.ids == ["id1", "id2"] and m.labels == ["A", "B"]


def test_short_row_reports_line(tmp_path):
    path = tmp_path / "e.emb"
    path.write_text("#l2ac-emb v1 dim=3\nid1\tA\t1 2 3\nid2\tB\t4 5\n")
    with pytest.raises(ParseError) as info:
        load_embeddings(path)
    assert info.value.line == 3
    assert isinstance(info.value, FormatError)


@pytest.mark.parametrize("text", ["", "#l2ac-emb v2 dim=3\n", "#l2ac-emb v1 dim=2\nonly-one-field\n",
                                  "#l2ac-emb v1 dim=1\na\tA\tnan\n", "#l2ac-emb v1 dim=1\na\tA\t1\na\tA\t2\n"])
def test_malformed_inputs(text):
    with pytest.raises(ParseError):
        parse_embeddings(text)


def test_round_trip_is_bit_exact(tmp_path, small):
    save_embeddings(small, tmp_path / "m.emb")
    assert load_embeddings(tmp_path / "m.emb") == small


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=4, max_size=4),
                min_size=0, max_size=6))
def test_round_trip_property(tmp_path_factory, rows):
    m = EmbeddingMatrix(4, [f"r{i}" for i in range(len(rows))], ["L"] * len(rows), np.array(rows).reshape(-1, 4))
    path = tmp_path_factory.mktemp("rt") / "m.emb"
    save_embeddings(m, path)
    assert load_embeddings(path) == m


def test_lookup_order_and_range(small):
    assert lookup(small, []) == []
    np.testing.assert_array_equal(lookup(small, [0])[0], [1.0, 2.0, 3.0])
    got = lookup(small, [1, 0])
    np.testing.assert_array_equal(got[0], small.vectors[1])
    np.testing.assert_array_equal(got[1], small.vectors[0])
    with pytest.raises(IndexError):
        lookup(small, [2])


def test_matrix_invariants():
    with pytest.raises(ValueError):
        EmbeddingMatrix(2, ["a", "a"], ["x", "x"], [[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        ExampleRecord("a", "x", (float("inf"),))
    m = EmbeddingMatrix.from_records([ExampleRecord("a", "x", (1.0, 0.0)), ExampleRecord("b", "y", (0.0, 1.0))])
    assert m.index == {"a": 0, "b": 1}
    assert m.record(1) == ExampleRecord("b", "y", (0.0, 1.0))
