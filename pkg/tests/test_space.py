import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roisearch.errors import (
    InvalidAssignmentError,
    MalformedEncodingError,
    NotEnumerableError,
    SchemaMismatchError,
)
from roisearch.space import (
    Config,
    Decision,
    IndexCodec,
    SearchSpace,
    binary_space,
    config_id,
    decode_config,
    encode_config,
    encode_float,
    encode_onehot,
    enumerate_configs,
    random_config,
)


def cat(name, *values):
    return Decision(name, "categorical", values)


def test_onehot_examples():
    assert encode_onehot(cat("p", "a", "b", "c"), "b").tolist() == [0, 1, 0]
    assert encode_onehot(cat("p", "a", "b"), "a").tolist() == [1, 0]
    assert encode_onehot(cat("p", "a", "b", "c", "d"), "d").tolist() == [0, 0, 0, 1]


def test_onehot_unknown_choice_names_the_decision():
    with pytest.raises(InvalidAssignmentError, match="'kind'"):
        encode_onehot(cat("kind", "a", "b"), "z")


def test_float_examples():
    d = Decision("x", "float", bounds=(0, 10))
    assert encode_float(d, 0) == 0.0
    assert encode_float(d, 10) == 1.0
    lr = Decision("lr", "float", bounds=(0.001, 0.1))
    assert encode_float(lr, 0.0505) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(InvalidAssignmentError):
        encode_float(d, 10.5)


def test_decision_invariants():
    with pytest.raises(ValueError):
        cat("x", "a")
    with pytest.raises(ValueError):
        cat("x", "a", "a")
    with pytest.raises(ValueError):
        Decision("x", "float", bounds=(1.0, 1.0))
    with pytest.raises(ValueError):
        SearchSpace((cat("x", 0, 1), cat("x", 0, 1)))


def test_encode_config_examples():
    sp = SearchSpace((cat("p", "a", "b"), cat("q", "x", "y", "z")))
    v = encode_config(sp, {"p": "b", "q": "x"})
    assert v.tolist() == [0, 1, 1, 0, 0]
    assert decode_config(sp, v) == Config(p="b", q="x")
    sp2 = SearchSpace((Decision("f", "float", bounds=(0, 1)), cat("c", "a", "b")))
    assert encode_config(sp2, {"f": 0.25, "c": "b"}).tolist() == [0.25, 0, 1]


def test_schema_mismatch_lists_names():
    sp = SearchSpace((cat("p", "a", "b"), cat("q", "x", "y")))
    with pytest.raises(SchemaMismatchError) as e:
        encode_config(sp, {"p": "a", "r": 1})
    assert e.value.missing == ("q",)
    assert e.value.extra == ("r",)


def test_decode_examples():
    sp = Decision("f", "float", bounds=(0, 10))
    assert decode_config(SearchSpace((sp,)), [0.5]) == Config(f=5.0)
    with pytest.raises(MalformedEncodingError):
        decode_config(SearchSpace((cat("p", "a", "b"),)), [0.4, 0.6])
    with pytest.raises(MalformedEncodingError):
        decode_config(SearchSpace((cat("p", "a", "b"),)), [1.0, 0.0, 0.0])


def test_width_formula(mixed_space):
    assert mixed_space.width == 3 + 3 + 1 + 2
    assert encode_config(mixed_space, random_config(mixed_space, 0)).shape == (mixed_space.width,)


def test_random_config_determinism_and_balance():
    sp = binary_space(1)
    assert random_config(sp, 11) == random_config(sp, 11)
    rng = np.random.default_rng(0)
    ones = sum(random_config(sp, rng)["d00"] for _ in range(10_000))
    assert 0.47 <= ones / 10_000 <= 0.53
    with pytest.raises(ValueError):
        random_config(SearchSpace(()), 0)


def test_enumeration_examples(mixed_space):
    sp = SearchSpace((cat("a", 1, 2, 3), cat("b", *"wxyz")))
    allc = list(enumerate_configs(sp))
    assert len(allc) == 12 and len(set(allc)) == 12
    assert [c["a"] for c in allc[:4]] == [1, 1, 1, 1]
    assert list(enumerate_configs(SearchSpace((cat("p", "a", "b"),)))) == [Config(p="a"), Config(p="b")]
    assert binary_space(18).size() == 262_144
    assert IndexCodec(binary_space(18)).all_indices().shape == (262_144, 18)
    with pytest.raises(NotEnumerableError):
        next(enumerate_configs(mixed_space))
    with pytest.raises(NotEnumerableError):
        next(enumerate_configs(binary_space(12), cap=1000))


def test_codec_matches_enumeration_order():
    sp = SearchSpace((cat("a", 1, 2, 3), cat("b", "x", "y")))
    codec = IndexCodec(sp)
    assert [codec.to_config(r) for r in codec.all_indices()] == list(enumerate_configs(sp))
    for c in enumerate_configs(sp):
        row = codec.to_index(c)
        assert np.array_equal(codec.encode(row)[0], encode_config(sp, c))


def test_codec_discretises_floats(mixed_space):
    codec = IndexCodec(mixed_space, levels=8)
    assert codec.sizes.tolist() == [3, 3, 8, 2]
    assert codec.choices[2][0] == 0.0 and codec.choices[2][-1] == 0.5


def test_config_identity_ignores_key_order():
    a = Config({"x": 1, "y": "b"})
    b = Config({"y": "b", "x": 1})
    sp = SearchSpace((cat("x", 1, 2), cat("y", "a", "b")))
    assert a == b and hash(a) == hash(b)
    assert config_id(sp, a) == config_id(sp, b)
    bumped = SearchSpace(sp.decisions, sp.name, sp.version + 1)
    assert config_id(bumped, a) != config_id(sp, a)


def test_space_json_round_trip(tmp_path, mixed_space):
    p = tmp_path / "space.json"
    mixed_space.save(p)
    assert SearchSpace.load(p) == mixed_space
    data = json.loads(p.read_text())
    assert [d["name"] for d in data["decisions"]] == mixed_space.names


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_round_trip_property(seed):
    sp = SearchSpace(
        (
            cat("a", "p", "q", "r"),
            Decision("b", "float", bounds=(-2.0, 3.0)),
            cat("c", 0, 1),
            Decision("d", "float", bounds=(0.001, 0.1)),
        )
    )
    c = random_config(sp, seed)
    back = decode_config(sp, encode_config(sp, c))
    assert back["a"] == c["a"] and back["c"] == c["c"]
    assert back["b"] == pytest.approx(c["b"], abs=1e-12)
    assert back["d"] == pytest.approx(c["d"], abs=1e-12)
