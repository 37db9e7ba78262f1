import struct

import numpy as np
import pytest

from chmm.errors import (
    CapacityError,
    CorruptHeaderError,
    ModelValidationError,
    NonFiniteValueError,
    ShapeMismatchError,
)
from chmm.io import load_model, save_model
from chmm.model import (
    Alphabet,
    BlockStructure,
    BlockTransitionModel,
    CloneLayout,
    allocate_clones_by_frequency,
    allocate_clones_by_ngram,
    apportion,
    init_random,
    observed_block_support,
)


def test_layout_offsets_and_symbol_map():
    layout = CloneLayout([2, 1, 3])
    assert layout.n_states == 6
    assert list(layout.offsets) == [0, 2, 3, 6]
    assert list(layout.symbol_of_state) == [0, 0, 1, 2, 2, 2]
    assert list(layout.states(2)) == [3, 4, 5]
    with pytest.raises(ValueError):
        CloneLayout([2, 0])
    with pytest.raises(ValueError):
        CloneLayout([])


def test_alphabet_roundtrip_and_errors():
    a = Alphabet("abc")
    assert a.decode(a.encode("cab")) == list("cab")
    assert Alphabet.from_corpus("bca") == a
    with pytest.raises(ValueError):
        Alphabet("aa")
    with pytest.raises(ValueError):
        a.encode("z")


@pytest.mark.parametrize(
    "corpus, capacity, expected",
    [("aab", 3, [2, 1]), ("abab", 4, [2, 2]), ("aaab", 8, [6, 2])],
)
def test_allocate_by_frequency(corpus, capacity, expected):
    assert list(allocate_clones_by_frequency(corpus, capacity).clones_per_symbol) == expected


@pytest.mark.parametrize(
    "corpus, capacity, expected",
    [("abab", 4, [2, 2]), ("aabac", 6, [3, 2, 1]), ("aaaa", 5, [5])],
)
def test_allocate_by_ngram(corpus, capacity, expected):
    assert list(allocate_clones_by_ngram(corpus, 2, capacity).clones_per_symbol) == expected


def test_allocation_respects_minimum_and_total():
    out = apportion([1000, 1, 1, 1], 20, min_per_symbol=2)
    assert out.sum() == 20 and out.min() >= 2
    with pytest.raises(CapacityError):
        apportion([1, 1, 1], 5, min_per_symbol=2)
    with pytest.raises(ValueError):
        allocate_clones_by_ngram("ab", 1, 4)


def test_init_random_deterministic_and_stochastic():
    layout = CloneLayout([3, 2, 4])
    a, b = init_random(layout, 9), init_random(layout, 9)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_allclose(a.to_dense().sum(axis=1), 1.0, atol=1e-12)
    assert not np.array_equal(a.data, init_random(layout, 10).data)


def test_init_random_single_state():
    model = init_random(CloneLayout([1]), 0)
    np.testing.assert_array_equal(model.to_dense(), [[1.0]])


def test_init_random_block_support():
    layout = CloneLayout([2, 2])
    model = init_random(layout, 0, block_support={(0, 1), (1, 0)})
    assert model.has_block(0, 1) and not model.has_block(0, 0)
    np.testing.assert_array_equal(model.block(0, 0), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        init_random(layout, 0, block_support={(0, 1)})


def test_init_random_observed_zeroes_unseen_pairs():
    layout = CloneLayout([2, 2, 1])
    seq = np.array([0, 1, 0, 1, 2])
    model = init_random(layout, 0, observed=[seq])
    assert observed_block_support([seq]) == {(0, 1), (1, 0), (1, 2)}
    assert np.all(model.block(0, 0) == 0) and np.all(model.block(0, 1) > 0)
    # symbol 2 has no observed successor and keeps a full row
    assert np.all(model.to_dense()[4] > 0)
    model.validate()


def test_validation_rejects_bad_models():
    st = BlockStructure.full(CloneLayout([2]))
    with pytest.raises(ModelValidationError):
        BlockTransitionModel(st, [0.5, 0.4, 0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ModelValidationError):
        BlockTransitionModel(st, [0.5, 0.5, 0.5, 0.5], [0.7, 0.7])
    with pytest.raises(ModelValidationError):
        BlockTransitionModel(st, [np.nan, 1.0, 0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ModelValidationError):
        BlockTransitionModel(st, [0.5, 0.5], [0.5, 0.5])


def test_model_is_read_only():
    model = init_random(CloneLayout([2, 2]), 0)
    with pytest.raises(ValueError):
        model.data[0] = 0.0


def test_from_dense_and_blocks_agree():
    layout = CloneLayout([1, 2])
    T = np.array([[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.2, 0.3, 0.5]])
    a = BlockTransitionModel.from_dense(layout, T, [1, 0, 0])
    assert not a.has_block(0, 0)
    b = BlockTransitionModel.from_blocks(
        layout, {(0, 1): T[:1, 1:], (1, 0): T[1:, :1], (1, 1): T[1:, 1:]}, [1, 0, 0]
    )
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.to_dense(), T)


def test_save_load_bit_exact(tmp_path):
    model = init_random(CloneLayout([2, 3, 1]), 4, block_support={(0, 1), (1, 2), (2, 0), (1, 1)},
                        alphabet=Alphabet("xyz"))
    path = tmp_path / "m.chmm"
    save_model(model, path)
    back = load_model(path)
    assert back.data.tobytes() == model.data.tobytes()
    assert back.prior.tobytes() == model.prior.tobytes()
    assert back.alphabet == model.alphabet
    assert back.structure == model.structure


def test_load_errors_are_distinct(tmp_path):
    model = init_random(CloneLayout([2, 2]), 0)
    path = tmp_path / "m.chmm"
    save_model(model, path)
    blob = path.read_bytes()

    (tmp_path / "trunc").write_bytes(blob[:-8])
    with pytest.raises(ShapeMismatchError):
        load_model(tmp_path / "trunc")

    (tmp_path / "magic").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CorruptHeaderError):
        load_model(tmp_path / "magic")

    (tmp_path / "short").write_bytes(blob[:6])
    with pytest.raises(CorruptHeaderError):
        load_model(tmp_path / "short")

    _, _, hlen = struct.unpack_from("<4sII", blob)
    bad = bytearray(blob)
    bad[12 + hlen:12 + hlen + 8] = struct.pack("<d", float("nan"))
    (tmp_path / "nan").write_bytes(bytes(bad))
    with pytest.raises(NonFiniteValueError):
        load_model(tmp_path / "nan")
