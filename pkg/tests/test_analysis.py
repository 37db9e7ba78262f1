import csv
import logging
import math
from collections import defaultdict

import numpy as np
import pytest

from chmm.analysis import (
    ScrambledEncoding,
    decode_scrambled,
    encode_scrambled,
    export_graph,
    fit_kneser_ney,
    graph_edges,
    ngram_bps,
    permutation_baseline,
    prune_sweep,
    prune_transitions,
    scramble_words,
    word_spans,
)
from chmm.datasets import ToyFsmParams, toy_generate, toy_ground_truth_model
from chmm.inference import EvidenceSequence, Soft, bits_per_symbol
from chmm.learning import EmConfig, fit_batch_em
from chmm.model import Alphabet, BlockTransitionModel, CloneLayout, init_random
from chmm.text import TEXT_ALPHABET


@pytest.fixture(scope="module")
def trained_toy():
    train = toy_generate(ToyFsmParams(k=2, seed=100), 11250)
    test = toy_generate(ToyFsmParams(k=2, seed=1000), 11250)
    counts = [1, 1, 1, 1] + [2] * 6
    model, _ = fit_batch_em(CloneLayout(counts), train, EmConfig(seed=0, support="full"))
    return model, test


# scrambled encoding

def test_short_words_are_hard():
    enc = encode_scrambled("cat", TEXT_ALPHABET)
    assert enc.evidence.is_hard
    assert enc.boundaries == [(0, 3)]


def test_wrod_encoding():
    enc = encode_scrambled("wrod", TEXT_ALPHABET)
    steps = enc.evidence.steps
    r, o = TEXT_ALPHABET.index("r"), TEXT_ALPHABET.index("o")
    assert steps[0] == TEXT_ALPHABET.index("w")
    assert steps[3] == TEXT_ALPHABET.index("d")
    assert steps[1] == Soft({r: 0.5, o: 0.5}) and steps[2] == Soft({r: 0.5, o: 0.5})


def test_duplicate_interior_letters_weighted_by_multiplicity():
    enc = encode_scrambled("beeet", TEXT_ALPHABET)
    e = TEXT_ALPHABET.index("e")
    # a single-letter support collapses to hard evidence
    assert enc.evidence.steps[2] == e
    enc = encode_scrambled("baabt", TEXT_ALPHABET)
    a, b = TEXT_ALPHABET.index("a"), TEXT_ALPHABET.index("b")
    assert enc.evidence.steps[1] == Soft({a: 2 / 3, b: 1 / 3})


def test_encoding_invariant_under_interior_permutation():
    text = "the quick brown foxes jumped over lazy dogs"
    a = encode_scrambled(text, TEXT_ALPHABET)
    for seed in range(5):
        b = encode_scrambled(scramble_words(text, seed), TEXT_ALPHABET)
        assert a.boundaries == b.boundaries
        for x, y in zip(a.evidence.steps, b.evidence.steps):
            assert x == y


def test_spaces_stay_hard_and_spans_found():
    text = " ab  cdef "
    assert word_spans(text) == [(1, 3), (5, 9)]
    enc = encode_scrambled(text, TEXT_ALPHABET)
    space = TEXT_ALPHABET.index(" ")
    for n in (0, 3, 4, 9):
        assert enc.evidence.steps[n] == space


def test_malformed_boundaries_rejected():
    with pytest.raises(ValueError):
        encode_scrambled("abcd", TEXT_ALPHABET, boundaries=[(0, 5)])
    with pytest.raises(ValueError):
        encode_scrambled("abcd", TEXT_ALPHABET, boundaries=[(0, 3), (2, 4)])
    with pytest.raises(ValueError):
        encode_scrambled("abcd", TEXT_ALPHABET, boundaries=[(2, 2)])


def test_scramble_preserves_ends_and_multiset():
    text = "scrambling preserves first and last letters"
    out = scramble_words(text, 3)
    assert out != text
    for (s, e), (s2, e2) in zip(word_spans(text), word_spans(out)):
        assert (s, e) == (s2, e2)
        assert text[s] == out[s] and text[e - 1] == out[e - 1]
        assert sorted(text[s:e]) == sorted(out[s:e])


def test_permutation_baseline_by_hand():
    # "wrod": 2 interior letters, 1/2; "cat": 1; "seed": interior "ee", 1
    assert permutation_baseline("wrod") == pytest.approx(0.5)
    assert permutation_baseline("cat") == 1.0
    assert permutation_baseline("seed") == 1.0
    # "abcde": interior "bcd", 1/6; average with "cat"
    assert permutation_baseline("abcde cat") == pytest.approx((1 / 6 + 1) / 2)


# decoding

def test_unscrambled_decode_is_identity():
    text = "a small example of plain text"
    alpha = Alphabet.from_corpus(text)
    seq = alpha.encode(text)
    # a bigram model fitted by counts gives the text positive probability
    C = np.ones((alpha.size, alpha.size))
    np.add.at(C, (seq[:-1], seq[1:]), 5.0)
    T = C / C.sum(axis=1, keepdims=True)
    model = BlockTransitionModel.from_dense(CloneLayout([1] * alpha.size), T, np.full(alpha.size, 1 / alpha.size), alpha)
    enc = ScrambledEncoding(EvidenceSequence.from_symbols(seq), word_spans(text), list(text))
    res = decode_scrambled(model, enc)
    assert res.text == text
    assert res.word_accuracy == 1.0 and res.char_accuracy == 1.0


def test_toy_unique_path_recovery():
    model = toy_ground_truth_model(2)
    truth = [0, 4, 6, 7, 8, 1, 2, 5, 6, 7, 9, 3]
    scrambled = [0, 8, 7, 4, 6, 1, 2, 7, 9, 6, 5, 3]
    enc = encode_scrambled(scrambled, model.alphabet, boundaries=[(0, 6), (6, 12)])
    res = decode_scrambled(model, enc, reference=truth)
    assert res.symbols == truth
    assert res.word_accuracy == 1.0
    assert res.char_accuracy == 1.0


def test_impossible_word_counted_wrong():
    model = toy_ground_truth_model(2)
    seq = [0, 4, 6, 7, 8, 3, 2, 5, 6, 7, 9, 3]
    enc = encode_scrambled(seq, model.alphabet, boundaries=[(0, 6), (6, 12)])
    res = decode_scrambled(model, enc)
    assert res.n_impossible_words == 1
    assert res.word_correct == [False, True]


# pruning

def test_prune_zero_threshold_is_identity():
    model = init_random(CloneLayout([2, 3]), 1)
    out, row = prune_transitions(model, 0.0)
    np.testing.assert_array_equal(out.data, model.data)
    assert row.fraction_zeroed == 0.0


def test_prune_above_max_gives_uniform_rows():
    model = init_random(CloneLayout([2, 3]), 1)
    out, row = prune_transitions(model, 2.0)
    np.testing.assert_allclose(out.to_dense(), np.full((5, 5), 0.2))
    assert row.fraction_zeroed == 1.0


def test_prune_uniform_over_previous_support():
    layout = CloneLayout([1, 2])
    T = np.array([[0.0, 0.6, 0.4], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    model = BlockTransitionModel.from_dense(layout, T, [1, 0, 0])
    out, _ = prune_transitions(model, 0.9)
    np.testing.assert_allclose(out.to_dense()[0], [0.0, 0.5, 0.5])
    np.testing.assert_allclose(out.to_dense()[1], [0.5, 0.5, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_prune_keeps_row_stochastic_and_monotone(seed):
    model = init_random(CloneLayout([3, 2, 4]), seed)
    seq = np.random.default_rng(seed).integers(0, 3, size=300)
    thresholds = np.linspace(0, 0.6, 13)
    report = prune_sweep(model, thresholds, seq)
    for t in thresholds:
        prune_transitions(model, t)[0].validate()
    fr = [r.fraction_zeroed for r in report.rows]
    assert fr == sorted(fr)


def test_trained_toy_model_prunes(trained_toy):
    model, test = trained_toy
    base = bits_per_symbol(model, test, 1e-5)
    assert base < 0.52
    best = None
    for t in (1e-4, 1e-3, 1e-2, 0.05, 0.1):
        _, row = prune_transitions(model, t, test)
        if row.fraction_zeroed >= 0.9 and row.bps - base < 0.01:
            best = row
    assert best is not None


def test_prune_report_csv(tmp_path):
    model = init_random(CloneLayout([2, 2]), 0)
    report = prune_sweep(model, [0.3, 0.0, 0.1], np.array([0, 1, 1, 0, 1]))
    assert report.thresholds == [0.0, 0.1, 0.3]
    path = tmp_path / "p.csv"
    report.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["threshold", "fraction_zeroed", "bps"]
    assert len(rows) == 4 and float(rows[3][0]) == 0.3


# graph export

def test_deterministic_cycle_has_two_edges(tmp_path):
    layout = CloneLayout([1, 1])
    model = BlockTransitionModel.from_dense(layout, [[0, 1], [1, 0]], [1, 0], Alphabet("xy"))
    path = tmp_path / "g.txt"
    assert export_graph(model, path) == 2
    assert path.read_text().splitlines() == ["x/0 y/0 1.0", "y/0 x/0 1.0"]


def test_edge_count_matches_threshold(tmp_path):
    model = init_random(CloneLayout([3, 2, 2]), 5)
    for t in (0.0, 0.05, 0.2, 0.5):
        n = export_graph(model, tmp_path / "g.dot", t, fmt="dot")
        assert n == int(((model.data >= t) & (model.data > 0)).sum())
        text = (tmp_path / "g.dot").read_text()
        assert text.startswith("digraph") and text.count("->") == n
    with pytest.raises(ValueError):
        export_graph(model, tmp_path / "g", fmt="gml")


def noise_components(edges, signal):
    adj = defaultdict(set)
    nodes = set()
    for s, d, _ in edges:
        if s.split("/")[0] in signal or d.split("/")[0] in signal:
            continue
        adj[s].add(d)
        adj[d].add(s)
        nodes.update((s, d))
    comps, seen = [], set()
    for n in sorted(nodes):
        if n in seen:
            continue
        stack, comp = [n], set()
        while stack:
            x = stack.pop()
            if x not in comp:
                comp.add(x)
                stack.extend(adj[x] - comp)
        seen |= comp
        comps.append(comp)
    return comps


def test_ground_truth_graph_has_two_noise_paths():
    model = toy_ground_truth_model(2)
    comps = noise_components(graph_edges(model), {"0", "1", "2", "3"})
    assert len(comps) == 2
    for comp in comps:
        assert sorted(int(x.split("/")[0]) for x in comp) == list(range(4, 10))


def test_trained_pruned_graph_has_two_noise_paths(trained_toy):
    model, _ = trained_toy
    pruned, _ = prune_transitions(model, 0.05)
    comps = noise_components(graph_edges(pruned, 0.05), {"0", "1", "2", "3"})
    assert len(comps) == 2
    for comp in comps:
        assert sorted(int(x.split("/")[0]) for x in comp) == list(range(4, 10))


# Kneser-Ney

def test_unigram_normalized():
    m = fit_kneser_ney([0, 0, 0, 1], 1, vocab_size=3)
    d = m.distribution()
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    # D = 1 (one singleton, no doubletons): P(a) = 2/4 + (2/4)(1/3)
    assert d[0] == pytest.approx(2 / 3)
    assert d[1] == pytest.approx(1 / 6) and d[2] == pytest.approx(1 / 6)


def test_bigram_by_hand():
    # "abab": bigram D = 1/3 (ba once, ab twice); unigram continuation counts a:1, b:1 give P(a) = 1/2
    m = fit_kneser_ney([0, 1, 0, 1], 2, vocab_size=2)
    assert m.discounts[2] == pytest.approx(1 / 3)
    assert m.prob(0) == pytest.approx(0.5)
    assert m.prob(1, [0]) == pytest.approx(11 / 12)
    assert m.prob(0, [0]) == pytest.approx(1 / 12)


def test_distributions_normalized_on_reachable_contexts():
    rng = np.random.default_rng(0)
    train = rng.integers(0, 5, size=2000)
    test = rng.integers(0, 5, size=300)
    m = fit_kneser_ney(train, 4, vocab_size=6)
    for n in range(0, test.size, 7):
        ctx = test[max(0, n - 3):n]
        assert m.distribution(ctx).sum() == pytest.approx(1.0, abs=1e-9)
    assert math.isfinite(ngram_bps(m, test))


def test_higher_order_fits_train_better():
    seq = TEXT_ALPHABET.encode("the cat sat on the mat and the dog sat on the log " * 20)
    b1 = ngram_bps(fit_kneser_ney(seq, 1, 27), seq)
    b3 = ngram_bps(fit_kneser_ney(seq, 3, 27), seq)
    assert b3 <= b1


def test_degenerate_counts_fall_back(caplog):
    with caplog.at_level(logging.WARNING):
        m = fit_kneser_ney([0, 0, 0, 0, 0, 0], 2, vocab_size=2)
    assert m.discounts[2] == 0.5
    assert "degenerate" in caplog.text


def test_kneser_ney_errors():
    with pytest.raises(ValueError):
        fit_kneser_ney([0, 1], 2)
    with pytest.raises(ValueError):
        fit_kneser_ney([0, 1, 2], 0)


def test_chmm_beats_five_gram_on_toy_k3():
    k = 3
    train = toy_generate(ToyFsmParams(k=k, seed=101), 33750)
    test = toy_generate(ToyFsmParams(k=k, seed=1001), 33750)
    kn = ngram_bps(fit_kneser_ney(train, 5, 4 * k + 2), test)
    chmm = bits_per_symbol(toy_ground_truth_model(k), test, 1e-5)
    assert chmm < kn
