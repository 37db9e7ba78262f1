import csv

import numpy as np
import pytest

from chmm.errors import ImpossibleSequenceError
from chmm.inference import forward
from chmm.learning import (
    EmConfig,
    OnlineEM,
    OnlineEmConfig,
    SufficientStats,
    batch_windows,
    e_step,
    e_step_corpus,
    fit_batch_em,
    fit_online_em,
    fit_with_early_stopping,
    m_step,
    test_bps,
)
from chmm.model import BlockStructure, BlockTransitionModel, CloneLayout, init_random, normalize_rows

from oracles import random_fixture


def reference_epoch(model, seqs, cfg, stat, init_rows, init_weight):
    """Window-by-window online EM written with the public E-step."""
    st = model.structure
    model_prior = model.prior
    flat = np.full(model.n_states, 1.0 / model.n_states)
    starts = np.zeros(model.n_states)
    for seq in seqs:
        for w, (lo, hi) in enumerate(batch_windows(seq.size, cfg.batch_size)):
            start = model_prior if w == 0 else flat
            current = BlockTransitionModel(st, model.data, start, validate=False)
            stats, _ = e_step(current, seq[lo:hi])
            stat = cfg.lam * stat + (1 - cfg.lam) * stats.xi
            init_weight *= cfg.lam
            data, _ = normalize_rows(st, stat + init_weight * init_rows, fallback=model.data)
            if w == 0:
                starts += stats.gamma1
            model = BlockTransitionModel(st, data, model_prior, validate=False)
    return model.replace(prior=starts / starts.sum(), validate=False), stat


def test_m_step_deterministic_path():
    layout = CloneLayout([1, 1])
    stats, _ = e_step(init_random(layout, 0), [0, 1, 0, 1])
    model = m_step(stats)
    np.testing.assert_allclose(model.to_dense(), [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(model.prior, [1.0, 0.0])


def test_m_step_row_normalization():
    st = BlockStructure.full(CloneLayout([2]))
    model = m_step(SufficientStats(st, np.array([2.0, 6.0, 1.0, 1.0]), np.array([1.0, 0.0])))
    np.testing.assert_allclose(model.to_dense()[0], [0.25, 0.75])


def test_m_step_rejects_zero_stats():
    with pytest.raises(ValueError):
        m_step(SufficientStats.zeros(BlockStructure.full(CloneLayout([2, 1]))))


def test_unvisited_rows_become_uniform():
    st = BlockStructure.full(CloneLayout([1, 2]))
    xi = np.zeros(st.n_entries)
    xi[st.block_slice(0, 1)] = [3.0, 1.0]
    model = m_step(SufficientStats(st, xi, np.array([1.0, 0, 0])))
    dense = model.to_dense()
    np.testing.assert_allclose(dense[0], [0.0, 0.75, 0.25])
    np.testing.assert_allclose(dense[1:], np.full((2, 3), 1 / 3))


def test_stats_merge_adds_and_checks_structure():
    model = init_random(CloneLayout([2, 2]), 1)
    a, _ = e_step(model, [0, 1, 1])
    b, _ = e_step(model, [1, 0])
    m = a + b
    np.testing.assert_allclose(m.xi, a.xi + b.xi)
    assert m.n_sequences == 2
    other = SufficientStats.zeros(BlockStructure.full(CloneLayout([1, 2])))
    with pytest.raises(ValueError):
        a.merge(other)


def test_corpus_e_step_threads_match_serial():
    model = init_random(CloneLayout([2, 3, 1]), 4)
    rng = np.random.default_rng(0)
    seqs = [rng.integers(0, 3, size=n) for n in (30, 5, 17, 40)]
    s1, l1 = e_step_corpus(model, seqs, threads=1)
    s4, l4 = e_step_corpus(model, seqs, threads=4)
    np.testing.assert_array_equal(s1.xi, s4.xi)
    assert l1 == l4


@pytest.mark.parametrize("seed", range(20))
def test_batch_em_is_monotone(backend, seed):
    rng = np.random.default_rng(seed)
    model, steps = random_fixture(rng, max_len=7, soft_prob=0.0, density=1.0)
    seq = rng.integers(0, model.n_symbols, size=60)
    _, rep = fit_batch_em(model.layout, seq, EmConfig(seed=seed), fixed_iters=50)
    ll = np.array(rep.train_loglik)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:]))


def test_batch_em_converges_and_is_deterministic():
    rng = np.random.default_rng(3)
    seq = rng.integers(0, 3, size=300)
    layout = CloneLayout([2, 2, 2])
    m1, r1 = fit_batch_em(layout, seq, EmConfig(seed=7, rel_tol=1e-5))
    m2, r2 = fit_batch_em(layout, seq, EmConfig(seed=7, rel_tol=1e-5))
    assert r1.stop_reason == "converged"
    np.testing.assert_array_equal(m1.data, m2.data)
    assert r1.train_loglik == r2.train_loglik


def test_impossible_training_sequence_names_index():
    layout = CloneLayout([1, 1])
    st = BlockStructure.from_pairs(layout, [(0, 1), (1, 0)])
    init = BlockTransitionModel(st, [1.0, 1.0], [0.5, 0.5])
    with pytest.raises(ImpossibleSequenceError) as info:
        fit_batch_em(layout, [np.array([0, 1]), np.array([0, 0])], init=init)
    assert info.value.sequence_index == 1


def test_batch_windows_overlap_by_one():
    assert batch_windows(10, 4) == [(0, 4), (3, 8), (7, 10)]
    assert batch_windows(9, 4) == [(0, 4), (3, 8), (7, 9)]
    # a trailing single symbol still carries one transition
    assert batch_windows(5, 4) == [(0, 4), (3, 5)]
    covered = set()
    for lo, hi in batch_windows(1003, 400):
        covered.update(range(lo, hi - 1))
    assert covered == set(range(1002))


@pytest.mark.parametrize("seed", range(4))
def test_online_kernel_matches_reference(backend, seed):
    rng = np.random.default_rng(seed)
    layout = CloneLayout([2, 1, 3])
    model = init_random(layout, seed)
    seqs = [rng.integers(0, 3, size=97), rng.integers(0, 3, size=30)]
    cfg = OnlineEmConfig(batch_size=16, lam=0.8)
    runner = OnlineEM(model, cfg)
    ref, stat = model, np.zeros(model.structure.n_entries)
    weight = cfg.init_weight
    for _ in range(3):
        got = runner.run_epoch(seqs)
        ref, stat = reference_epoch(ref, seqs, cfg, stat, model.data, weight)
        weight *= cfg.lam ** sum(len(batch_windows(s.size, 16)) for s in seqs)
        np.testing.assert_allclose(got.data, ref.data, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(got.prior, ref.prior, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(runner.stat, stat, rtol=1e-10, atol=1e-14)


def test_online_limit_matches_batch_m_step():
    rng = np.random.default_rng(5)
    layout = CloneLayout([2, 2, 2])
    seq = rng.integers(0, 3, size=4000)
    init = init_random(layout, 2)
    lam = 1 - 1e-12
    _, rep = fit_online_em(
        layout, seq, OnlineEmConfig(batch_size=400, lam=lam), init=init, fixed_epochs=1
    )
    wins = [seq[lo:hi] for lo, hi in batch_windows(seq.size, 400)]
    flat = init.replace(prior=np.full(init.n_states, 1 / init.n_states))
    stats, _ = e_step_corpus(init, wins[:1])
    rest, _ = e_step_corpus(flat, wins[1:])
    batch = m_step(stats + rest)
    online = m_step(SufficientStats(init.structure, rep.running_statistic, np.ones(init.n_states)))
    np.testing.assert_allclose(online.data, batch.data, rtol=1e-6)


def test_online_em_runs_and_reports():
    rng = np.random.default_rng(0)
    seq = rng.integers(0, 3, size=2000)
    model, rep = fit_online_em(
        CloneLayout([2, 2, 2]), seq, OnlineEmConfig(batch_size=200, epochs=5), EmConfig(seed=1),
        validation=rng.integers(0, 3, size=300),
    )
    assert rep.iters_run <= 5 and len(rep.val_bps) == rep.iters_run
    model.validate()
    with pytest.raises(ValueError):
        fit_online_em(CloneLayout([1, 1]), [0, 1, 0], OnlineEmConfig(batch_size=400))


def test_online_config_validation():
    with pytest.raises(ValueError):
        OnlineEmConfig(lam=1.0)
    with pytest.raises(ValueError):
        OnlineEmConfig(batch_size=1)
    with pytest.raises(ValueError):
        EmConfig(max_iters=0)


def test_early_stopping_selects_a_pair_and_retrains():
    rng = np.random.default_rng(1)
    train = rng.integers(0, 3, size=1200)
    val = rng.integers(0, 3, size=400)
    model, rep = fit_with_early_stopping(
        CloneLayout([2, 2, 2]), train, val, OnlineEmConfig(batch_size=200),
        max_online_epochs=2, max_batch_iters=5,
    )
    it1, it2 = rep.selected
    assert 0 <= it1 <= 2 and 0 <= it2 <= 5
    best = min(v for _, _, v in rep.search_trace)
    assert any(t[:2] == rep.selected and t[2] == best for t in rep.search_trace)
    assert rep.n_symbols == 1600
    model.validate()


def test_early_stopping_needs_validation():
    with pytest.raises(ValueError):
        fit_with_early_stopping(CloneLayout([1, 1]), [0, 1] * 500, [])


def test_report_csv(tmp_path):
    seq = np.random.default_rng(0).integers(0, 2, size=100)
    _, rep = fit_batch_em(CloneLayout([2, 2]), seq, fixed_iters=3, validation=seq[:20])
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "train_bps", "val_bps"]
    assert len(rows) == 4
    assert float(rows[1][1]) == pytest.approx(rep.train_bps[0])


def test_test_bps_pools_sequences():
    model = init_random(CloneLayout([1, 1]), 0)
    a, b = np.array([0, 1, 1, 0]), np.array([1, 1])
    ll = forward(model, a).loglik + forward(model, b).loglik
    assert test_bps(model, [a, b], smoothing=0.0) == pytest.approx(-ll / (6 * np.log(2)))
