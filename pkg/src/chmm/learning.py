"""Baum-Welch for cloned HMMs: block E-step, M-step, batch and online EM."""

from __future__ import annotations

import csv
import math
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from chmm import kernels
from chmm.errors import ImpossibleSequenceError
from chmm.inference import LN2, _run, as_evidence, bits_per_symbol, forward
from chmm.model import (
    Alphabet,
    BlockStructure,
    BlockTransitionModel,
    CloneLayout,
    init_random,
    normalize_rows,
    observed_block_support,
)


SUPPORTS = ("observed", "masked", "full")


@dataclass
class EmConfig:
    max_iters: int = 1000
    rel_tol: float = 1e-6
    seed: int = 0
    eval_smoothing: float = 1e-5
    threads: int = 1
    # block structure of the random initialization: "observed" drops blocks
    # of symbol pairs never seen in training, "masked" keeps the full grid
    # with those entries at zero, "full" fills every block
    support: str = "observed"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 <= self.eval_smoothing < 1.0:
            raise ValueError("eval_smoothing must lie in [0, 1)")
        if self.support not in SUPPORTS:
            raise ValueError(f"support must be one of {SUPPORTS}, got {self.support!r}")


@dataclass
class OnlineEmConfig:
    batch_size: int = 400
    lam: float = 0.9
    epochs: int = 1000
    # pseudo-count weight of the initial model in the running statistic
    init_weight: float = 1.0
    # online EM is not monotone and crawls along plateaus, so it only stops
    # once the epoch loglik is stationary to this relative tolerance
    tol: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("forgetting factor must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class TrainReport:
    n_symbols: int
    train_loglik: list[float] = field(default_factory=list)
    val_bps: list[float] = field(default_factory=list)
    stop_reason: str = "max_iters"
    iters_run: int = 0
    # (online epochs, batch iterations) chosen by early stopping
    selected: tuple[int, int] | None = None
    search_trace: list[tuple[int, int, float]] = field(default_factory=list)
    running_statistic: np.ndarray | None = None

    @property
    def train_bps(self) -> list[float]:
        return [-ll / (self.n_symbols * LN2) for ll in self.train_loglik]

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "train_bps", "val_bps"])
            for k, bps in enumerate(self.train_bps):
                val = self.val_bps[k] if k < len(self.val_bps) else ""
                w.writerow([k + 1, repr(bps), repr(val) if val != "" else ""])


@dataclass
class SufficientStats:
    """Expected transition counts (flat, same packing as the model) and the
    summed initial-state posterior."""

    structure: BlockStructure
    xi: np.ndarray
    gamma1: np.ndarray
    n_sequences: int = 1

    @classmethod
    def zeros(cls, structure: BlockStructure) -> SufficientStats:
        return cls(structure, np.zeros(structure.n_entries), np.zeros(structure.layout.n_states), 0)

    def merge(self, other: SufficientStats) -> SufficientStats:
        if other.structure is not self.structure and other.structure != self.structure:
            raise ValueError("cannot merge statistics with different block structures")
        return SufficientStats(
            self.structure, self.xi + other.xi, self.gamma1 + other.gamma1,
            self.n_sequences + other.n_sequences,
        )

    __add__ = merge

    def block(self, i: int, j: int) -> np.ndarray | None:
        return self.structure.view(self.xi, i, j)

    def total(self) -> float:
        return float(self.xi.sum())


def e_step(model: BlockTransitionModel, evidence) -> tuple[SufficientStats, float]:
    """Posterior expected transition counts and initial-state posterior."""
    ev = as_evidence(evidence)
    trace, ctx = _run(model, ev, True, True)
    if trace.impossible:
        raise ImpossibleSequenceError(
            f"sequence has zero probability (step {trace.failed_step})", step=trace.failed_step
        )
    st = model.structure
    if ev.is_hard:
        acc = np.zeros(st.n_entries)
        fail = kernels.impl.accumulate_outer(
            model.block_ptr, model.layout.offsets, ctx, trace.ptr,
            trace.alpha_flat, trace.beta_flat, trace.backward_log_scalers, acc,
        )
        if fail >= 0:
            raise ImpossibleSequenceError("zero mass transition during accumulation", step=int(fail))
        xi = acc * model.data
    else:
        xi = _soft_xi(model, trace, ctx)
    gamma1 = np.zeros(model.n_states)
    gamma1[trace.states_at(0)] = trace.gamma(0)
    return SufficientStats(st, xi, gamma1, 1), trace.loglik


def _soft_xi(model, trace, steps) -> np.ndarray:
    st = model.structure
    sizes = model.layout.clones_per_symbol
    xi = np.zeros(st.n_entries)
    for n in range(trace.n_steps - 1):
        a = trace.alpha(n)
        right = steps.weights[n + 1] * trace.beta(n + 1)
        z = (a @ trace.beta(n)) * math.exp(trace.backward_log_scalers[n])
        full = np.outer(a, right / z) * steps.trans(n)
        r0 = 0
        for i in steps.symbols[n]:
            mi = sizes[i]
            c0 = 0
            for j in steps.symbols[n + 1]:
                mj = sizes[j]
                sl = st.block_slice(int(i), int(j))
                if sl is not None:
                    xi[sl] += full[r0:r0 + mi, c0:c0 + mj].ravel()
                c0 += mj
            r0 += mi
    return xi


def e_step_corpus(
    model: BlockTransitionModel, sequences: Sequence, threads: int = 1
) -> tuple[SufficientStats, float]:
    """E-step over several sequences; statistics are merged in input order."""

    def one(k):
        try:
            return e_step(model, sequences[k])
        except ImpossibleSequenceError as exc:
            raise ImpossibleSequenceError(
                f"training sequence {k} has zero probability (step {exc.step})",
                sequence_index=k, step=exc.step,
            ) from None

    idx = range(len(sequences))
    if threads > 1 and len(sequences) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, idx))
    else:
        results = [one(k) for k in idx]
    stats = results[0][0]
    for s, _ in results[1:]:
        stats = stats.merge(s)
    return stats, float(sum(ll for _, ll in results))


def m_step(
    stats: SufficientStats, alphabet: Alphabet | None = None, *, validate: bool = True
) -> BlockTransitionModel:
    """Count ratios per row; rows with no mass become uniform over present entries."""
    if stats.xi.sum() <= 0.0 and stats.gamma1.sum() <= 0.0:
        raise ValueError("cannot run an M-step on all-zero statistics")
    data, _ = normalize_rows(stats.structure, stats.xi)
    g = stats.gamma1.sum()
    if g > 0:
        prior = stats.gamma1 / g
    else:
        prior = np.full(stats.gamma1.size, 1.0 / stats.gamma1.size)
    return BlockTransitionModel(stats.structure, data, prior, alphabet, validate=validate)


def _as_sequences(corpus) -> list[np.ndarray]:
    if isinstance(corpus, np.ndarray) and corpus.ndim == 1:
        return [np.ascontiguousarray(corpus, dtype=np.int64)]
    if corpus and isinstance(corpus[0], (int, np.integer)):
        return [np.asarray(corpus, dtype=np.int64)]
    return [np.ascontiguousarray(s, dtype=np.int64) for s in corpus]


def _default_init(layout, config, seqs, alphabet):
    if config.support == "observed":
        pairs = observed_block_support(seqs)
        # a symbol seen only at the very end still needs successors
        has_succ = {i for i, _ in pairs}
        E = layout.n_symbols
        pairs |= {(i, j) for i in range(E) if i not in has_succ for j in range(E)}
        return init_random(layout, config.seed, pairs, alphabet)
    observed = seqs if config.support == "masked" else None
    return init_random(layout, config.seed, alphabet=alphabet, observed=observed)


def _val_bps(model, validation, smoothing) -> float:
    n = sum(len(s) for s in validation)
    ll = sum(forward(_smooth(model, smoothing), s).loglik for s in validation)
    return -ll / (n * LN2)


def _smooth(model, eps):
    from chmm.inference import smoothed

    return smoothed(model, eps)


def _converged(ll: float, prev: float, tol: float, two_sided: bool = False) -> bool:
    if prev == 0.0:
        return True
    gain = (ll - prev) / abs(prev)
    return abs(gain) < tol if two_sided else gain < tol


def fit_batch_em(
    layout: CloneLayout,
    corpus,
    config: EmConfig | None = None,
    *,
    init: BlockTransitionModel | None = None,
    alphabet: Alphabet | None = None,
    validation=None,
    fixed_iters: int | None = None,
    callback: Callable[[int, BlockTransitionModel], None] | None = None,
) -> tuple[BlockTransitionModel, TrainReport]:
    """Batch Baum-Welch until the relative train-loglik gain drops below ``rel_tol``.

    ``fixed_iters`` runs exactly that many iterations, ignoring the
    convergence test.
    """
    config = config or EmConfig()
    seqs = _as_sequences(corpus)
    model = init if init is not None else _default_init(layout, config, seqs, alphabet)
    alphabet = model.alphabet
    vals = _as_sequences(validation) if validation is not None else None
    report = TrainReport(n_symbols=sum(s.size for s in seqs))
    n_iters = fixed_iters if fixed_iters is not None else config.max_iters
    prev = None
    for it in range(1, n_iters + 1):
        stats, ll = e_step_corpus(model, seqs, config.threads)
        report.train_loglik.append(ll)
        model = m_step(stats, alphabet, validate=False)
        report.iters_run = it
        if vals is not None:
            report.val_bps.append(_val_bps(model, vals, config.eval_smoothing))
        if callback is not None:
            callback(it, model)
        if fixed_iters is None and prev is not None and _converged(ll, prev, config.rel_tol):
            report.stop_reason = "converged"
            break
        prev = ll
    model.validate()
    return model, report


def batch_windows(length: int, batch_size: int) -> list[tuple[int, int]]:
    """Contiguous E-step windows; each window after the first starts one
    symbol early so the transition across a batch boundary belongs to the
    later batch."""
    out = []
    for start in range(0, length, batch_size):
        lo = max(0, start - 1)
        hi = min(length, start + batch_size)
        if hi - lo >= 2 or not out:
            out.append((lo, hi))
    return out


class OnlineEM:
    """Exponentially forgetting sufficient statistics over contiguous batches.

    The running statistic starts from ``init_weight`` pseudo-counts of the
    initial model, which decay by ``lam`` per batch like everything else.
    """

    def __init__(self, model: BlockTransitionModel, config: OnlineEmConfig):
        self.config = config
        self.model = model
        self.stat = np.zeros(model.structure.n_entries)
        self._init_rows = model.data.copy()
        self._init_weight = config.init_weight
        self.batches_seen = 0

    def run_epoch(self, sequences: Sequence[np.ndarray]) -> BlockTransitionModel:
        lam = self.config.lam
        st = self.model.structure
        data = self.model.data.copy()
        gamma1 = np.zeros(self.model.n_states)
        starts = np.zeros(self.model.n_states)
        for k, seq in enumerate(sequences):
            wins = np.asarray(batch_windows(seq.size, self.config.batch_size), dtype=np.int64)
            fail = kernels.impl.online_pass(
                data, self.model.block_ptr, self.model.layout.offsets, st.entry_rows,
                self.model.prior, seq, wins, self.stat, self._init_rows, self._init_weight,
                lam, gamma1,
            )
            if fail >= 0:
                raise ImpossibleSequenceError(
                    f"training sequence {k} has zero probability in batch {fail}",
                    sequence_index=k, step=int(wins[fail, 0]),
                )
            self._init_weight *= lam ** len(wins)
            self.batches_seen += len(wins)
            starts += gamma1
        # initial-state posteriors of every sequence start, as in the batch M-step
        prior = starts / starts.sum()
        self.model = BlockTransitionModel(st, data, prior, self.model.alphabet, validate=False)
        return self.model


def fit_online_em(
    layout: CloneLayout,
    corpus,
    online: OnlineEmConfig | None = None,
    config: EmConfig | None = None,
    *,
    init: BlockTransitionModel | None = None,
    alphabet: Alphabet | None = None,
    validation=None,
    fixed_epochs: int | None = None,
) -> tuple[BlockTransitionModel, TrainReport]:
    """Online EM; one iteration is one pass over every batch.

    Stops when the relative change of the full train loglik between epochs
    falls below ``online.tol`` in magnitude, or after ``online.epochs``.
    """
    online = online or OnlineEmConfig()
    config = config or EmConfig()
    seqs = _as_sequences(corpus)
    if sum(s.size for s in seqs) < 2 * online.batch_size:
        raise ValueError("corpus must hold at least two batches")
    model = init if init is not None else _default_init(layout, config, seqs, alphabet)
    vals = _as_sequences(validation) if validation is not None else None
    runner = OnlineEM(model, online)
    report = TrainReport(n_symbols=sum(s.size for s in seqs))
    n_epochs = fixed_epochs if fixed_epochs is not None else online.epochs
    prev = None
    for ep in range(1, n_epochs + 1):
        model = runner.run_epoch(seqs)
        ll = sum(forward(model, s).loglik for s in seqs)
        report.train_loglik.append(ll)
        report.iters_run = ep
        if vals is not None:
            report.val_bps.append(_val_bps(model, vals, config.eval_smoothing))
        if fixed_epochs is None and math.isfinite(ll) and prev is not None and _converged(
            ll, prev, online.tol, two_sided=True
        ):
            report.stop_reason = "converged"
            break
        prev = ll
    report.running_statistic = runner.stat.copy()
    model.validate()
    return model, report


def fit_with_early_stopping(
    layout: CloneLayout,
    train,
    validation,
    online: OnlineEmConfig | None = None,
    config: EmConfig | None = None,
    *,
    max_online_epochs: int = 3,
    max_batch_iters: int = 20,
    patience: int = 2,
    alphabet: Alphabet | None = None,
) -> tuple[BlockTransitionModel, TrainReport]:
    """Select (online epochs, batch iterations) on validation BPS, then retrain.

    For every candidate number of online epochs the model continues with
    batch EM, recording validation BPS after each iteration and abandoning
    the branch after ``patience`` non-improving iterations. The winning pair
    is then rerun from the same initialization on train + validation.
    """
    online = online or OnlineEmConfig()
    config = config or EmConfig()
    train_seqs = _as_sequences(train)
    val_seqs = _as_sequences(validation)
    if not val_seqs or sum(s.size for s in val_seqs) == 0:
        raise ValueError("validation set is empty")
    init = _default_init(layout, config, train_seqs + val_seqs, alphabet)
    runner = OnlineEM(init, online)
    trace: list[tuple[int, int, float]] = []
    model = init
    for it1 in range(max_online_epochs + 1):
        if it1:
            model = runner.run_epoch(train_seqs)
        branch = model
        best_here = _val_bps(branch, val_seqs, config.eval_smoothing)
        trace.append((it1, 0, best_here))
        stale = 0
        for it2 in range(1, max_batch_iters + 1):
            stats, _ = e_step_corpus(branch, train_seqs, config.threads)
            branch = m_step(stats, branch.alphabet, validate=False)
            v = _val_bps(branch, val_seqs, config.eval_smoothing)
            trace.append((it1, it2, v))
            if v < best_here:
                best_here, stale = v, 0
            else:
                stale += 1
                if stale >= patience:
                    break
    it1_best, it2_best, _ = min(trace, key=lambda t: (t[2], t[0], t[1]))

    full = _concat_train_val(train_seqs, val_seqs)
    model = init
    runner = OnlineEM(init, online)
    for _ in range(it1_best):
        model = runner.run_epoch(full)
    report = TrainReport(n_symbols=sum(s.size for s in full))
    if it2_best:
        model, batch_report = fit_batch_em(
            layout, full, config, init=model, fixed_iters=it2_best
        )
        report.train_loglik = batch_report.train_loglik
    report.train_loglik.append(sum(forward(model, s).loglik for s in full))
    report.iters_run = it1_best + it2_best
    report.stop_reason = "early_stop"
    report.selected = (it1_best, it2_best)
    report.search_trace = trace
    report.val_bps = [v for _, _, v in trace]
    model.validate()
    return model, report


def _concat_train_val(train_seqs, val_seqs) -> list[np.ndarray]:
    # validation is the tail of the training text, so a single train and a
    # single validation sequence are rejoined into one contiguous sequence
    if len(train_seqs) == 1 and len(val_seqs) == 1:
        return [np.concatenate([train_seqs[0], val_seqs[0]])]
    return list(train_seqs) + list(val_seqs)


def test_bps(model: BlockTransitionModel, sequences, smoothing: float = 1e-5) -> float:
    """Bits per symbol pooled over ``sequences`` with evaluation-time smoothing."""
    seqs = _as_sequences(sequences)
    n = sum(s.size for s in seqs)
    total = 0.0
    for s in seqs:
        b = bits_per_symbol(model, s, smoothing)
        if math.isinf(b):
            return math.inf
        total += b * s.size
    return total / n


test_bps.__test__ = False
