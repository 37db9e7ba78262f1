"""Standard (overcomplete) HMM baseline with a learned dense emission matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from chmm import kernels
from chmm.errors import ImpossibleSequenceError
from chmm.inference import LN2
from chmm.learning import EmConfig, TrainReport, _as_sequences, _converged


@dataclass
class DenseHmm:
    transitions: np.ndarray  # H x H
    emissions: np.ndarray  # H x E
    prior: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emissions.shape[1]

    def smoothed(self, eps: float) -> DenseHmm:
        if eps == 0.0:
            return self
        H, E = self.emissions.shape
        return DenseHmm(
            (1 - eps) * self.transitions + eps / H,
            (1 - eps) * self.emissions + eps / E,
            (1 - eps) * self.prior + eps / H,
        )

    def log_likelihood(self, seq) -> float:
        obs = np.ascontiguousarray(seq, dtype=np.int64)
        alpha = np.zeros((obs.size, self.n_states))
        log_c = np.zeros(obs.size)
        fail = kernels.impl.dense_forward(self.transitions, self.emissions, self.prior, obs, alpha, log_c)
        return -math.inf if fail >= 0 else float(log_c.sum())

    def bits_per_symbol(self, seq, smoothing: float = 0.0) -> float:
        ll = self.smoothed(smoothing).log_likelihood(seq)
        return math.inf if math.isinf(ll) else -ll / (len(seq) * LN2)


def _random_stochastic(rng, shape) -> np.ndarray:
    m = rng.uniform(size=shape)
    return m / m.sum(axis=1, keepdims=True)


def dense_init(n_states: int, n_symbols: int, seed: int) -> DenseHmm:
    """Random row-stochastic transitions and emissions, uniform prior."""
    rng = np.random.default_rng(seed)
    return DenseHmm(
        _random_stochastic(rng, (n_states, n_states)),
        _random_stochastic(rng, (n_states, n_symbols)),
        np.full(n_states, 1.0 / n_states),
    )


def _dense_e_step(hmm: DenseHmm, obs: np.ndarray, k: int):
    H = hmm.n_states
    N = obs.size
    alpha = np.zeros((N, H))
    beta = np.zeros((N, H))
    log_c = np.zeros(N)
    log_d = np.zeros(N)
    work = np.zeros(H)
    T, B = hmm.transitions, hmm.emissions
    if kernels.impl.dense_forward(T, B, hmm.prior, obs, alpha, log_c) >= 0 or \
            kernels.impl.dense_backward(T, B, obs, beta, log_d, work) >= 0:
        raise ImpossibleSequenceError(f"training sequence {k} has zero probability", sequence_index=k)
    outer = np.zeros((H, H))
    emit = np.zeros((H, hmm.n_symbols))
    kernels.impl.dense_accumulate(B, obs, alpha, beta, log_d, outer, emit, work)
    g1 = alpha[0] * beta[0]
    return outer * T, emit, g1 / g1.sum(), float(log_c.sum())


def fit_dense_hmm(
    n_states: int,
    corpus,
    config: EmConfig | None = None,
    *,
    n_symbols: int | None = None,
    init: DenseHmm | None = None,
) -> tuple[DenseHmm, TrainReport]:
    """Baum-Welch on a fully connected HMM; same stopping rule as the CHMM."""
    config = config or EmConfig()
    seqs = _as_sequences(corpus)
    if not seqs or min(s.size for s in seqs) == 0:
        raise ValueError("corpus must be non-empty")
    E = n_symbols if n_symbols is not None else int(max(s.max() for s in seqs)) + 1
    hmm = init if init is not None else dense_init(n_states, E, config.seed)
    report = TrainReport(n_symbols=sum(s.size for s in seqs))
    prev = None
    for it in range(1, config.max_iters + 1):
        xi = np.zeros((n_states, n_states))
        em = np.zeros((n_states, E))
        g1 = np.zeros(n_states)
        ll = 0.0
        for k, s in enumerate(seqs):
            a, b, g, l_k = _dense_e_step(hmm, s, k)
            xi += a
            em += b
            g1 += g
            ll += l_k
        report.train_loglik.append(ll)
        hmm = DenseHmm(_normalize(xi, hmm.transitions), _normalize(em, hmm.emissions), g1 / g1.sum())
        report.iters_run = it
        if prev is not None and _converged(ll, prev, config.rel_tol):
            report.stop_reason = "converged"
            break
        prev = ll
    return hmm, report


def _normalize(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    sums = counts.sum(axis=1, keepdims=True)
    out = counts / np.where(sums > 0, sums, 1.0)
    empty = sums[:, 0] <= 0
    out[empty] = fallback[empty]
    return out
