"""Scaled forward/backward passes, sequence likelihood, BPS and Viterbi decoding.

Evidence at each step is either a hard symbol index or a :class:`Soft`
distribution over symbols. Messages at step ``n`` only cover the clones of
the symbols in that step's support.

Scaling convention: ``alpha(n)`` includes the evidence weight of step ``n``
and is normalized to sum to one (``log_scalers[n]`` holds the log of the
normalizer). ``beta(N)`` is all ones over the final support; earlier betas
are normalized to sum to one with log normalizers in ``backward_log_scalers``.
For every ``n``::

    log P(x) = log(alpha(n) . beta(n)) + sum(log_scalers[:n+1]) + sum(backward_log_scalers[n:])
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from chmm import kernels
from chmm.model import BlockStructure, BlockTransitionModel

LN2 = math.log(2.0)
SOFT_TOL = 1e-9


class Soft:
    """A distribution over symbol indices used as uncertain evidence."""

    __slots__ = ("symbols", "weights")

    def __init__(self, weights: Mapping[int, float]):
        items = sorted((int(k), float(v)) for k, v in weights.items() if v != 0)
        if not items:
            raise ValueError("soft evidence needs at least one symbol with positive weight")
        symbols = np.array([k for k, _ in items], dtype=np.int64)
        w = np.array([v for _, v in items])
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("soft evidence weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > SOFT_TOL:
            raise ValueError(f"soft evidence weights sum to {w.sum()!r}, not 1")
        self.symbols = symbols
        self.weights = w

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.symbols.tolist(), self.weights.tolist()))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Soft)
            and np.array_equal(self.symbols, other.symbols)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self) -> str:
        return f"Soft({self.as_dict()!r})"


class EvidenceSequence:
    """Per-step observations; ``Soft({i: 1.0})`` is stored as hard ``i``."""

    def __init__(self, steps: Iterable[int | Soft | Mapping[int, float]]):
        norm: list[int | Soft] = []
        for step in steps:
            if isinstance(step, Mapping):
                step = Soft(step)
            if isinstance(step, Soft):
                if step.symbols.size == 1:
                    step = int(step.symbols[0])
                norm.append(step)
            else:
                norm.append(int(step))
        if not norm:
            raise ValueError("evidence must contain at least one step")
        self.steps = norm
        if all(isinstance(s, int) for s in norm):
            self.hard = np.asarray(norm, dtype=np.int64)
        else:
            self.hard = None

    @classmethod
    def from_symbols(cls, symbols: Sequence[int] | np.ndarray) -> EvidenceSequence:
        obs = np.ascontiguousarray(symbols, dtype=np.int64)
        if obs.ndim != 1 or obs.size == 0:
            raise ValueError("evidence must be a non-empty 1-d symbol sequence")
        self = cls.__new__(cls)
        self.hard = obs
        self.steps = None
        return self

    def __len__(self) -> int:
        return int(self.hard.size) if self.hard is not None else len(self.steps)

    @property
    def is_hard(self) -> bool:
        return self.hard is not None

    def support(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.hard is not None:
            return self.hard[n:n + 1], np.ones(1)
        step = self.steps[n]
        if isinstance(step, Soft):
            return step.symbols, step.weights
        return np.array([step], dtype=np.int64), np.ones(1)

    def max_symbol(self) -> int:
        if self.hard is not None:
            return int(self.hard.max())
        return max(int(self.support(n)[0].max()) for n in range(len(self)))

    def min_symbol(self) -> int:
        if self.hard is not None:
            return int(self.hard.min())
        return min(int(self.support(n)[0].min()) for n in range(len(self)))


def as_evidence(x) -> EvidenceSequence:
    if isinstance(x, EvidenceSequence):
        return x
    if isinstance(x, np.ndarray):
        return EvidenceSequence.from_symbols(x)
    steps = list(x)
    if all(isinstance(s, (int, np.integer)) for s in steps):
        return EvidenceSequence.from_symbols(steps)
    return EvidenceSequence(steps)


def _check_symbols(model: BlockTransitionModel, ev: EvidenceSequence) -> None:
    if ev.min_symbol() < 0 or ev.max_symbol() >= model.n_symbols:
        raise ValueError(f"evidence uses symbols outside the model alphabet of size {model.n_symbols}")


@dataclass
class MessageTrace:
    """Scaled messages of one sequence, packed per step via ``ptr``."""

    ptr: np.ndarray
    state_ids: np.ndarray | None
    log_scalers: np.ndarray | None
    loglik: float
    alpha_flat: np.ndarray | None = None
    beta_flat: np.ndarray | None = None
    backward_log_scalers: np.ndarray | None = None
    impossible: bool = False
    failed_step: int | None = None
    # hard-evidence traces derive state ids on demand
    _obs: np.ndarray | None = None
    _offsets: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return int(self.ptr.size - 1)

    @cached_property
    def states(self) -> np.ndarray:
        """Global hidden-state id of every packed message entry."""
        if self.state_ids is not None:
            return self.state_ids
        sizes = np.diff(self.ptr)
        base = np.repeat(self._offsets[self._obs], sizes)
        local = np.arange(self.ptr[-1]) - np.repeat(self.ptr[:-1], sizes)
        return base + local

    def states_at(self, n: int) -> np.ndarray:
        return self.states[self.ptr[n]:self.ptr[n + 1]]

    def alpha(self, n: int) -> np.ndarray:
        return self.alpha_flat[self.ptr[n]:self.ptr[n + 1]]

    def beta(self, n: int) -> np.ndarray:
        return self.beta_flat[self.ptr[n]:self.ptr[n + 1]]

    @property
    def alphas(self) -> list[np.ndarray]:
        return [self.alpha(n) for n in range(self.n_steps)]

    @property
    def betas(self) -> list[np.ndarray]:
        return [self.beta(n) for n in range(self.n_steps)]

    def gamma(self, n: int) -> np.ndarray:
        g = self.alpha(n) * self.beta(n)
        return g / g.sum()

    def gammas(self) -> list[np.ndarray]:
        return [self.gamma(n) for n in range(self.n_steps)]


# hard evidence: compiled / NumPy kernels

def _hard_ptr(model: BlockTransitionModel, obs: np.ndarray) -> np.ndarray:
    ptr = np.zeros(obs.size + 1, dtype=np.int64)
    np.cumsum(model.layout.clones_per_symbol[obs], out=ptr[1:])
    return ptr


def _hard_forward(model, obs, ptr) -> tuple[np.ndarray, np.ndarray, int]:
    alpha = np.zeros(int(ptr[-1]))
    log_c = np.zeros(obs.size)
    fail = kernels.impl.forward(
        model.data, model.block_ptr, model.layout.offsets, model.prior, obs, ptr, alpha, log_c
    )
    return alpha, log_c, int(fail)


def _hard_backward(model, obs, ptr) -> tuple[np.ndarray, np.ndarray, int]:
    beta = np.zeros(int(ptr[-1]))
    log_d = np.zeros(obs.size)
    fail = kernels.impl.backward(
        model.data, model.block_ptr, model.layout.offsets, obs, ptr, beta, log_d
    )
    return beta, log_d, int(fail)


# soft evidence: per-step sub-matrices over the support clone ranges

class _SoftSteps:
    def __init__(self, model: BlockTransitionModel, ev: EvidenceSequence):
        self.model = model
        off = model.layout.offsets
        sizes = model.layout.clones_per_symbol
        self.symbols, self.states, self.weights = [], [], []
        for n in range(len(ev)):
            syms, w = ev.support(n)
            self.symbols.append(syms)
            self.states.append(np.concatenate([np.arange(off[s], off[s + 1]) for s in syms]))
            self.weights.append(np.repeat(w, sizes[syms]))
        self._cache: dict = {}
        self.ptr = np.zeros(len(ev) + 1, dtype=np.int64)
        np.cumsum([s.size for s in self.states], out=self.ptr[1:])

    def trans(self, n: int) -> np.ndarray:
        """Transition sub-matrix from the support of step n to step n+1."""
        key = (self.symbols[n].tobytes(), self.symbols[n + 1].tobytes())
        sub = self._cache.get(key)
        if sub is None:
            m = self.model
            sub = np.block([[m.block(int(i), int(j)) for j in self.symbols[n + 1]] for i in self.symbols[n]])
            self._cache[key] = sub
        return sub

    def state_ids(self) -> np.ndarray:
        return np.concatenate(self.states)


def _soft_forward(steps: _SoftSteps):
    N = len(steps.states)
    alpha = np.zeros(int(steps.ptr[-1]))
    log_c = np.zeros(N)
    a = steps.model.prior[steps.states[0]] * steps.weights[0]
    for n in range(N):
        if n:
            a = (a @ steps.trans(n - 1)) * steps.weights[n]
        c = a.sum()
        if c <= 0.0:
            return alpha, log_c, n
        a = a / c
        alpha[steps.ptr[n]:steps.ptr[n + 1]] = a
        log_c[n] = math.log(c)
    return alpha, log_c, -1


def _soft_backward(steps: _SoftSteps):
    N = len(steps.states)
    beta = np.zeros(int(steps.ptr[-1]))
    log_d = np.zeros(N)
    b = np.ones(steps.states[N - 1].size)
    beta[steps.ptr[N - 1]:] = b
    for n in range(N - 2, -1, -1):
        b = steps.trans(n) @ (steps.weights[n + 1] * b)
        d = b.sum()
        if d <= 0.0:
            return beta, log_d, n
        b = b / d
        beta[steps.ptr[n]:steps.ptr[n + 1]] = b
        log_d[n] = math.log(d)
    return beta, log_d, -1


def _run(model, evidence, want_alpha: bool, want_beta: bool) -> tuple[MessageTrace, object]:
    ev = as_evidence(evidence)
    _check_symbols(model, ev)
    fail = -1
    alpha = log_c = beta = log_d = None
    if ev.is_hard:
        obs = ev.hard
        ptr = _hard_ptr(model, obs)
        ctx = obs
        trace = MessageTrace(ptr, None, None, 0.0, _obs=obs, _offsets=model.layout.offsets)
        if want_alpha:
            alpha, log_c, fail = _hard_forward(model, obs, ptr)
        if want_beta and fail < 0:
            beta, log_d, fail = _hard_backward(model, obs, ptr)
        first_prior = model.prior_of(int(obs[0]))
    else:
        steps = _SoftSteps(model, ev)
        ptr = steps.ptr
        ctx = steps
        trace = MessageTrace(ptr, steps.state_ids(), None, 0.0)
        if want_alpha:
            alpha, log_c, fail = _soft_forward(steps)
        if want_beta and fail < 0:
            beta, log_d, fail = _soft_backward(steps)
        first_prior = model.prior[steps.states[0]] * steps.weights[0]
    trace.alpha_flat, trace.log_scalers = alpha, log_c
    trace.beta_flat, trace.backward_log_scalers = beta, log_d
    if fail >= 0:
        trace.impossible = True
        trace.failed_step = fail
        trace.loglik = -math.inf
    elif want_alpha:
        trace.loglik = float(np.sum(log_c))
    else:
        z = float(first_prior @ trace.beta(0))
        trace.loglik = math.log(z) + float(np.sum(log_d)) if z > 0 else -math.inf
        if z <= 0:
            trace.impossible, trace.failed_step = True, 0
    return trace, ctx


def forward(model: BlockTransitionModel, evidence) -> MessageTrace:
    """Scaled forward pass; ``trace.loglik`` is ``log P(evidence)`` (nats).

    A sequence with zero probability gives ``loglik == -inf`` and
    ``impossible`` set, rather than an exception.
    """
    return _run(model, evidence, True, False)[0]


def backward(model: BlockTransitionModel, evidence) -> MessageTrace:
    return _run(model, evidence, False, True)[0]


def forward_backward(model: BlockTransitionModel, evidence) -> MessageTrace:
    return _run(model, evidence, True, True)[0]


def log_likelihood(model: BlockTransitionModel, evidence) -> float:
    return forward(model, evidence).loglik


def posterior_marginals(model: BlockTransitionModel, evidence) -> list[tuple[np.ndarray, np.ndarray]]:
    """(states, probabilities) for every step."""
    trace = forward_backward(model, evidence)
    if trace.impossible:
        raise ValueError(f"evidence is impossible under the model (step {trace.failed_step})")
    return [(trace.states_at(n), trace.gamma(n)) for n in range(trace.n_steps)]


def smoothed(model: BlockTransitionModel, eps: float) -> BlockTransitionModel:
    """Mix each row with the uniform distribution over all states.

    Used only for evaluation so that unseen transitions cost a finite number
    of bits. Absent blocks are materialized first, so a model initialized on
    the observed block support gains the blocks of unseen symbol pairs. The
    prior is mixed with the uniform distribution over states.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError("smoothing must lie in [0, 1)")
    if eps == 0.0:
        return model
    st = model.structure
    H = model.n_states
    prior = (1.0 - eps) * model.prior + eps / H
    if st.present.all():
        data = (1.0 - eps) * model.data + eps / H
        return model.replace(data=data, prior=prior)
    full = BlockStructure.full(st.layout)
    data = np.full(full.n_entries, eps / H)
    for i, j in st.present_blocks:
        data[full.block_slice(i, j)] += (1.0 - eps) * model.data[st.block_slice(i, j)]
    return BlockTransitionModel(full, data, prior, model.alphabet)


def bits_per_symbol(model: BlockTransitionModel, evidence, smoothing: float = 0.0) -> float:
    """``-log2 P(evidence) / N``; ``inf`` for impossible sequences."""
    ev = as_evidence(evidence)
    trace = forward(smoothed(model, smoothing), ev)
    if trace.impossible:
        return math.inf
    return -trace.loglik / (len(ev) * LN2)


@dataclass
class ViterbiResult:
    states: np.ndarray | None
    symbols: np.ndarray | None
    log_score: float
    impossible: bool = False
    failed_step: int | None = None


def viterbi(model: BlockTransitionModel, evidence) -> ViterbiResult:
    """Most probable hidden path; ties go to the lowest state index.

    ``log_score`` is the log probability of that path including soft
    evidence weights. Impossible evidence yields ``impossible=True``.
    """
    ev = as_evidence(evidence)
    _check_symbols(model, ev)
    N = len(ev)
    if ev.is_hard:
        obs = ev.hard
        ptr = _hard_ptr(model, obs)
        width = int(model.layout.clones_per_symbol.max())
        backptr = np.zeros(int(ptr[-1]), dtype=np.int64)
        path = np.zeros(N, dtype=np.int64)
        log_s = np.zeros(N)
        fail = kernels.impl.viterbi(
            model.data, model.block_ptr, model.layout.offsets, model.prior, obs, ptr,
            np.zeros(2 * width), backptr, path, log_s,
        )
        if fail >= 0:
            return ViterbiResult(None, None, -math.inf, True, int(fail))
        states = model.layout.offsets[obs] + path
    else:
        steps = _SoftSteps(model, ev)
        states, log_s, fail = _soft_viterbi(steps)
        if fail >= 0:
            return ViterbiResult(None, None, -math.inf, True, int(fail))
    return ViterbiResult(states, model.layout.symbol_of_state[states], float(np.sum(log_s)))


def _soft_viterbi(steps: _SoftSteps):
    N = len(steps.states)
    log_s = np.zeros(N)
    backptrs = []
    delta = steps.model.prior[steps.states[0]] * steps.weights[0]
    for n in range(N):
        if n:
            scores = delta[:, None] * steps.trans(n - 1) * steps.weights[n][None, :]
            bp = scores.argmax(axis=0)
            delta = scores[bp, np.arange(scores.shape[1])]
            backptrs.append(bp)
        s = delta.max()
        if s <= 0.0:
            return None, log_s, n
        delta = delta / s
        log_s[n] = math.log(s)
    local = np.zeros(N, dtype=np.int64)
    local[-1] = int(delta.argmax())
    for n in range(N - 1, 0, -1):
        local[n - 1] = backptrs[n - 1][local[n]]
    states = np.array([steps.states[n][local[n]] for n in range(N)], dtype=np.int64)
    return states, log_s, -1
