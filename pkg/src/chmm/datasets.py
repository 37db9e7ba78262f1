"""Generators for the synthetic benchmark languages.

Every generator is a deterministic function of its parameters and seed.
The toy FSM returns integer symbols; bracket and ab languages return
strings over small fixed alphabets (see ``BRACKET_ALPHABET`` and
``AB_ALPHABET``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from chmm.model import Alphabet, BlockStructure, BlockTransitionModel, CloneLayout

BRACKET_ALPHABET = Alphabet(["(", ")", "[", "]", "|"])
AB_ALPHABET = Alphabet(["(", ")", "a", "b"])
_CLOSER = {"(": ")", "[": "]"}


# toy finite state machine with long-range opener/closer dependency

@dataclass(frozen=True)
class AlphaMix:
    alpha_u: float = 0.9
    alpha_d: float = 0.1
    p_u: float = 0.95

    def __post_init__(self):
        for name in ("alpha_u", "alpha_d", "p_u"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if max(self.alpha_u, self.alpha_d) >= 1.0:
            raise ValueError("continuation probability 1 never terminates a block")


@dataclass(frozen=True)
class ToyFsmParams:
    k: int = 2
    alpha_mix: AlphaMix | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")

    @property
    def n_symbols(self) -> int:
        return 4 * self.k + 2

    @property
    def block_length(self) -> int:
        return 3 * self.k


def toy_alphabet(k: int) -> Alphabet:
    return Alphabet(list(range(4 * k + 2)))


def _toy_streams(seed: int):
    main, extra = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(main), np.random.default_rng(extra)


def toy_generate(params: ToyFsmParams, n_symbols: int) -> np.ndarray:
    """Independent blocks of length 3k truncated to ``n_symbols``.

    A block is: opener in {0, 2}; for n = 1..k-1 one of {4n, 4n+1} then
    4n+2, 4n+3; one of {4k, 4k+1}; the matching closer (0 -> 1, 2 -> 3).
    """
    k = params.k
    if n_symbols < 3 * k:
        raise ValueError(f"need at least {3 * k} symbols for k={k}")
    rng, _ = _toy_streams(params.seed)
    n_blocks = -(-n_symbols // (3 * k))
    coins = rng.integers(0, 2, size=(n_blocks, k + 1))
    blocks = np.empty((n_blocks, 3 * k), dtype=np.int64)
    blocks[:, 0] = 2 * coins[:, 0]
    for n in range(1, k):
        blocks[:, 3 * n - 2] = 4 * n + coins[:, n]
        blocks[:, 3 * n - 1] = 4 * n + 2
        blocks[:, 3 * n] = 4 * n + 3
    blocks[:, 3 * k - 2] = 4 * k + coins[:, k]
    blocks[:, 3 * k - 1] = blocks[:, 0] + 1
    return blocks.ravel()[:n_symbols].copy()


def toy_alpha_mix_generate(
    params: ToyFsmParams, n_symbols: int, *, return_blocks: bool = False
):
    """Toy FSM where each noise group may repeat geometrically.

    Per block a continuation probability is drawn (``alpha_u`` with
    probability ``p_u``, else ``alpha_d``); after each group
    ``{4n|4n+1}, 4n+2, 4n+3`` the same group is emitted again with that
    probability. With both alphas zero the output equals ``toy_generate``.

    ``return_blocks`` also returns block start offsets and a flag per block
    telling whether ``alpha_u`` was drawn.
    """
    mix = params.alpha_mix
    if mix is None:
        raise ValueError("alpha_mix parameters are required")
    k = params.k
    if n_symbols < 3 * k:
        raise ValueError(f"need at least {3 * k} symbols for k={k}")
    rng, extra = _toy_streams(params.seed)
    n_blocks = -(-n_symbols // (3 * k))
    out: list[int] = []
    starts: list[int] = []
    flags: list[bool] = []
    while len(out) < n_symbols:
        coins = rng.integers(0, 2, size=(n_blocks, k + 1))
        for row in coins:
            if len(out) >= n_symbols:
                break
            is_u = bool(extra.random() < mix.p_u)
            alpha = mix.alpha_u if is_u else mix.alpha_d
            starts.append(len(out))
            flags.append(is_u)
            opener = 2 * int(row[0])
            out.append(opener)
            for n in range(1, k):
                choice = int(row[n])
                while True:
                    out.extend((4 * n + choice, 4 * n + 2, 4 * n + 3))
                    if alpha == 0.0 or extra.random() >= alpha:
                        break
                    choice = int(extra.integers(0, 2))
            out.extend((4 * k + int(row[k]), opener + 1))
    seq = np.asarray(out[:n_symbols], dtype=np.int64)
    if return_blocks:
        return seq, np.asarray(starts, dtype=np.int64), np.asarray(flags)
    return seq


def toy_ground_truth_model(k: int) -> BlockTransitionModel:
    """The generating CHMM: one clone per signal symbol, two per noise symbol.

    Noise clone ``c`` remembers which opener (0 -> c=0, 2 -> c=1) started
    the block.
    """
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    E = 4 * k + 2
    counts = [1, 1, 1, 1] + [2] * (E - 4)
    layout = CloneLayout(counts)
    H = layout.n_states
    off = layout.offsets
    T = np.zeros((H, H))

    def st(sym, c=0):
        return off[sym] + (c if counts[sym] > 1 else 0)

    for c, opener in enumerate((0, 2)):
        closer = opener + 1
        for j in (4, 5):
            T[st(opener), st(j, c)] = 0.5
        for n in range(1, k):
            for j in (4 * n, 4 * n + 1):
                T[st(j, c), st(4 * n + 2, c)] = 1.0
            T[st(4 * n + 2, c), st(4 * n + 3, c)] = 1.0
            for j in (4 * n + 4, 4 * n + 5):
                T[st(4 * n + 3, c), st(j, c)] = 0.5
        for j in (4 * k, 4 * k + 1):
            T[st(j, c), st(closer)] = 1.0
        T[st(closer), st(0)] = 0.5
        T[st(closer), st(2)] = 0.5
    prior = np.zeros(H)
    prior[st(0)] = prior[st(2)] = 0.5
    present = np.zeros((E, E), dtype=bool)
    sym = layout.symbol_of_state
    rows, cols = np.nonzero(T)
    present[sym[rows], sym[cols]] = True
    structure = BlockStructure(layout, present)
    return BlockTransitionModel(structure, structure.gather(T), prior, toy_alphabet(k))


def toy_optimal_bps(k: int) -> float:
    """Entropy rate of the toy process in bits per symbol."""
    return (k + 1) / (3 * k)


# nested bracket language

@dataclass(frozen=True)
class BracketParams:
    """Level probabilities of the bracket language.

    A sentence starts with an opening bracket, split by ``level0``. Back at
    depth zero the sentence ends with probability ``terminate``, otherwise
    another bracket opens, again split by ``level0``. At depths 1..k-1
    ``level1`` gives (open '(', open '[', close); at depth k only closing is
    allowed. Closers always match the innermost open bracket.
    """

    k: int = 2
    level0: tuple[float, float] = (0.5, 0.5)
    level1: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    terminate: float = 1 / 3
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if len(self.level0) != 2 or len(self.level1) != 3:
            raise ValueError("level0 needs two and level1 three probabilities")
        vals = (*self.level0, *self.level1, self.terminate)
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(sum(self.level0) - 1.0) > 1e-9:
            raise ValueError("level0 opening probabilities must sum to 1")
        if abs(sum(self.level1) - 1.0) > 1e-9:
            raise ValueError("level1 probabilities must sum to 1")
        if self.terminate >= 1.0:
            raise ValueError("terminate probability must be below 1")


def _bracket_choices(p: BracketParams, depth: int, at_start: bool):
    """(symbols, probabilities) of the next action; ')' stands for any close."""
    if at_start:
        return ("(", "["), p.level0
    if depth == 0:
        t = p.terminate
        return ("|", "(", "["), (t, (1 - t) * p.level0[0], (1 - t) * p.level0[1])
    if depth >= p.k:
        return (")",), (1.0,)
    return ("(", "[", ")"), p.level1


def bracket_generate(params: BracketParams, n_symbols: int) -> str:
    """Sentences of balanced brackets separated by '|', truncated to ``n_symbols``."""
    if n_symbols < 3:
        raise ValueError("need at least 3 symbols")
    rng = np.random.default_rng(params.seed)
    u = rng.random(n_symbols)
    out: list[str] = []
    stack: list[str] = []
    at_start = True
    for n in range(n_symbols):
        syms, probs = _bracket_choices(params, len(stack), at_start)
        acc, pick = 0.0, syms[-1]
        for s, pr in zip(syms, probs):
            acc += pr
            if u[n] < acc:
                pick = s
                break
        if pick == "|":
            at_start = True
        elif pick == ")":
            pick = _CLOSER[stack.pop()]
            at_start = False
        else:
            stack.append(pick)
            at_start = False
        out.append(pick)
    return "".join(out)


def check_brackets(seq: str, k: int | None = None) -> bool:
    """Pushdown check: every prefix is consistent, closers match, depth <= k,
    and '|' appears only at depth zero after a non-empty sentence."""
    stack: list[str] = []
    sentence_len = 0
    pairs = {")": "(", "]": "["}
    for ch in seq:
        if ch in "([":
            stack.append(ch)
            if k is not None and len(stack) > k:
                return False
            sentence_len += 1
        elif ch in ")]":
            if not stack or stack.pop() != pairs[ch]:
                return False
            sentence_len += 1
        elif ch == "|":
            if stack or sentence_len == 0:
                return False
            sentence_len = 0
        else:
            return False
    return True


def bracket_log_prob(seq: str, params: BracketParams) -> float:
    """Exact natural-log probability of ``seq`` as a prefix of the process."""
    stack: list[str] = []
    at_start = True
    total = 0.0
    for ch in seq:
        syms, probs = _bracket_choices(params, len(stack), at_start)
        key = ")" if ch in ")]" else ch
        table = dict(zip(syms, probs))
        pr = table.get(key, 0.0)
        if key == ")" and (not stack or _CLOSER[stack[-1]] != ch):
            pr = 0.0
        if pr <= 0.0:
            return -math.inf
        total += math.log(pr)
        if ch == "|":
            at_start = True
        elif key == ")":
            stack.pop()
            at_start = False
        else:
            stack.append(ch)
            at_start = False
    return total


def bracket_entropy_rate(params: BracketParams) -> float:
    """Entropy rate in bits per symbol from the (depth, sentence-start) chain."""
    k = params.k
    # states: 0 = sentence start, 1 + d = depth d mid-sentence
    S = k + 2
    P = np.zeros((S, S))
    h = np.zeros(S)

    def ent(ps):
        return -sum(p * math.log2(p) for p in ps if p > 0)

    P[0, 2] = 1.0
    h[0] = ent(params.level0)
    for d in range(0, k + 1):
        s = 1 + d
        syms, probs = _bracket_choices(params, d, False)
        h[s] = ent(probs)
        for sym, pr in zip(syms, probs):
            if sym == "|":
                P[s, 0] += pr
            elif sym == ")":
                P[s, s - 1] += pr
            else:
                P[s, s + 1] += pr
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    pi = pi / pi.sum()
    return float(pi @ h)


# ab / (ab) language

def concat_ab_generator(n_symbols: int, seed: int = 0) -> str:
    """Concatenation of units "ab" or "(ab)" chosen uniformly at random,
    truncated to ``n_symbols``."""
    if n_symbols < 2:
        raise ValueError("need at least 2 symbols")
    rng = np.random.default_rng(seed)
    # each unit has at least 2 symbols
    flags = rng.integers(0, 2, size=n_symbols // 2 + 1)
    units = np.where(flags == 1, "(ab)", "ab")
    text = "".join(units.tolist())
    while len(text) < n_symbols:
        text += "(ab)" if rng.integers(0, 2) else "ab"
    return text[:n_symbols]


def ab_ground_truth_model() -> BlockTransitionModel:
    """Two clones for a and b (bare vs bracketed unit), one for each bracket."""
    off = {"(": 0, ")": 1, "a": 2, "b": 4}
    layout = CloneLayout([1, 1, 2, 2])
    T = np.zeros((6, 6))
    a0, a1, b0, b1 = off["a"], off["a"] + 1, off["b"], off["b"] + 1
    T[a0, b0] = 1.0
    T[a1, b1] = 1.0
    T[b1, off[")"]] = 1.0
    for src in (b0, off[")"]):
        T[src, a0] = 0.5
        T[src, off["("]] = 0.5
    T[off["("], a1] = 1.0
    prior = np.zeros(6)
    prior[a0] = prior[off["("]] = 0.5
    structure = BlockStructure.full(layout)
    return BlockTransitionModel.from_dense(layout, T, prior, AB_ALPHABET, structure=structure)
