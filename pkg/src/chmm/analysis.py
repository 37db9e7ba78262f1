"""Scrambled-word decoding, transition pruning, graph export and a Kneser-Ney baseline."""

from __future__ import annotations

import csv
import logging
import math
import os
from collections import Counter, defaultdict
from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field

import numpy as np

from chmm.inference import LN2, EvidenceSequence, Soft, bits_per_symbol, viterbi
from chmm.model import Alphabet, BlockTransitionModel

log = logging.getLogger(__name__)


# scrambled text

@dataclass
class ScrambledEncoding:
    evidence: EvidenceSequence
    boundaries: list[tuple[int, int]]
    # the (possibly scrambled) symbols the evidence was built from
    observed: list

    def __len__(self) -> int:
        return len(self.evidence)


def word_spans(text: Sequence[Hashable], separator: Hashable = " ") -> list[tuple[int, int]]:
    """(start, end) of every maximal run not containing ``separator``."""
    spans, start = [], None
    for n, ch in enumerate(text):
        if ch == separator:
            if start is not None:
                spans.append((start, n))
                start = None
        elif start is None:
            start = n
    if start is not None:
        spans.append((start, len(text)))
    return spans


def _check_spans(spans, length):
    prev = 0
    for s, e in spans:
        if not (prev <= s < e <= length):
            raise ValueError(f"malformed word boundary ({s}, {e})")
        prev = e


def encode_scrambled(
    text: Sequence[Hashable],
    alphabet: Alphabet,
    boundaries: list[tuple[int, int]] | None = None,
) -> ScrambledEncoding:
    """First and last symbol of each word are hard; interior positions get a
    distribution over the word's interior multiset (weight = multiplicity /
    interior length). Positions outside words are hard."""
    seq = list(text)
    spans = word_spans(seq) if boundaries is None else [tuple(map(int, b)) for b in boundaries]
    _check_spans(spans, len(seq))
    idx = alphabet.encode(seq)
    steps: list = [int(i) for i in idx]
    for s, e in spans:
        if e - s <= 3:
            continue
        interior = Counter(int(i) for i in idx[s + 1:e - 1])
        L = e - s - 2
        soft = Soft({sym: c / L for sym, c in interior.items()})
        for n in range(s + 1, e - 1):
            steps[n] = soft
    return ScrambledEncoding(EvidenceSequence(steps), spans, seq)


@dataclass
class DecodeResult:
    symbols: list
    word_correct: list[bool]
    char_accuracy: float
    n_impossible_words: int = 0

    @property
    def word_accuracy(self) -> float:
        return sum(self.word_correct) / len(self.word_correct) if self.word_correct else 1.0

    @property
    def text(self) -> str:
        return "".join(map(str, self.symbols))


def decode_scrambled(
    model: BlockTransitionModel,
    encoding: ScrambledEncoding,
    reference: Sequence[Hashable] | None = None,
) -> DecodeResult:
    """MAP decode of the encoding; accuracy against ``reference`` (default:
    the observed symbols). If the whole sequence is impossible, words are
    decoded one at a time from a flat prior and impossible words count as
    wrong."""
    ref = list(reference) if reference is not None else encoding.observed
    if len(ref) != len(encoding):
        raise ValueError("reference length differs from the encoding")
    res = viterbi(model, encoding.evidence)
    bad_words = set()
    if not res.impossible:
        decoded = list(model.alphabet.decode(res.symbols))
    else:
        decoded = list(encoding.observed)
        steps = _steps(encoding.evidence)
        # a word can start in any clone, not only where the training text began
        flat = model.replace(prior=np.full(model.n_states, 1.0 / model.n_states))
        for w, (s, e) in enumerate(encoding.boundaries):
            part = viterbi(flat, EvidenceSequence(steps[s:e]))
            if part.impossible:
                bad_words.add(w)
            else:
                decoded[s:e] = model.alphabet.decode(part.symbols)
    correct = [
        w not in bad_words and decoded[s:e] == ref[s:e]
        for w, (s, e) in enumerate(encoding.boundaries)
    ]
    chars = sum(a == b for a, b in zip(decoded, ref)) / len(ref)
    return DecodeResult(decoded, correct, chars, len(bad_words))


def _steps(ev: EvidenceSequence) -> list:
    if ev.steps is not None:
        return list(ev.steps)
    return [int(x) for x in ev.hard]


def scramble_words(text: str, seed: int = 0) -> str:
    """Shuffle the interior of every word longer than three letters."""
    rng = np.random.default_rng(seed)
    out = list(text)
    for s, e in word_spans(out):
        if e - s > 3:
            mid = out[s + 1:e - 1]
            rng.shuffle(mid)
            out[s + 1:e - 1] = mid
    return "".join(out)


def permutation_baseline(text: Sequence[Hashable], boundaries=None) -> float:
    """Expected word accuracy of a uniformly random interior permutation:
    the mean over words of prod(m_c!) / L!."""
    seq = list(text)
    spans = word_spans(seq) if boundaries is None else boundaries
    if not spans:
        return 1.0
    total = 0.0
    for s, e in spans:
        interior = seq[s + 1:e - 1] if e - s > 3 else []
        p = 1.0
        if interior:
            p = math.prod(math.factorial(c) for c in Counter(interior).values()) / math.factorial(len(interior))
        total += p
    return total / len(spans)


# pruning

@dataclass
class PruneRow:
    threshold: float
    fraction_zeroed: float
    bps: float | None


@dataclass
class PruneReport:
    rows: list[PruneRow] = field(default_factory=list)

    @property
    def thresholds(self) -> list[float]:
        return [r.threshold for r in self.rows]

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fraction_zeroed", "bps"])
            for r in self.rows:
                w.writerow([repr(r.threshold), repr(r.fraction_zeroed), "" if r.bps is None else repr(r.bps)])


def prune_transitions(
    model: BlockTransitionModel,
    threshold: float,
    eval_sequence=None,
    smoothing: float = 1e-5,
) -> tuple[BlockTransitionModel, PruneRow]:
    """Zero entries below ``threshold`` and renormalize rows.

    A row losing all its mass becomes uniform over the entries that were
    positive before pruning. ``fraction_zeroed`` is measured over all entries
    of present blocks.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    st = model.structure
    data = np.array(model.data)
    below = data < threshold
    pruned = np.where(below, 0.0, data)
    sums = st.row_sums(pruned)
    empty = sums <= 0.0
    if empty.any():
        hit = empty[st.entry_rows] & (data > 0)
        pruned[hit] = 1.0
        sums = st.row_sums(pruned)
    # rows that lost nothing are left bit-for-bit untouched
    touched = st.row_sums((below & (data > 0)).astype(float)) > 0
    scale = np.where(touched, sums, 1.0)
    pruned = pruned / scale[st.entry_rows]
    out = model.replace(data=pruned)
    frac = float(below.mean()) if below.size else 0.0
    bps = None
    if eval_sequence is not None:
        bps = bits_per_symbol(out, eval_sequence, smoothing)
    return out, PruneRow(float(threshold), frac, bps)


def prune_sweep(model, thresholds, eval_sequence=None, smoothing: float = 1e-5) -> PruneReport:
    report = PruneReport()
    for t in sorted(thresholds):
        report.rows.append(prune_transitions(model, t, eval_sequence, smoothing)[1])
    return report


# graph export

def _label(model: BlockTransitionModel, state: int) -> str:
    sym = int(model.layout.symbol_of_state[state])
    name = str(model.alphabet.symbols[sym])
    if name == " ":
        name = "_"
    return f"{name}/{model.layout.clone_index(state)}"


def graph_edges(model: BlockTransitionModel, threshold: float = 0.0) -> list[tuple[str, str, float]]:
    """(src, dst, prob) for every transition with prob > 0 and prob >= threshold."""
    st = model.structure
    keep = (model.data > 0) & (model.data >= threshold)
    rows = st.entry_rows[keep]
    cols = st.entry_cols[keep]
    probs = model.data[keep]
    order = np.lexsort((cols, rows))
    return [(_label(model, int(rows[k])), _label(model, int(cols[k])), float(probs[k])) for k in order]


def export_graph(
    model: BlockTransitionModel, path: str | os.PathLike, threshold: float = 0.0, fmt: str = "edges"
) -> int:
    """Write the transition graph as an edge list or DOT; returns the edge count."""
    edges = graph_edges(model, threshold)
    if fmt not in ("edges", "dot"):
        raise ValueError(f"unknown graph format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "edges":
            for s, d, p in edges:
                fh.write(f"{s} {d} {p!r}\n")
        else:
            fh.write("digraph chmm {\n")
            for s, d, p in edges:
                fh.write(f'  "{_dot(s)}" -> "{_dot(d)}" [weight={p!r}, label="{p:.3g}"];\n')
            fh.write("}\n")
    return len(edges)


def _dot(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


# interpolated Kneser-Ney n-grams

class NgramModel:
    """Interpolated Kneser-Ney over integer symbols.

    The highest order uses raw counts, lower orders continuation counts
    (number of distinct left extensions); the unigram level is interpolated
    with the uniform distribution over ``vocab_size`` symbols.
    """

    def __init__(self, order: int, vocab_size: int):
        self.order = order
        self.vocab_size = vocab_size
        self.counts: list[dict] = [dict() for _ in range(order + 1)]
        self.discounts = [0.0] * (order + 1)
        self._ctx_total: list[dict] = [dict() for _ in range(order + 1)]
        self._ctx_types: list[dict] = [dict() for _ in range(order + 1)]

    def _finalize(self):
        for m in range(1, self.order + 1):
            total, types = defaultdict(float), defaultdict(int)
            hist = Counter()
            for g, c in self.counts[m].items():
                total[g[:-1]] += c
                types[g[:-1]] += 1
                if c in (1, 2):
                    hist[c] += 1
            self._ctx_total[m] = dict(total)
            self._ctx_types[m] = dict(types)
            n1, n2 = hist[1], hist[2]
            if n1 + 2 * n2 == 0 or n1 == 0:
                log.warning("degenerate count-of-counts at order %d, using discount 0.5", m)
                self.discounts[m] = 0.5
            else:
                self.discounts[m] = n1 / (n1 + 2 * n2)

    def prob(self, symbol: int, context: Sequence[int] = ()) -> float:
        ctx = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        return self._prob(int(symbol), tuple(int(c) for c in ctx))

    def _prob(self, w: int, ctx: tuple) -> float:
        p = 1.0 / self.vocab_size
        for m in range(1, len(ctx) + 2):
            h = ctx[len(ctx) - (m - 1):] if m > 1 else ()
            total = self._ctx_total[m].get(h)
            if not total:
                continue
            D = self.discounts[m]
            c = self.counts[m].get(h + (w,), 0)
            p = max(c - D, 0.0) / total + D * self._ctx_types[m][h] / total * p
        return p

    def distribution(self, context: Sequence[int] = ()) -> np.ndarray:
        return np.array([self.prob(w, context) for w in range(self.vocab_size)])

    def log_prob(self, sequence) -> float:
        seq = [int(s) for s in sequence]
        k = self.order - 1
        return sum(math.log(self._prob(w, tuple(seq[max(0, n - k):n]))) for n, w in enumerate(seq))


def fit_kneser_ney(corpus, order: int, vocab_size: int | None = None) -> NgramModel:
    seq = [int(s) for s in corpus]
    if order < 1:
        raise ValueError("order must be at least 1")
    if len(seq) <= order:
        raise ValueError("corpus must be longer than the model order")
    V = vocab_size if vocab_size is not None else max(seq) + 1
    if max(seq) >= V or min(seq) < 0:
        raise ValueError("corpus symbols fall outside the vocabulary")
    model = NgramModel(order, V)
    top = Counter(tuple(seq[n:n + order]) for n in range(len(seq) - order + 1))
    model.counts[order] = dict(top)
    # continuation counts: number of distinct left extensions of each gram
    for m in range(order - 1, 0, -1):
        longer = {tuple(seq[n:n + m + 1]) for n in range(len(seq) - m)}
        model.counts[m] = dict(Counter(g[1:] for g in longer))
    model._finalize()
    return model


def ngram_bps(model: NgramModel, sequence) -> float:
    seq = list(sequence)
    return -model.log_prob(seq) / (len(seq) * LN2)
