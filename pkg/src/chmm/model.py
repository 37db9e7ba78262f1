"""Clone layout, block-sparse transition model and clone allocation."""

from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Iterable, Mapping, Sequence
from functools import cached_property

import numpy as np

from chmm.errors import CapacityError, ModelValidationError

ROW_TOL = 1e-9


class Alphabet:
    """Ordered, duplicate-free list of symbols; index ``k`` names symbol ``k``."""

    def __init__(self, symbols: Iterable[Hashable]):
        self.symbols = tuple(symbols)
        if not self.symbols:
            raise ValueError("alphabet must contain at least one symbol")
        self._index = {s: k for k, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")

    @classmethod
    def from_corpus(cls, corpus: Iterable[Hashable]) -> Alphabet:
        return cls(sorted(set(corpus)))

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.symbols == other.symbols

    def __hash__(self) -> int:
        return hash(self.symbols)

    def __repr__(self) -> str:
        return f"Alphabet({list(self.symbols)!r})"

    def index(self, symbol: Hashable) -> int:
        return self._index[symbol]

    def encode(self, corpus: Iterable[Hashable]) -> np.ndarray:
        try:
            return np.fromiter((self._index[s] for s in corpus), dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} is not in the alphabet") from None

    def decode(self, indices: Iterable[int]) -> list:
        return [self.symbols[int(k)] for k in indices]


class CloneLayout:
    """Deterministic map from hidden states to symbols.

    Symbol ``i`` owns the contiguous state range ``offsets[i]:offsets[i+1]``.
    """

    def __init__(self, clones_per_symbol: Sequence[int]):
        counts = np.asarray(clones_per_symbol, dtype=np.int64).copy()
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("clones_per_symbol must be a non-empty 1-d sequence")
        if np.any(counts < 1):
            raise ValueError("every symbol needs at least one clone")
        counts.flags.writeable = False
        offsets = np.zeros(counts.size + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        offsets.flags.writeable = False
        self.clones_per_symbol = counts
        self.offsets = offsets

    @classmethod
    def uniform(cls, n_symbols: int, clones: int) -> CloneLayout:
        return cls([clones] * n_symbols)

    @property
    def n_symbols(self) -> int:
        return int(self.clones_per_symbol.size)

    @property
    def n_states(self) -> int:
        return int(self.offsets[-1])

    def size(self, symbol: int) -> int:
        return int(self.clones_per_symbol[symbol])

    def states(self, symbol: int) -> range:
        return range(int(self.offsets[symbol]), int(self.offsets[symbol + 1]))

    @cached_property
    def symbol_of_state(self) -> np.ndarray:
        out = np.repeat(np.arange(self.n_symbols, dtype=np.int64), self.clones_per_symbol)
        out.flags.writeable = False
        return out

    def clone_index(self, state: int) -> int:
        return int(state - self.offsets[self.symbol_of_state[state]])

    def __eq__(self, other) -> bool:
        return isinstance(other, CloneLayout) and np.array_equal(
            self.clones_per_symbol, other.clones_per_symbol
        )

    def __repr__(self) -> str:
        return f"CloneLayout({self.clones_per_symbol.tolist()})"


class BlockStructure:
    """Which symbol-pair blocks exist and where each lives in the flat buffer.

    Present blocks are packed back to back in row-major grid order, each
    block itself row-major. Absent blocks are implicitly zero.
    """

    def __init__(self, layout: CloneLayout, present: np.ndarray):
        present = np.asarray(present, dtype=bool)
        E = layout.n_symbols
        if present.shape != (E, E):
            raise ValueError(f"block presence must be {E}x{E}, got {present.shape}")
        self.layout = layout
        self.present = present.copy()
        self.present.flags.writeable = False
        sizes = np.outer(layout.clones_per_symbol, layout.clones_per_symbol)
        ptr = np.full((E, E), -1, dtype=np.int64)
        flat_sizes = np.where(present, sizes, 0).ravel()
        starts = np.concatenate([[0], np.cumsum(flat_sizes)[:-1]])
        ptr.ravel()[present.ravel()] = starts[present.ravel()]
        ptr.flags.writeable = False
        self.block_ptr = ptr
        self.n_entries = int(flat_sizes.sum())

    @classmethod
    def full(cls, layout: CloneLayout) -> BlockStructure:
        E = layout.n_symbols
        return cls(layout, np.ones((E, E), dtype=bool))

    @classmethod
    def from_pairs(cls, layout: CloneLayout, pairs: Iterable[tuple[int, int]]) -> BlockStructure:
        E = layout.n_symbols
        present = np.zeros((E, E), dtype=bool)
        for i, j in pairs:
            present[i, j] = True
        return cls(layout, present)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BlockStructure)
            and self.layout == other.layout
            and np.array_equal(self.present, other.present)
        )

    @property
    def present_blocks(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.present))]

    def block_slice(self, i: int, j: int) -> slice | None:
        p = int(self.block_ptr[i, j])
        if p < 0:
            return None
        return slice(p, p + self.layout.size(i) * self.layout.size(j))

    def view(self, flat: np.ndarray, i: int, j: int) -> np.ndarray | None:
        sl = self.block_slice(i, j)
        if sl is None:
            return None
        return flat[sl].reshape(self.layout.size(i), self.layout.size(j))

    @cached_property
    def entry_rows(self) -> np.ndarray:
        """Global source state of every flat entry."""
        return self._entry_index()[0]

    @cached_property
    def entry_cols(self) -> np.ndarray:
        """Global destination state of every flat entry."""
        return self._entry_index()[1]

    def _entry_index(self) -> tuple[np.ndarray, np.ndarray]:
        if "_entry_cache" not in self.__dict__:
            rows, cols = [], []
            off = self.layout.offsets
            for i, j in self.present_blocks:
                r = np.arange(off[i], off[i + 1])
                c = np.arange(off[j], off[j + 1])
                rows.append(np.repeat(r, c.size))
                cols.append(np.tile(c, r.size))
            if rows:
                out = (np.concatenate(rows), np.concatenate(cols))
            else:
                out = (np.zeros(0, np.int64), np.zeros(0, np.int64))
            for a in out:
                a.flags.writeable = False
            self.__dict__["_entry_cache"] = out
        return self.__dict__["_entry_cache"]

    def row_sums(self, flat: np.ndarray) -> np.ndarray:
        return np.bincount(self.entry_rows, weights=flat, minlength=self.layout.n_states)

    @cached_property
    def row_widths(self) -> np.ndarray:
        """Number of present entries in every row."""
        return np.bincount(self.entry_rows, minlength=self.layout.n_states)

    def rows_without_successors(self) -> np.ndarray:
        return np.nonzero(~self.present.any(axis=1))[0]

    def to_dense(self, flat: np.ndarray) -> np.ndarray:
        H = self.layout.n_states
        out = np.zeros((H, H))
        out[self.entry_rows, self.entry_cols] = flat
        return out

    def gather(self, dense: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(dense[self.entry_rows, self.entry_cols], dtype=np.float64)


class BlockTransitionModel:
    """Row-stochastic transition matrix stored as symbol-pair blocks, plus prior.

    Instances are treated as immutable: the underlying arrays are read-only.
    """

    def __init__(
        self,
        structure: BlockStructure,
        data: np.ndarray,
        prior: np.ndarray,
        alphabet: Alphabet | None = None,
        *,
        validate: bool = True,
    ):
        data = np.array(data, dtype=np.float64, copy=True).ravel()
        prior = np.array(prior, dtype=np.float64, copy=True).ravel()
        if data.size != structure.n_entries:
            raise ModelValidationError(
                f"expected {structure.n_entries} block entries, got {data.size}"
            )
        if prior.size != structure.layout.n_states:
            raise ModelValidationError(
                f"prior must have {structure.layout.n_states} entries, got {prior.size}"
            )
        if alphabet is None:
            alphabet = Alphabet(range(structure.layout.n_symbols))
        elif alphabet.size != structure.layout.n_symbols:
            raise ModelValidationError("alphabet size does not match the clone layout")
        data.flags.writeable = False
        prior.flags.writeable = False
        self.structure = structure
        self.data = data
        self.prior = prior
        self.alphabet = alphabet
        if validate:
            self.validate()

    # construction helpers

    @classmethod
    def from_blocks(
        cls,
        layout: CloneLayout,
        blocks: Mapping[tuple[int, int], np.ndarray],
        prior: np.ndarray,
        alphabet: Alphabet | None = None,
        **kw,
    ) -> BlockTransitionModel:
        structure = BlockStructure.from_pairs(layout, blocks.keys())
        data = np.zeros(structure.n_entries)
        for (i, j), blk in blocks.items():
            blk = np.asarray(blk, dtype=np.float64)
            want = (layout.size(i), layout.size(j))
            if blk.shape != want:
                raise ModelValidationError(f"block ({i},{j}) must be {want}, got {blk.shape}")
            data[structure.block_slice(i, j)] = blk.ravel()
        return cls(structure, data, prior, alphabet, **kw)

    @classmethod
    def from_dense(
        cls,
        layout: CloneLayout,
        transitions: np.ndarray,
        prior: np.ndarray,
        alphabet: Alphabet | None = None,
        structure: BlockStructure | None = None,
        **kw,
    ) -> BlockTransitionModel:
        """Pack a dense H x H matrix; blocks that are entirely zero are dropped
        unless an explicit ``structure`` is supplied."""
        transitions = np.asarray(transitions, dtype=np.float64)
        if structure is None:
            off = layout.offsets
            E = layout.n_symbols
            present = np.zeros((E, E), dtype=bool)
            for i in range(E):
                for j in range(E):
                    present[i, j] = np.any(transitions[off[i]:off[i + 1], off[j]:off[j + 1]] != 0)
            structure = BlockStructure(layout, present)
        return cls(structure, structure.gather(transitions), prior, alphabet, **kw)

    def replace(self, data=None, prior=None, *, validate: bool = True) -> BlockTransitionModel:
        return BlockTransitionModel(
            self.structure,
            self.data if data is None else data,
            self.prior if prior is None else prior,
            self.alphabet,
            validate=validate,
        )

    # accessors

    @property
    def layout(self) -> CloneLayout:
        return self.structure.layout

    @property
    def block_ptr(self) -> np.ndarray:
        return self.structure.block_ptr

    @property
    def n_states(self) -> int:
        return self.layout.n_states

    @property
    def n_symbols(self) -> int:
        return self.layout.n_symbols

    def block(self, i: int, j: int) -> np.ndarray:
        """Block T(i, j); an all-zero array when the block is absent."""
        view = self.structure.view(self.data, i, j)
        if view is None:
            return np.zeros((self.layout.size(i), self.layout.size(j)))
        return view

    def has_block(self, i: int, j: int) -> bool:
        return bool(self.structure.present[i, j])

    def to_dense(self) -> np.ndarray:
        return self.structure.to_dense(self.data)

    def prior_of(self, symbol: int) -> np.ndarray:
        return self.prior[self.layout.offsets[symbol]:self.layout.offsets[symbol + 1]]

    def validate(self, tol: float = ROW_TOL) -> None:
        if not np.all(np.isfinite(self.data)) or not np.all(np.isfinite(self.prior)):
            raise ModelValidationError("model contains non-finite values")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0 + tol):
            raise ModelValidationError("transition entries must lie in [0, 1]")
        if self.prior.min() < 0.0:
            raise ModelValidationError("prior entries must be nonnegative")
        if abs(self.prior.sum() - 1.0) > tol:
            raise ModelValidationError(f"prior sums to {self.prior.sum()!r}, not 1")
        sums = self.structure.row_sums(self.data)
        bad = np.nonzero(np.abs(sums - 1.0) > tol)[0]
        if bad.size:
            raise ModelValidationError(
                f"{bad.size} rows are not stochastic (first: state {bad[0]}, sum {sums[bad[0]]!r})"
            )

    def __repr__(self) -> str:
        return (
            f"BlockTransitionModel(states={self.n_states}, symbols={self.n_symbols}, "
            f"blocks={int(self.structure.present.sum())})"
        )


def normalize_rows(structure: BlockStructure, counts: np.ndarray, fallback: np.ndarray | None = None):
    """Divide each row of ``counts`` by its total.

    Rows with zero total take the matching row of ``fallback`` when given,
    otherwise become uniform over the row's present entries. Returns the
    normalized buffer and a boolean mask of the rows that had zero mass.
    """
    sums = structure.row_sums(counts)
    empty = sums <= 0.0
    safe = np.where(empty, 1.0, sums)
    out = counts / safe[structure.entry_rows]
    if empty.any():
        hit = empty[structure.entry_rows]
        if fallback is not None:
            out[hit] = fallback[hit]
        else:
            widths = structure.row_widths
            out[hit] = 1.0 / widths[structure.entry_rows[hit]]
    return out, empty


def init_random(
    layout: CloneLayout,
    seed: int,
    block_support: Iterable[tuple[int, int]] | None = None,
    alphabet: Alphabet | None = None,
    observed: Iterable[np.ndarray] | None = None,
) -> BlockTransitionModel:
    """Random row-stochastic model: uniform(0, 1) draws, row-normalized, uniform prior.

    With ``observed`` sequences, entries of symbol pairs that never occur
    consecutively start at zero (the block structure is kept, so smoothing
    can still reach them). Symbols with no observed successor keep a full
    random row.
    """
    if block_support is None:
        structure = BlockStructure.full(layout)
    else:
        structure = BlockStructure.from_pairs(layout, block_support)
    missing = structure.rows_without_successors()
    if missing.size:
        raise ValueError(f"symbols {missing.tolist()} have no permitted successor block")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(size=structure.n_entries)
    if observed is not None:
        seen = np.zeros(structure.present.shape, dtype=bool)
        for i, j in observed_block_support(observed):
            seen[i, j] = True
        sym = layout.symbol_of_state
        rows, cols = sym[structure.entry_rows], sym[structure.entry_cols]
        keep = seen[rows, cols]
        # rows whose symbol never has an observed successor stay dense
        has_succ = (seen & structure.present).any(axis=1)
        keep |= ~has_succ[rows]
        draws = np.where(keep, draws, 0.0)
    data, _ = normalize_rows(structure, draws)
    prior = np.full(layout.n_states, 1.0 / layout.n_states)
    return BlockTransitionModel(structure, data, prior, alphabet)


def observed_block_support(sequences: Iterable[np.ndarray]) -> set[tuple[int, int]]:
    """Symbol pairs that occur consecutively in any of ``sequences``."""
    pairs: set[tuple[int, int]] = set()
    for seq in sequences:
        seq = np.asarray(seq)
        if seq.size > 1:
            pairs.update(zip(seq[:-1].tolist(), seq[1:].tolist()))
    return pairs


# clone allocation

def _largest_remainder(weights: np.ndarray, seats: int) -> np.ndarray:
    total = weights.sum()
    if total <= 0:
        quotas = np.full(weights.size, seats / weights.size)
    else:
        quotas = weights * (seats / total)
    out = np.floor(quotas).astype(np.int64)
    left = seats - int(out.sum())
    if left:
        rem = quotas - out
        # ties go to the lower symbol index
        order = sorted(range(weights.size), key=lambda k: (-rem[k], k))
        for k in order[:left]:
            out[k] += 1
    return out


def apportion(weights: Sequence[float], total_capacity: int, min_per_symbol: int = 1) -> np.ndarray:
    """Split ``total_capacity`` clones proportionally to ``weights``.

    Largest-remainder rounding; symbols whose share falls below
    ``min_per_symbol`` are pinned at the minimum and the rest re-apportioned.
    """
    weights = np.asarray(weights, dtype=np.float64)
    E = weights.size
    if min_per_symbol < 1:
        raise ValueError("min_per_symbol must be at least 1")
    if total_capacity < E * min_per_symbol:
        raise CapacityError(
            f"capacity {total_capacity} cannot give {E} symbols {min_per_symbol} clones each"
        )
    pinned = np.zeros(E, dtype=bool)
    while True:
        free = ~pinned
        seats = total_capacity - int(pinned.sum()) * min_per_symbol
        out = np.full(E, min_per_symbol, dtype=np.int64)
        out[free] = _largest_remainder(weights[free], seats)
        low = free & (out < min_per_symbol)
        if not low.any():
            return out
        pinned |= low


def _check_coverage(counts: Counter, alphabet: Alphabet) -> None:
    missing = [s for s in alphabet if counts[s] == 0]
    if missing:
        raise ValueError(f"symbols {missing!r} never appear in the corpus")


def allocate_clones_by_frequency(
    corpus: Sequence[Hashable],
    total_capacity: int,
    min_per_symbol: int = 1,
    alphabet: Alphabet | None = None,
) -> CloneLayout:
    alphabet = alphabet or Alphabet.from_corpus(corpus)
    counts = Counter(corpus)
    _check_coverage(counts, alphabet)
    return CloneLayout(apportion([counts[s] for s in alphabet], total_capacity, min_per_symbol))


def allocate_clones_by_ngram(
    corpus: Sequence[Hashable],
    n: int,
    total_capacity: int,
    min_per_symbol: int = 1,
    alphabet: Alphabet | None = None,
) -> CloneLayout:
    """Clones proportional to the number of distinct n-grams ending in each symbol."""
    if n < 2:
        raise ValueError("n must be at least 2")
    alphabet = alphabet or Alphabet.from_corpus(corpus)
    _check_coverage(Counter(corpus), alphabet)
    seq = list(corpus)
    grams = {tuple(seq[k:k + n]) for k in range(len(seq) - n + 1)}
    ends = Counter(g[-1] for g in grams)
    return CloneLayout(apportion([ends[s] for s in alphabet], total_capacity, min_per_symbol))
