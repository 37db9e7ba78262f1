"""Character-level text preprocessing: number spelling, filtering, rare words, splits."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass

from num2words import num2words

from chmm.model import Alphabet

log = logging.getLogger(__name__)

TEXT_ALPHABET = Alphabet(list(" abcdefghijklmnopqrstuvwxyz"))
_DIGITS = "zero one two three four five six seven eight nine".split()
_DECIMAL = re.compile(r"(\d+)\.(\d+)")
_NUMBER = re.compile(r"\d+")
_SEPARATORS = re.compile(r"[\s\-]+")
_DROP = re.compile(r"[^a-z ]+")
_SPACES = re.compile(r" +")
# num2words handles integers up to this size
_MAX_SPELLED = 10 ** 27


@dataclass(frozen=True)
class TextPipelineConfig:
    train_fraction: float = 0.9
    max_train_symbols: int = 750_000
    validation_fraction_of_train: float = 0.1
    rare_token: str = "rare"

    def __post_init__(self):
        for name in ("train_fraction", "validation_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.max_train_symbols < 1:
            raise ValueError("max_train_symbols must be positive")
        if not self.rare_token or _DROP.search(self.rare_token) or " " in self.rare_token:
            raise ValueError("rare_token must be a single lowercase word")


@dataclass
class TextSplits:
    train: str
    validation: str
    test: str
    rare_token: str = "rare"

    @property
    def train_full(self) -> str:
        """Training text including the validation tail."""
        return f"{self.train} {self.validation}" if self.validation else self.train

    def encode(self, part: str):
        return TEXT_ALPHABET.encode(getattr(self, part))


def _spell_digits(run: str) -> str:
    return " ".join(_DIGITS[int(ch)] for ch in run)


def _spell_int(run: str) -> str:
    if len(run) > 1 and run[0] == "0":
        return _spell_digits(run)
    value = int(run)
    if value >= _MAX_SPELLED:
        return _spell_digits(run)
    return num2words(value)


def spell_numbers(text: str) -> str:
    """Replace integers by English number names; decimals read digit by digit
    after the point."""
    text = _DECIMAL.sub(lambda m: f" {_spell_int(m.group(1))} point {_spell_digits(m.group(2))} ", text)
    return _NUMBER.sub(lambda m: f" {_spell_int(m.group(0))} ", text)


def normalize_text(text: str) -> str:
    """Spell numbers, lowercase, keep only a-z and single spaces."""
    text = spell_numbers(text).lower()
    text = _SEPARATORS.sub(" ", text.replace(",", " "))
    text = _DROP.sub("", text)
    return _SPACES.sub(" ", text).strip()


def replace_rare_words(words: list[str], vocabulary: Counter | None = None, rare_token: str = "rare") -> list[str]:
    """Words seen at most once in ``vocabulary`` (default: ``words`` itself)
    become ``rare_token``."""
    counts = vocabulary if vocabulary is not None else Counter(words)
    return [w if counts.get(w, 0) > 1 else rare_token for w in words]


def _take_chars(words: list[str], limit: int) -> list[str]:
    total = -1
    for n, w in enumerate(words):
        total += len(w) + 1
        if total > limit:
            return words[:n]
    return words


def _split_at(words: list[str], fraction: float) -> int:
    """Word index where the character prefix first reaches ``fraction``."""
    total = sum(len(w) + 1 for w in words)
    target = fraction * total
    acc = 0
    for n, w in enumerate(words):
        acc += len(w) + 1
        if acc >= target:
            return n + 1
    return len(words)


def preprocess_text(raw: str, config: TextPipelineConfig | None = None) -> TextSplits:
    """Normalize ``raw`` and split it into train / validation / test strings.

    The split is by position at word boundaries. Train words seen once in
    train, and test words missing from the train vocabulary, become the rare
    token. Validation is the tail of train.
    """
    config = config or TextPipelineConfig()
    words = normalize_text(raw).split()
    if len(words) < 2:
        raise ValueError("text is empty (or a single word) after filtering")
    cut = _split_at(words, config.train_fraction)
    cut = min(max(cut, 1), len(words) - 1)
    train, test = words[:cut], words[cut:]
    train = _take_chars(train, config.max_train_symbols)
    vocab = Counter(train)
    train = replace_rare_words(train, vocab, config.rare_token)
    test = replace_rare_words(test, vocab, config.rare_token)
    # the rare token can be longer than the word it replaced
    train = _take_chars(train, config.max_train_symbols)
    if not train:
        raise ValueError("training split is empty")
    vcut = _split_at(train, 1.0 - config.validation_fraction_of_train)
    vcut = min(vcut, len(train) - 1) if len(train) > 1 else len(train)
    n_rare = sum(w == config.rare_token for w in train)
    log.info("train %d words (%d rare), test %d words", len(train), n_rare, len(test))
    return TextSplits(" ".join(train[:vcut]), " ".join(train[vcut:]), " ".join(test), config.rare_token)


def clean_text(raw: str, rare_token: str = "rare") -> str:
    """Normalization plus rare-word replacement against the text's own counts.

    Idempotent: ``clean_text(clean_text(x)) == clean_text(x)``.
    """
    return " ".join(replace_rare_words(normalize_text(raw).split(), rare_token=rare_token))
