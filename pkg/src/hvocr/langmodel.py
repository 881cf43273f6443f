"""Character n-gram verification model.

The model is a pair of sets: every contiguous label trigram and 4-gram seen
in the training transcripts.  A word is scored by sliding both window
sizes across it, +1 per window found in the model and ``-penalty`` per
window that is not.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Set, Tuple, Union

PathLike = Union[str, os.PathLike]

DEFAULT_N = (3, 4)
_HEADER = "# hvocr ngram model v1"


@dataclass
class NGramModel:
    n_labels: int
    n_values: Tuple[int, ...] = DEFAULT_N
    valid: Dict[int, Set[Tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        self.n_values = tuple(sorted(self.n_values))
        for n in self.n_values:
            self.valid.setdefault(n, set())
        for n, grams in self.valid.items():
            if n not in self.n_values:
                raise ValueError(f"gram order {n} not in {self.n_values}")
            for g in grams:
                if len(g) != n or min(g) < 0 or max(g) >= self.n_labels:
                    raise ValueError(f"invalid {n}-gram {g} for alphabet of {self.n_labels} labels")

    def __len__(self):
        return sum(len(s) for s in self.valid.values())


@dataclass(frozen=True)
class WordScore:
    score: float
    valid_count: int
    invalid_count: int


def build_ngrams(corpus: Iterable[Sequence[int]], n_values: Sequence[int] = DEFAULT_N,
                 n_labels: Optional[int] = None) -> NGramModel:
    words = [tuple(int(v) for v in w) for w in corpus]
    if not words:
        raise ValueError("empty corpus")
    if n_labels is None:
        n_labels = max((max(w) for w in words if w), default=-1) + 1
    valid: Dict[int, Set[Tuple[int, ...]]] = {n: set() for n in n_values}
    for w in words:
        for n in n_values:
            for i in range(len(w) - n + 1):
                valid[n].add(w[i:i + n])
    return NGramModel(max(n_labels, 1), tuple(n_values), valid)


def is_valid(model: NGramModel, gram: Sequence[int]) -> bool:
    gram = tuple(gram)
    if len(gram) not in model.n_values:
        raise ValueError(f"gram length {len(gram)} not in {model.n_values}")
    return gram in model.valid[len(gram)]


def word_score(model: NGramModel, word: Sequence[int], penalty: float = 1.0) -> WordScore:
    """Cumulative matching score over all trigram and 4-gram windows.

    Words shorter than the smallest gram order carry no evidence and score 0.
    """
    if penalty < 0:
        raise ValueError(f"penalty must be >= 0, got {penalty}")
    w = tuple(word)
    good = bad = 0
    if len(w) >= min(model.n_values):
        for n in model.n_values:
            grams = model.valid[n]
            for i in range(len(w) - n + 1):
                if w[i:i + n] in grams:
                    good += 1
                else:
                    bad += 1
    return WordScore(good - penalty * bad, good, bad)


def save_ngrams(model: NGramModel, path: PathLike) -> None:
    """Text file: header, then one ``n l1 .. ln`` line per gram, sorted."""
    rows = [_HEADER, f"alphabet {model.n_labels}", f"orders {' '.join(map(str, model.n_values))}"]
    for n in model.n_values:
        for g in sorted(model.valid[n]):
            rows.append(" ".join(map(str, (n,) + g)))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_ngrams(path: PathLike) -> NGramModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 3 or lines[0] != _HEADER:
        raise ValueError(f"{path}: not an n-gram model file")
    try:
        key, k = lines[1].split()
        if key != "alphabet":
            raise ValueError("expected alphabet line")
        key, *orders = lines[2].split()
        if key != "orders":
            raise ValueError("expected orders line")
        n_values = tuple(int(v) for v in orders)
        valid: Dict[int, Set[Tuple[int, ...]]] = {n: set() for n in n_values}
        for lineno, row in enumerate(lines[3:], start=4):
            if not row.strip():
                continue
            vals = [int(v) for v in row.split()]
            n, gram = vals[0], tuple(vals[1:])
            if n not in valid or len(gram) != n:
                raise ValueError(f"line {lineno}: malformed {n}-gram record {row!r}")
            valid[n].add(gram)
        return NGramModel(int(k), n_values, valid)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
