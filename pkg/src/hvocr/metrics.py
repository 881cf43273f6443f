"""Label and word error rates against ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Union

from .ctc import edit_distance
from .hypothesis import PageTranscript
from .syndata import GroundTruth

# Reported label / word error percentages on the Oriya test pages.  Kept for
# documentation and for the ordering check only, never as numeric targets.
REFERENCE_TABLE = {
    "projection": (14.10, 16.301),
    "interval_tree": (30.22, 35.06),
    "hough": (22.24, 28.49),
    "fused": (8.64, 10.64),
}


@dataclass
class PageErrors:
    label_edits: int
    labels: int
    word_edits: int
    words: int


@dataclass
class EvalReport:
    label_error: float
    word_error: float
    pages: List[PageErrors] = field(default_factory=list)

    @property
    def total_labels(self) -> int:
        return sum(p.labels for p in self.pages)

    @property
    def total_words(self) -> int:
        return sum(p.words for p in self.pages)

    def table(self, name: str = "result") -> str:
        head = f"{'method':<16} {'label error (%)':>16} {'word error (%)':>15} {'labels':>8} {'words':>7}"
        row = (f"{name:<16} {self.label_error:>16.2f} {self.word_error:>15.2f} "
               f"{self.total_labels:>8d} {self.total_words:>7d}")
        return head + "\n" + row + "\n"

    def to_text(self) -> str:
        """Tab-separated key/value summary followed by one row per page."""
        rows = [f"label_error\t{self.label_error:.6f}", f"word_error\t{self.word_error:.6f}",
                f"total_labels\t{self.total_labels}", f"total_words\t{self.total_words}",
                "page\tlabel_edits\tlabels\tword_edits\twords"]
        for i, p in enumerate(self.pages):
            rows.append(f"{i}\t{p.label_edits}\t{p.labels}\t{p.word_edits}\t{p.words}")
        return "\n".join(rows) + "\n"


Words = List[List[int]]


def _hyp_words(t: Union[PageTranscript, Sequence]) -> Words:
    if isinstance(t, PageTranscript):
        return t.words()
    # nested lines of words, or an already flat list of words
    if t and t[0] and isinstance(t[0][0], (list, tuple)):
        return [list(w) for line in t for w in line if len(w)]
    return [list(w) for w in t if len(w)]


def _ref_words(g: Union[GroundTruth, Sequence]) -> Words:
    if isinstance(g, GroundTruth):
        return [list(w.labels) for line in g.lines() for w in line]
    return _hyp_words(g)


def evaluate(transcripts: Sequence, truths: Sequence) -> EvalReport:
    """Micro-averaged label and word error rates in percent.

    Label error is the label-level edit distance between each page's
    flattened label streams; word error is the word-level edit distance
    between flattened word streams, both divided by the reference totals.
    """
    if len(transcripts) != len(truths):
        raise ValueError(f"page count mismatch: {len(transcripts)} transcripts vs {len(truths)} truths")
    pages = []
    for hyp, ref in zip(transcripts, truths):
        hw, rw = _hyp_words(hyp), _ref_words(ref)
        if not rw:
            raise ValueError("empty reference page")
        hl = [lab for w in hw for lab in w]
        rl = [lab for w in rw for lab in w]
        pages.append(PageErrors(edit_distance(hl, rl), len(rl),
                                edit_distance([tuple(w) for w in hw], [tuple(w) for w in rw]), len(rw)))
    if not pages:
        raise ValueError("no pages to evaluate")
    labels = sum(p.labels for p in pages)
    words = sum(p.words for p in pages)
    return EvalReport(100.0 * sum(p.label_edits for p in pages) / labels,
                      100.0 * sum(p.word_edits for p in pages) / words, pages)
