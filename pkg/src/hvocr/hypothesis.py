"""Multi-hypothesis verification over competing page segmentations.

Every segmentation routine yields a branch: its words, their decoded label
sequences and n-gram scores.  Words of the branches are aligned into groups
by box overlap around a running cursor, and a best-first pass picks one
candidate per group.
"""
from __future__ import annotations

import heapq
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .ctc import best_path_decode
from .imageio import BinaryImage, despeckle
from .langmodel import NGramModel, WordScore, word_score
from .network import DeepBLSTM, predict_lattices
from .segmentation import SOURCES, WordSegment, frame_columns, normalize_segment, segment_page

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]
Box = Tuple[int, int, int, int]

DEFAULT_PRIORITY = SOURCES


@dataclass
class RecognizedWord:
    box: Box
    labels: List[int]
    score: WordScore
    columns: List[int] = field(default_factory=list)
    line: int = 0


@dataclass
class HypothesisBranch:
    source: str
    lines: List[List[RecognizedWord]]

    def words(self) -> List[RecognizedWord]:
        return [w for line in self.lines for w in line]

    @property
    def n_words(self) -> int:
        return sum(len(line) for line in self.lines)


@dataclass
class SlotEntry:
    """A branch's contribution to one group.

    ``words`` indexes the branch's reading-order word list; more than one
    index means consecutive words were merged, ``split`` marks a word whose
    labels were divided between neighbouring groups.
    """

    words: Tuple[int, ...]
    labels: List[int]
    split: bool = False


@dataclass
class AlignmentGroup:
    anchor: Box
    slots: List[Optional[SlotEntry]]
    line: int = 0


@dataclass
class TranscriptWord:
    labels: List[int]
    branch: Optional[str]
    score: float
    valid_count: int = 0
    invalid_count: int = 0


@dataclass
class PageTranscript:
    lines: List[List[TranscriptWord]]
    score: float = 0.0

    def words(self) -> List[List[int]]:
        """Flattened non-empty words in reading order."""
        return [w.labels for line in self.lines for w in line if w.labels]


@dataclass
class RecognizerConfig:
    min_gap: int = 3
    min_ink: int = 0
    avg_line_height: int = 22
    theta_tolerance: float = 2.0
    accumulator_bins: int = 5
    peak_fraction: float = 0.3
    gap_threshold: int = 6
    target_height: int = 16
    despeckle: int = 6
    penalty: float = 1.0
    overlap_threshold: float = 0.3
    window: int = 1
    branches: Tuple[str, ...] = SOURCES
    branch_priority: Tuple[str, ...] = DEFAULT_PRIORITY

    def segmentation_kwargs(self) -> dict:
        return dict(min_gap=self.min_gap, min_ink=self.min_ink, avg_line_height=self.avg_line_height,
                    theta_tolerance=self.theta_tolerance, accumulator_bins=self.accumulator_bins,
                    peak_fraction=self.peak_fraction, gap_threshold=self.gap_threshold)


# ---------------------------------------------------------------------------
# Geometry


def box_area(b: Box) -> int:
    return (b[2] - b[0] + 1) * (b[3] - b[1] + 1)


def box_intersection(a: Box, b: Box) -> int:
    w = min(a[2], b[2]) - max(a[0], b[0]) + 1
    h = min(a[3], b[3]) - max(a[1], b[1]) + 1
    return w * h if w > 0 and h > 0 else 0


def box_union(*boxes: Box) -> Box:
    return (min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes))


def iou(a: Box, b: Box) -> float:
    inter = box_intersection(a, b)
    if inter == 0:
        return 0.0
    return inter / (box_area(a) + box_area(b) - inter)


# ---------------------------------------------------------------------------
# Branch construction


def preprocess(page: BinaryImage, config: RecognizerConfig) -> BinaryImage:
    return despeckle(page, config.despeckle)


def recognize_segments(net: DeepBLSTM, segments: Sequence[WordSegment], target_height: int):
    """Decode word segments; unusable segments decode to an empty word."""
    feats, cols, ok = [], [], []
    for seg in segments:
        try:
            feats.append(normalize_segment(seg, target_height))
            cols.append(frame_columns(seg, target_height))
            ok.append(True)
        except ValueError as exc:
            logger.warning("skipping word segment at x=%d..%d: %s", seg.x0, seg.x1, exc)
            ok.append(False)
    lattices = iter(predict_lattices(net, feats)) if feats else iter(())
    col_iter = iter(cols)
    out = []
    for good in ok:
        if not good:
            out.append(([], []))
            continue
        labels, frames = best_path_decode(next(lattices), return_frames=True)
        c = next(col_iter)
        out.append((labels, [int(c[f]) for f in frames]))
    return out


def build_branch(page: BinaryImage, source: str, net: DeepBLSTM, lm: NGramModel,
                 config: RecognizerConfig) -> HypothesisBranch:
    try:
        seg_lines = segment_page(page, source, **config.segmentation_kwargs())
    except ValueError as exc:
        logger.warning("%s segmentation failed: %s", source, exc)
        seg_lines = []
    flat = [seg for line in seg_lines for seg in line]
    decoded = iter(recognize_segments(net, flat, config.target_height))
    lines = []
    for li, line in enumerate(seg_lines):
        words = []
        for seg in line:
            labels, columns = next(decoded)
            words.append(RecognizedWord(seg.box, labels, word_score(lm, labels, config.penalty), columns, li))
        lines.append(words)
    return HypothesisBranch(source, lines)


def build_branches(page: BinaryImage, net: DeepBLSTM, lm: NGramModel,
                   config: Optional[RecognizerConfig] = None) -> List[HypothesisBranch]:
    """One branch per configured routine, in the configured order."""
    config = config or RecognizerConfig()
    return [build_branch(page, src, net, lm, config) for src in config.branches]


# ---------------------------------------------------------------------------
# Alignment


def _split_labels(word: RecognizedWord, boundaries: Sequence[float]) -> List[List[int]]:
    """Distribute a word's labels over ``len(boundaries) + 1`` column intervals."""
    parts: List[List[int]] = [[] for _ in range(len(boundaries) + 1)]
    for lab, col in zip(word.labels, word.columns):
        parts[int(np.searchsorted(boundaries, col, side="right"))].append(lab)
    return parts


def _best_overlap(anchor: Box, words: Sequence[RecognizedWord], used: Sequence[bool], candidates):
    best_j, best_iou = None, 0.0
    for j in candidates:
        if used[j]:
            continue
        ov = iou(anchor, words[j].box)
        if ov > best_iou:
            best_j, best_iou = j, ov
    return best_j, best_iou


def align_words(branches: Sequence[HypothesisBranch], overlap_threshold: float = 0.3,
                window: int = 1) -> List[AlignmentGroup]:
    """Align the words of all branches into reading-order groups.

    The branch with most words is the spine and each of its words anchors a
    group.  Every other branch is walked with a cursor: for each anchor the
    best-overlapping word within ``window`` positions of the cursor joins
    the group when its IoU reaches ``overlap_threshold`` (the whole branch
    is searched when nothing near the cursor qualifies), absorbing
    following/preceding words when that raises the overlap (the anchor is a
    merged segmentation).  A single word that fits the union of this and the
    next anchors better than this anchor alone is split across them.  A leftover word covering several consecutive
    unfilled anchors is split between them at the gaps between anchors, the
    label positions deciding which part each label goes to.  Any word still
    unplaced opens a group of its own right after its predecessor's group.
    """
    if not branches or all(b.n_words == 0 for b in branches):
        raise ValueError("all branches are empty")
    n_br = len(branches)
    counts = [b.n_words for b in branches]
    spine = int(np.argmax(counts))
    spine_words = branches[spine].words()
    groups = []
    for i, w in enumerate(spine_words):
        slots: List[Optional[SlotEntry]] = [None] * n_br
        slots[spine] = SlotEntry((i,), list(w.labels))
        groups.append(AlignmentGroup(w.box, slots, w.line))

    for b in range(n_br):
        if b == spine or counts[b] == 0:
            continue
        words = branches[b].words()
        m = len(words)
        used = [False] * m
        where: Dict[int, int] = {}  # word index -> group index (first)
        cursor = 0

        def merged_iou(anchor, lo, hi):
            return iou(anchor, box_union(*(words[k].box for k in range(lo, hi + 1))))

        for gi, group in enumerate(groups):
            if group.slots[b] is not None:
                continue
            near = range(max(cursor - window, 0), min(cursor + window + 1, m))
            best_j, best_iou = _best_overlap(group.anchor, words, used, near)
            if best_iou < overlap_threshold:
                # reading orders disagree (a split line): look further away
                best_j, best_iou = _best_overlap(group.anchor, words, used, range(m))
            if best_j is None or best_iou < overlap_threshold:
                continue
            lo = hi = best_j
            while hi + 1 < m and not used[hi + 1] and merged_iou(group.anchor, lo, hi + 1) > best_iou:
                hi += 1
                best_iou = merged_iou(group.anchor, lo, hi)
            while lo - 1 >= 0 and not used[lo - 1] and merged_iou(group.anchor, lo - 1, hi) > best_iou:
                lo -= 1
                best_iou = merged_iou(group.anchor, lo, hi)
            span = [gi]
            if lo == hi:
                # one word covering this anchor and the next ones: a merge
                box = words[lo].box
                k = gi + 1
                while (k < len(groups) and groups[k].slots[b] is None
                       and groups[k - 1].anchor[2] < groups[k].anchor[0]
                       and box_intersection(groups[k].anchor, box) > 0
                       and iou(box, box_union(*(groups[g].anchor for g in span + [k])))
                       > iou(box, box_union(*(groups[g].anchor for g in span)))):
                    span.append(k)
                    k += 1
            if len(span) > 1:
                bounds = [(groups[span[k]].anchor[2] + groups[span[k + 1]].anchor[0]) / 2.0
                          for k in range(len(span) - 1)]
                for g, part in zip(span, _split_labels(words[lo], bounds)):
                    groups[g].slots[b] = SlotEntry((lo,), part, split=True)
            else:
                labels = [lab for k in range(lo, hi + 1) for lab in words[k].labels]
                group.slots[b] = SlotEntry(tuple(range(lo, hi + 1)), labels)
            for k in range(lo, hi + 1):
                used[k] = True
                where[k] = gi
            cursor = hi + 1

        # leftover words: split across consecutive empty anchors, else own group
        for j in range(m):
            if used[j]:
                continue
            prev_g = max((where[k] for k in range(j) if k in where), default=-1)
            next_g = min((where[k] for k in range(j + 1, m) if k in where), default=len(groups))
            span = [gi for gi in range(prev_g + 1, next_g)
                    if groups[gi].slots[b] is None and box_intersection(groups[gi].anchor, words[j].box) > 0]
            ordered = all(groups[span[k]].anchor[2] < groups[span[k + 1]].anchor[0] for k in range(len(span) - 1))
            contiguous = span == list(range(span[0], span[-1] + 1)) if span else False
            if (len(span) >= 2 and ordered and contiguous
                    and iou(words[j].box, box_union(*(groups[gi].anchor for gi in span))) >= overlap_threshold):
                bounds = [(groups[span[k]].anchor[2] + groups[span[k + 1]].anchor[0]) / 2.0
                          for k in range(len(span) - 1)]
                for gi, part in zip(span, _split_labels(words[j], bounds)):
                    groups[gi].slots[b] = SlotEntry((j,), part, split=True)
                used[j] = True
                where[j] = span[0]
                continue
            slots = [None] * n_br
            slots[b] = SlotEntry((j,), list(words[j].labels))
            insert_at = prev_g + 1
            line = groups[prev_g].line if prev_g >= 0 else (groups[0].line if groups else 0)
            groups.insert(insert_at, AlignmentGroup(words[j].box, slots, line))
            for k in where:
                if where[k] >= insert_at:
                    where[k] += 1
            used[j] = True
            where[j] = insert_at
    return groups


# ---------------------------------------------------------------------------
# Selection


def best_first_select(groups: Sequence[AlignmentGroup], sources: Sequence[str], lm: NGramModel,
                      penalty: float = 1.0,
                      branch_priority: Sequence[str] = DEFAULT_PRIORITY) -> PageTranscript:
    """Pick one candidate per group, best candidates first.

    Every slot is a candidate; an empty slot proposes the empty word, which
    scores zero.  Candidates enter one priority queue ordered by score, then
    by fewer invalid n-grams, then by branch priority; popping assigns each
    group its first candidate.
    """
    if not groups:
        return PageTranscript([], 0.0)
    rank = {src: i for i, src in enumerate(branch_priority)}
    heap = []
    for gi, group in enumerate(groups):
        for b, slot in enumerate(group.slots):
            labels = slot.labels if slot is not None else []
            ws = word_score(lm, labels, penalty)
            heapq.heappush(heap, (-ws.score, ws.invalid_count, rank.get(sources[b], len(rank) + b), gi, b, ws))
    chosen: Dict[int, Tuple[int, WordScore]] = {}
    while heap and len(chosen) < len(groups):
        *_, gi, b, ws = heapq.heappop(heap)
        if gi not in chosen:
            chosen[gi] = (b, ws)

    lines: List[List[TranscriptWord]] = []
    current_line = None
    total = 0.0
    for gi, group in enumerate(groups):
        b, ws = chosen[gi]
        slot = group.slots[b]
        labels = list(slot.labels) if slot is not None else []
        word = TranscriptWord(labels, sources[b] if slot is not None else None, ws.score,
                              ws.valid_count, ws.invalid_count)
        total += ws.score
        if current_line is None or group.line != current_line or not lines:
            lines.append([])
            current_line = group.line
        lines[-1].append(word)
    return PageTranscript(lines, total)


def branch_transcript(branch: HypothesisBranch) -> PageTranscript:
    """The standalone transcript of a single branch (lines without words dropped)."""
    lines = []
    total = 0.0
    for line in branch.lines:
        if not line:
            continue
        out = []
        for w in line:
            out.append(TranscriptWord(list(w.labels), branch.source, w.score.score,
                                      w.score.valid_count, w.score.invalid_count))
            total += w.score.score
        lines.append(out)
    return PageTranscript(lines, total)


def recognize_page(page: BinaryImage, net: DeepBLSTM, lm: NGramModel,
                   config: Optional[RecognizerConfig] = None) -> PageTranscript:
    """Segment with every configured routine, decode, align and select."""
    config = config or RecognizerConfig()
    clean = preprocess(page, config)
    branches = build_branches(clean, net, lm, config)
    if all(b.n_words == 0 for b in branches):
        return PageTranscript([], 0.0)
    groups = align_words(branches, config.overlap_threshold, config.window)
    return best_first_select(groups, [b.source for b in branches], lm, config.penalty, config.branch_priority)


def recognize_branch(page: BinaryImage, net: DeepBLSTM, lm: NGramModel, source: str,
                     config: Optional[RecognizerConfig] = None) -> PageTranscript:
    """Single-routine pipeline: one segmentation, decoded verbatim."""
    config = config or RecognizerConfig()
    return branch_transcript(build_branch(preprocess(page, config), source, net, lm, config))


# ---------------------------------------------------------------------------
# Serialisation

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


def label_map(alphabet: str = DEFAULT_ALPHABET) -> Dict[int, str]:
    if len(set(alphabet)) != len(alphabet) or any(ch.isspace() for ch in alphabet):
        raise ValueError("alphabet must be distinct non-space characters")
    return {i: ch for i, ch in enumerate(alphabet)}


def encode_word(labels: Sequence[int], mapping: Dict[int, str]) -> str:
    try:
        return "".join(mapping[k] for k in labels)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} has no character in the label map") from None


def decode_word(text: str, mapping: Dict[int, str]) -> List[int]:
    inverse = {ch: k for k, ch in mapping.items()}
    try:
        return [inverse[ch] for ch in text]
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} is not in the label map") from None


def transcript_text(transcript: PageTranscript, mapping: Dict[int, str]) -> str:
    """One text line per transcript line, non-empty words separated by spaces."""
    rows = []
    for line in transcript.lines:
        rows.append(" ".join(encode_word(w.labels, mapping) for w in line if w.labels))
    return "".join(r + "\n" for r in rows)


def read_transcript(path: PathLike, mapping: Dict[int, str]) -> List[List[List[int]]]:
    """Lines of label-sequence words from a transcript text file."""
    lines = []
    for row in Path(path).read_text(encoding="utf-8").splitlines():
        lines.append([decode_word(tok, mapping) for tok in row.split()])
    return lines


def write_transcript(transcript: PageTranscript, path: PathLike, mapping: Dict[int, str]) -> None:
    """Transcript text plus a ``.tsv`` sidecar with winning branch and score per word."""
    path = Path(path)
    path.write_text(transcript_text(transcript, mapping), encoding="utf-8")
    rows = ["line\tword\tbranch\tscore\tvalid\tinvalid\tlabels"]
    for li, line in enumerate(transcript.lines):
        for wi, w in enumerate(line):
            rows.append(f"{li}\t{wi}\t{w.branch or '-'}\t{w.score:g}\t{w.valid_count}\t{w.invalid_count}\t"
                        f"{' '.join(map(str, w.labels))}")
    path.with_suffix(".tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
