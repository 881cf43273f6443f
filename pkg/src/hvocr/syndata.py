"""Synthetic binarized pages with exact ground truth.

Pages are built from an abstract glyph alphabet: middle-zone glyphs sit on
the line, upper/lower-zone modifiers render above/below the middle glyph
that precedes them in the label sequence.  ``modifier_crowding`` pushes the
modifiers away from their glyph toward the neighbouring line, which is the
knob that produces line-merge and detached-modifier segmentation failures.
"""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .imageio import BinaryImage

PathLike = Union[str, os.PathLike]

ZONES = ("middle", "upper", "lower")

MIDDLE_SHAPE = (16, 12)
MODIFIER_SHAPE = (6, 6)
# rows of overlap between a modifier and its glyph at zero crowding
MODIFIER_OVERLAP = 3
GLYPH_SPACING = 2
MIN_HAMMING = 10

Box = Tuple[int, int, int, int]


class RenderError(ValueError):
    pass


@dataclass
class GlyphSet:
    glyphs: Dict[int, np.ndarray]
    zones: Dict[int, str]

    def __post_init__(self):
        labels = sorted(self.glyphs)
        if labels != list(range(len(labels))):
            raise ValueError("glyph labels must be contiguous integers 0..K-1")
        if set(self.zones) != set(labels):
            raise ValueError("every glyph needs a zone")
        for lab, bmp in self.glyphs.items():
            if self.zones[lab] not in ZONES:
                raise ValueError(f"unknown zone {self.zones[lab]!r} for label {lab}")
            if not np.asarray(bmp).any():
                raise ValueError(f"glyph {lab} has an empty bitmap")
        if sum(z == "middle" for z in self.zones.values()) < 2:
            raise ValueError("a glyph set needs at least two middle-zone glyphs")

    @property
    def n_labels(self) -> int:
        return len(self.glyphs)

    def labels_in(self, zone: str) -> List[int]:
        return [lab for lab in sorted(self.glyphs) if self.zones[lab] == zone]

    def __eq__(self, other):
        if not isinstance(other, GlyphSet) or self.zones != other.zones:
            return False
        return all(np.array_equal(self.glyphs[k], other.glyphs[k]) for k in self.glyphs)


@dataclass
class PageSpec:
    lines: List[List[List[int]]]
    interline_gap: int = 10
    interword_gap: int = 12
    modifier_crowding: float = 0.0
    noise_density: float = 0.0
    rng_seed: int = 0
    margin: int = 8

    def __post_init__(self):
        if self.interline_gap < 0 or self.interword_gap < 0:
            raise ValueError("gaps must be non-negative")
        if not 0.0 <= self.modifier_crowding <= 1.0:
            raise ValueError("modifier_crowding must lie in [0, 1]")
        if not 0.0 <= self.noise_density <= 1.0:
            raise ValueError("noise_density must lie in [0, 1]")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass
class WordTruth:
    line: int
    index: int
    box: Box
    labels: List[int]


@dataclass
class GroundTruth:
    width: int
    height: int
    words: List[WordTruth] = field(default_factory=list)

    @property
    def n_lines(self) -> int:
        return len({w.line for w in self.words})

    def lines(self) -> List[List[WordTruth]]:
        out: Dict[int, List[WordTruth]] = {}
        for w in self.words:
            out.setdefault(w.line, []).append(w)
        return [sorted(out[k], key=lambda w: w.index) for k in sorted(out)]

    def line_boxes(self) -> List[Box]:
        boxes = []
        for words in self.lines():
            boxes.append((min(w.box[0] for w in words), min(w.box[1] for w in words),
                          max(w.box[2] for w in words), max(w.box[3] for w in words)))
        return boxes

    def label_sequences(self) -> List[List[List[int]]]:
        return [[list(w.labels) for w in words] for words in self.lines()]


# ---------------------------------------------------------------------------
# Glyphs


def _hamming(a: np.ndarray, b: np.ndarray) -> int:
    h = max(a.shape[0], b.shape[0])
    w = max(a.shape[1], b.shape[1])
    pa = np.zeros((h, w), dtype=np.uint8)
    pb = np.zeros((h, w), dtype=np.uint8)
    pa[:a.shape[0], :a.shape[1]] = a
    pb[:b.shape[0], :b.shape[1]] = b
    return int((pa != pb).sum())


def _middle_glyph(rng: np.random.Generator) -> np.ndarray:
    h, w = MIDDLE_SHAPE
    g = np.zeros((h, w), dtype=np.uint8)
    stem = int(rng.integers(0, w - 1))
    g[:, stem:stem + 2] = 1
    for _ in range(int(rng.integers(2, 4))):
        kind = rng.integers(0, 4)
        if kind == 0:  # horizontal bar
            r = int(rng.integers(0, h - 1))
            a, b = sorted(rng.choice(w + 1, size=2, replace=False))
            b = max(b, a + 4)
            g[r:r + 2, a:min(b, w)] = 1
        elif kind == 1:  # partial vertical bar
            c = int(rng.integers(0, w - 1))
            a = int(rng.integers(0, h - 6))
            g[a:a + int(rng.integers(5, h - a + 1)), c:c + 2] = 1
        elif kind == 2:  # box
            r = int(rng.integers(0, h - 6))
            c = int(rng.integers(0, w - 5))
            bh, bw = int(rng.integers(5, 8)), int(rng.integers(5, 8))
            g[r:r + bh, c:c + bw] = 1
            g[r + 2:r + bh - 2, c + 2:c + bw - 2] = 0
        else:  # diagonal
            r = int(rng.integers(0, h - 8))
            c = int(rng.integers(0, w - 7))
            sign = 1 if rng.integers(0, 2) else -1
            for i in range(7):
                cc = c + i if sign > 0 else c + 6 - i
                g[r + i:r + i + 2, cc:cc + 2] = 1
    return g


def _modifier_glyph(rng: np.random.Generator) -> np.ndarray:
    g = np.zeros(MODIFIER_SHAPE, dtype=np.uint8)
    cells = list(itertools.product(range(3), range(3)))
    chosen = rng.choice(len(cells), size=int(rng.integers(4, 7)), replace=False)
    for idx in chosen:
        r, c = cells[idx]
        g[2 * r:2 * r + 2, 2 * c:2 * c + 2] = 1
    return g


MAX_INNER_GAP = 2


def _well_formed(g: np.ndarray) -> bool:
    """One 8-connected piece, ink on every border, no wide blank column run.

    A single piece survives despeckling intact; the border and column rules
    keep every blank column run inside a word narrower than the gap between
    words.
    """
    if not (g[0].any() and g[-1].any() and g[:, 0].any() and g[:, -1].any()):
        return False
    if ndimage.label(g, structure=np.ones((3, 3), dtype=bool))[1] != 1:
        return False
    run = 0
    for blank in ~g.any(axis=0):
        run = run + 1 if blank else 0
        if run > MAX_INNER_GAP:
            return False
    return True


def make_default_glyphset(rng_seed: int = 0, n_middle: int = 12, n_upper: int = 2,
                          n_lower: int = 2) -> GlyphSet:
    """Random but well-separated glyph alphabet, deterministic per seed."""
    if n_middle < 2 or n_upper < 0 or n_lower < 0:
        raise ValueError("need at least two middle glyphs and non-negative modifier counts")
    rng = np.random.default_rng(rng_seed)
    bitmaps: List[np.ndarray] = []
    zones: List[str] = []

    def accept(candidate: np.ndarray) -> bool:
        return all(_hamming(candidate, other) >= MIN_HAMMING for other in bitmaps)

    for zone, count in (("middle", n_middle), ("upper", n_upper), ("lower", n_lower)):
        made = 0
        while made < count:
            cand = _middle_glyph(rng) if zone == "middle" else _modifier_glyph(rng)
            if _well_formed(cand) and accept(cand):
                bitmaps.append(cand)
                zones.append(zone)
                made += 1
    return GlyphSet({i: b for i, b in enumerate(bitmaps)}, {i: z for i, z in enumerate(zones)})


# ---------------------------------------------------------------------------
# Vocabulary and page specs


def make_vocabulary(glyphs: GlyphSet, size: int, rng_seed: int = 0, min_glyphs: int = 2,
                    max_glyphs: int = 4, modifier_rate: float = 0.3) -> List[List[int]]:
    """Distinct words of middle glyphs, each optionally followed by one modifier.

    Every word carries at least three labels.
    """
    rng = np.random.default_rng(rng_seed)
    middle = glyphs.labels_in("middle")
    mods = glyphs.labels_in("upper") + glyphs.labels_in("lower")
    seen = set()
    words: List[List[int]] = []
    attempts = 0
    while len(words) < size:
        attempts += 1
        if attempts > 1000 * size:
            raise ValueError("cannot draw that many distinct words from this glyph set")
        word: List[int] = []
        for _ in range(int(rng.integers(min_glyphs, max_glyphs + 1))):
            word.append(int(rng.choice(middle)))
            if mods and rng.random() < modifier_rate:
                word.append(int(rng.choice(mods)))
        if len(word) < 3 or tuple(word) in seen:
            continue
        seen.add(tuple(word))
        words.append(word)
    return words


def random_page_spec(vocabulary: Sequence[Sequence[int]], rng: np.random.Generator,
                     n_lines: Tuple[int, int] = (2, 4), words_per_line: Tuple[int, int] = (2, 4),
                     crowding: Tuple[float, float] = (0.0, 0.0), noise_density: float = 0.0,
                     interline_gap: int = 10, interword_gap: int = 12) -> PageSpec:
    lines = []
    for _ in range(int(rng.integers(n_lines[0], n_lines[1] + 1))):
        count = int(rng.integers(words_per_line[0], words_per_line[1] + 1))
        lines.append([list(vocabulary[int(i)]) for i in rng.integers(0, len(vocabulary), size=count)])
    lo, hi = crowding
    c = float(lo if hi <= lo else rng.uniform(lo, hi))
    return PageSpec(lines=lines, interline_gap=interline_gap, interword_gap=interword_gap,
                    modifier_crowding=c, noise_density=noise_density,
                    rng_seed=int(rng.integers(0, 2**31 - 1)))


# ---------------------------------------------------------------------------
# Rendering


def _word_layout(word: Sequence[int], glyphs: GlyphSet, shift: int):
    """Place a word's glyphs relative to the middle-zone top-left corner.

    Returns ``(placements, width)`` with placements ``(label, dy, dx)``.
    """
    if not word:
        raise RenderError("empty word")
    placements = []
    x = 0
    prev_x = None
    mh, mw = MIDDLE_SHAPE
    uh, uw = MODIFIER_SHAPE
    for lab in word:
        if lab not in glyphs.glyphs:
            raise RenderError(f"unknown label {lab}")
        zone = glyphs.zones[lab]
        if zone == "middle":
            if prev_x is not None:
                x += GLYPH_SPACING
            placements.append((lab, 0, x))
            prev_x = x
            x += glyphs.glyphs[lab].shape[1]
            continue
        if prev_x is None:
            raise RenderError(f"modifier {lab} has no preceding middle glyph")
        dx = prev_x + (mw - uw) // 2
        if zone == "upper":
            dy = -(uh - MODIFIER_OVERLAP) - shift
        else:
            dy = mh - MODIFIER_OVERLAP + shift
        placements.append((lab, dy, dx))
    return placements, x


def render_page(spec: PageSpec, glyphs: GlyphSet, width: Optional[int] = None,
                height: Optional[int] = None) -> Tuple[BinaryImage, GroundTruth]:
    """Render a page and its ground truth.

    Canvas size defaults to the content plus margins.  With an explicit size
    any glyph falling outside the canvas raises :class:`RenderError`.
    """
    mh, _ = MIDDLE_SHAPE
    zone = MODIFIER_SHAPE[0] - MODIFIER_OVERLAP
    shift = int(round(spec.modifier_crowding * (spec.interline_gap // 2)))
    pitch = mh + 2 * zone + spec.interline_gap

    layouts = []
    max_width = 0
    for words in spec.lines:
        row = []
        x = 0
        for word in words:
            placements, w = _word_layout(word, glyphs, shift)
            row.append((placements, x, word))
            x += w + spec.interword_gap
        if words:
            max_width = max(max_width, x - spec.interword_gap)
        layouts.append(row)

    auto_w = 2 * spec.margin + max_width
    auto_h = 2 * spec.margin + max(len(spec.lines) * pitch - spec.interline_gap, 0)
    W = auto_w if width is None else width
    H = auto_h if height is None else height
    if W <= 0 or H <= 0:
        raise RenderError("page has no area")
    canvas = np.zeros((H, W), dtype=np.uint8)
    truth = GroundTruth(W, H)

    for li, row in enumerate(layouts):
        top = spec.margin + li * pitch + zone
        for wi, (placements, x0, word) in enumerate(row):
            ink = np.zeros_like(canvas)
            for lab, dy, dx in placements:
                bmp = glyphs.glyphs[lab]
                y, x = top + dy, spec.margin + x0 + dx
                if y < 0 or x < 0 or y + bmp.shape[0] > H or x + bmp.shape[1] > W:
                    raise RenderError(f"page overflow: glyph {lab} at ({x},{y}) exceeds {W}x{H} canvas")
                ink[y:y + bmp.shape[0], x:x + bmp.shape[1]] |= bmp
            ys, xs = np.nonzero(ink)
            canvas |= ink
            truth.words.append(WordTruth(li, wi, (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                                         list(word)))

    if spec.noise_density > 0:
        rng = np.random.default_rng(spec.rng_seed)
        background = np.flatnonzero(canvas.ravel() == 0)
        n_flip = int(round(spec.noise_density * background.size))
        if n_flip:
            flat = canvas.ravel()
            flat[rng.choice(background, size=n_flip, replace=False)] = 1
    return BinaryImage(canvas), truth


# ---------------------------------------------------------------------------
# Ground-truth files

_GT_HEADER = "# hvocr ground truth v1"


def save_ground_truth(truth: GroundTruth, path: PathLike) -> None:
    """One tab-separated record per word: line, word, x0 y0 x1 y1, labels."""
    rows = [_GT_HEADER, f"size\t{truth.width}\t{truth.height}"]
    for w in truth.words:
        box = " ".join(str(v) for v in w.box)
        rows.append(f"{w.line}\t{w.index}\t{box}\t{' '.join(map(str, w.labels))}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_ground_truth(path: PathLike) -> GroundTruth:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _GT_HEADER:
        raise ValueError(f"{path}: not a ground-truth file")
    try:
        _, w, h = lines[1].split("\t")
        truth = GroundTruth(int(w), int(h))
        for row in lines[2:]:
            if not row.strip():
                continue
            li, wi, box, labels = row.split("\t")
            x0, y0, x1, y1 = (int(v) for v in box.split())
            truth.words.append(WordTruth(int(li), int(wi), (x0, y0, x1, y1), [int(v) for v in labels.split()]))
    except ValueError as exc:
        raise ValueError(f"{path}: malformed ground-truth record ({exc})") from None
    return truth
