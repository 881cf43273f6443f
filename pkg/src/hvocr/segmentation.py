"""Line and word segmentation routines.

Three independent line segmenters produce the branches of the hypothesis
tree: projection profiling, a horizontal-line Hough transform and
interval clustering of connected-component extents.  All of them feed the
same word segmenter.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .imageio import BinaryImage, connected_components, horizontal_projection

PathLike = Union[str, os.PathLike]

SOURCES = ("projection", "hough", "interval_tree")


@dataclass(frozen=True)
class LineSegment:
    y0: int
    y1: int
    source: str

    def __post_init__(self):
        if self.y1 < self.y0:
            raise ValueError(f"inverted line band ({self.y0}, {self.y1})")
        if self.source not in SOURCES:
            raise ValueError(f"unknown segmentation source {self.source!r}")

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1


@dataclass(frozen=True, eq=False)
class WordSegment:
    line: int
    x0: int
    x1: int
    y0: int
    y1: int
    image: BinaryImage

    @property
    def box(self) -> Tuple[int, int, int, int]:
        """Tight ink bounding box in page coordinates."""
        ys, xs = np.nonzero(self.image.pixels)
        return (self.x0 + int(xs.min()), self.y0 + int(ys.min()),
                self.x0 + int(xs.max()), self.y0 + int(ys.max()))


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Inclusive (start, end) of maximal True runs."""
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def _merge_runs(runs: List[Tuple[int, int]], min_gap: int) -> List[Tuple[int, int]]:
    merged: List[Tuple[int, int]] = []
    for a, b in runs:
        if merged and a - merged[-1][1] - 1 < min_gap:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def segment_lines_projection(page: BinaryImage, min_gap: int = 3, min_ink: int = 0) -> List[LineSegment]:
    """Lines from the horizontal projection profile.

    Rows with more than ``min_ink`` ink pixels are text rows; text-row runs
    separated by fewer than ``min_gap`` quiet rows are joined.
    """
    if min_gap < 1:
        raise ValueError(f"min_gap must be >= 1, got {min_gap}")
    if min_ink < 0:
        raise ValueError(f"min_ink must be >= 0, got {min_ink}")
    profile = horizontal_projection(page)
    runs = _merge_runs(_runs(profile > min_ink), min_gap)
    return [LineSegment(a, b, "projection") for a, b in runs]


def hough_accumulator(page: BinaryImage, theta_tolerance: float, accumulator_bins: int):
    """Vote ink pixels into a (theta, rho) accumulator with 1-pixel rho bins.

    Returns ``(thetas_degrees, rho_offset, accumulator)`` where row ``i`` of
    the accumulator holds the votes for ``thetas_degrees[i]`` and column
    ``j`` the votes for ``rho = j - rho_offset``.
    """
    if accumulator_bins < 1:
        raise ValueError(f"accumulator_bins must be >= 1, got {accumulator_bins}")
    if accumulator_bins == 1:
        thetas = np.array([90.0])
    else:
        thetas = np.linspace(90.0 - theta_tolerance, 90.0 + theta_tolerance, accumulator_bins)
    diag = int(np.ceil(np.hypot(page.width, page.height)))
    acc = np.zeros((thetas.size, 2 * diag + 1), dtype=np.int64)
    ys, xs = np.nonzero(page.pixels)
    if ys.size:
        rad = np.deg2rad(thetas)
        rho = np.rint(np.outer(np.cos(rad), xs) + np.outer(np.sin(rad), ys)).astype(np.int64) + diag
        for i in range(thetas.size):
            acc[i] = np.bincount(rho[i], minlength=acc.shape[1])
    return thetas, diag, acc


def segment_lines_hough(page: BinaryImage, avg_line_height: int = 22, theta_tolerance: float = 2.0,
                        accumulator_bins: int = 5, peak_fraction: float = 0.3) -> List[LineSegment]:
    """Baselines from near-horizontal Hough peaks, bands of fixed height.

    Votes are smoothed along rho with a triangular kernel spanning half a
    line height, so a text line gives a single peak near its middle zone.
    Peaks are accepted greedily in decreasing strength when at least
    ``peak_fraction`` of the strongest peak and farther than
    ``avg_line_height / 2`` from every accepted one.
    """
    if avg_line_height < 1:
        raise ValueError(f"avg_line_height must be >= 1, got {avg_line_height}")
    if page.ink == 0:
        return []
    thetas, offset, acc = hough_accumulator(page, theta_tolerance, accumulator_bins)
    radius = max(avg_line_height // 4, 0)
    if radius:
        kernel = (radius + 1 - np.abs(np.arange(-radius, radius + 1))).astype(np.int64)
        acc = np.stack([np.convolve(row, kernel, mode="same") for row in acc])

    best_theta = acc.argmax(axis=0)
    strength = acc.max(axis=0)
    rad = np.deg2rad(thetas[best_theta])
    rho = np.arange(acc.shape[1]) - offset
    x_mid = (page.width - 1) / 2.0
    baseline = (rho - x_mid * np.cos(rad)) / np.sin(rad)
    inside = (baseline >= 0) & (baseline <= page.height - 1) & (strength > 0)
    if not inside.any():
        return []

    floor = peak_fraction * strength[inside].max()
    order = np.lexsort((np.arange(strength.size), -strength))
    accepted: List[float] = []
    for j in order:
        if not inside[j] or strength[j] < floor:
            continue
        b = float(baseline[j])
        if all(abs(b - a) > avg_line_height / 2.0 for a in accepted):
            accepted.append(b)
    accepted.sort()

    half_lo = avg_line_height // 2
    half_hi = avg_line_height - half_lo - 1
    bands = []
    for i, b in enumerate(accepted):
        centre = int(round(b))
        y0 = max(centre - half_lo, 0)
        y1 = min(centre + half_hi, page.height - 1)
        if i > 0:
            y0 = max(y0, int(np.floor((accepted[i - 1] + b) / 2.0)) + 1)
        if i + 1 < len(accepted):
            y1 = min(y1, int(np.floor((b + accepted[i + 1]) / 2.0)))
        if y0 <= y1:
            bands.append(LineSegment(y0, y1, "hough"))
    return bands


def segment_lines_interval_tree(page: BinaryImage) -> List[LineSegment]:
    """Lines as clusters of transitively overlapping component row extents."""
    comps = connected_components(page)
    intervals = sorted((c.y0, c.y1) for c in comps)
    lines: List[Tuple[int, int]] = []
    for a, b in intervals:
        if lines and a <= lines[-1][1]:
            lines[-1] = (lines[-1][0], max(lines[-1][1], b))
        else:
            lines.append((a, b))
    return [LineSegment(a, b, "interval_tree") for a, b in lines]


def segment_words(page: BinaryImage, line: LineSegment, gap_threshold: int = 6,
                  line_index: int = 0) -> List[WordSegment]:
    """Split a line band into words at runs of >= ``gap_threshold`` empty columns."""
    if gap_threshold < 1:
        raise ValueError(f"gap_threshold must be >= 1, got {gap_threshold}")
    if not (0 <= line.y0 <= line.y1 < page.height):
        raise ValueError(f"line band ({line.y0}, {line.y1}) outside page of height {page.height}")
    band = page.pixels[line.y0:line.y1 + 1]
    runs = _merge_runs(_runs(band.sum(axis=0) > 0), gap_threshold)
    return [WordSegment(line_index, a, b, line.y0, line.y1, BinaryImage(band[:, a:b + 1]))
            for a, b in runs]


def _tight(pixels: np.ndarray):
    ys, xs = np.nonzero(pixels)
    if ys.size == 0:
        raise ValueError("empty crop: segment contains no ink")
    return ys.min(), ys.max(), xs.min(), xs.max()


def _index_maps(src_h: int, src_w: int, target_height: int):
    out_w = max(1, int(round(src_w * target_height / src_h)))
    rows = (np.arange(target_height) * src_h) // target_height
    cols = (np.arange(out_w) * src_w) // out_w
    return rows, cols


def normalize_segment(word: Union[WordSegment, BinaryImage], target_height: int = 16) -> np.ndarray:
    """Nearest-neighbour height normalisation of the tight ink crop.

    Returns a ``(T, target_height)`` float array, one frame per output column.
    """
    if target_height < 1:
        raise ValueError(f"target_height must be >= 1, got {target_height}")
    pix = word.image.pixels if isinstance(word, WordSegment) else word.pixels
    y0, y1, x0, x1 = _tight(pix)
    crop = pix[y0:y1 + 1, x0:x1 + 1]
    rows, cols = _index_maps(crop.shape[0], crop.shape[1], target_height)
    return crop[np.ix_(rows, cols)].T.astype(np.float64)


def frame_columns(word: WordSegment, target_height: int = 16) -> np.ndarray:
    """Page column sampled by each frame of :func:`normalize_segment`."""
    y0, y1, x0, x1 = _tight(word.image.pixels)
    _, cols = _index_maps(y1 - y0 + 1, x1 - x0 + 1, target_height)
    return word.x0 + x0 + cols


def segment_page(page: BinaryImage, source: str, *, min_gap: int = 3, min_ink: int = 0,
                 avg_line_height: int = 22, theta_tolerance: float = 2.0, accumulator_bins: int = 5,
                 peak_fraction: float = 0.3, gap_threshold: int = 6) -> List[List[WordSegment]]:
    """Run one line routine followed by word segmentation; returns words per line."""
    if source == "projection":
        lines = segment_lines_projection(page, min_gap, min_ink)
    elif source == "hough":
        lines = segment_lines_hough(page, avg_line_height, theta_tolerance, accumulator_bins, peak_fraction)
    elif source == "interval_tree":
        lines = segment_lines_interval_tree(page)
    else:
        raise ValueError(f"unknown segmentation source {source!r}")
    out = []
    for i, line in enumerate(lines):
        words = segment_words(page, line, gap_threshold, line_index=i)
        if words:
            out.append(words)
    return out


def dump_segments(path: PathLike, source: str, lines: Sequence[Sequence[WordSegment]]) -> None:
    """Debug dump: one tab-separated record per word segment."""
    rows = ["# source\tline\tword\tx0 y0 x1 y1"]
    for li, words in enumerate(lines):
        for wi, w in enumerate(words):
            rows.append(f"{source}\t{li}\t{wi}\t{' '.join(map(str, w.box))}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
