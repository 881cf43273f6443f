"""Connectionist temporal classification.

Lattices are ``(T, K + 1)`` arrays of per-frame class probabilities whose
last column is the blank.  All alignment sums run in log space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, logsumexp

NEG_INF = -np.inf


class CtcInfeasibleError(ValueError):
    """The label sequence cannot be aligned to the given number of frames."""


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit ``labels``: one per label plus one blank per repeat."""
    repeats = sum(1 for a, b in zip(labels[:-1], labels[1:]) if a == b)
    return len(labels) + repeats


def _check_labels(labels: Sequence[int], n_classes: int) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1:
        raise ValueError("labels must be a flat sequence")
    blank = n_classes - 1
    if lab.size and (lab.min() < 0 or lab.max() >= blank):
        raise ValueError(f"labels must lie in 0..{blank - 1} (blank is {blank})")
    return lab


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    finite = np.isfinite(m)
    safe = np.where(finite, m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(finite, out, NEG_INF)


def ctc_log_posteriors(log_probs: np.ndarray, labels: Sequence[int]):
    """Forward-backward over the blank-augmented label sequence.

    ``log_probs`` is ``(T, C)`` with the blank in the last column.  Returns
    ``(log_likelihood, log_gamma)`` where ``log_gamma[t, k]`` is the log
    posterior of emitting class ``k`` at frame ``t``.
    """
    T, C = log_probs.shape
    blank = C - 1
    lab = _check_labels(labels, C)
    if T < min_frames(lab):
        raise CtcInfeasibleError(
            f"{T} frames cannot emit {lab.size} labels with {min_frames(lab) - lab.size} repeats")
    S = 2 * lab.size + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = lab
    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]  # (T, S)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    pad = np.full(2, NEG_INF)
    for t in range(1, T):
        prev = alpha[t - 1]
        shift1 = np.concatenate((pad[:1], prev[:-1]))
        shift2 = np.where(skip, np.concatenate((pad, prev[:-2])), NEG_INF)
        alpha[t] = _lse3(prev, shift1, shift2) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    skip_from = np.zeros(S, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        shift1 = np.concatenate((nxt[1:], pad[:1]))
        shift2 = np.where(skip_from, np.concatenate((nxt[2:], pad)), NEG_INF)
        beta[t] = _lse3(nxt, shift1, shift2) + emit[t]

    tail = alpha[T - 1, S - 1:S] if S == 1 else alpha[T - 1, S - 2:]
    log_lik = float(logsumexp(tail))
    occupancy = alpha + beta - emit - log_lik  # log posterior per (t, s)
    log_gamma = np.full((T, C), NEG_INF)
    for k in np.unique(ext):
        cols = occupancy[:, ext == k]
        log_gamma[:, k] = logsumexp(cols, axis=1)
    return log_lik, log_gamma


def ctc_loss_from_logits(logits: np.ndarray, labels: Sequence[int]) -> CtcResult:
    """CTC loss of ``softmax(logits)`` and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    log_probs = log_softmax(logits, axis=1)
    log_lik, log_gamma = ctc_log_posteriors(log_probs, labels)
    grad = np.exp(log_probs) - np.exp(log_gamma)
    return CtcResult(-log_lik, grad)


def ctc_loss(lattice: np.ndarray, labels: Sequence[int]) -> CtcResult:
    """Negative log probability of ``labels`` under a normalised lattice.

    The gradient is taken with respect to the pre-softmax logits, i.e. it is
    ``lattice - posterior occupancy`` and every row sums to zero.
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    if lattice.ndim != 2 or lattice.shape[0] < 1 or lattice.shape[1] < 2:
        raise ValueError(f"lattice must be (T, K+1) with T >= 1 and K >= 1, got {lattice.shape}")
    if (lattice <= 0).any():
        raise ValueError("lattice entries must be strictly positive")
    log_probs = np.log(lattice)
    log_lik, log_gamma = ctc_log_posteriors(log_probs, labels)
    return CtcResult(-log_lik, lattice - np.exp(log_gamma))


def collapse(path: Sequence[int], blank: int) -> List[int]:
    """Drop adjacent duplicates, then blanks."""
    out = []
    prev = None
    for k in path:
        if k != prev and k != blank:
            out.append(int(k))
        prev = k
    return out


def best_path_decode(lattice: np.ndarray, return_frames: bool = False
                     ) -> Union[List[int], Tuple[List[int], List[int]]]:
    """Greedy decoding: per-frame argmax (ties to the lowest index) then collapse.

    With ``return_frames`` also returns the first frame of each emitted label.
    """
    lattice = np.asarray(lattice)
    blank = lattice.shape[1] - 1
    path = lattice.argmax(axis=1)
    labels, frames = [], []
    prev = None
    for t, k in enumerate(path):
        if k != prev and k != blank:
            labels.append(int(k))
            frames.append(t)
        prev = k
    if return_frames:
        return labels, frames
    return labels


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]
