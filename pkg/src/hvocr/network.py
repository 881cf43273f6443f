"""Deep bidirectional LSTM with a softmax/CTC output layer.

Each hidden level holds a forward-time and a backward-time LSTM layer.  The
concatenated outputs of one level pass through a tanh feedforward layer and
feed both directions of the next level; the last level maps straight into
``K + 1`` softmax units (blank last).

Sequences are processed in padded batches of shape ``(T, B, D)``.  The
backward direction runs on a per-sequence time reversal, so padding always
trails the valid frames and never influences them.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .ctc import best_path_decode, ctc_loss_from_logits, edit_distance, min_frames

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

GATES = ("input", "forget", "cell", "output")
MODEL_MAGIC = "hvocr-blstm"
MODEL_VERSION = 1


@dataclass
class LSTMLayerParams:
    """One direction of one hidden level.

    Gate blocks in ``w_in``, ``w_rec`` and ``bias`` are ordered input,
    forget, cell, output.  ``peep`` rows are the input, forget and output
    gate peepholes.
    """

    w_in: np.ndarray  # (I, 4H)
    w_rec: np.ndarray  # (H, 4H)
    bias: np.ndarray  # (4H,)
    peep: np.ndarray  # (3, H)

    @property
    def hidden_size(self) -> int:
        return self.w_rec.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_in.shape[0]

    def arrays(self, peepholes: bool = True) -> List[np.ndarray]:
        out = [self.w_in, self.w_rec, self.bias]
        if peepholes:
            out.append(self.peep)
        return out


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    init_range: float = 0.1
    gate_bias: Tuple[float, float, float] = (1.0, -1.0, 2.0)
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class DeepBLSTM:
    input_size: int
    hidden_sizes: Tuple[int, ...]
    n_labels: int
    forward_layers: List[LSTMLayerParams]
    backward_layers: List[LSTMLayerParams]
    ff_weights: List[np.ndarray]
    ff_biases: List[np.ndarray]
    w_out: np.ndarray  # (2 H_N, K + 1)
    b_out: np.ndarray
    peepholes: bool = True
    seed: int = 0
    version: int = field(default=0, compare=False)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_sizes)

    @property
    def n_classes(self) -> int:
        return self.n_labels + 1

    @property
    def blank(self) -> int:
        return self.n_labels

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        """Every trainable array in the fixed serialisation order."""
        out = []
        for n in range(self.n_layers):
            for tag, layer in (("fwd", self.forward_layers[n]), ("bwd", self.backward_layers[n])):
                names = ["w_in", "w_rec", "bias", "peep"] if self.peepholes else ["w_in", "w_rec", "bias"]
                for name, arr in zip(names, layer.arrays(self.peepholes)):
                    out.append((f"layer{n}.{tag}.{name}", arr))
        for n, (w, b) in enumerate(zip(self.ff_weights, self.ff_biases)):
            out.append((f"ff{n}.weight", w))
            out.append((f"ff{n}.bias", b))
        out.append(("out.weight", self.w_out))
        out.append(("out.bias", self.b_out))
        return out

    def arrays(self) -> List[np.ndarray]:
        return [a for _, a in self.parameters()]

    def copy(self) -> "DeepBLSTM":
        def cp(layer):
            return LSTMLayerParams(layer.w_in.copy(), layer.w_rec.copy(), layer.bias.copy(), layer.peep.copy())
        return DeepBLSTM(self.input_size, tuple(self.hidden_sizes), self.n_labels,
                         [cp(l) for l in self.forward_layers], [cp(l) for l in self.backward_layers],
                         [w.copy() for w in self.ff_weights], [b.copy() for b in self.ff_biases],
                         self.w_out.copy(), self.b_out.copy(), self.peepholes, self.seed)


def init_network(hidden_sizes: Sequence[int], input_size: int, n_labels: int, seed: int = 0,
                 init_range: float = 0.1, gate_bias: Sequence[float] = (1.0, -1.0, 2.0),
                 peepholes: bool = True) -> DeepBLSTM:
    """Uniform ``[-init_range, init_range]`` weights from a seeded generator.

    Input, forget and output gate biases take ``gate_bias``; cell, feedforward
    and output biases start at zero.
    """
    hidden_sizes = tuple(int(h) for h in hidden_sizes)
    if not hidden_sizes:
        raise ValueError("need at least one hidden layer")
    if min(hidden_sizes) < 1 or input_size < 1 or n_labels < 1:
        raise ValueError("layer sizes, input size and label count must all be >= 1")
    rng = np.random.default_rng(seed)

    def uni(*shape):
        return rng.uniform(-init_range, init_range, size=shape)

    def lstm(n_in, H):
        bias = np.zeros(4 * H)
        bias[0:H] = gate_bias[0]
        bias[H:2 * H] = gate_bias[1]
        bias[3 * H:4 * H] = gate_bias[2]
        peep = uni(3, H) if peepholes else np.zeros((3, H))
        return LSTMLayerParams(uni(n_in, 4 * H), uni(H, 4 * H), bias, peep)

    fwd, bwd, ffw, ffb = [], [], [], []
    n_in = input_size
    for n, H in enumerate(hidden_sizes):
        fwd.append(lstm(n_in, H))
        bwd.append(lstm(n_in, H))
        if n + 1 < len(hidden_sizes):
            ffw.append(uni(2 * H, 2 * H))
            ffb.append(np.zeros(2 * H))
        n_in = 2 * H
    w_out = uni(2 * hidden_sizes[-1], n_labels + 1)
    return DeepBLSTM(input_size, hidden_sizes, n_labels, fwd, bwd, ffw, ffb, w_out,
                     np.zeros(n_labels + 1), peepholes, seed)


def count_weights(net: DeepBLSTM) -> int:
    return int(sum(a.size for a in net.arrays()))


def closed_form_weight_count(hidden_sizes: Sequence[int], input_size: int, n_labels: int,
                             peepholes: bool = True) -> int:
    total = 0
    n_in = input_size
    for n, H in enumerate(hidden_sizes):
        per_direction = 4 * (n_in + H + 1) * H + (3 * H if peepholes else 0)
        total += 2 * per_direction
        if n + 1 < len(hidden_sizes):
            total += (2 * H + 1) * 2 * H
        n_in = 2 * H
    return total + (2 * hidden_sizes[-1] + 1) * (n_labels + 1)


# ---------------------------------------------------------------------------
# Batching helpers


def pad_batch(sequences: Sequence[np.ndarray], input_size: Optional[int] = None):
    """Stack ``(T_b, D)`` sequences into a zero-padded ``(T, B, D)`` array."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("every sequence needs at least one frame")
    D = sequences[0].shape[1] if input_size is None else input_size
    X = np.zeros((int(lengths.max()), len(sequences), D))
    for b, s in enumerate(sequences):
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != D:
            raise ValueError(f"frame length {s.shape[-1]} does not match input size {D}")
        if not np.isfinite(s).all():
            raise ValueError("non-finite input frame")
        X[:len(s), b] = s
    return X, lengths


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Time index that reverses each sequence within its own length."""
    t = np.arange(T)[:, None]
    L = lengths[None, :]
    return np.where(t < L, L - 1 - t, t)


def _time_gather(X: np.ndarray, index: np.ndarray) -> np.ndarray:
    return X[index, np.arange(X.shape[1])[None, :]]


# ---------------------------------------------------------------------------
# Forward / backward for one direction


def _lstm_forward(p: LSTMLayerParams, U: np.ndarray, peepholes: bool):
    T, B, _ = U.shape
    H = p.hidden_size
    A = U @ p.w_in + p.bias
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    gates = np.empty((T, B, 4 * H))
    tanh_c = np.empty((T, B, H))
    pi, pf, po = p.peep
    for t in range(T):
        a = A[t] + h @ p.w_rec
        if peepholes:
            i = expit(a[:, :H] + pi * c)
            f = expit(a[:, H:2 * H] + pf * c)
        else:
            i = expit(a[:, :H])
            f = expit(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        c = f * c + i * g
        o = expit(a[:, 3 * H:] + po * c) if peepholes else expit(a[:, 3 * H:])
        tc = np.tanh(c)
        h = o * tc
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        cs[t] = c
        tanh_c[t] = tc
        hs[t] = h
    return hs, {"U": U, "gates": gates, "cs": cs, "tanh_c": tanh_c, "hs": hs}


def _lstm_backward(p: LSTMLayerParams, cache, dH: np.ndarray, peepholes: bool):
    U, gates, cs, tanh_c, hs = cache["U"], cache["gates"], cache["cs"], cache["tanh_c"], cache["hs"]
    T, B, H = dH.shape
    pi, pf, po = p.peep
    dA = np.empty((T, B, 4 * H))
    d_rec = np.zeros_like(p.w_rec)
    d_peep = np.zeros_like(p.peep)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else zeros
        dh = dH[t] + dh_next
        da_o = dh * tanh_c[t] * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tanh_c[t] ** 2)
        if peepholes:
            dc = dc + da_o * po
        da_i = dc * g * i * (1.0 - i)
        da_g = dc * i * (1.0 - g * g)
        da_f = dc * c_prev * f * (1.0 - f)
        dc_next = dc * f
        if peepholes:
            dc_next = dc_next + da_i * pi + da_f * pf
            d_peep[0] += (da_i * c_prev).sum(axis=0)
            d_peep[1] += (da_f * c_prev).sum(axis=0)
            d_peep[2] += (da_o * cs[t]).sum(axis=0)
        dA[t, :, :H] = da_i
        dA[t, :, H:2 * H] = da_f
        dA[t, :, 2 * H:3 * H] = da_g
        dA[t, :, 3 * H:] = da_o
        dh_next = dA[t] @ p.w_rec.T
        if t > 0:
            d_rec += hs[t - 1].T @ dA[t]
    flat_dA = dA.reshape(T * B, 4 * H)
    d_in = U.reshape(T * B, -1).T @ flat_dA
    d_bias = flat_dA.sum(axis=0)
    dU = dA @ p.w_in.T
    return dU, LSTMLayerParams(d_in, d_rec, d_bias, d_peep)


# ---------------------------------------------------------------------------
# Network forward / backward


@dataclass
class ForwardCache:
    net_id: int
    version: int
    lengths: np.ndarray
    rev: np.ndarray
    levels: list
    top: np.ndarray
    logits: np.ndarray


def forward_batch(net: DeepBLSTM, X: np.ndarray, lengths: np.ndarray):
    """Batched forward pass.  Returns ``(logits (T, B, K+1), cache)``."""
    T, B, D = X.shape
    if D != net.input_size:
        raise ValueError(f"frame length {D} does not match input size {net.input_size}")
    if not np.isfinite(X).all():
        raise ValueError("non-finite input frame")
    rev = _reverse_index(lengths, T)
    levels = []
    U = X
    for n in range(net.n_layers):
        hf, cf = _lstm_forward(net.forward_layers[n], U, net.peepholes)
        hb_r, cb = _lstm_forward(net.backward_layers[n], _time_gather(U, rev), net.peepholes)
        hcat = np.concatenate((hf, _time_gather(hb_r, rev)), axis=2)
        level = {"fwd": cf, "bwd": cb, "hcat": hcat}
        if n + 1 < net.n_layers:
            U = np.tanh(hcat @ net.ff_weights[n] + net.ff_biases[n])
            level["ff_out"] = U
        levels.append(level)
    top = levels[-1]["hcat"]
    logits = top @ net.w_out + net.b_out
    return logits, ForwardCache(id(net), net.version, lengths, rev, levels, top, logits)


def backward_batch(net: DeepBLSTM, cache: ForwardCache, d_logits: np.ndarray) -> List[np.ndarray]:
    """Gradients of every parameter, aligned with ``net.arrays()``.

    ``d_logits`` must already be zero on padded frames.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ValueError("stale or mismatched forward cache")
    if d_logits.shape != cache.logits.shape:
        raise ValueError(f"upstream gradient shape {d_logits.shape} != logits shape {cache.logits.shape}")
    T, B, C = d_logits.shape
    flat = d_logits.reshape(T * B, C)
    g_w_out = cache.top.reshape(T * B, -1).T @ flat
    g_b_out = flat.sum(axis=0)
    d_h = d_logits @ net.w_out.T

    layer_grads: List[Tuple[LSTMLayerParams, LSTMLayerParams]] = [None] * net.n_layers
    ff_grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * (net.n_layers - 1)
    for n in range(net.n_layers - 1, -1, -1):
        level = cache.levels[n]
        H = net.hidden_sizes[n]
        dU_f, gf = _lstm_backward(net.forward_layers[n], level["fwd"], d_h[:, :, :H], net.peepholes)
        dU_b_r, gb = _lstm_backward(net.backward_layers[n], level["bwd"],
                                    _time_gather(d_h[:, :, H:], cache.rev), net.peepholes)
        layer_grads[n] = (gf, gb)
        dU = dU_f + _time_gather(dU_b_r, cache.rev)
        if n > 0:
            prev = cache.levels[n - 1]
            d_pre = dU * (1.0 - prev["ff_out"] ** 2)
            flat_pre = d_pre.reshape(T * B, -1)
            ff_grads[n - 1] = (prev["hcat"].reshape(T * B, -1).T @ flat_pre, flat_pre.sum(axis=0))
            d_h = d_pre @ net.ff_weights[n - 1].T

    grads: List[np.ndarray] = []
    for gf, gb in layer_grads:
        grads.extend(gf.arrays(net.peepholes))
        grads.extend(gb.arrays(net.peepholes))
    for gw, gb_ in ff_grads:
        grads.extend([gw, gb_])
    grads.extend([g_w_out, g_b_out])
    return grads


def forward(net: DeepBLSTM, x: np.ndarray):
    """Single-sequence forward pass: ``(lattice (T, K+1), cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a (T, D) feature sequence with T >= 1, got shape {x.shape}")
    X, lengths = pad_batch([x], net.input_size)
    logits, cache = forward_batch(net, X, lengths)
    return softmax(logits[:, 0], axis=1), cache


def backward(net: DeepBLSTM, cache: ForwardCache, d_logits: np.ndarray) -> List[np.ndarray]:
    """Single-sequence backward pass for a ``(T, K+1)`` logit gradient."""
    d_logits = np.asarray(d_logits, dtype=np.float64)
    if d_logits.ndim == 2:
        d_logits = d_logits[:, None, :]
    return backward_batch(net, cache, d_logits)


def predict_lattices(net: DeepBLSTM, sequences: Sequence[np.ndarray], batch_size: int = 64) -> List[np.ndarray]:
    """Lattices for many sequences; batches are formed in input order."""
    out = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start:start + batch_size]
        X, lengths = pad_batch(chunk, net.input_size)
        logits, _ = forward_batch(net, X, lengths)
        for b, L in enumerate(lengths):
            out.append(softmax(logits[:L, b], axis=1))
    return out


# ---------------------------------------------------------------------------
# Training


def sgd_step(net: DeepBLSTM, grads: Sequence[np.ndarray], velocity: Optional[List[np.ndarray]],
             cfg: TrainConfig):
    """Classical momentum: ``v <- momentum * v - lr * g``; ``theta <- theta + v``.

    Parameters are updated in place; returns ``(net, velocity)``.
    """
    params = net.arrays()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v
    net.version += 1
    return net, velocity


def batch_loss_and_grads(net: DeepBLSTM, sequences: Sequence[np.ndarray], targets: Sequence[Sequence[int]]):
    """Summed CTC loss over a batch and the summed parameter gradients."""
    X, lengths = pad_batch(sequences, net.input_size)
    logits, cache = forward_batch(net, X, lengths)
    d_logits = np.zeros_like(logits)
    total = 0.0
    for b, L in enumerate(lengths):
        res = ctc_loss_from_logits(logits[:L, b], targets[b])
        total += res.loss
        d_logits[:L, b] = res.grad
    return total, backward_batch(net, cache, d_logits)


def evaluate_ctc(net: DeepBLSTM, sequences, targets, batch_size: int = 64):
    """Mean CTC loss and label error rate (percent) of best-path decodes."""
    lattices = predict_lattices(net, sequences, batch_size)
    loss = 0.0
    errors = 0
    ref = 0
    for lat, target in zip(lattices, targets):
        log_probs = np.log(np.clip(lat, 1e-300, None))
        loss += ctc_loss_from_logits(log_probs, target).loss
        errors += edit_distance(best_path_decode(lat), target)
        ref += len(target)
    return loss / max(len(targets), 1), 100.0 * errors / max(ref, 1)


def _check_dataset(net: DeepBLSTM, dataset):
    if not dataset:
        raise ValueError("empty dataset")
    for x, y in dataset:
        if len(y) == 0:
            raise ValueError("training targets must be non-empty")
        if min(y) < 0 or max(y) >= net.n_labels:
            raise ValueError(f"label out of range 0..{net.n_labels - 1}: {list(y)}")
        if len(x) < min_frames(y):
            raise ValueError(f"sequence of {len(x)} frames too short for target of {len(y)} labels")


def train(net: DeepBLSTM, dataset: Sequence[Tuple[np.ndarray, Sequence[int]]], cfg: TrainConfig,
          validation: Optional[Sequence[Tuple[np.ndarray, Sequence[int]]]] = None, callback=None):
    """Momentum SGD on the summed CTC loss with early stopping.

    Each epoch visits the training set in a seed-determined shuffled order.
    Early stopping watches the mean CTC loss on ``validation`` (the training
    set when omitted) and the best-scoring parameters are returned along
    with one log record per epoch.
    """
    _check_dataset(net, dataset)
    val = validation if validation else dataset
    _check_dataset(net, val)
    rng = np.random.default_rng(cfg.rng_seed)
    xs = [np.asarray(x, dtype=np.float64) for x, _ in dataset]
    ys = [list(y) for _, y in dataset]
    vx = [np.asarray(x, dtype=np.float64) for x, _ in val]
    vy = [list(y) for _, y in val]

    velocity = None
    best = net.copy()
    best_loss = np.inf
    since_best = 0
    log = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(xs))
        train_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = batch_loss_and_grads(net, [xs[i] for i in idx], [ys[i] for i in idx])
            train_loss += loss
            net, velocity = sgd_step(net, grads, velocity, cfg)
        val_loss, val_ler = evaluate_ctc(net, vx, vy)
        improved = val_loss < best_loss
        if improved:
            best_loss = val_loss
            best = net.copy()
            since_best = 0
        else:
            since_best += 1
        record = {"epoch": epoch, "train_ctc": train_loss / len(xs), "val_ctc": val_loss,
                  "val_label_error": val_ler, "best_val_ctc": best_loss}
        log.append(record)
        logger.info("epoch %d train_ctc %.4f val_ctc %.4f val_ler %.2f%%", epoch, record["train_ctc"],
                    val_loss, val_ler)
        if callback is not None:
            callback(record)
        if since_best >= cfg.patience:
            break
    best.version = net.version + 1
    return best, log


# ---------------------------------------------------------------------------
# Model files


def save_model(net: DeepBLSTM, path: PathLike) -> None:
    """Text header followed by little-endian float64 parameters in ``parameters()`` order."""
    header = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"input_size {net.input_size}",
        f"hidden_sizes {' '.join(map(str, net.hidden_sizes))}",
        f"n_labels {net.n_labels}",
        f"peepholes {int(net.peepholes)}",
        f"seed {net.seed}",
        f"n_params {count_weights(net)}",
        "end",
    ]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in net.arrays())
    Path(path).write_bytes(("\n".join(header) + "\n").encode("utf-8") + blob)


def load_model(path: PathLike) -> DeepBLSTM:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: missing model header terminator")
    fields: Dict[str, List[str]] = {}
    lines = raw[:cut].decode("utf-8").splitlines()
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MODEL_MAGIC or int(magic[1]) != MODEL_VERSION:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} v{MODEL_VERSION} model file")
    for line in lines[1:]:
        key, *vals = line.split()
        fields[key] = vals
    net = init_network([int(v) for v in fields["hidden_sizes"]], int(fields["input_size"][0]),
                       int(fields["n_labels"][0]), seed=int(fields["seed"][0]),
                       peepholes=bool(int(fields["peepholes"][0])))
    params = np.frombuffer(raw[cut + len(marker):], dtype="<f8")
    expected = count_weights(net)
    if params.size != expected or int(fields["n_params"][0]) != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {params.size}")
    offset = 0
    for arr in net.arrays():
        arr[...] = params[offset:offset + arr.size].reshape(arr.shape)
        offset += arr.size
    return net
