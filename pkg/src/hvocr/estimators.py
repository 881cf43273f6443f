"""scikit-learn style wrappers around the pipeline stages."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ctc import best_path_decode, edit_distance
from .hypothesis import PageTranscript, RecognizerConfig, recognize_branch, recognize_page
from .imageio import BinaryImage, GrayImage, sauvola_binarize
from .langmodel import NGramModel, WordScore, build_ngrams, word_score
from .network import DeepBLSTM, TrainConfig, init_network, predict_lattices, train
from .segmentation import SOURCES, normalize_segment


def check_sequences(X, input_size: Optional[int] = None) -> List[np.ndarray]:
    """Validate a list of ``(T, D)`` feature sequences; returns float64 copies."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = []
    for i, x in enumerate(X):
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"sequence {i}: expected a (T, D) array with T >= 1, got shape {arr.shape}")
        if input_size is not None and arr.shape[1] != input_size:
            raise ValueError(f"sequence {i}: frame length {arr.shape[1]} != input size {input_size}")
        if not np.isfinite(arr).all():
            raise ValueError(f"sequence {i}: non-finite values")
        out.append(arr)
    if not out:
        raise ValueError("no sequences given")
    return out


def check_label_sequences(y, n_labels: Optional[int] = None, allow_empty: bool = False) -> List[List[int]]:
    out = []
    for i, seq in enumerate(y):
        labels = [int(v) for v in seq]
        if not labels and not allow_empty:
            raise ValueError(f"label sequence {i} is empty")
        if labels and (min(labels) < 0 or (n_labels is not None and max(labels) >= n_labels)):
            raise ValueError(f"label sequence {i} has labels outside 0..{n_labels}")
        out.append(labels)
    return out


def check_pages(pages, kind=BinaryImage) -> list:
    if isinstance(pages, kind):
        pages = [pages]
    pages = list(pages)
    for i, p in enumerate(pages):
        if not isinstance(p, kind):
            raise TypeError(f"page {i}: expected {kind.__name__}, got {type(p).__name__}")
    return pages


class SauvolaBinarizer(BaseEstimator, TransformerMixin):
    """Stateless: ``fit`` only validates the parameters."""

    def __init__(self, window: int = 31, k: float = 0.2):
        self.window = window
        self.k = k

    def fit(self, X=None, y=None):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not 0 < self.k < 1:
            raise ValueError(f"k must lie in (0, 1), got {self.k}")
        return self

    def transform(self, X) -> List[BinaryImage]:
        return [sauvola_binarize(img, self.window, self.k) for img in check_pages(X, GrayImage)]


class WordNormalizer(BaseEstimator, TransformerMixin):
    """Word crops to height-normalised feature sequences."""

    def __init__(self, target_height: int = 16):
        self.target_height = target_height

    def fit(self, X=None, y=None):
        if self.target_height < 1:
            raise ValueError(f"target_height must be >= 1, got {self.target_height}")
        return self

    def transform(self, X) -> List[np.ndarray]:
        return [normalize_segment(w, self.target_height) for w in X]


class BLSTMRecognizer(BaseEstimator):
    """Deep BLSTM + CTC word recognizer."""

    def __init__(self, hidden_sizes=(16, 16, 16), n_labels: Optional[int] = None,
                 learning_rate: float = 1e-4, momentum: float = 0.9, init_range: float = 0.1,
                 gate_bias=(1.0, -1.0, 2.0), max_epochs: int = 100, patience: int = 10,
                 batch_size: int = 1, peepholes: bool = True, random_state: int = 0):
        self.hidden_sizes = hidden_sizes
        self.n_labels = n_labels
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.init_range = init_range
        self.gate_bias = gate_bias
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.peepholes = peepholes
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, momentum=self.momentum,
                           init_range=self.init_range, gate_bias=tuple(self.gate_bias),
                           max_epochs=self.max_epochs, patience=self.patience,
                           batch_size=self.batch_size, rng_seed=self.random_state)

    def fit(self, X, y, X_val=None, y_val=None, callback=None):
        X = check_sequences(X)
        y = check_label_sequences(y, self.n_labels)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} sequences but {len(y)} label sequences")
        n_labels = self.n_labels or max(max(s) for s in y) + 1
        cfg = self._train_config()
        net = init_network(self.hidden_sizes, X[0].shape[1], n_labels, seed=self.random_state,
                           init_range=self.init_range, gate_bias=tuple(self.gate_bias),
                           peepholes=self.peepholes)
        val = None
        if X_val is not None:
            vx = check_sequences(X_val, X[0].shape[1])
            val = list(zip(vx, check_label_sequences(y_val, n_labels)))
        self.network_, self.log_ = train(net, list(zip(check_sequences(X, X[0].shape[1]), y)), cfg,
                                         validation=val, callback=callback)
        self.n_features_in_ = X[0].shape[1]
        return self

    @classmethod
    def from_network(cls, net: DeepBLSTM) -> "BLSTMRecognizer":
        est = cls(hidden_sizes=tuple(net.hidden_sizes), n_labels=net.n_labels,
                  peepholes=net.peepholes, random_state=net.seed)
        est.network_, est.log_, est.n_features_in_ = net, [], net.input_size
        return est

    def predict_lattice(self, X) -> List[np.ndarray]:
        check_is_fitted(self, "network_")
        return predict_lattices(self.network_, check_sequences(X, self.n_features_in_))

    def predict(self, X) -> List[List[int]]:
        return [best_path_decode(lat) for lat in self.predict_lattice(X)]

    def score(self, X, y) -> float:
        """One minus the label error rate."""
        y = check_label_sequences(y, allow_empty=True)
        pred = self.predict(X)
        total = sum(len(t) for t in y)
        if total == 0:
            raise ValueError("reference label sequences are all empty")
        return 1.0 - sum(edit_distance(p, t) for p, t in zip(pred, y)) / total


class NGramVerifier(BaseEstimator, TransformerMixin):
    """Character n-gram validity model; ``transform`` yields word scores."""

    def __init__(self, n_values=(3, 4), penalty: float = 1.0, n_labels: Optional[int] = None):
        self.n_values = n_values
        self.penalty = penalty
        self.n_labels = n_labels

    def fit(self, X, y=None):
        if self.penalty < 0:
            raise ValueError(f"penalty must be >= 0, got {self.penalty}")
        self.model_ = build_ngrams(check_label_sequences(X, self.n_labels, allow_empty=True),
                                   self.n_values, self.n_labels)
        return self

    def transform(self, X) -> List[WordScore]:
        check_is_fitted(self, "model_")
        return [word_score(self.model_, w, self.penalty) for w in X]

    def score_words(self, X) -> np.ndarray:
        return np.array([s.score for s in self.transform(X)])


class PageRecognizer(BaseEstimator):
    """Fused (or single-branch) page recognizer over a trained network and LM."""

    def __init__(self, network: Optional[DeepBLSTM] = None, lm: Optional[NGramModel] = None,
                 branch: str = "fused", config: Optional[RecognizerConfig] = None):
        self.network = network
        self.lm = lm
        self.branch = branch
        self.config = config

    def fit(self, X=None, y=None):
        if self.network is None or self.lm is None:
            raise ValueError("PageRecognizer needs a trained network and a built language model")
        if self.branch != "fused" and self.branch not in SOURCES:
            raise ValueError(f"branch must be 'fused' or one of {SOURCES}, got {self.branch!r}")
        self.config_ = self.config or RecognizerConfig()
        return self

    def predict(self, X) -> List[PageTranscript]:
        check_is_fitted(self, "config_")
        pages = check_pages(X)
        if self.branch == "fused":
            return [recognize_page(p, self.network, self.lm, self.config_) for p in pages]
        return [recognize_branch(p, self.network, self.lm, self.branch, self.config_) for p in pages]
