"""Hypothesize-and-verify word recognition for binarized document pages."""
from .ctc import CtcInfeasibleError, best_path_decode, ctc_loss, edit_distance
from .hypothesis import PageTranscript, RecognizerConfig, align_words, best_first_select, recognize_page
from .imageio import BinaryImage, GrayImage, connected_components, load_image, sauvola_binarize
from .langmodel import NGramModel, build_ngrams, word_score
from .metrics import EvalReport, evaluate
from .network import DeepBLSTM, TrainConfig, count_weights, forward, init_network, train
from .syndata import GlyphSet, GroundTruth, PageSpec, make_default_glyphset, render_page

__version__ = "0.1.0"
