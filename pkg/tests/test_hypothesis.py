import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hvocr.hypothesis import (AlignmentGroup, HypothesisBranch, PageTranscript, RecognizedWord,
                              RecognizerConfig, SlotEntry, align_words, best_first_select, branch_transcript,
                              build_branches, decode_word, encode_word, iou, label_map, preprocess,
                              read_transcript, recognize_branch, recognize_page, transcript_text,
                              write_transcript)
from hvocr.imageio import BinaryImage
from hvocr.langmodel import build_ngrams, word_score
from hvocr.network import init_network
from hvocr.segmentation import SOURCES
from hvocr.syndata import make_default_glyphset, make_vocabulary, random_page_spec, render_page

LM = build_ngrams([[0, 1, 2, 3], [4, 5, 6, 7]], n_labels=10)


def rw(x0, x1, labels, line=0, y0=0, y1=15):
    labels = list(labels)
    cols = list(np.linspace(x0, x1, len(labels) + 2)[1:-1].astype(int)) if labels else []
    return RecognizedWord((x0, y0, x1, y1), labels, word_score(LM, labels), cols, line)


def branch(source, *lines):
    return HypothesisBranch(source, [list(l) for l in lines])


@pytest.fixture(scope="module")
def glyphs():
    return make_default_glyphset(0)


@pytest.fixture(scope="module")
def untrained(glyphs):
    return init_network([4], 16, glyphs.n_labels, seed=0)


# -- geometry ----------------------------------------------------------------

def test_iou():
    assert iou((0, 0, 9, 9), (0, 0, 9, 9)) == 1.0
    assert iou((0, 0, 9, 9), (10, 0, 19, 9)) == 0.0
    assert iou((0, 0, 9, 9), (5, 0, 14, 9)) == pytest.approx(50 / 150)


# -- alignment ---------------------------------------------------------------

def test_identical_branches_give_triples():
    words = [rw(0, 20, [0, 1, 2, 3]), rw(30, 50, [4, 5, 6, 7]), rw(60, 80, [1, 2])]
    brs = [branch(s, words) for s in SOURCES]
    groups = align_words(brs)
    assert len(groups) == 3
    for i, g in enumerate(groups):
        assert [s.words for s in g.slots] == [(i,), (i,), (i,)]
        assert g.anchor == words[i].box


def test_merged_word_joins_both_groups():
    spine = branch("projection", [rw(0, 9, [0, 1]), rw(14, 23, [2, 3])])
    merged = RecognizedWord((0, 0, 23, 15), [0, 1, 2, 3], word_score(LM, [0, 1, 2, 3]), [1, 5, 15, 20])
    other = branch("hough", [merged])
    groups = align_words([spine, other])
    assert len(groups) == 2
    assert groups[0].slots[1].words == (0,) and groups[1].slots[1].words == (0,)
    assert groups[0].slots[1].labels == [0, 1] and groups[1].slots[1].labels == [2, 3]
    assert groups[0].slots[1].split and groups[1].slots[1].split


def test_out_of_order_words_still_found():
    # a branch that splits one line in two reads its words in another order
    spine = branch("projection", [rw(0, 10, [0]), rw(20, 30, [1]), rw(40, 50, [2]), rw(60, 70, [3])])
    split = branch("interval_tree", [rw(20, 30, [1]), rw(60, 70, [3])], [rw(0, 10, [0]), rw(40, 50, [2])])
    groups = align_words([spine, split])
    assert len(groups) == 4
    assert [g.slots[1].labels for g in groups] == [[0], [1], [2], [3]]


def test_unmatched_word_opens_group():
    spine = branch("projection", [rw(0, 10, [0]), rw(40, 50, [2])])
    other = branch("hough", [rw(0, 10, [0]), rw(20, 30, [1])])
    groups = align_words([spine, other])
    assert len(groups) == 3
    assert groups[1].slots[0] is None and groups[1].slots[1].labels == [1]
    assert groups[2].slots[1] is None


def test_align_all_empty():
    with pytest.raises(ValueError):
        align_words([branch("projection"), branch("hough")])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 200), st.integers(4, 40)), min_size=1,
                max_size=8),
       st.lists(st.tuples(st.integers(0, 3), st.integers(0, 200), st.integers(4, 40)), max_size=8))
def test_every_word_placed(a, b):
    def make(spec):
        words = sorted(spec)
        lines = {}
        for line, x0, w in words:
            lines.setdefault(line, []).append(rw(x0, x0 + w, [x0 % 10], line, y0=20 * line, y1=20 * line + 15))
        return [lines[k] for k in sorted(lines)]
    brs = [HypothesisBranch("projection", make(a)), HypothesisBranch("hough", make(b))]
    groups = align_words(brs)
    for bi, br in enumerate(brs):
        placed = {j for g in groups if g.slots[bi] is not None for j in g.slots[bi].words}
        assert placed == set(range(br.n_words))
    # groups follow the spine's reading order
    spine = 0 if brs[0].n_words >= brs[1].n_words else 1
    order = [g.slots[spine].words[0] for g in groups if g.slots[spine] is not None]
    assert order == list(range(brs[spine].n_words))


# -- selection ---------------------------------------------------------------

def group(*label_lists, line=0):
    slots = [None if l is None else SlotEntry((0,), list(l)) for l in label_lists]
    return AlignmentGroup((0, 0, 1, 1), slots, line)


def test_max_score_wins():
    t = best_first_select([group([0, 1, 2, 3], [9, 8, 9, 8])], ["hough", "projection"], LM)
    assert t.lines[0][0].labels == [0, 1, 2, 3] and t.lines[0][0].branch == "hough"
    assert t.score == 3


def test_tie_goes_to_projection():
    t = best_first_select([group([0, 1, 2, 3], [4, 5, 6, 7])], ["hough", "projection"], LM)
    assert t.lines[0][0].branch == "projection"
    t = best_first_select([group([0, 1, 2, 3], [4, 5, 6, 7])], ["hough", "projection"], LM,
                          branch_priority=("hough", "projection", "interval_tree"))
    assert t.lines[0][0].branch == "hough"


def test_empty_slot_and_empty_groups():
    t = best_first_select([group(None, [0, 1])], ["projection", "hough"], LM)
    # short word scores 0, ties the empty slot, and priority prefers projection
    assert t.lines[0][0].labels == [] and t.lines[0][0].branch is None
    t = best_first_select([group(None, [9, 8, 7])], ["projection", "hough"], LM)
    assert t.lines[0][0].labels == []
    assert best_first_select([], SOURCES, LM) == PageTranscript([], 0.0)


def test_insertion_is_filtered():
    clean = [0, 1, 2, 3]
    inserted = [0, 1, 9, 2, 3]
    t = best_first_select([group(inserted, clean)], ["projection", "interval_tree"], LM)
    assert t.lines[0][0].labels == clean


def test_score_tie_prefers_fewer_invalid_grams():
    # the inserted word gains as many valid windows as it loses score to
    # its one invalid window, tying with the clean word
    lm = build_ngrams([[0, 1, 2, 3], [2, 3, 5]], n_labels=6)
    inserted, clean = [0, 1, 2, 3, 5], [0, 1, 2, 3]
    assert word_score(lm, inserted).score == word_score(lm, clean).score == 3
    t = best_first_select([group(inserted, clean)], ["projection", "hough"], lm)
    assert t.lines[0][0].labels == clean and t.lines[0][0].branch == "hough"


def test_valid_substitution_is_not_corrected():
    # a substitution that forms another valid word cannot be detected
    lm = build_ngrams([[0, 1, 2, 3], [0, 1, 2, 4]], n_labels=5)
    t = best_first_select([group([0, 1, 2, 4], [0, 1, 2, 3])], ["projection", "hough"], lm)
    assert t.lines[0][0].labels == [0, 1, 2, 4]


def test_lines_follow_group_lines():
    groups = [group([0, 1, 2, 3], line=0), group([4, 5, 6, 7], line=0), group([1], line=2)]
    t = best_first_select(groups, ["projection"], LM)
    assert [[w.labels for w in l] for l in t.lines] == [[[0, 1, 2, 3], [4, 5, 6, 7]], [[1]]]
    assert t.words() == [[0, 1, 2, 3], [4, 5, 6, 7], [1]]


def test_single_branch_select_is_verbatim():
    br = branch("hough", [rw(0, 10, [0, 1, 2, 3]), rw(20, 30, [9, 9, 9])], [rw(0, 10, [], 1)])
    groups = align_words([br])
    assert best_first_select(groups, ["hough"], LM).words() == branch_transcript(br).words()


# -- full pages --------------------------------------------------------------

def test_empty_page(untrained):
    page = BinaryImage.blank(60, 40)
    brs = build_branches(page, untrained, LM)
    assert [b.source for b in brs] == list(SOURCES)
    assert all(b.n_words == 0 for b in brs)
    assert recognize_page(page, untrained, LM) == PageTranscript([], 0.0)


def test_clean_page_projection_word_count(glyphs, untrained):
    vocab = make_vocabulary(glyphs, 30, rng_seed=0)
    img, gt = render_page(random_page_spec(vocab, np.random.default_rng(3)), glyphs)
    cfg = RecognizerConfig()
    brs = build_branches(preprocess(img, cfg), untrained, LM, cfg)
    assert brs[0].n_words == len(gt.words)


def test_crowded_page_branches_disagree(glyphs, untrained):
    vocab = make_vocabulary(glyphs, 30, rng_seed=0)
    img, gt = render_page(random_page_spec(vocab, np.random.default_rng(4), n_lines=(3, 3),
                                           crowding=(1.0, 1.0)), glyphs)
    cfg = RecognizerConfig()
    brs = build_branches(preprocess(img, cfg), untrained, LM, cfg)
    assert len({len(b.lines) for b in brs}) > 1


def test_crowded_page_interval_tree_candidates(glyphs, untrained):
    # interval_tree splits modifiers into lines of their own; every real
    # word still finds its interval_tree candidate
    vocab = make_vocabulary(glyphs, 30, rng_seed=0)
    for seed in range(5):
        img, gt = render_page(random_page_spec(vocab, np.random.default_rng(seed), crowding=(1.0, 1.0)),
                              glyphs)
        cfg = RecognizerConfig()
        brs = build_branches(preprocess(img, cfg), untrained, LM, cfg)
        groups = align_words(brs, cfg.overlap_threshold, cfg.window)
        for w in gt.words:
            near = [g for g in groups if iou(g.anchor, w.box) >= 0.5]
            assert near and any(g.slots[2] is not None for g in near)


def test_recognize_page_deterministic(glyphs, untrained):
    vocab = make_vocabulary(glyphs, 30, rng_seed=0)
    img, _ = render_page(random_page_spec(vocab, np.random.default_rng(6), crowding=(0.5, 1.0),
                                          noise_density=0.02), glyphs)
    assert recognize_page(img, untrained, LM) == recognize_page(img, untrained, LM)


@pytest.mark.parametrize("source", SOURCES)
def test_single_branch_fused_equals_branch(glyphs, untrained, source):
    vocab = make_vocabulary(glyphs, 30, rng_seed=0)
    cfg = RecognizerConfig(branches=(source,))
    mapping = label_map()
    for seed in range(3):
        img, _ = render_page(random_page_spec(vocab, np.random.default_rng(seed), crowding=(0, 1)), glyphs)
        fused = recognize_page(img, untrained, LM, cfg)
        alone = recognize_branch(img, untrained, LM, source, cfg)
        assert transcript_text(fused, mapping) == transcript_text(alone, mapping)


# -- serialisation -----------------------------------------------------------

def test_label_map_round_trip():
    m = label_map("abc")
    assert encode_word([2, 0], m) == "ca"
    assert decode_word("ca", m) == [2, 0]
    with pytest.raises(ValueError):
        encode_word([3], m)
    with pytest.raises(ValueError):
        decode_word("z", m)
    with pytest.raises(ValueError):
        label_map("aa")


def test_write_and_read_transcript(tmp_path):
    t = best_first_select([group([0, 1, 2, 3], line=0), group(None, line=0), group([4, 5], line=1)],
                          ["projection"], LM)
    m = label_map()
    write_transcript(t, tmp_path / "p.txt", m)
    assert (tmp_path / "p.txt").read_text() == "abcd\nef\n"
    assert read_transcript(tmp_path / "p.txt", m) == [[[0, 1, 2, 3]], [[4, 5]]]
    side = (tmp_path / "p.tsv").read_text().splitlines()
    assert side[0].startswith("line\tword\tbranch") and len(side) == 4
    assert side[2].split("\t")[2] == "-"


def test_empty_transcript_text():
    assert transcript_text(PageTranscript([], 0.0), label_map()) == ""
