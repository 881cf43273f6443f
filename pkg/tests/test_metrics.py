import pytest
from hypothesis import given, strategies as st

from hvocr.hypothesis import PageTranscript, TranscriptWord
from hvocr.metrics import REFERENCE_TABLE, evaluate
from hvocr.syndata import GroundTruth, WordTruth

from oracles import levenshtein


def truth(words_per_line):
    words = []
    for li, line in enumerate(words_per_line):
        for wi, labels in enumerate(line):
            words.append(WordTruth(li, wi, (10 * wi, 20 * li, 10 * wi + 8, 20 * li + 15), list(labels)))
    return GroundTruth(200, 100, words)


def transcript(lines):
    return PageTranscript([[TranscriptWord(list(w), "projection", 0.0) for w in line] for line in lines])


def test_perfect():
    lines = [[[0, 1, 2], [3, 4]], [[5, 6, 7]]]
    r = evaluate([transcript(lines)], [truth(lines)])
    assert r.label_error == 0 and r.word_error == 0
    assert r.total_labels == 8 and r.total_words == 3


def test_one_substitution_in_100_labels():
    ref = [[[i % 7] * 5 for i in range(20)]]
    hyp = [[list(w) for w in ref[0]]]
    hyp[0][3][2] = 9
    r = evaluate([transcript(hyp)], [truth(ref)])
    assert r.label_error == pytest.approx(1.0)
    assert r.word_error == pytest.approx(5.0)


def test_one_wrong_word_in_20():
    ref = [[[i, i + 1, i + 2] for i in range(20)]]
    hyp = [[list(w) for w in ref[0]]]
    hyp[0][7] = [50, 51, 52]
    r = evaluate([transcript(hyp)], [truth(ref)])
    assert r.word_error == pytest.approx(5.0)
    assert r.label_error == pytest.approx(100 * 3 / 60)


def test_line_breaks_do_not_matter():
    ref = [[[0, 1], [2, 3]], [[4, 5]]]
    hyp = [[[0, 1]], [[2, 3], [4, 5]]]
    assert evaluate([transcript(hyp)], [truth(ref)]).word_error == 0


def test_micro_average():
    a = [[[0, 1, 2, 3]]]
    b = [[[0, 1]] * 4]
    r = evaluate([transcript([[[0, 1, 2, 9]]]), transcript(b)], [truth(a), truth(b)])
    assert r.label_error == pytest.approx(100 / 12)
    assert r.word_error == pytest.approx(100 / 5)


def test_plain_word_lists_accepted():
    assert evaluate([[[0, 1], [2]]], [truth([[[0, 1], [2]]])]).word_error == 0
    assert evaluate([[[[0, 1]], [[2]]]], [truth([[[0, 1], [2]]])]).word_error == 0


def test_errors():
    with pytest.raises(ValueError, match="page count"):
        evaluate([transcript([])], [])
    with pytest.raises(ValueError, match="empty reference"):
        evaluate([transcript([])], [truth([])])
    with pytest.raises(ValueError):
        evaluate([], [])


word = st.lists(st.integers(0, 3), min_size=1, max_size=4)
page = st.lists(word, min_size=1, max_size=5)


@given(st.lists(st.tuples(page, page), min_size=1, max_size=5), st.randoms())
def test_rates_match_oracle_and_ignore_page_order(pairs, rnd):
    hyps = [transcript([h]) for h, _ in pairs]
    refs = [truth([r]) for _, r in pairs]
    rep = evaluate(hyps, refs)
    lab = sum(levenshtein([x for w in h for x in w], [x for w in r for x in w]) for h, r in pairs)
    wrd = sum(levenshtein([tuple(w) for w in h], [tuple(w) for w in r]) for h, r in pairs)
    assert rep.label_error == pytest.approx(100 * lab / sum(len(w) for _, r in pairs for w in r))
    assert rep.word_error == pytest.approx(100 * wrd / sum(len(r) for _, r in pairs))
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    shuffled = evaluate([hyps[i] for i in order], [refs[i] for i in order])
    assert shuffled.label_error == pytest.approx(rep.label_error)
    assert shuffled.word_error == pytest.approx(rep.word_error)


def test_report_text():
    r = evaluate([transcript([[[0, 1]]])], [truth([[[0, 2]]])])
    text = r.to_text().splitlines()
    assert text[0] == "label_error\t50.000000" and text[1] == "word_error\t100.000000"
    assert text[-1] == "0\t1\t2\t1\t1"
    table = r.table("fused").splitlines()
    assert table[1].split() == ["fused", "50.00", "100.00", "2", "1"]


def test_reference_table_values():
    # [PAPER] label / word error percentages as reported
    assert REFERENCE_TABLE == {"projection": (14.10, 16.301), "interval_tree": (30.22, 35.06),
                               "hough": (22.24, 28.49), "fused": (8.64, 10.64)}
    fused = REFERENCE_TABLE["fused"]
    for name, (lab, wer) in REFERENCE_TABLE.items():
        if name != "fused":
            assert fused[0] < lab and fused[1] < wer
