import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqa.baselines import (
    bag_of_words_embedder,
    random_sentence_baseline,
    retrieval_sentence_baseline,
    split_sentences,
)
from memqa.metrics import (
    bleu_n,
    evaluate_texts,
    read_gold,
    read_predictions,
    report_csv,
    report_table,
    rouge_l_f1,
    score_pair,
)

words = st.sampled_from(["the", "cat", "sat", "on", "a", "mat", "dog", "ran"])
token_lists = st.lists(words, min_size=1, max_size=10)


class TestBleu:
    def test_identity_scores_one(self):
        assert bleu_n(["the", "cat"], [["the", "cat"]], 1) == pytest.approx(1.0)
        assert bleu_n(["the", "cat"], [["the", "cat"]], 2) == pytest.approx(1.0)

    def test_disjoint_scores_zero(self):
        assert bleu_n(["dog"], [["cat"]], 1) == 0.0
        assert bleu_n(["dog", "ran"], [["the", "cat"]], 2) == 0.0

    def test_brevity_penalty_hand_case(self):
        got = bleu_n(["the", "cat"], [["the", "cat", "sat"]], 1)
        assert got == pytest.approx(math.exp(-0.5), abs=1e-4)

    def test_clipping_limits_repeats(self):
        # "the the the" against "the cat": only one "the" is creditable
        got = bleu_n(["the", "the", "the"], [["the", "cat"]], 1)
        assert got == pytest.approx((1 / 3) * 1.0)

    def test_multi_reference_clipping_takes_max_count(self):
        refs = [["the", "cat"], ["the", "the", "dog"]]
        got = bleu_n(["the", "the"], refs, 1)
        assert got == pytest.approx(1.0)

    def test_empty_candidate_warns_and_scores_zero(self):
        with pytest.warns(UserWarning):
            assert bleu_n([], [["the"]], 1) == 0.0

    def test_invalid_order_rejected(self):
        with pytest.raises(ValueError):
            bleu_n(["a"], [["a"]], 3)

    @given(token_lists, st.lists(token_lists, min_size=1, max_size=3))
    @settings(max_examples=200, deadline=None)
    def test_bounded_and_order_invariant(self, cand, refs):
        b1 = bleu_n(cand, refs, 1)
        b2 = bleu_n(cand, refs, 2)
        assert 0.0 <= b2 <= b1 <= 1.0
        assert bleu_n(cand, list(reversed(refs)), 1) == pytest.approx(b1)


class TestRougeL:
    def test_identity(self):
        assert rouge_l_f1(["a", "b"], [["a", "b"]]) == pytest.approx(1.0)

    def test_hand_lcs_example(self):
        # LCS("a b c d", "a c d e") = "a c d": P = R = 3/4
        got = rouge_l_f1(list("abcd"), [list("acde")])
        assert got == pytest.approx(0.75)

    def test_disjoint_zero(self):
        assert rouge_l_f1(["x"], [["y"]]) == 0.0

    def test_max_over_references(self):
        refs = [list("zzzz"), list("abcd")]
        assert rouge_l_f1(list("abcd"), refs) == pytest.approx(1.0)

    def test_empty_warns_zero(self):
        with pytest.warns(UserWarning):
            assert rouge_l_f1([], [["a"]]) == 0.0

    @given(token_lists, st.lists(token_lists, min_size=1, max_size=3))
    @settings(max_examples=200, deadline=None)
    def test_bounded_and_order_invariant(self, cand, refs):
        r = rouge_l_f1(cand, refs)
        assert 0.0 <= r <= 1.0
        assert rouge_l_f1(cand, list(reversed(refs))) == pytest.approx(r)


class TestEvaluate:
    def test_perfect_predictions_score_one(self):
        preds = {"a": "yes it fits", "b": "no"}
        gold = {"a": ["yes it fits"], "b": ["no", "maybe"]}
        means, rows = evaluate_texts(preds, gold)
        for metric in ("bleu_1", "bleu_2", "rouge_l_f1"):
            assert means[metric] == pytest.approx(1.0)
        assert len(rows) == 2

    def test_corpus_mean_is_mean_of_rows(self):
        preds = {"a": "the cat", "b": "dog"}
        gold = {"a": ["the cat sat"], "b": ["cat"]}
        means, rows = evaluate_texts(preds, gold)
        for metric in ("bleu_1", "rouge_l_f1"):
            assert means[metric] == pytest.approx(
                sum(r[metric] for r in rows) / len(rows))
        # hand values: sample a BLEU-1 exp(-.5), sample b 0
        assert means["bleu_1"] == pytest.approx(math.exp(-0.5) / 2, abs=1e-6)

    def test_id_mismatch_listed(self):
        with pytest.raises(ValueError, match="missing"):
            evaluate_texts({"a": "x"}, {"a": ["x"], "b": ["y"]})
        with pytest.raises(ValueError, match="unmatched"):
            evaluate_texts({"a": "x", "c": "y"}, {"a": ["x"]})

    def test_empty_predictions_rejected(self):
        with pytest.raises(ValueError):
            evaluate_texts({}, {})

    def test_file_round_trip(self, tmp_path):
        preds_path = tmp_path / "p.jsonl"
        gold_path = tmp_path / "g.jsonl"
        preds_path.write_text(json.dumps({"id": "q1", "text": "a b"}) + "\n")
        gold_path.write_text(json.dumps({"id": "q1", "texts": ["a b", "c"]}) + "\n")
        means, _ = evaluate_texts(read_predictions(preds_path), read_gold(gold_path))
        assert means["bleu_1"] == pytest.approx(1.0)

    def test_reports_render(self):
        means = {"bleu_1": 0.5, "bleu_2": 0.25, "rouge_l_f1": 0.75}
        csv = report_csv(means)
        assert "bleu_1,0.500000" in csv
        table = report_table(means, 10)
        assert "50.000" in table and "samples evaluated: 10" in table

    def test_score_pair_handles_empty_candidate_quietly(self):
        scores = score_pair([], [["a"]])
        assert scores == {"bleu_1": 0.0, "bleu_2": 0.0, "rouge_l_f1": 0.0}


REVIEWS = [
    "it fits great. battery died fast! would buy again?",
    "the stand wobbles a little.",
]


class TestBaselines:
    def test_sentence_splitting(self):
        parts = split_sentences(REVIEWS[0])
        assert parts == ["it fits great.", "battery died fast!", "would buy again?"]

    def test_single_sentence_corpus_returns_it(self):
        rng = np.random.default_rng(0)
        assert random_sentence_baseline(["only one sentence."], rng) == "only one sentence."

    def test_random_pick_deterministic_under_seed(self):
        a = random_sentence_baseline(REVIEWS, np.random.default_rng(42))
        b = random_sentence_baseline(REVIEWS, np.random.default_rng(42))
        assert a == b

    def test_no_sentences_warns_empty(self):
        with pytest.warns(UserWarning):
            assert random_sentence_baseline([], np.random.default_rng(0)) == ""

    def test_uniform_over_equal_sentences(self):
        reviews = [f"sentence {i} here." for i in range(10)]
        rng = np.random.default_rng(7)
        counts = {}
        n = 10000
        for _ in range(n):
            pick = random_sentence_baseline(reviews, rng)
            counts[pick] = counts.get(pick, 0) + 1
        for c in counts.values():
            assert abs(c / n - 0.1) < 0.01

    def test_truncation_to_120_tokens(self):
        long_sentence = " ".join(["word"] * 300) + "."
        out = random_sentence_baseline([long_sentence], np.random.default_rng(0))
        assert len(out.split()) == 120

    def test_retrieval_picks_identical_sentence(self):
        q = "does the battery last"
        reviews = ["the stand wobbles. does the battery last. it is red."]
        vocab_corpus = reviews + [q]
        from memqa.vocab import build_vocab

        emb = bag_of_words_embedder(build_vocab(vocab_corpus, 64))
        assert retrieval_sentence_baseline(q, reviews, emb) == "does the battery last."

    def test_retrieval_hand_cosine_two_dims(self):
        table = {"aa bb.": [1.0, 0.0], "cc dd.": [0.4, 0.6], "q": [0.5, 0.5]}
        out = retrieval_sentence_baseline("q", ["aa bb. cc dd."], lambda s: table[s])
        assert out == "cc dd."

    def test_zero_vector_treated_as_minus_one(self):
        def emb(s):
            return [0.0, 0.0] if "dead" in s else [1.0, 0.0]

        out = retrieval_sentence_baseline("q", ["dead zone. alive one."], emb)
        assert out == "alive one."

    def test_all_ties_first_occurrence(self):
        out = retrieval_sentence_baseline("q", ["first. second. third."], lambda s: [1.0])
        assert out == "first."
