"""Ranking metrics, correlation, F1, saliency, and corpus evaluation."""

import math

import numpy as np
import pytest

from cohkit.data import CoherenceLabel, Corpus, DataError, generate_permutations
from cohkit.evaluation import (
    EvalReport,
    accuracy_3way,
    ensemble_score_vector,
    evaluate_corpus,
    f1_per_class,
    group_by_source,
    micro_accuracy,
    pearson,
    pra,
    predict_class,
    predict_roles,
    predict_scalar,
    predict_score_vector,
    saliency,
    saliency_html,
    similarity_from_transpositions,
    similarity_scatter,
    tpra,
)
from cohkit.model import Checkpoint, MTL, STL
from helpers import brute_pra, brute_tpra, make_doc, tiny_binary_corpus, tiny_model


class TestPra:
    def test_all_wins(self):
        assert pra([(0.9, [0.1, 0.2]), (0.8, [0.3])]) == 1.0

    def test_partial(self):
        assert pra([(0.5, [0.4, 0.6])]) == 0.5

    def test_tie_counts_as_wrong(self):
        assert pra([(0.5, [0.5])]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            pra([])
        with pytest.raises(DataError):
            pra([(0.9, [])])

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            scored = [
                (float(rng.random()), [float(x) for x in rng.random(rng.integers(1, 6))])
                for _ in range(rng.integers(1, 8))
            ]
            assert pra(scored) == brute_pra(scored)


class TestTpra:
    def test_cross_document_comparison(self):
        """Originals 0.9 and 0.6 against the pooled permutations {0.5, 0.7}:
        0.9 beats both, 0.6 beats only 0.5, so 3 of 4 comparisons win."""
        scored = [(0.9, [0.5]), (0.6, [0.7])]
        assert pra(scored) == 0.5
        assert tpra(scored) == 0.75

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            scored = [
                (float(rng.random()), [float(x) for x in rng.random(rng.integers(1, 6))])
                for _ in range(rng.integers(1, 8))
            ]
            assert tpra(scored) == brute_tpra(scored)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            tpra([])


class TestAccuracy:
    def test_fraction_of_matches(self):
        assert accuracy_3way([0, 1, 2, 1], [0, 2, 2, 1]) == 0.75

    def test_micro_accuracy_is_exact_match_fraction(self):
        gold = ["S", "O", "X", "X"]
        pred = ["S", "X", "X", "X"]
        assert micro_accuracy(gold, pred) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            accuracy_3way([0], [0, 1])

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            accuracy_3way([], [])


class TestPearson:
    def test_perfect_linear(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=40)
        y = rng.normal(size=40)
        base = pearson(x, y)
        assert pearson(3.0 * x + 7.0, y) == pytest.approx(base, abs=1e-12)
        assert pearson(x, -2.0 * y + 1.0) == pytest.approx(-base, abs=1e-12)

    def test_known_value(self):
        # x=[0,1,2], y=[0,1,4]: sum(dx*dy)=4, sx=sqrt(2), sy=sqrt(26/3)
        x = np.array([0.0, 1.0, 2.0])
        y = np.array([0.0, 1.0, 4.0])
        expected = 4.0 / math.sqrt(2.0 * 26.0 / 3.0)
        assert pearson(x, y) == pytest.approx(expected, abs=1e-12)

    def test_constant_input_rejected(self):
        with pytest.raises(DataError, match="constant"):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_few_points_rejected(self):
        with pytest.raises(DataError):
            pearson([1.0], [2.0])


class TestSimilarity:
    def test_identity_is_one(self):
        assert similarity_from_transpositions([0, 1, 2], [0, 1, 2]) == 1.0

    def test_reversal_is_zero(self):
        assert similarity_from_transpositions([3, 2, 1, 0], [0, 1, 2, 3]) == 0.0

    def test_single_swap_on_four(self):
        assert similarity_from_transpositions([1, 0, 2, 3], [0, 1, 2, 3]) == pytest.approx(
            1.0 - 1.0 / 6.0, abs=1e-15
        )

    def test_short_sequences_are_trivially_similar(self):
        assert similarity_from_transpositions([0], [0]) == 1.0


class TestF1:
    def test_hand_computed_case(self):
        gold = ["S", "S", "O", "X"]
        pred = ["S", "O", "O", "S"]
        # S: tp=1 fp=1 fn=1 -> p=r=0.5 -> f1=0.5
        assert f1_per_class(gold, pred, "S") == pytest.approx(0.5)
        # O: tp=1 fp=1 fn=0 -> p=0.5 r=1 -> f1=2/3
        assert f1_per_class(gold, pred, "O") == pytest.approx(2.0 / 3.0)
        # X: tp=0 -> 0
        assert f1_per_class(gold, pred, "X") == 0.0

    def test_perfect_prediction(self):
        assert f1_per_class(["S", "O"], ["S", "O"], "S") == 1.0

    def test_undefined_class_warns_and_reports_zero(self, caplog):
        with caplog.at_level("WARNING"):
            value = f1_per_class(["S", "S"], ["S", "S"], "O")
        assert value == 0.0
        assert any("undefined" in r.message for r in caplog.records)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            f1_per_class(["S"], ["S", "O"], "S")


class TestGroupBySource:
    def test_pairs_originals_with_their_own_permutations(self):
        corpus = tiny_binary_corpus(num_docs=3, perms=2)
        groups = group_by_source(corpus)
        assert len(groups) == 3
        for original, perms in groups:
            assert original.origin.kind == "original"
            assert len(perms) == 2
            assert all(p.origin.source == original.id for p in perms)

    def test_unpaired_originals_dropped(self):
        lonely = make_doc([["a", "b"], ["c", "d"]], doc_id="lonely")
        src = make_doc([["x", "y"], ["z", "w"]], doc_id="src")
        perms = generate_permutations(src, 1, seed=0)
        groups = group_by_source(Corpus([lonely, src] + perms))
        assert [g[0].id for g in groups] == ["src"]


class TestModelPredictions:
    def test_scalar_prediction_range(self):
        model, corpus = tiny_model(STL)
        for doc in corpus:
            s = predict_scalar(model, doc)
            assert 0.0 < s < 1.0

    def test_scalar_requires_binary_head(self):
        corpus = tiny_binary_corpus()
        model, _ = tiny_model(STL, corpus=corpus, num_classes=3)
        with pytest.raises(DataError, match="binary"):
            predict_scalar(model, next(iter(corpus)))

    def test_class_prediction_is_argmax(self):
        corpus = tiny_binary_corpus()
        model, _ = tiny_model(STL, corpus=corpus, num_classes=3)
        doc = next(iter(corpus))
        vec = predict_score_vector(model, doc)
        assert predict_class(model, doc) == int(np.argmax(vec))

    def test_role_predictions_are_class_strings(self):
        model, corpus = tiny_model(MTL)
        doc = next(iter(corpus))
        roles = predict_roles(model, doc)
        assert len(roles) == len(doc.tokens)
        assert all(r in model.gr_vocab.classes for r in roles)

    def test_ensemble_mean_and_config_check(self):
        corpus = tiny_binary_corpus()
        m1, _ = tiny_model(STL, corpus=corpus, seed=0)
        m2, _ = tiny_model(STL, corpus=corpus, seed=1)
        doc = next(iter(corpus))
        a = predict_score_vector(m1, doc)
        b = predict_score_vector(m2, doc)
        np.testing.assert_allclose(
            ensemble_score_vector([m1, m2], doc), (a + b) / 2.0, atol=1e-15
        )
        odd, _ = tiny_model(STL, corpus=corpus, word_hidden=6)
        with pytest.raises(ValueError, match="configs differ"):
            ensemble_score_vector([m1, odd], doc)
        with pytest.raises(ValueError, match="at least one"):
            ensemble_score_vector([], doc)


class TestSaliency:
    def test_norm_per_token(self):
        model, corpus = tiny_model(STL)
        doc = next(iter(corpus))
        records = saliency(model, doc)
        assert len(records) == len(doc.tokens)
        assert [s for s, _ in records] == [t.surface for t in doc.tokens]
        assert all(n >= 0.0 for _, n in records)
        assert any(n > 0.0 for _, n in records)

    def test_deterministic(self):
        model, corpus = tiny_model(STL)
        doc = next(iter(corpus))
        assert saliency(model, doc) == saliency(model, doc)

    def test_matches_finite_difference_sensitivity(self):
        """Perturbing one coordinate of one token's embedding row moves the
        score by grad*h; the recorded norms bundle those gradients."""
        corpus = Corpus([make_doc([["alpha", "beta"], ["gamma", "delta"]], doc_id="u")])
        model, _ = tiny_model(STL, corpus=corpus)
        doc = next(iter(corpus))
        records = saliency(model, doc)

        h = 1e-5
        for t_idx, token in enumerate(doc.tokens):
            row = model.word_table.index_of(token.surface)
            fd = np.zeros(model.config.embed_dim)
            for j in range(model.config.embed_dim):
                orig = model.word_table.matrix.data[row, j]
                model.word_table.matrix.data[row, j] = orig + h
                hi = predict_scalar(model, doc)
                model.word_table.matrix.data[row, j] = orig - h
                lo = predict_scalar(model, doc)
                model.word_table.matrix.data[row, j] = orig
                fd[j] = (hi - lo) / (2.0 * h)
            fd_norm = float(np.linalg.norm(fd))
            _, analytic = records[t_idx]
            denom = max(fd_norm, analytic)
            assert denom > 0
            assert abs(fd_norm - analytic) / denom < 1e-3

    def test_html_has_one_span_per_token(self):
        model, corpus = tiny_model(STL)
        doc = next(iter(corpus))
        page = saliency_html(doc, saliency(model, doc))
        assert page.count("<span") == len(doc.tokens)
        assert page.count("</span>") == len(doc.tokens)
        assert page.count("<p>") == len(doc.sentences)
        assert doc.id in page
        assert page.startswith("<!DOCTYPE html>")

    def test_html_escapes_markup(self):
        doc = make_doc([["<b>", "a&b"]], doc_id="esc<>")
        page = saliency_html(doc, [("<b>", 1.0), ("a&b", 0.5)])
        assert "&lt;b&gt;" in page
        assert "a&amp;b" in page
        assert "<b>" not in page.replace("<body", "").replace("<br", "")

    def test_html_alpha_normalized_by_max(self):
        doc = make_doc([["low", "high"]], doc_id="n")
        page = saliency_html(doc, [("low", 1.0), ("high", 4.0)])
        assert "rgba(214,39,40,0.250)" in page
        assert "rgba(214,39,40,1.000)" in page

    def test_html_handles_all_zero_norms(self):
        doc = make_doc([["a", "b"]], doc_id="z")
        page = saliency_html(doc, [("a", 0.0), ("b", 0.0)])
        assert page.count("rgba(214,39,40,0.000)") == 2


class TestEvaluateCorpus:
    def checkpoints(self, corpus, variant=STL, n=2, **overrides):
        ckpts = []
        for seed in range(n):
            model, _ = tiny_model(variant, corpus=corpus, seed=seed, **overrides)
            ckpts.append(Checkpoint.from_model(model))
        return ckpts

    def test_requested_metrics_only(self):
        corpus = tiny_binary_corpus()
        report = evaluate_corpus(self.checkpoints(corpus), corpus, ["pra"])
        assert set(report.metrics) == {"pra"}
        assert report.counts["documents"] == len(corpus)
        assert report.counts["ensemble_size"] == 2
        assert "pra_pairs" in report.counts

    def test_ranking_and_accuracy_values_are_consistent(self):
        corpus = tiny_binary_corpus()
        ckpts = self.checkpoints(corpus)
        report = evaluate_corpus(ckpts, corpus, ["pra", "tpra", "accuracy"])
        models = [c.to_model() for c in ckpts]
        scored = [
            (
                float(ensemble_score_vector(models, orig)[0]),
                [float(ensemble_score_vector(models, p)[0]) for p in perms],
            )
            for orig, perms in group_by_source(corpus)
        ]
        assert report.metrics["pra"] == pra(scored)
        assert report.metrics["tpra"] == tpra(scored)
        assert 0.0 <= report.metrics["accuracy"] <= 1.0

    def test_pearson_over_permuted_documents(self):
        corpus = tiny_binary_corpus(num_docs=4, perms=3, sents=4)
        report = evaluate_corpus(self.checkpoints(corpus), corpus, ["pearson"])
        assert -1.0 <= report.metrics["pearson"] <= 1.0
        assert report.counts["pearson_points"] == len(corpus.permuted())

    def test_pearson_needs_recorded_orders(self):
        docs = [
            make_doc([["a", "b"], ["c", "d"]], doc_id="d1"),
            make_doc(
                [["a", "b"], ["c", "d"]],
                doc_id="d2",
                label=CoherenceLabel("binary", 0),
            ),
        ]
        corpus = Corpus(docs)
        with pytest.raises(DataError, match="pearson"):
            evaluate_corpus(self.checkpoints(tiny_binary_corpus()), corpus, ["pearson"])

    def test_f1_reports_present_classes(self):
        corpus = tiny_binary_corpus()
        report = evaluate_corpus(self.checkpoints(corpus, variant=MTL), corpus, ["f1"])
        assert report.f1_per_class
        model = self.checkpoints(corpus, variant=MTL)[0].to_model()
        assert set(report.f1_per_class) <= set(model.gr_vocab.classes)
        assert report.counts["gr_tokens"] > 0

    def test_f1_requires_role_head(self):
        corpus = tiny_binary_corpus()
        with pytest.raises(DataError, match="mtl"):
            evaluate_corpus(self.checkpoints(corpus, variant=STL), corpus, ["f1"])

    def test_unknown_metric_rejected(self):
        corpus = tiny_binary_corpus()
        with pytest.raises(DataError, match="unknown metrics"):
            evaluate_corpus(self.checkpoints(corpus), corpus, ["pra", "meteor"])
        with pytest.raises(DataError, match="no metrics"):
            evaluate_corpus(self.checkpoints(corpus), corpus, [])

    def test_report_json_layout(self):
        report = EvalReport(metrics={"pra": 1.0}, counts={"documents": 2})
        text = report.to_json()
        assert text.endswith("\n")
        assert '"pra": 1.0' in text
        assert '"f1_per_class": {}' in text

    def test_similarity_scatter_pairs(self):
        corpus = tiny_binary_corpus(num_docs=3, perms=2, sents=4)
        sims, scores = similarity_scatter(self.checkpoints(corpus), corpus)
        assert len(sims) == len(scores) == len(corpus.permuted())
        assert all(0.0 <= s <= 1.0 for s in sims)
        assert all(0.0 < s < 1.0 for s in scores)
