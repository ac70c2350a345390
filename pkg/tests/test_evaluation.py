import json

import numpy as np
import pytest
import torch

from agid.data import CLASS_NAMES, ClassLabel, LabeledImage, Split, normalise
from agid.evaluation import (
    EmptyInput,
    LengthMismatch,
    confusion_matrix,
    evaluate,
    f1_binary,
    f1_macro,
    f1_score,
    per_class_f1,
    predict,
    score_report,
)
from agid.model import ModelConfig, ModelVariant, build_model


def oracle_f1_one_vs_rest(preds, golds, positive):
    """Slow, literal definition: count tp/fp/fn with a loop."""
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        if p == positive and g == positive:
            tp += 1
        elif p == positive and g != positive:
            fp += 1
        elif p != positive and g == positive:
            fn += 1
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom


def oracle_macro(preds, golds, num_classes=6):
    scores = [oracle_f1_one_vs_rest(preds, golds, c) for c in range(num_classes)]
    return sum(scores) / num_classes


class TestWorkedExamples:
    def test_perfect(self):
        preds = [0, 1, 2, 3, 4, 5]
        golds = [0, 1, 2, 3, 4, 5]
        macro, per = f1_macro(preds, golds)
        assert macro == 1.0
        assert np.all(per == 1.0)

    def test_crossed(self):
        preds = [1, 0]
        golds = [0, 1]
        macro, _ = f1_macro(preds, golds)
        assert macro == 0.0

    def test_single_correct_class(self):
        preds = [0, 0, 0, 0, 0, 0]
        golds = [0, 1, 2, 3, 4, 5]
        macro, per = f1_macro(preds, golds)
        assert per[0] == pytest.approx(2 / 7)
        assert macro == pytest.approx((2 / 7) / 6)

    def test_binary_half(self):
        assert f1_binary([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)

    def test_binary_degenerate_zero(self):
        assert f1_binary([0, 0], [0, 0]) == 0.0


class TestAgainstOracle:
    def test_random_pairs_exact(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            n = int(rng.integers(1, 50))
            preds = rng.integers(0, 6, size=n).tolist()
            golds = rng.integers(0, 6, size=n).tolist()
            macro, per = f1_macro(preds, golds)
            assert macro == oracle_macro(preds, golds)
            for c in range(6):
                assert per[c] == oracle_f1_one_vs_rest(preds, golds, c)

    def test_binary_matches_one_vs_rest(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            preds = rng.integers(0, 2, size=n).tolist()
            golds = rng.integers(0, 2, size=n).tolist()
            assert f1_binary(preds, golds) == oracle_f1_one_vs_rest(preds, golds, 1)

    def test_micro_equals_accuracy_when_all_classes_used(self):
        rng = np.random.default_rng(3)
        preds = rng.integers(0, 6, size=200)
        golds = rng.integers(0, 6, size=200)
        micro = f1_score(preds.tolist(), golds.tolist(), average="micro")
        assert micro == pytest.approx(float(np.mean(preds == golds)))

    def test_weighted_average(self):
        rng = np.random.default_rng(5)
        preds = rng.integers(0, 6, size=120).tolist()
        golds = rng.integers(0, 6, size=120).tolist()
        weighted = f1_score(preds, golds, average="weighted")
        support = [golds.count(c) for c in range(6)]
        expected = sum(oracle_f1_one_vs_rest(preds, golds, c) * support[c]
                       for c in range(6)) / sum(support)
        assert weighted == pytest.approx(expected)


class TestInvariances:
    def test_relabelling_permutation(self):
        rng = np.random.default_rng(11)
        preds = rng.integers(0, 6, size=90)
        golds = rng.integers(0, 6, size=90)
        macro, _ = f1_macro(preds.tolist(), golds.tolist())
        perm = rng.permutation(6)
        macro_p, _ = f1_macro(perm[preds].tolist(), perm[golds].tolist())
        assert macro == pytest.approx(macro_p)

    def test_pair_order_shuffle(self):
        rng = np.random.default_rng(13)
        preds = rng.integers(0, 6, size=60)
        golds = rng.integers(0, 6, size=60)
        order = rng.permutation(60)
        a, _ = f1_macro(preds.tolist(), golds.tolist())
        b, _ = f1_macro(preds[order].tolist(), golds[order].tolist())
        assert a == b


class TestConfusion:
    def test_sums_and_placement(self):
        preds = [0, 0, 1, 2, 2, 2]
        golds = [0, 1, 1, 2, 2, 0]
        matrix = confusion_matrix(preds, golds, num_classes=3)
        assert matrix.sum() == 6
        assert matrix[0, 0] == 1  # gold 0 predicted 0
        assert matrix[1, 0] == 1  # gold 1 predicted 0
        assert matrix[0, 2] == 1  # gold 0 predicted 2
        assert matrix[2, 2] == 2

    def test_row_totals_are_gold_counts(self):
        rng = np.random.default_rng(17)
        preds = rng.integers(0, 6, size=100).tolist()
        golds = rng.integers(0, 6, size=100).tolist()
        matrix = confusion_matrix(preds, golds)
        for c in range(6):
            assert matrix[c].sum() == golds.count(c)


class TestErrors:
    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            f1_macro([0, 1], [0])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            f1_macro([], [])

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            per_class_f1([0, 6], [0, 0], num_classes=6)

    def test_unknown_average(self):
        with pytest.raises(ValueError):
            f1_score([0], [0], average="geometric")


def toy_images(rng, n=12, side=32):
    images = []
    for i in range(n):
        pixels = rng.random((side, side, 3), dtype=np.float32)
        images.append(LabeledImage(pixels=pixels,
                                   label=ClassLabel(i % 6),
                                   source_path=f"img_{i}.png",
                                   split=Split.TEST))
    return images


class TestPredictAndReport:
    def test_argmax_tie_breaks_to_lowest_id(self):
        model = build_model(ModelConfig.tiny(), seed=0)
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
        images = toy_images(np.random.default_rng(0))
        rasters = np.stack([normalise(img.pixels) for img in images])
        preds = predict(model, rasters)
        assert all(p == 0 for p in preds)

    def test_task_a_from_constant_real_predictor(self):
        rng = np.random.default_rng(1)
        images = toy_images(rng, n=12)
        preds = [0] * 12
        golds = [int(img.label) for img in images]
        report = score_report(preds, golds)
        # Five of six classes are generators, so the all-REAL predictor
        # never finds a positive: f1 for the AI side is zero.
        assert report.f1_task_a == 0.0
        assert report.f1_task_b == pytest.approx((2 / 7) / 6)

    def test_task_a_invariant_to_generator_permutation(self):
        rng = np.random.default_rng(2)
        golds = rng.integers(0, 6, size=80)
        preds = rng.integers(0, 6, size=80)
        base = score_report(preds.tolist(), golds.tolist()).f1_task_a
        # Permute only the generator ids (1..5), keep REAL fixed.
        perm = np.array([0, 3, 5, 1, 2, 4])
        shuffled = score_report(perm[preds].tolist(), perm[golds].tolist()).f1_task_a
        assert base == pytest.approx(shuffled)

    def test_evaluate_end_to_end(self):
        model = build_model(ModelConfig.tiny(), seed=0)
        images = toy_images(np.random.default_rng(3), n=18)
        report = evaluate(model, images, batch_size=5)
        assert report.n_samples == 18
        assert 0.0 <= report.f1_task_a <= 1.0
        assert 0.0 <= report.f1_task_b <= 1.0
        assert len(report.per_class_f1) == 6

    def test_evaluate_empty_raises(self):
        model = build_model(ModelConfig.tiny(), seed=0)
        with pytest.raises(EmptyInput):
            evaluate(model, [])

    def test_report_json_deterministic(self):
        model = build_model(ModelConfig.tiny(), seed=0)
        images = toy_images(np.random.default_rng(4), n=10)
        a = evaluate(model, images).to_json()
        b = evaluate(model, images).to_json()
        assert a == b
        payload = json.loads(a)
        assert set(CLASS_NAMES) == set(payload["per_class_f1"])
        assert "f1_task_a" in payload
        assert "f1_task_b" in payload

    def test_batch_size_does_not_change_result(self):
        model = build_model(ModelConfig.tiny(), seed=0)
        images = toy_images(np.random.default_rng(5), n=13)
        r1 = evaluate(model, images, batch_size=3)
        r2 = evaluate(model, images, batch_size=13)
        assert r1.f1_task_b == pytest.approx(r2.f1_task_b)
        assert r1.to_dict() == r2.to_dict()
