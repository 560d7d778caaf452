import math

import numpy as np
import pandas as pd
import pytest
import torch

from calibrec.data.sequences import SplitExample
from calibrec.evaluation.diagnostics import (
    erase_experiment,
    erase_keys,
    gradient_importance,
    kendall_tau,
    kendall_tau_analysis,
    last_row,
)
from calibrec.evaluation.slicing import slice_ranks, sliced_metrics, training_lengths, training_popularity
from calibrec.exceptions.exceptions import InvalidConfigError
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender


def kendall_oracle(x, y):
    concordance, ties_x, ties_y, pairs = 0, 0, 0, 0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            sign_x = np.sign(x[i] - x[j])
            sign_y = np.sign(y[i] - y[j])
            concordance += sign_x * sign_y
            ties_x += sign_x == 0
            ties_y += sign_y == 0
            pairs += 1
    return concordance / math.sqrt((pairs - ties_x) * (pairs - ties_y))


def get_rows():
    final = torch.zeros(1, 2, 3, 3)
    final[0, 0, -1] = torch.tensor([0.2, 0.3, 0.5])
    final[0, 1, -1] = torch.tensor([0.5, 0.5, 0.0])
    return final


def test_erasing_renormalizes_to_the_original_mass():
    erased = erase_keys(get_rows(), torch.tensor([2]), head=0)

    torch.testing.assert_close(erased[0, 0, -1], torch.tensor([0.4, 0.6, 0.0]))
    assert torch.equal(erased[0, 1], get_rows()[0, 1])


def test_erasing_without_renormalization():
    erased = erase_keys(get_rows(), torch.tensor([2]), head=0, renormalize=False)

    torch.testing.assert_close(erased[0, 0, -1], torch.tensor([0.2, 0.3, 0.0]))


def test_erasing_a_zero_weight_is_a_no_op():
    final = get_rows()

    erased = erase_keys(final, torch.tensor([2]), head=1)

    assert torch.equal(erased, final)
    assert erased is not final


def test_erasing_every_head():
    erased = erase_keys(get_rows(), torch.tensor([0]))

    torch.testing.assert_close(erased[0, 0, -1], torch.tensor([0.0, 0.375, 0.625]))
    torch.testing.assert_close(erased[0, 1, -1], torch.tensor([0.0, 1.0, 0.0]))


def test_erase_experiment_skips_short_contexts(tiny_config):
    model = CalibratedRecommender(tiny_config, item_count=9)
    examples = [
        SplitExample("a", [1], 2, "test"),
        SplitExample("b", [1, 2, 3], 4, "test"),
        SplitExample("c", [5, 6], 7, "test"),
    ]

    reports = erase_experiment(model, examples, ks=[5])

    assert reports.original.count == reports.erased.count == 2
    assert reports.original.extra["skipped"] == 1
    assert reports.erased.extra["layer"] == 1
    assert reports.erased.extra["head"] == "mean"
    assert "relative_change_recall@5" in reports.erased.extra


def test_erase_experiment_on_a_chosen_head(tiny_config):
    model = CalibratedRecommender(tiny_config, item_count=9)
    examples = [SplitExample(str(i), [1, 2, 3, 4, 5], 6, "test") for i in range(3)]

    reports = erase_experiment(model, examples, layer=0, head=1, ks=[9])

    assert reports.original.recall[9] == reports.erased.recall[9] == 1.0
    assert reports.erased.extra["head"] == 1


def test_kendall_tau_matches_pairwise_oracle():
    generator = np.random.default_rng(0)

    for _ in range(100):
        n = int(generator.integers(3, 51))
        x = generator.integers(0, 4, n).astype(float)
        y = generator.normal(size=n)
        if len(set(x)) == 1:
            continue
        assert kendall_tau(x, y) == pytest.approx(kendall_oracle(x, y))


def test_kendall_tau_extremes():
    assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert math.isnan(kendall_tau([1, 1, 1], [1, 2, 3]))


def test_gradient_importance(tiny_config):
    model = CalibratedRecommender(tiny_config, item_count=9)

    short = gradient_importance(model, [3, 1, 2], 4)
    long = gradient_importance(model, [1, 2, 3, 4, 5, 6, 7], 8)

    assert short.shape == (3,)
    assert long.shape == (5,)
    assert (short >= 0).all() and (long >= 0).all()


def test_importance_follows_attention_on_a_linear_block():
    config = ModelConfig(
        d=4, n=5, layers=1, heads=2, inner=8, dropout=0.0,
        order_enabled=False, adversarial_enabled=False, residual=False, layer_norm=False,
    )
    model = CalibratedRecommender(config, item_count=6)
    block = model.blocks[0]
    eye = torch.eye(4)
    with torch.no_grad():
        # Zero queries and keys leave only the input-independent distance penalty in the
        # attention; the feed-forward computes ReLU(h) - ReLU(-h) = h.
        block.query.weight.zero_()
        block.key.weight.zero_()
        block.spatial.distance_weight.zero_()
        block.feed_forward.expand.weight.copy_(torch.cat([eye, -eye]))
        block.feed_forward.expand.bias.zero_()
        block.feed_forward.contract.weight.copy_(torch.cat([eye, -eye], dim=1))
        block.feed_forward.contract.bias.zero_()
    target = 5

    importance = gradient_importance(model, [3, 1, 2], target)

    attention = last_row(model(torch.tensor([[0, 0, 3, 1, 2]]), collect_trace=True).traces[0].final)[0, 2:].detach()
    value_path = torch.linalg.vector_norm(block.value.weight.T @ model.item_embedding.weight[target]).detach()
    torch.testing.assert_close(torch.from_numpy(importance), attention * value_path)
    assert attention[0] < attention[1] < attention[2]


def test_erase_experiment_rejects_missing_targets(tiny_config):
    model = CalibratedRecommender(tiny_config, item_count=9)
    examples = [SplitExample("a", [1, 2, 3], 4, "test")]

    with pytest.raises(InvalidConfigError) as error:
        erase_experiment(model, examples, layer=2, head=-1)

    assert error.value.keys == ["layer", "head"]


def test_kendall_analysis_reports_one_tau_per_layer(tiny_config, cycle_dataset):
    model = CalibratedRecommender(tiny_config, cycle_dataset.item_count)

    report = kendall_tau_analysis(model, cycle_dataset.splits.test, batch_size=5)

    assert len(report.kendall) == 2
    assert all(-1.0 <= tau <= 1.0 for tau in report.kendall)
    assert report.count == min(report.extra["rows_per_layer"])
    assert sum(report.extra["rows_per_layer"]) + report.extra["skipped_rows"] == 2 * len(cycle_dataset.splits.test)


def test_slices_are_half_open():
    frame = pd.DataFrame({"rank": [1, 2, 3, 4, 5, 6], "key": [0, 3, 5, 9, 10, 100]})

    slices = slice_ranks(frame, [0, 5, 10, float("inf")], ks=[1])

    assert list(slices) == ["[0, 5)", "[5, 10)", "[10, inf)"]
    assert [metrics.count for metrics in slices.values()] == [2, 2, 2]
    assert slices["[0, 5)"].recall[1] == 0.5


def test_empty_and_outside_buckets():
    frame = pd.DataFrame({"rank": [1, 2], "key": [0, 3]})

    slices = slice_ranks(frame, [1, 5, 10], ks=[1])

    assert slices["[1, 5)"].count == 1
    assert slices["[5, 10)"].count == 0


@pytest.mark.parametrize("edges", [[5], [0, 5, 5], [10, 0]])
def test_edges_must_ascend(edges):
    with pytest.raises(ValueError):
        slice_ranks(pd.DataFrame({"rank": [1], "key": [0]}), edges, ks=[1])


def test_training_statistics(cycle_dataset):
    lengths = training_lengths(cycle_dataset)
    popularity = training_popularity(cycle_dataset)

    assert set(lengths.values()) == {6}
    assert sum(popularity.values()) == 6 * len(cycle_dataset.splits.valid)


@pytest.mark.parametrize("mode", ["length", "popularity"])
def test_slices_recompose_the_overall_metrics(tiny_config, cycle_dataset, mode):
    model = CalibratedRecommender(tiny_config, cycle_dataset.item_count)

    report = sliced_metrics(model, cycle_dataset, mode, [0, 5, 10, 20, float("inf")], ks=[1, 5])
    single = sliced_metrics(model, cycle_dataset, mode, [0, float("inf")], ks=[1, 5])

    assert report.extra["outside_buckets"] == 0
    assert sum(metrics.count for metrics in report.slices.values()) == report.count
    for k in (1, 5):
        weighted = sum(m.recall[k] * m.count for m in report.slices.values()) / report.count
        assert weighted == pytest.approx(report.recall[k])
        assert single.slices["[0, inf)"].ndcg[k] == pytest.approx(report.ndcg[k])
