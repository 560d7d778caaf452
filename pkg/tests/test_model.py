import itertools
import math

import pytest
import torch

from calibrec.exceptions.exceptions import (
    BranchUnavailableError,
    InvalidConfigError,
    ItemIdOutOfRangeError,
    UnknownConfigKeysError,
)
from calibrec.model.attention import attention_mask
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender, ModelOutput


def get_model(config, item_count=9):
    model = CalibratedRecommender(config, item_count)
    model.eval()
    return model


def assert_rows_sum_to_one(weights, valid):
    mask = attention_mask(valid).expand_as(weights)
    sums = (weights * mask).sum(dim=-1)
    has_keys = mask.any(dim=-1)
    torch.testing.assert_close(sums[has_keys], torch.ones_like(sums[has_keys]), atol=1e-6, rtol=0)


def test_output_shapes(tiny_config):
    model = get_model(tiny_config)
    ids = torch.tensor([[0, 0, 3, 1, 2], [4, 5, 6, 7, 8]])

    output = model(ids, collect_trace=True)

    assert output.hidden.shape == (2, 5, 8)
    assert output.last.shape == (2, 8)
    assert model.item_logits(output.last).shape == (2, 9)
    assert len(output.traces) == 2
    torch.testing.assert_close(model.predict_scores(output).sum(dim=-1), torch.ones(2))


def test_attention_and_spatial_rows_are_stochastic_on_random_configurations():
    generator = torch.Generator().manual_seed(0)

    for _ in range(50):
        heads = int(torch.randint(1, 3, (1,), generator=generator))
        n = int(torch.randint(1, 6, (1,), generator=generator))
        config = ModelConfig(d=4 * heads, n=n, layers=2, heads=heads, inner=8, dropout=0.0)
        model = get_model(config)

        lengths = torch.randint(1, n + 1, (3,), generator=generator)
        ids = torch.randint(1, 10, (3, n), generator=generator)
        ids[torch.arange(n)[None, :] < (n - lengths)[:, None]] = 0
        valid = ids != 0

        for trace in model(ids, collect_trace=True).traces:
            assert_rows_sum_to_one(trace.attention, valid)
            assert_rows_sum_to_one(trace.spatial, valid)
            on_mask = attention_mask(valid).expand_as(trace.mask)
            assert ((trace.mask[on_mask] > 0) & (trace.mask[on_mask] < 1)).all()
            assert ((trace.gate > 0) & (trace.gate < 1)).all()


@pytest.mark.parametrize("branch", ["clean", "calibrated", "perturbed"])
@pytest.mark.parametrize("position_mode", ["none", "absolute"])
def test_future_items_do_not_leak(tiny_config, position_mode, branch):
    tiny_config.position_mode = position_mode
    model = get_model(tiny_config)

    first = model(torch.tensor([[1, 2, 3, 4, 5]]), branch=branch).hidden
    second = model(torch.tensor([[1, 2, 3, 4, 9]]), branch=branch).hidden

    assert torch.equal(first[:, :4], second[:, :4])
    assert not torch.equal(first[:, 4], second[:, 4])


@pytest.mark.parametrize("position_mode", ["none", "absolute"])
def test_padding_is_inert(tiny_config, position_mode):
    tiny_config.position_mode = position_mode
    model = get_model(tiny_config)

    padded = model(torch.tensor([[0, 0, 3, 1, 2]]))
    unpadded = model(torch.tensor([[3, 1, 2]]))

    torch.testing.assert_close(padded.hidden[:, 2:], unpadded.hidden, atol=1e-6, rtol=1e-5)
    assert (padded.hidden[:, :2] == 0).all()


def test_lite_inference_skips_calibrators(tiny_config):
    tiny_config.lite_inference = True
    model = get_model(tiny_config)
    full = CalibratedRecommender(ModelConfig(**{**tiny_config.to_dict(), "lite_inference": False}), 9)
    ids = torch.tensor([[0, 1, 2, 3, 4]])

    output = model(ids, collect_trace=True)

    assert model.calibrator_calls() == 0
    assert torch.equal(output.traces[0].final, output.traces[0].attention)
    assert sum(p.numel() for p in model.parameters()) == sum(p.numel() for p in full.parameters())

    model.train()
    model(ids)
    assert model.calibrator_calls() > 0


def test_clean_branch_ignores_the_adversarial_calibrator(tiny_config):
    model = get_model(tiny_config)
    ids = torch.tensor([[0, 1, 2, 3, 4]])

    clean = model(ids, branch="clean", collect_trace=True)

    for trace in clean.traces:
        assert torch.equal(trace.final, trace.spatial)
        assert trace.mask is None


def test_disabled_calibrators_leave_plain_attention(tiny_config):
    config = ModelConfig(**{**tiny_config.to_dict(), "spatial_enabled": False, "adversarial_enabled": False})
    model = get_model(config)

    output = model(torch.tensor([[0, 1, 2, 3, 4]]), collect_trace=True)

    for trace in output.traces:
        assert torch.equal(trace.final, trace.attention)
    assert model.perturbation_parameter_names() == []


def test_perturbed_branch_needs_the_adversarial_calibrator(tiny_config):
    tiny_config.adversarial_enabled = False
    model = get_model(tiny_config)

    with pytest.raises(BranchUnavailableError):
        model(torch.tensor([[1, 2, 3, 4, 5]]), branch="perturbed")


def test_item_ids_are_range_checked(tiny_config):
    model = get_model(tiny_config, item_count=4)

    with pytest.raises(ItemIdOutOfRangeError):
        model(torch.tensor([[1, 2, 5]]))


def test_parameter_groups_partition_the_model(tiny_config):
    model = get_model(tiny_config)

    perturbation = {name for name, _ in model.perturbation_parameters()}
    backbone = {name for name, _ in model.backbone_parameters()}

    assert perturbation == {
        f"blocks.{layer}.adversarial.{name}"
        for layer in range(2)
        for name in ("query_projection", "key_projection")
    }
    assert perturbation.isdisjoint(backbone)
    assert perturbation | backbone == {name for name, _ in model.named_parameters()}


def test_position_table_only_in_absolute_mode(tiny_config):
    assert get_model(tiny_config).position_embedding is None

    tiny_config.position_mode = "absolute"
    assert get_model(tiny_config).position_embedding.weight.shape == (5, 8)


def test_shared_heads_and_layer_subsets(tiny_config):
    tiny_config.share_calibrator_heads = True
    tiny_config.calibrated_layers = [1]
    model = get_model(tiny_config)

    assert model.blocks[0].spatial is None and model.blocks[0].adversarial is None
    assert model.blocks[1].adversarial.query_projection.shape == (1, 4, 4)
    assert model(torch.tensor([[1, 2, 3]])).hidden.shape == (1, 3, 8)


def test_padding_row_starts_at_zero(tiny_config):
    model = get_model(tiny_config)

    assert (model.item_embedding.weight[0] == 0).all()


def test_every_ablation_builds_and_runs(tiny_config):
    ids = torch.tensor([[0, 1, 2, 3, 4]])

    for order, distance, adversarial in itertools.product([True, False], repeat=3):
        config = ModelConfig(
            **{
                **tiny_config.to_dict(),
                "order_enabled": order,
                "distance_enabled": distance,
                "spatial_enabled": order or distance,
                "adversarial_enabled": adversarial,
            }
        )
        model = get_model(config)
        scores = model.predict_scores(model(ids))
        assert torch.isfinite(scores).all()


def test_config_lists_every_violation():
    with pytest.raises(InvalidConfigError) as error:
        ModelConfig(d=5, heads=2, dropout=1.5, fusion_mode="product").validate()

    assert set(error.value.keys) == {"heads", "dropout", "fusion_mode"}


def test_config_rejects_unknown_keys():
    with pytest.raises(UnknownConfigKeysError) as error:
        ModelConfig.from_dict({"d": 8, "depth": 3, "width": 2})

    assert error.value.keys == ["depth", "width"]


def test_config_round_trips_through_dict(tiny_config):
    assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config


def set_linear(layer, weight, bias=None):
    layer.weight.copy_(torch.tensor(weight))
    if bias is not None:
        layer.bias.copy_(torch.tensor(bias))


def test_single_block_forward_by_hand():
    config = ModelConfig(
        d=2, n=2, layers=1, heads=1, inner=2, dropout=0.0,
        spatial_enabled=False, adversarial_enabled=False, layer_norm=False,
    )
    model = get_model(config, item_count=2)
    block = model.blocks[0]
    identity = [[1.0, 0.0], [0.0, 1.0]]
    with torch.no_grad():
        model.item_embedding.weight.copy_(torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        for layer in (block.query, block.key, block.value):
            set_linear(layer, identity)
        set_linear(block.feed_forward.expand, identity, [-1.0, -1.0])
        set_linear(block.feed_forward.contract, identity, [0.0, 0.0])

    output = model(torch.tensor([[1, 2]]), collect_trace=True)

    # Position 0 sees only item 1: h = [1, 0], residual gives [2, 0], ReLU([1, -1]) adds [1, 0].
    # Position 1 scores keys [1, 0] and [0, 1] at 0 and 1/sqrt(2).
    second = 1.0 / (1.0 + math.exp(-1.0 / math.sqrt(2.0)))
    first = 1.0 - second
    mixed = [first, 1.0 + second]
    expected = [[3.0, 0.0], [mixed[0], mixed[1] + max(mixed[1] - 1.0, 0.0)]]

    torch.testing.assert_close(output.traces[0].attention[0, 0, 1], torch.tensor([first, second]))
    torch.testing.assert_close(output.hidden[0], torch.tensor(expected))


def test_scores_pick_the_matching_item():
    config = ModelConfig(d=3, n=2, layers=1, heads=1, inner=3, dropout=0.0)
    model = get_model(config, item_count=3)
    with torch.no_grad():
        model.item_embedding.weight.copy_(torch.cat([torch.zeros(1, 3), torch.eye(3)]))
    last = torch.tensor([[[0.0, 1.0, 0.0]]])

    scores = model.predict_scores(ModelOutput(hidden=last, traces=[], valid_mask=torch.ones(1, 1, dtype=torch.bool)))

    assert int(scores.argmax(dim=-1)) + 1 == 2
    torch.testing.assert_close(scores.sum(dim=-1), torch.ones(1))
