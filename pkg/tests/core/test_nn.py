"""Tests for Module bookkeeping and the basic layers."""
import numpy as np
import pytest

from latxgen.core.errors import CheckpointError, ShapeError
from latxgen.core.nn import BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, Linear, Module, Parameter
from latxgen.core.tensor import Tensor


class TwoLayer(Module):
    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv = ConvBnRelu(2, 4, 3, rng)
        self.heads = [Linear(4, 2, rng), Linear(2, 1, rng)]
        self.scale = Parameter(np.ones(1))


@pytest.fixture
def model() -> TwoLayer:
    return TwoLayer(np.random.default_rng(3))


def test_named_parameters_follow_assignment_order(model: TwoLayer) -> None:
    names = [name for name, _ in model.named_parameters()]
    assert names[0] == "scale"
    assert names[1:3] == ["conv.conv.weight", "conv.conv.bias"]
    assert "heads.1.bias" in names
    assert model.num_parameters() == 1 + (4 * 2 * 9 + 4) + (4 + 4) + (4 * 2 + 2) + (2 + 1)


def test_state_dict_includes_buffers(model: TwoLayer) -> None:
    state = model.state_dict("m/")
    assert "m/conv.bn.running_mean" in state
    assert "m/conv.bn.running_var" in state


def test_load_state_dict_copies_values(model: TwoLayer) -> None:
    other = TwoLayer(np.random.default_rng(99))
    other.load_state_dict(model.state_dict())
    for (_, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_load_state_dict_reports_missing_and_misshapen_entries(model: TwoLayer) -> None:
    state = model.state_dict()
    del state["scale"]
    with pytest.raises(CheckpointError, match="missing entry 'scale'"):
        model.load_state_dict(state)
    state = model.state_dict()
    state["scale"] = np.ones(2)
    with pytest.raises(CheckpointError, match="shape"):
        model.load_state_dict(state)


def test_train_eval_propagates_to_children(model: TwoLayer) -> None:
    model.eval()
    assert all(not m.training for m in model.modules())
    model.train()
    assert all(m.training for m in model.modules())


def test_zero_grad_clears_all_parameters(model: TwoLayer) -> None:
    for p in model.parameters():
        p.grad = np.ones(p.shape)
    model.zero_grad()
    assert all(p.grad is None for p in model.parameters())


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def test_conv_layers_output_shapes() -> None:
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    assert Conv2d(3, 5, 3, rng, stride=2, padding=1)(x).shape == (2, 5, 4, 4)
    assert ConvTranspose2d(3, 5, 4, rng, stride=2, padding=1)(x).shape == (2, 5, 16, 16)
    assert ConvBnRelu(3, 5, 3, rng)(x).shape == (2, 5, 8, 8)


def test_conv_zero_makes_output_zero() -> None:
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, 3, rng, padding=1).zero_()
    out = conv(Tensor(rng.normal(size=(1, 2, 4, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((1, 3, 4, 4)))


def test_batchnorm_updates_running_stats_in_training_only() -> None:
    bn = BatchNorm2d(2)
    x = Tensor(np.full((2, 2, 3, 3), 5.0))
    bn(x)
    np.testing.assert_allclose(bn.get_buffer("running_mean"), [0.5, 0.5])
    bn.eval()
    before = bn.get_buffer("running_mean").copy()
    out = bn(x)
    np.testing.assert_array_equal(bn.get_buffer("running_mean"), before)
    expected = (5.0 - 0.5) / np.sqrt(bn.get_buffer("running_var")[0] + bn.eps)
    np.testing.assert_allclose(out.data, np.full((2, 2, 3, 3), expected))


def test_batchnorm_rejects_wrong_channel_count() -> None:
    with pytest.raises(ShapeError):
        BatchNorm2d(3)(Tensor(np.zeros((1, 2, 2, 2))))
