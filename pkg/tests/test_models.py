import numpy as np
import pytest

from ppgemo.errors import ConfigError, ShapeError
from ppgemo.models import (
    ConvStage,
    Model,
    ModelConfig,
    build,
    model_config_from_dict,
    model_config_to_dict,
)
from ppgemo.nn import TcnSpec
from ppgemo.training import weighted_cce_grad

# small configuration so model tests stay fast; shapes:
# 240 -> conv s4 -> 60 -> pool -> 30 -> conv s2 -> 15 -> pool -> 7
SMALL = ModelConfig(
    input_len=240,
    conv1=ConvStage(4, 16, 4),
    conv2=ConvStage(6, 8, 2),
    tcn=TcnSpec(filters=3, kernel_size=4, dilations=(1, 2), dropout_rate=0.3),
    lstm_units=5,
)


def test_default_shape_trace(rng):
    model = build(ModelConfig(), rng)
    model.forward(rng.standard_normal((2, 6000, 1)), "train", rng)
    trace = dict(model.shape_trace)
    assert trace["conv1"] == (2, 1500, 8)
    assert trace["pool1"] == (2, 750, 8)
    assert trace["conv2"] == (2, 375, 16)
    assert trace["pool2"] == (2, 187, 16)
    assert trace["tcn"] == (2, 8)
    assert trace["lstm"] == (2, 12)
    assert trace["concat"] == (2, 20)
    assert trace["head"] == (2, 2)


def test_concat_width_and_head_parameter_count(rng):
    model = build(ModelConfig(), rng)
    assert model.head.params["W"].shape == (20, 2)
    assert model.head.params["W"].size + model.head.params["b"].size == 42


def test_cnn_variant_has_no_recurrent_parameters(rng):
    model = build(ModelConfig(variant="cnn"), rng)
    assert all("lstm" not in k and "tcn" not in k for k in model.params())


def test_trunk_shapes_identical_across_variants():
    shapes = {}
    for variant in ("cnn", "cnn_lstm", "cnn_tcn_lstm"):
        model = build(ModelConfig(variant=variant), np.random.default_rng(0))
        shapes[variant] = {
            k: v.shape for k, v in model.params().items() if k.startswith("trunk.")
        }
    assert shapes["cnn"] == shapes["cnn_lstm"] == shapes["cnn_tcn_lstm"]


def test_output_rows_sum_to_one(rng):
    model = build(SMALL, rng)
    probs = model.forward(rng.standard_normal((5, 240, 1)), "train", rng)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_infer_mode_is_deterministic(rng):
    model = build(SMALL, rng)
    model.forward(rng.standard_normal((4, 240, 1)), "train", rng)  # seed bn stats
    x = rng.standard_normal((3, 240, 1))
    np.testing.assert_array_equal(model.forward(x, "infer"), model.forward(x, "infer"))


def test_train_mode_deterministic_given_seed(rng):
    x = rng.standard_normal((3, 240, 1))
    outs = []
    for _ in range(2):
        model = build(SMALL, np.random.default_rng(42))
        outs.append(model.forward(x, "train", np.random.default_rng(7)))
    np.testing.assert_array_equal(outs[0], outs[1])


def test_load_rejects_unknown_manifest_format(rng, tmp_path):
    import json

    from ppgemo.models import model_config_to_dict

    path = tmp_path / "model.json"
    path.write_text(json.dumps({"format": "other/9", "config": model_config_to_dict(SMALL)}))
    with pytest.raises(ConfigError, match="format"):
        Model.load(path)


def test_wrong_input_length_names_stage(rng):
    model = build(SMALL, rng)
    with pytest.raises(ShapeError, match="stage input"):
        model.forward(np.zeros((1, 100, 1)))


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError, match="variant"):
        ModelConfig(variant="transformer")


@pytest.mark.parametrize("variant", ["cnn", "cnn_lstm", "cnn_tcn_lstm"])
def test_every_parameter_receives_gradient(variant):
    # probabilistic smoke test: each parameter tensor must get a nonzero
    # gradient from at least one random batch
    config = ModelConfig(
        input_len=SMALL.input_len,
        conv1=SMALL.conv1,
        conv2=SMALL.conv2,
        tcn=SMALL.tcn,
        lstm_units=SMALL.lstm_units,
        variant=variant,
    )
    pending = None
    for seed in range(3):
        rng = np.random.default_rng(seed)
        model = build(config, rng)
        x = rng.standard_normal((6, 240, 1))
        y = np.array([0, 1] * 3)
        probs = model.forward(x, "train", rng)
        model.backward(weighted_cce_grad(probs, np.eye(2)[y], np.ones(2)))
        grads = model.grads()
        nonzero = {k for k, g in grads.items() if np.any(g != 0.0)}
        pending = set(grads) - nonzero if pending is None else pending - nonzero
        if not pending:
            break
    assert not pending, f"parameters with all-zero gradients: {sorted(pending)}"


def test_save_load_round_trip(rng, tmp_path):
    model = build(SMALL, rng)
    model.forward(rng.standard_normal((4, 240, 1)), "train", rng)  # bn stats
    path = tmp_path / "model.json"
    model.save(path)
    clone = Model.load(path)
    for k, v in model.params().items():
        np.testing.assert_array_equal(clone.params()[k], v)
    x = rng.standard_normal((3, 240, 1))
    np.testing.assert_array_equal(clone.forward(x, "infer"), model.forward(x, "infer"))


def test_model_config_dict_round_trip():
    config = SMALL
    clone = model_config_from_dict(model_config_to_dict(config))
    assert clone == config
