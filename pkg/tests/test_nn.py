import numpy as np
import pytest

from slnscreen import nn
from slnscreen.corpus import DiagnosticCategory
from slnscreen.errors import ModelConfigError, ShapeError
from slnscreen.nn import LayerSpec, ModelConfig


@pytest.fixture(scope="module")
def default_model():
    return nn.build_model()


def test_default_stack_has_14_layers(default_model):
    assert len(ModelConfig().layers) == 14
    assert len(default_model) == 14


def test_default_shape_chain(default_model):
    chain = default_model.shapes
    kept = [chain[0]] + [chain[i + 1] for i, l in enumerate(ModelConfig().layers) if l.kind in ("maxpool", "flatten", "dense")]
    assert kept == [(100, 100, 3), (50, 50, 16), (25, 25, 32), (12, 12, 64), (6, 6, 128), (4608,), (256,), (4,)]


def test_dense_without_flatten_rejected():
    layers = [LayerSpec.conv(4), LayerSpec.dense(4), LayerSpec("softmax")]
    with pytest.raises(ModelConfigError, match="layer 1 \\(dense\\)"):
        ModelConfig(input_shape=(8, 8, 3), layers=layers).shape_chain()


def test_final_layer_must_emit_k():
    layers = [LayerSpec("flatten"), LayerSpec.dense(3), LayerSpec("softmax")]
    with pytest.raises(ModelConfigError, match="expected \\(4,\\)"):
        ModelConfig(input_shape=(2, 2, 1), layers=layers).shape_chain()


def test_layer_spec_parameters_present_iff_required():
    with pytest.raises(ModelConfigError):
        LayerSpec("dense")
    with pytest.raises(ModelConfigError):
        LayerSpec("relu", units=3)
    with pytest.raises(ModelConfigError):
        LayerSpec.dropout(1.0)
    with pytest.raises(ModelConfigError):
        LayerSpec("pool")


def test_config_json_round_trip():
    cfg = nn.reduced_config(seed=9)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_init_is_deterministic_he_uniform():
    a, b = nn.build_model(nn.reduced_config(3)), nn.build_model(nn.reduced_config(3))
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p, q)
        if n.endswith("bias"):
            assert np.all(p == 0)
    k = a.layers[0].params["kernels"]
    assert np.abs(k).max() <= np.sqrt(6 / 27)
    c = nn.build_model(nn.reduced_config(4))
    assert not np.array_equal(a.parameters()[0], c.parameters()[0])


def test_forward_shape_and_normalisation(default_model):
    batch = np.random.default_rng(0).random((3, 100, 100, 3), dtype=np.float32)
    probs = default_model.forward(batch)
    assert probs.shape == (3, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)


def test_forward_infer_is_deterministic(default_model):
    batch = np.random.default_rng(1).random((2, 100, 100, 3), dtype=np.float32)
    np.testing.assert_array_equal(default_model.forward(batch), default_model.forward(batch))


def test_untrained_model_is_near_uniform(default_model):
    rng = np.random.default_rng(2)
    probs = np.concatenate([default_model.forward(rng.random((64, 100, 100, 3), dtype=np.float32))
                            for _ in range(4)])
    mean = probs.mean(axis=0)
    assert np.all(np.abs(mean - 0.25) <= 0.15), mean


def test_forward_rejects_bad_shape(default_model):
    with pytest.raises(ShapeError):
        default_model.forward(np.zeros((1, 99, 100, 3)))


def test_dropout_only_in_train_mode():
    model = nn.build_model(nn.reduced_config(0, dropout=0.5))
    x = np.random.default_rng(0).random((4, 12, 12, 3))
    infer = model.forward(x, "infer")
    train = model.forward(x, "train", np.random.default_rng(0))
    assert not np.allclose(infer, train)
    with pytest.raises(ValueError):
        model.forward(x, "train")


@pytest.mark.parametrize("seed", range(20))
def test_whole_model_grad_check(seed):
    assert nn.model_grad_check(nn.reduced_config(), seed) < 1e-4


def test_backward_duplicated_sample_equals_single():
    model = nn.build_model(nn.reduced_config(1), np.float64)
    x = np.random.default_rng(0).random((1, 12, 12, 3))
    g1, l1 = model.backward(x, [2], "infer")
    g2, l2 = model.backward(np.concatenate([x, x]), [2, 2], "infer")
    assert l1 == pytest.approx(l2)
    for name in g1:
        np.testing.assert_allclose(g1[name], g2[name], rtol=1e-12, atol=1e-15)


def test_backward_rejects_bad_targets():
    model = nn.build_model(nn.reduced_config())
    with pytest.raises(ValueError):
        model.backward(np.zeros((1, 12, 12, 3)), [4], "infer")


def test_zero_lr_update_is_identity():
    model = nn.build_model(nn.reduced_config())
    before = [p.copy() for p in model.parameters()]
    grads, _ = model.backward(np.random.default_rng(0).random((2, 12, 12, 3)), [0, 3], "infer")
    for opt in (nn.SGD(0.0), nn.Adam(0.0)):
        nn.apply_update(model, grads, opt)
    for a, b in zip(before, model.parameters()):
        assert a.tobytes() == b.tobytes()


def test_sgd_lr1_subtracts_gradient():
    model = nn.build_model(nn.reduced_config())
    before = [p.copy() for p in model.parameters()]
    grads = {n: np.full_like(p, 0.25) for n, p in model.named_parameters()}
    nn.apply_update(model, grads, nn.SGD(1.0))
    for a, b in zip(before, model.parameters()):
        np.testing.assert_array_equal(b, a - 0.25)


def test_adam_first_step_moves_by_lr_sign_g():
    model = nn.build_model(nn.reduced_config(), np.float64)
    rng = np.random.default_rng(0)
    before = [p.copy() for p in model.parameters()]
    grads = {n: rng.choice([-1.0, 1.0], p.shape) * rng.uniform(0.1, 2, p.shape) for n, p in model.named_parameters()}
    opt = nn.Adam(1e-3)
    nn.apply_update(model, grads, opt)
    assert opt.step_count == 1
    for (name, p), b in zip(model.named_parameters(), before):
        np.testing.assert_allclose(b - p, 1e-3 * np.sign(grads[name]), rtol=1e-3)


def test_adam_zero_gradient_keeps_weights():
    model = nn.build_model(nn.reduced_config())
    before = [p.copy() for p in model.parameters()]
    opt = nn.Adam()
    nn.apply_update(model, {n: np.zeros_like(p) for n, p in model.named_parameters()}, opt)
    for a, b in zip(before, model.parameters()):
        np.testing.assert_array_equal(a, b)
    assert all(np.all(m == 0) for m in opt.m) and opt.step_count == 1


def test_apply_update_rejects_shape_mismatch():
    model = nn.build_model(nn.reduced_config())
    grads = {n: np.zeros(p.shape + (1,)) for n, p in model.named_parameters()}
    with pytest.raises(ShapeError):
        nn.apply_update(model, grads, nn.SGD())


@pytest.mark.parametrize("seed", range(20))
def test_small_step_decreases_single_sample_loss(seed):
    model = nn.build_model(nn.reduced_config(seed))
    rng = np.random.default_rng(seed)
    x = rng.random((1, 12, 12, 3), dtype=np.float32)
    y = [int(rng.integers(4))]
    grads, before = model.backward(x, y, "infer")
    nn.apply_update(model, grads, nn.SGD(1e-4))
    _, after = model.backward(x, y, "infer")
    assert after < before


def test_predict_argmax_and_ties():
    assert nn.predict_probs([0.1, 0.2, 0.6, 0.1]) == 2
    assert nn.predict_probs([0.25] * 4) == 0
    model = nn.build_model(ModelConfig(input_shape=(100, 100, 3), seed=5))
    dx = nn.predict(model, np.zeros((100, 100, 3), np.float32))
    assert isinstance(dx, DiagnosticCategory) and dx in range(4)
