import numpy as np
import pytest

from softact import (FormatError, ModelConfig, ProtocolConfig, SoftLabel,
                     adam_step, forward, forward_batch, init_params,
                     load_checkpoint, loss_and_gradients,
                     loss_and_gradients_batch, one_hot, predict_topk,
                     save_checkpoint, topk_ids, weight_shapes)


def tiny_config(**kw) -> ModelConfig:
    kw.setdefault("modalities", (("rgb", 3), ("flow", 2)))
    kw.setdefault("num_classes", 3)
    kw.setdefault("hidden_size", 4)
    return ModelConfig(**kw)


def random_features(config: ModelConfig, batch: int, steps: int,
                    seed: int = 0):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(batch, steps, d)) for d in config.feature_dims]


# --------------------------------------------------------------- protocol


def test_protocol_anticipation_times():
    p = ProtocolConfig()
    assert p.total_steps == 14
    assert p.anticipation_times() == (2.0, 1.75, 1.5, 1.25, 1.0, 0.75, 0.5,
                                      0.25)
    assert p.step_for_time(1.0) == 4
    assert p.step_for_time(0.25) == 7
    assert p.step_for_time(2.0) == 0
    # nearest step wins for off-grid times
    assert p.step_for_time(0.9) == 4


def test_protocol_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(encode_steps=0)
    with pytest.raises(ValueError):
        ProtocolConfig(decode_steps=0)
    with pytest.raises(ValueError):
        ProtocolConfig(snippet_stride=0.0)
    three = ProtocolConfig(decode_steps=1, snippet_stride=0.5)
    assert three.anticipation_times() == (0.5,)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(modalities=(), num_classes=3)
    with pytest.raises(ValueError):
        ModelConfig(modalities=(("rgb", 0),), num_classes=3)
    with pytest.raises(ValueError):
        tiny_config(num_classes=0)
    with pytest.raises(ValueError):
        tiny_config(hidden_size=0)
    assert tiny_config().feature_dims == (3, 2)


# ------------------------------------------------------------------- init


def test_init_params_shapes_and_bias():
    cfg = tiny_config()
    params = init_params(cfg)
    assert [w.shape for w in params.weights] == weight_shapes(cfg)
    assert [w.shape for w in params.weights] == [
        (7, 16), (16,), (6, 16), (16,), (8, 3), (3,)]
    H = cfg.hidden_size
    for m in range(2):
        bias = params.lstm_bias(m)
        np.testing.assert_array_equal(bias[H:2 * H], 1.0)  # forget gates
        np.testing.assert_array_equal(bias[:H], 0.0)
        np.testing.assert_array_equal(bias[2 * H:], 0.0)
    np.testing.assert_array_equal(params.fusion_bias, 0.0)
    bound = 1.0 / np.sqrt(7)
    assert np.all(np.abs(params.lstm_weight(0)) <= bound)


def test_init_params_deterministic():
    a = init_params(tiny_config(seed=5))
    b = init_params(tiny_config(seed=5))
    c = init_params(tiny_config(seed=6))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc)
               for wa, wc in zip(a.weights, c.weights))


# ---------------------------------------------------------------- forward


def test_forward_zero_weights_uniform():
    cfg = tiny_config()
    params = init_params(cfg)
    for w in params.weights:
        w[...] = 0.0
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=4, steps=5)
    logits, probs = forward_batch(params, feats, protocol)
    assert probs.shape == (4, 3, 3)
    np.testing.assert_array_equal(logits, 0.0)
    np.testing.assert_allclose(probs, 1 / 3, rtol=0, atol=1e-15)


def test_forward_single_sample_matches_batch():
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=4, steps=5, seed=2)
    logits, probs = forward_batch(params, feats, protocol)
    for i in range(4):
        single = forward(params, [x[i] for x in feats], protocol)
        np.testing.assert_allclose(single.logits, logits[i], rtol=0,
                                   atol=1e-12)
        np.testing.assert_allclose(single.probs, probs[i], rtol=0, atol=1e-12)


def test_forward_shape_errors():
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    good = random_features(cfg, batch=2, steps=5)
    with pytest.raises(ValueError):
        forward_batch(params, good[:1], protocol)  # missing modality
    with pytest.raises(ValueError):
        forward_batch(params, [good[0], good[0]], protocol)  # wrong dim
    with pytest.raises(ValueError):
        forward_batch(params, random_features(cfg, batch=2, steps=4),
                      protocol)  # wrong step count


def test_forward_modality_symmetry():
    # swapping both the modality declarations and the feature arrays
    # (with matching per-branch weights) leaves the output unchanged
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=3, steps=5, seed=4)
    _, probs = forward_batch(params, feats, protocol)

    swapped_cfg = ModelConfig(modalities=(("flow", 2), ("rgb", 3)),
                              num_classes=3, hidden_size=4)
    swapped = init_params(swapped_cfg)
    H = 4
    swapped.weights[0] = params.weights[2].copy()
    swapped.weights[1] = params.weights[3].copy()
    swapped.weights[2] = params.weights[0].copy()
    swapped.weights[3] = params.weights[1].copy()
    fusion = params.fusion_weight
    swapped.weights[4] = np.concatenate([fusion[H:], fusion[:H]], axis=0)
    swapped.weights[5] = params.fusion_bias.copy()
    _, probs_swapped = forward_batch(swapped, [feats[1], feats[0]], protocol)
    np.testing.assert_allclose(probs_swapped, probs, rtol=0, atol=1e-12)


def test_forward_nonfinite_features_raise():
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=2, steps=5)
    feats[0][0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        forward_batch(params, feats, protocol)


# ------------------------------------------------------------------- loss


def test_loss_uniform_probs_is_log_k():
    cfg = tiny_config(num_classes=4)
    params = init_params(cfg)
    for w in params.weights:
        w[...] = 0.0
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=5, steps=5)
    targets = np.tile(np.eye(4)[0], (5, 1))
    loss, _ = loss_and_gradients_batch(params, feats, targets, protocol)
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_loss_zero_gradient_fixed_point():
    # zero weights + uniform targets: probs equal the targets everywhere,
    # so every gradient is exactly zero
    cfg = tiny_config(num_classes=4)
    params = init_params(cfg)
    for w in params.weights:
        w[...] = 0.0
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=3, steps=5)
    targets = np.full((3, 4), 0.25)
    _, grads = loss_and_gradients_batch(params, feats, targets, protocol)
    for g in grads:
        np.testing.assert_array_equal(g, 0.0)


def test_loss_target_shape_error():
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=2, steps=5)
    with pytest.raises(ValueError):
        loss_and_gradients_batch(params, feats, np.full((2, 4), 0.25),
                                 protocol)


def numerical_gradients(params, feats, targets, protocol, h=1e-5):
    grads = []
    for w in params.weights:
        g = np.zeros_like(w)
        flat = w.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = loss_and_gradients_batch(params, feats, targets, protocol)
            flat[j] = orig - h
            lm, _ = loss_and_gradients_batch(params, feats, targets, protocol)
            flat[j] = orig
            gflat[j] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def test_gradients_match_finite_differences_single():
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    rng = np.random.default_rng(8)
    feats = [rng.normal(size=(1, 5, d)) for d in cfg.feature_dims]
    target = SoftLabel(np.array([0.6, 0.3, 0.1]))
    loss, grads = loss_and_gradients(params, [x[0] for x in feats], target,
                                     protocol)
    assert np.isfinite(loss)
    numeric = numerical_gradients(params, feats, target.values[None, :],
                                  protocol)
    assert max_rel_error(grads, numeric) <= 1e-4


def test_gradients_match_finite_differences_batch():
    cfg = tiny_config()
    params = init_params(ModelConfig(modalities=cfg.modalities, num_classes=3,
                                     hidden_size=4, seed=3))
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    rng = np.random.default_rng(9)
    feats = [rng.normal(size=(4, 5, d)) for d in cfg.feature_dims]
    targets = np.abs(rng.normal(size=(4, 3)))
    targets /= targets.sum(axis=1, keepdims=True)
    _, grads = loss_and_gradients_batch(params, feats, targets, protocol)
    numeric = numerical_gradients(params, feats, targets, protocol)
    assert max_rel_error(grads, numeric) <= 1e-4


# ------------------------------------------------------------------- adam


def test_adam_first_step_is_signed_learning_rate():
    cfg = tiny_config(learning_rate=0.01)
    params = init_params(cfg)
    before = [w.copy() for w in params.weights]
    rng = np.random.default_rng(1)
    grads = [rng.normal(size=w.shape) for w in params.weights]
    adam_step(params, grads)
    assert params.adam_step == 1
    for w, w0, g in zip(params.weights, before, grads):
        # first bias-corrected step is -lr * g / (|g| + eps) ~= -lr * sign(g)
        np.testing.assert_allclose(w - w0, -0.01 * np.sign(g), rtol=1e-5,
                                   atol=1e-9)


def test_adam_zero_gradient_keeps_weights():
    params = init_params(tiny_config())
    before = [w.copy() for w in params.weights]
    adam_step(params, [np.zeros_like(w) for w in params.weights])
    for w, w0 in zip(params.weights, before):
        np.testing.assert_array_equal(w, w0)


def test_adam_two_steps_match_reference():
    # independent replay of the update rule on a 1-element parameter
    cfg = ModelConfig(modalities=(("x", 1),), num_classes=1, hidden_size=1,
                      learning_rate=0.1)
    params = init_params(cfg)
    w_index = 3  # fusion bias: starts at exactly 0
    g1 = np.array([0.3])
    g2 = np.array([-0.2])
    adam_step(params, [np.zeros_like(w) if i != w_index else g1
                       for i, w in enumerate(params.weights)])
    adam_step(params, [np.zeros_like(w) if i != w_index else g2
                       for i, w in enumerate(params.weights)])

    w = 0.0
    m = v = 0.0
    for t, g in ((1, 0.3), (2, -0.2)):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        w -= 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
    assert params.weights[w_index][0] == pytest.approx(w, rel=1e-12)


def test_adam_gradient_list_length_error():
    params = init_params(tiny_config())
    with pytest.raises(ValueError):
        adam_step(params, [np.zeros_like(params.weights[0])])


# ------------------------------------------------------------------ top-k


def test_topk_ids():
    assert topk_ids(np.array([0.1, 0.5, 0.2, 0.2]), 2) == [1, 2]
    assert topk_ids(np.array([0.25, 0.25, 0.25, 0.25]), 3) == [0, 1, 2]
    assert topk_ids(np.array([0.2, 0.8]), 1) == [1]
    with pytest.raises(ValueError):
        topk_ids(np.array([0.5, 0.5]), 3)


def test_predict_topk():
    cfg = tiny_config()
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = [x[0] for x in random_features(cfg, batch=1, steps=5)]
    preds = forward(params, feats, protocol)
    ids = predict_topk(preds, 0, 2)
    assert len(ids) == 2 and len(set(ids)) == 2
    assert ids == topk_ids(preds.probs[0], 2)
    with pytest.raises(IndexError):
        predict_topk(preds, 3, 1)


# ------------------------------------------------------------ checkpoints


def test_checkpoint_roundtrip(tmp_path):
    cfg = tiny_config(seed=11)
    params = init_params(cfg)
    protocol = ProtocolConfig(encode_steps=2, decode_steps=3)
    feats = random_features(cfg, batch=2, steps=5)
    targets = np.full((2, 3), 1 / 3)
    _, grads = loss_and_gradients_batch(params, feats, targets, protocol)
    adam_step(params, [g + 0.01 for g in grads])

    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.config == cfg
    assert loaded.adam_step == params.adam_step
    for a, b in zip(loaded.weights, params.weights):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(loaded.adam_m, params.adam_m):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(loaded.adam_v, params.adam_v):
        np.testing.assert_array_equal(a, b)
    # byte-identical re-serialization
    save_checkpoint(loaded, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_format_errors(tmp_path):
    params = init_params(tiny_config())
    path = tmp_path / "model.bin"
    save_checkpoint(params, path)
    data = path.read_bytes()

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(bad)
    bad.write_bytes(data[:4] + b"\x02\x00\x00\x00" + data[8:])
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(bad)
    bad.write_bytes(data[:len(data) // 2])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(bad)
    bad.write_bytes(data + b"\x00" * 8)
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(bad)


def test_params_copy_is_deep():
    params = init_params(tiny_config())
    clone = params.copy()
    clone.weights[0][0, 0] += 1.0
    clone.adam_step = 9
    assert params.weights[0][0, 0] != clone.weights[0][0, 0]
    assert params.adam_step == 0
