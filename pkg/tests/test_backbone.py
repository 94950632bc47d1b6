import numpy as np
import pytest

from slmprop.backbone import (
    BackboneConfig,
    decode,
    encode_image,
    encode_memory,
    encode_prompt,
    init_backbone_params,
    load_checkpoint,
    save_checkpoint,
)
from slmprop.errors import ShapeMismatch
from slmprop.nn import GradTape, ParamStore, Tensor, sum_all


def make_store(cfg, seed=0):
    store = ParamStore()
    init_backbone_params(store, cfg, np.random.default_rng(seed))
    return store


CFG = BackboneConfig(input_res=(64, 64), feat_channels=64, decoder_hidden=16)


def test_encode_image_shape():
    store = make_store(CFG)
    f = encode_image(np.zeros((64, 64)), store, CFG)
    assert f.data.shape == (1, 64, 16, 16)


def test_encode_image_zero_input_zero_features():
    # biases and LN shifts are zero at init, so a zero slice stays zero
    store = make_store(CFG)
    f = encode_image(np.zeros((64, 64)), store, CFG)
    np.testing.assert_allclose(f.data, 0.0, atol=1e-12)


def test_encode_image_deterministic():
    store = make_store(CFG)
    rng = np.random.default_rng(1)
    s = rng.uniform(0, 255, size=(64, 64))
    np.testing.assert_array_equal(encode_image(s, store, CFG).data, encode_image(s, store, CFG).data)


def test_encode_image_wrong_shape():
    store = make_store(CFG)
    with pytest.raises(ShapeMismatch):
        encode_image(np.zeros((32, 64)), store, CFG)


def test_encode_prompt_shape_and_null():
    store = make_store(CFG)
    rng = np.random.default_rng(2)
    mask = (rng.random((64, 64)) < 0.3).astype(float)
    f = encode_prompt(mask, store, CFG)
    assert f.data.shape == (1, 64, 16, 16)
    null = encode_prompt(np.zeros((64, 64)), store, CFG)
    assert null is store["prm.null"]


def test_encode_memory_identity_configuration():
    store = make_store(CFG)
    # zero the final downsample stage and make the light conv an identity tap
    store["mem.down.c2.w"].data[:] = 0
    store["mem.down.c2.b"].data[:] = 0
    store["mem.light.w"].data[:] = 0
    for c in range(CFG.feat_channels):
        store["mem.light.w"].data[c, c, 1, 1] = 1.0
    store["mem.light.b"].data[:] = 0
    rng = np.random.default_rng(3)
    f_i = Tensor(rng.normal(size=(1, 64, 16, 16)))
    mask = rng.random((64, 64))
    f_m = encode_memory(f_i, mask, store, CFG)
    np.testing.assert_allclose(f_m.data, f_i.data, atol=1e-12)


def test_encode_memory_deterministic_and_shape():
    store = make_store(CFG)
    rng = np.random.default_rng(4)
    f_i = Tensor(rng.normal(size=(1, 64, 16, 16)))
    mask = rng.random((64, 64))
    a = encode_memory(f_i, mask, store, CFG)
    b = encode_memory(f_i, mask, store, CFG)
    assert a.data.shape == f_i.data.shape
    np.testing.assert_array_equal(a.data, b.data)


def test_encode_memory_gradient_reaches_both_inputs():
    store = make_store(CFG)
    rng = np.random.default_rng(5)
    f_i = Tensor(rng.normal(size=(1, 64, 16, 16)), needs_grad=True)
    mask = Tensor(rng.random((64, 64)), needs_grad=True)
    with GradTape() as tape:
        out = sum_all(encode_memory(f_i, mask, store, CFG))
    tape.backward(out)
    assert f_i.grad is not None and np.abs(f_i.grad).max() > 0
    assert mask.grad is not None and np.abs(mask.grad).max() > 0


def test_decode_contract():
    store = make_store(CFG)
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(1, 64, 16, 16)))
    out = decode(a, None, False, store, CFG)
    assert out.mask_logits.data.shape == (1, 1, 64, 64)
    assert 0.0 <= out.iou_pred.data.item() <= 1.0
    again = decode(a, None, False, store, CFG)
    np.testing.assert_array_equal(out.mask_logits.data, again.mask_logits.data)


def test_decode_conditional_uses_prompt():
    store = make_store(CFG)
    rng = np.random.default_rng(7)
    a = Tensor(rng.normal(size=(1, 64, 16, 16)))
    f_p = Tensor(rng.normal(size=(1, 64, 16, 16)))
    cond = decode(a, f_p, True, store, CFG)
    uncond = decode(a, f_p, False, store, CFG)
    assert np.abs(cond.mask_logits.data - uncond.mask_logits.data).max() > 0


def test_checkpoint_round_trip(tmp_path):
    store = make_store(CFG, seed=8)
    p = tmp_path / "model.sckp"
    save_checkpoint(store, {"config": CFG.to_dict()}, p)
    loaded, manifest = load_checkpoint(p)
    assert manifest["config"] == CFG.to_dict()
    assert sorted(loaded.names()) == sorted(store.names())
    for name in store.names():
        np.testing.assert_array_equal(
            loaded[name].data, store[name].data.astype("<f4").astype(np.float64)
        )
    # re-saving the loaded store reproduces the file bit-exactly
    q = tmp_path / "model2.sckp"
    save_checkpoint(loaded, {"config": CFG.to_dict()}, q)
    assert p.read_bytes() == q.read_bytes()
