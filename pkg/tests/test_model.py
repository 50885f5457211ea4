import numpy as np
import pytest

from mmdefect import tensor as T
from mmdefect import textbridge as TB
from mmdefect.model import (CheckpointError, ModelConfig, MultimodalClassifier,
                            load_params, save_params)
from mmdefect.optim import grad_check
from mmdefect.tensor import Tensor


@pytest.fixture(scope="module")
def small_model():
    return MultimodalClassifier(ModelConfig(d=16, m=8, heads=4, hidden=8, canvas=32), seed=3)


def test_encode_image_deterministic(small_model):
    img = np.zeros((1, 32, 32))
    a = small_model.encode_image(img).data
    b = small_model.encode_image(img).data
    np.testing.assert_array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_encode_image_shape_contract(small_model):
    out = small_model.encode_image(np.zeros((3, 32, 32)))
    assert out.shape == (3, 8, 16)


def test_encode_image_canvas_mismatch(small_model):
    with pytest.raises(T.ShapeError, match="canvas"):
        small_model.encode_image(np.zeros((1, 64, 64)))


def test_encode_image_sensitive_to_one_dot(small_model):
    base = np.zeros((1, 32, 32))
    perturbed = base.copy()
    perturbed[0, 16, 16] = 1.0
    a = small_model.encode_image(base).data
    b = small_model.encode_image(perturbed).data
    assert not np.allclose(a, b)


def test_encode_text_shapes_and_branch_independence(small_model):
    ids = np.array(TB.tokenize("the recorded mean position is 2.7"))
    out_v = small_model.encode_text(ids, "vlm")
    out_l = small_model.encode_text(ids, "llm")
    assert out_v.shape == (1, 8, 16)
    assert not np.allclose(out_v.data, out_l.data)


def test_encode_text_pad_input_finite(small_model):
    out = small_model.encode_text(np.zeros((2, 32), dtype=int), "llm")
    assert np.all(np.isfinite(out.data))


def test_encode_text_rejects_bad_ids(small_model):
    with pytest.raises(IndexError):
        small_model.encode_text(np.array([99999]), "vlm")
    with pytest.raises(ValueError):
        small_model.encode_text(np.zeros(32, dtype=int), "ocr")


def test_cmaf_identity_when_all_inputs_equal(small_model):
    x = np.random.default_rng(0).normal(size=(2, 8, 16)).astype(np.float32)
    t = Tensor(x)
    fused, gates, _ = small_model.cmaf_forward(t, t, t)
    expected = gates.data.sum(axis=-1, keepdims=True) * x
    np.testing.assert_allclose(fused.data, expected, atol=1e-5)


def test_cmaf_attention_rows_sum_to_one(small_model):
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(rng.normal(size=(2, 8, 16)).astype(np.float32)) for _ in range(3))
    qp = small_model._split_heads(T.matmul(q, small_model.store["cmaf/q_w"]))
    kp = small_model._split_heads(T.matmul(k, small_model.store["cmaf/k_w"]))
    attn = T.softmax_rows(T.mul(T.matmul(qp, T.swap_last(kp)), 1.0 / 2.0))
    np.testing.assert_allclose(attn.data.sum(axis=-1), np.ones((2, 4, 8)), atol=1e-6)


def test_cmaf_gates_strictly_in_unit_interval(small_model):
    rng = np.random.default_rng(2)
    q, k, v = (Tensor(rng.normal(size=(1, 8, 16)).astype(np.float32) * 50) for _ in range(3))
    _, gates, _ = small_model.cmaf_forward(q, k, v)
    assert np.all(gates.data > 0) and np.all(gates.data < 1)


def test_cmaf_shape_mismatch(small_model):
    a = Tensor(np.zeros((1, 8, 16)))
    b = Tensor(np.zeros((1, 4, 16)))
    with pytest.raises(ValueError):
        small_model.cmaf_forward(a, b, a)


def test_cmaf_forced_constant_gates_weighted_sum():
    model = MultimodalClassifier(ModelConfig(d=8, m=8, heads=2, hidden=4, canvas=32), seed=1)
    model.store["cmaf/gate_w"].data[:] = 0.0
    g = np.array([0.2, 0.5, 0.9])
    model.store["cmaf/gate_b"].data[:] = np.log(g / (1 - g)).astype(np.float32)
    rng = np.random.default_rng(3)
    q, k, v = (Tensor(rng.normal(size=(1, 8, 8)).astype(np.float32)) for _ in range(3))
    fused, _, _ = model.cmaf_forward(q, k, v)
    expected = g[0] * q.data + g[1] * k.data + g[2] * v.data
    np.testing.assert_allclose(fused.data, expected, atol=1e-5)


def test_cmaf_hand_built_single_head_oracle():
    # 1 head, d=2: every stage recomputed step by step in plain numpy
    model = MultimodalClassifier(ModelConfig(d=2, m=8, heads=1, hidden=2, classes=2, canvas=32),
                                 seed=7)
    rng = np.random.default_rng(5)
    for name in ("cmaf/q_w", "cmaf/k_w", "cmaf/v_w"):
        model.store[name].data = rng.normal(size=(2, 2)).astype(np.float32)
    model.store["cmaf/gate_w"].data = rng.normal(size=(2, 3)).astype(np.float32)
    model.store["cmaf/gate_b"].data = rng.normal(size=3).astype(np.float32)
    model.store["cls/w1"].data = rng.normal(size=(2, 2)).astype(np.float32)
    model.store["cls/b1"].data = rng.normal(size=2).astype(np.float32)
    model.store["cls/w2"].data = rng.normal(size=(2, 2)).astype(np.float32)
    model.store["cls/b2"].data = rng.normal(size=2).astype(np.float32)
    q = rng.normal(size=(1, 8, 2)).astype(np.float32)
    k = rng.normal(size=(1, 8, 2)).astype(np.float32)
    v = rng.normal(size=(1, 8, 2)).astype(np.float32)
    _, _, logits = model.cmaf_forward(Tensor(q), Tensor(k), Tensor(v))

    def np_softmax(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    qp = q[0] @ model.store["cmaf/q_w"].data
    kp = k[0] @ model.store["cmaf/k_w"].data
    vp = v[0] @ model.store["cmaf/v_w"].data
    attn = np_softmax(qp @ kp.T / np.sqrt(2.0))
    ctx = attn @ vp
    gates = 1.0 / (1.0 + np.exp(-(ctx @ model.store["cmaf/gate_w"].data
                                  + model.store["cmaf/gate_b"].data)))
    fused = gates[:, 0:1] * q[0] + gates[:, 1:2] * k[0] + gates[:, 2:3] * v[0]
    feats = fused.mean(axis=0)
    h = np.maximum(feats @ model.store["cls/w1"].data + model.store["cls/b1"].data, 0)
    ref = h @ model.store["cls/w2"].data + model.store["cls/b2"].data
    np.testing.assert_allclose(logits.data[0], ref, atol=1e-5)


def test_full_model_gradient_check():
    """Encoders + fusion + cross-entropy on a 2-sample batch, f64, tol 1e-4."""
    model = MultimodalClassifier(ModelConfig(d=8, m=8, heads=2, hidden=4, classes=3,
                                             canvas=32, max_len=8, vocab_size=11), seed=9)
    for t in model.store.params.values():
        t.data = t.data.astype(np.float64)
    rng = np.random.default_rng(11)
    images = rng.uniform(size=(2, 32, 32)) * 0.3
    vlm_ids = rng.integers(0, 11, size=(2, 8))
    llm_ids = rng.integers(0, 11, size=(2, 8))
    targets = np.eye(3)[[0, 2]]
    checked = ["cmaf/q_w", "cmaf/gate_w", "cls/w1", "img/conv0_w", "img/proj_w",
               "txt_vlm/emb", "txt_llm/pool"]

    def loss_fn(tensors):
        for name, t in zip(checked, tensors):
            model.store.params[name] = t
        _, _, logits = model.forward(images, vlm_ids, llm_ids)
        return T.cross_entropy(logits, targets)

    err = grad_check(loss_fn, [model.store[n].data.copy() for n in checked])
    assert err < 1e-4, f"max relative error {err}"


def test_checkpoint_round_trip(tmp_path):
    model = MultimodalClassifier(ModelConfig(d=16, m=8, heads=4, hidden=8, canvas=32), seed=4)
    path = str(tmp_path / "model.ckpt")
    save_params(model.store, path)
    clone = MultimodalClassifier(ModelConfig(d=16, m=8, heads=4, hidden=8, canvas=32), seed=99)
    load_params(clone.store, path)
    for name, t in model.store.params.items():
        np.testing.assert_array_equal(t.data, clone.store[name].data)


def test_checkpoint_corrupt_header_rejected(tmp_path):
    model = MultimodalClassifier(ModelConfig(d=8, m=8, heads=2, hidden=4, canvas=32), seed=4)
    path = tmp_path / "model.ckpt"
    save_params(model.store, str(path))
    raw = bytearray(path.read_bytes())
    raw[2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_params(model.store, str(path))


def test_checkpoint_truncated_rejected(tmp_path):
    model = MultimodalClassifier(ModelConfig(d=8, m=8, heads=2, hidden=4, canvas=32), seed=4)
    path = tmp_path / "model.ckpt"
    save_params(model.store, str(path))
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(CheckpointError):
        load_params(model.store, str(path))


def test_checkpoint_architecture_mismatch_names_tensor(tmp_path):
    model = MultimodalClassifier(ModelConfig(d=16, m=8, heads=4, hidden=8, canvas=32), seed=4)
    path = str(tmp_path / "model.ckpt")
    save_params(model.store, path)
    other = MultimodalClassifier(ModelConfig(d=32, m=8, heads=4, hidden=8, canvas=32), seed=4)
    with pytest.raises(CheckpointError, match="img/"):
        load_params(other.store, path)
