import numpy as np
import pytest

from satkit.encoder import (
    EncoderModel,
    LayerSpec,
    ScoreHeads,
    default_layer_specs,
    load_params,
    save_params,
)
from satkit.errors import ConfigError, ModelError, ShapeMismatchError
from satkit.tensor import Tape, Tensor, backward


def _small_model(seed=0):
    specs = (LayerSpec(3, 4, "relu"), LayerSpec(4, 2, "relu"))
    return EncoderModel.init(specs, seed=seed)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_init_deterministic():
    a = _small_model(seed=7)
    b = _small_model(seed=7)
    for pa, pb in zip(a.params, b.params):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_init_biases_zero():
    m = _small_model()
    for b in m.biases:
        np.testing.assert_array_equal(b.data, np.zeros(b.shape))


def test_init_weight_mean_shrinks_with_width():
    m = EncoderModel.init((LayerSpec(256, 256, "none"),), seed=3)
    assert abs(m.weights[0].data.mean()) < 0.01


def test_init_weights_respect_glorot_bound():
    m = _small_model(seed=1)
    for w, spec in zip(m.weights, m.specs):
        limit = np.sqrt(6.0 / (spec.in_width + spec.out_width))
        assert np.max(np.abs(w.data)) <= limit


def test_zero_width_layer_rejected():
    with pytest.raises(ConfigError):
        LayerSpec(0, 4)
    with pytest.raises(ConfigError):
        LayerSpec(4, 0)


def test_unchained_widths_rejected():
    with pytest.raises(ConfigError):
        EncoderModel.init((LayerSpec(3, 4), LayerSpec(5, 2)), seed=0)


def test_default_layer_specs_shape():
    specs = default_layer_specs(32)
    assert [(s.in_width, s.out_width) for s in specs] == [(32, 256), (256, 128)]
    with_cls = default_layer_specs(32, num_classes=10)
    assert with_cls[-1].out_width == 10
    assert with_cls[-1].activation == "none"


# ---------------------------------------------------------------------------
# encode / forward
# ---------------------------------------------------------------------------

def test_encode_zero_params_gives_zero():
    m = _small_model()
    zeros = [Tensor(np.zeros(p.shape), requires_grad=True) for p in m.params]
    z = m.with_params(zeros).encode(np.full((5, 3), 0.3))
    np.testing.assert_array_equal(z.data, np.zeros((5, 2)))


def test_encode_identity_layer_passes_through():
    m = EncoderModel.init((LayerSpec(3, 3, "none"),), seed=0)
    ident = [Tensor(np.eye(3), requires_grad=True), Tensor(np.zeros(3), requires_grad=True)]
    x = np.random.default_rng(0).uniform(0, 1, (4, 3))
    z = m.with_params(ident).encode(x)
    np.testing.assert_array_equal(z.data, x)


def test_encode_matches_hand_forward_pass():
    # 2x2 two-layer relu network evaluated by hand
    w0 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b0 = np.array([0.1, -0.2])
    w1 = np.array([[2.0, 0.0], [1.0, 1.0]])
    b1 = np.array([0.0, 0.5])
    m = EncoderModel.init((LayerSpec(2, 2, "relu"), LayerSpec(2, 2, "relu")), seed=0)
    m = m.with_params(
        [Tensor(p, requires_grad=True) for p in (w0, b0, w1, b1)]
    )
    x = np.array([[0.4, 0.6]])
    h = np.maximum(x @ w0 + b0, 0.0)
    expect = np.maximum(h @ w1 + b1, 0.0)
    np.testing.assert_allclose(m.encode(x).data, expect, atol=1e-12)
    np.testing.assert_allclose(m.encode_np(x), expect, atol=1e-12)


def test_forward_runs_past_representation_layer():
    specs = (LayerSpec(3, 4, "relu"), LayerSpec(4, 2, "relu"), LayerSpec(2, 5, "none"))
    m = EncoderModel.init(specs, seed=0, representation_layer=1)
    x = np.full((6, 3), 0.5)
    assert m.encode(x).shape == (6, 2)
    assert m.forward(x).shape == (6, 5)
    assert m.rep_dim == 2
    assert m.out_dim == 5


def test_encode_width_mismatch():
    m = _small_model()
    with pytest.raises(ShapeMismatchError):
        m.encode(np.zeros((2, 7)))


def test_encode_permutation_equivariant():
    m = _small_model(seed=5)
    x = np.random.default_rng(1).uniform(0, 1, (8, 3))
    perm = np.random.default_rng(2).permutation(8)
    z = m.encode(x).data
    zp = m.encode(x[perm]).data
    np.testing.assert_array_equal(zp, z[perm])


def test_encode_np_agrees_with_tape_encode():
    m = _small_model(seed=9)
    x = np.random.default_rng(3).uniform(0, 1, (10, 3))
    np.testing.assert_allclose(m.encode_np(x), m.encode(x).data, atol=0)


def test_frozen_parameters_do_not_collect_gradients():
    m = _small_model(seed=4).frozen()
    x = Tensor(np.full((2, 3), 0.4), requires_grad=True)
    with Tape() as tape:
        z = m.encode(x)
        loss = __import__("satkit.tensor", fromlist=["tsum"]).tsum(z)
    grads = backward(tape, loss)
    assert x in grads
    assert all(p not in grads for p in m.params)


# ---------------------------------------------------------------------------
# score heads
# ---------------------------------------------------------------------------

def _const_head_params(rep_dim, hidden, out_vec):
    out_vec = np.asarray(out_vec, dtype=np.float64)
    return [
        Tensor(np.zeros((rep_dim, hidden)), requires_grad=True),
        Tensor(np.zeros(hidden), requires_grad=True),
        Tensor(np.zeros((hidden, out_vec.size)), requires_grad=True),
        Tensor(out_vec, requires_grad=True),
    ]


def test_score_orthogonal_outputs_give_zero_logit():
    heads = ScoreHeads(
        _const_head_params(2, 3, [1.0, 0.0]),
        _const_head_params(2, 3, [0.0, 1.0]),
        temperature=1.0,
    )
    logit = heads.score(np.array([0.2, 0.3]), np.array([0.4, 0.5]))
    assert logit.item() == 0.0
    assert np.exp(logit.item()) == 1.0


def test_score_hand_dot_product():
    heads = ScoreHeads(
        _const_head_params(2, 3, [1.0, 1.0]),
        _const_head_params(2, 3, [1.0, 1.0]),
        temperature=1.0,
    )
    logit = heads.score(np.array([0.2, 0.3]), np.array([0.4, 0.5]))
    assert logit.item() == pytest.approx(2.0, abs=1e-15)


def test_score_temperature_scales_logits():
    h1 = ScoreHeads.init(4, 8, 6, seed=0, temperature=1.0)
    h2 = ScoreHeads(h1.phi1_params, h1.phi2_params, temperature=2.0)
    rng = np.random.default_rng(5)
    z = rng.normal(size=(3, 4))
    zh = rng.normal(size=(3, 4))
    m1 = h1.score_matrix(Tensor(z), Tensor(zh)).data
    m2 = h2.score_matrix(Tensor(z), Tensor(zh)).data
    np.testing.assert_allclose(m2, m1 / 2.0, atol=1e-15)
    np.testing.assert_array_equal(np.argmax(m1, axis=1), np.argmax(m2, axis=1))


def test_score_gradients_match_finite_differences():
    heads = ScoreHeads.init(2, 4, 2, seed=2, temperature=1.3)
    model = _small_model(seed=8)
    x = np.random.default_rng(0).uniform(0.1, 0.9, (1, 3))
    xh = np.random.default_rng(1).uniform(0.1, 0.9, (1, 3))

    def loss_value(model, heads):
        z = model.encode(x)
        zh = model.encode(xh)
        return heads.score(z, zh)

    with Tape() as tape:
        loss = loss_value(model, heads)
    grads = backward(tape, loss)

    all_params = model.params + heads.params
    eps = 1e-6
    for pi, p in enumerate(all_params):
        g = grads.get(p)
        if g is None:
            continue
        fd = np.zeros_like(p.data)
        flat = p.data.copy().reshape(-1)
        for k in range(flat.size):
            for sign in (+1, -1):
                bumped = flat.copy()
                bumped[k] += sign * eps
                new_p = Tensor(bumped.reshape(p.shape))
                trial = all_params.copy()
                trial[pi] = new_p
                m2 = model.with_params(trial[: len(model.params)])
                h2 = heads.with_params(trial[len(model.params) :])
                fd.reshape(-1)[k] += sign * loss_value(m2, h2).item()
        fd /= 2 * eps
        denom = max(np.linalg.norm(fd), 1e-10)
        assert np.linalg.norm(g - fd) / denom < 1e-4, f"param {pi}"


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_save_load_round_trip_bit_exact(tmp_path):
    m = _small_model(seed=6)
    heads = ScoreHeads.init(2, 4, 3, seed=7, temperature=0.8)
    p = tmp_path / "model.satm"
    save_params(m, p, heads=heads)
    m2, h2 = load_params(p)
    x = np.random.default_rng(4).uniform(0, 1, (5, 3))
    np.testing.assert_array_equal(m.encode(x).data, m2.encode(x).data)
    assert h2.temperature == heads.temperature
    for a, b in zip(heads.params, h2.params):
        np.testing.assert_array_equal(a.data, b.data)


def test_save_without_heads(tmp_path):
    m = _small_model(seed=1)
    p = tmp_path / "bare.satm"
    save_params(m, p)
    m2, h2 = load_params(p)
    assert h2 is None
    assert m2.specs == m.specs


def test_two_saves_are_byte_identical(tmp_path):
    m = _small_model(seed=2)
    p1, p2 = tmp_path / "a.satm", tmp_path / "b.satm"
    save_params(m, p1)
    save_params(m, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_bad_magic(tmp_path):
    p = tmp_path / "junk.satm"
    p.write_bytes(b"WXYZ" + bytes(64))
    with pytest.raises(ModelError, match="magic"):
        load_params(p)


def test_load_bad_version(tmp_path):
    m = _small_model()
    p = tmp_path / "v9.satm"
    save_params(m, p)
    raw = bytearray(p.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    p.write_bytes(bytes(raw))
    with pytest.raises(ModelError, match="version"):
        load_params(p)


def test_load_truncated(tmp_path):
    m = _small_model()
    p = tmp_path / "cut.satm"
    save_params(m, p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ModelError, match="truncated"):
        load_params(p)


def test_load_trailing_bytes(tmp_path):
    m = _small_model()
    p = tmp_path / "extra.satm"
    save_params(m, p)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ModelError, match="trailing"):
        load_params(p)


def test_load_mismatched_spec(tmp_path):
    m = _small_model()
    p = tmp_path / "m.satm"
    save_params(m, p)
    wrong = (LayerSpec(3, 4, "relu"), LayerSpec(4, 3, "relu"))
    with pytest.raises(ModelError, match="architecture"):
        load_params(p, expect_specs=wrong)


def test_fingerprint_tracks_parameters(tmp_path):
    m = _small_model(seed=3)
    f1 = m.fingerprint()
    assert f1 == _small_model(seed=3).fingerprint()
    bumped = [Tensor(p.data + 0.01, requires_grad=True) for p in m.params]
    assert m.with_params(bumped).fingerprint() != f1
    assert len(f1) == 32
