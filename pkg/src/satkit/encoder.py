"""MLP feature extractors, bilinear score heads, and parameter serialization.

An ``EncoderModel`` is a chain of dense layers; the layer named by
``representation_layer`` produces the feature vector z, and any layers after
it (a classifier, say) are only traversed by ``forward``.  ``ScoreHeads``
hold the two small networks whose scaled dot product scores a pair of
representations.  Models serialize to a typed binary file that round-trips
bit-exactly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ModelError, ShapeMismatchError
from .tensor import Tensor, as_tensor, bias_add, matmul, relu, reshape, scale

_MODEL_MAGIC = b"SATM"
_MODEL_VERSION = 1
_ACT_CODES = {"none": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: in_width -> out_width, then an optional activation."""

    in_width: int
    out_width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ConfigError(
                f"layer widths must be positive, got "
                f"{self.in_width} -> {self.out_width}"
            )
        if self.activation not in _ACT_CODES:
            raise ConfigError(
                f"unknown activation {self.activation!r}, "
                f"expected one of {sorted(_ACT_CODES)}"
            )


def default_layer_specs(dim, num_classes=None):
    """The stock architecture: dim -> 256 -> 128, plus a linear classifier if asked."""
    specs = [LayerSpec(dim, 256, "relu"), LayerSpec(256, 128, "relu")]
    if num_classes is not None:
        specs.append(LayerSpec(128, num_classes, "none"))
    return tuple(specs)


def _check_chain(specs):
    specs = tuple(specs)
    if not specs:
        raise ConfigError("a model needs at least one layer")
    for prev, cur in zip(specs, specs[1:]):
        if prev.out_width != cur.in_width:
            raise ConfigError(
                f"layer widths do not chain: {prev.out_width} then {cur.in_width}"
            )
    return specs


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EncoderModel:
    """A dense MLP with a designated representation layer.

    ``encode`` stops at the representation layer; ``forward`` runs the whole
    chain (useful when the final layers form a classifier).  Parameters are
    immutable tensors; updates produce a new model via ``with_params``.
    """

    def __init__(self, specs, weights, biases, representation_layer):
        self.specs = _check_chain(specs)
        if not 0 <= representation_layer < len(self.specs):
            raise ConfigError(
                f"representation_layer {representation_layer} is out of range "
                f"for {len(self.specs)} layers"
            )
        if len(weights) != len(self.specs) or len(biases) != len(self.specs):
            raise ConfigError("need one weight and one bias tensor per layer")
        for spec, w, b in zip(self.specs, weights, biases):
            if w.shape != (spec.in_width, spec.out_width) or b.shape != (
                spec.out_width,
            ):
                raise ShapeMismatchError(
                    f"parameter shapes {w.shape}/{b.shape} do not match "
                    f"layer {spec.in_width}->{spec.out_width}"
                )
        self.weights = list(weights)
        self.biases = list(biases)
        self.representation_layer = int(representation_layer)

    @classmethod
    def init(cls, specs, seed, representation_layer=None):
        """Glorot-uniform weights and zero biases, deterministic in seed."""
        specs = _check_chain(specs)
        if representation_layer is None:
            representation_layer = len(specs) - 1
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, spec in enumerate(specs):
            weights.append(
                Tensor(
                    _glorot(rng, spec.in_width, spec.out_width),
                    requires_grad=True,
                    name=f"layer{i}.weight",
                )
            )
            biases.append(
                Tensor(
                    np.zeros(spec.out_width),
                    requires_grad=True,
                    name=f"layer{i}.bias",
                )
            )
        return cls(specs, weights, biases, representation_layer)

    @property
    def in_dim(self):
        return self.specs[0].in_width

    @property
    def rep_dim(self):
        return self.specs[self.representation_layer].out_width

    @property
    def out_dim(self):
        return self.specs[-1].out_width

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params):
        """Same architecture with replacement parameters, in ``params`` order."""
        if len(params) != 2 * len(self.specs):
            raise ConfigError(
                f"expected {2 * len(self.specs)} parameter tensors, "
                f"got {len(params)}"
            )
        return EncoderModel(
            self.specs, params[0::2], params[1::2], self.representation_layer
        )

    def copy(self, requires_grad=True):
        """Fresh parameter tensors over the same (immutable) buffers."""
        params = [
            Tensor._wrap(p.data, requires_grad=requires_grad, name=p.name)
            for p in self.params
        ]
        return self.with_params(params)

    def frozen(self):
        """A view whose parameters never collect gradients (for attack loops)."""
        return self.copy(requires_grad=False)

    def _run(self, x, upto):
        h = as_tensor(x)
        if h.data.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeMismatchError(
                f"expected input of shape (n, {self.in_dim}), got {h.shape}"
            )
        for i in range(upto + 1):
            h = bias_add(matmul(h, self.weights[i]), self.biases[i])
            if self.specs[i].activation == "relu":
                h = relu(h)
        return h

    def encode(self, x):
        """Representations z for a batch x (differentiable under an active tape)."""
        return self._run(x, self.representation_layer)

    def forward(self, x):
        """Output of the full chain (class logits when a classifier is attached)."""
        return self._run(x, len(self.specs) - 1)

    def encode_np(self, x):
        """Representations as a plain array, outside any tape."""
        h = np.asarray(x, dtype=np.float64)
        for i in range(self.representation_layer + 1):
            h = h @ self.weights[i].data + self.biases[i].data
            if self.specs[i].activation == "relu":
                h = np.maximum(h, 0.0)
        return h

    def fingerprint(self):
        """sha256 digest of the architecture and parameters up to the representation."""
        return hashlib.sha256(_encoder_block(self)).digest()


class ScoreHeads:
    """Two one-hidden-layer networks scoring representation pairs.

    The score logit for (z, zhat) is dot(phi1(z), phi2(zhat)) / temperature;
    callers that need a strictly positive score exponentiate the logit.
    """

    def __init__(self, phi1_params, phi2_params, temperature=1.0):
        if temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        if len(phi1_params) != 4 or len(phi2_params) != 4:
            raise ConfigError("each head takes exactly [W1, b1, W2, b2]")
        self.phi1_params = list(phi1_params)
        self.phi2_params = list(phi2_params)
        self.temperature = float(temperature)

    @classmethod
    def init(cls, rep_dim, hidden, out_dim, seed, temperature=1.0):
        rng = np.random.default_rng(seed)

        def head(tag):
            return [
                Tensor(_glorot(rng, rep_dim, hidden), requires_grad=True,
                       name=f"{tag}.w1"),
                Tensor(np.zeros(hidden), requires_grad=True, name=f"{tag}.b1"),
                Tensor(_glorot(rng, hidden, out_dim), requires_grad=True,
                       name=f"{tag}.w2"),
                Tensor(np.zeros(out_dim), requires_grad=True, name=f"{tag}.b2"),
            ]

        return cls(head("phi1"), head("phi2"), temperature)

    @property
    def rep_dim(self):
        return self.phi1_params[0].shape[0]

    @property
    def hidden(self):
        return self.phi1_params[0].shape[1]

    @property
    def out_dim(self):
        return self.phi1_params[2].shape[1]

    @property
    def params(self):
        return list(self.phi1_params) + list(self.phi2_params)

    def with_params(self, params):
        if len(params) != 8:
            raise ConfigError(f"expected 8 head parameter tensors, got {len(params)}")
        return ScoreHeads(params[:4], params[4:], self.temperature)

    def copy(self, requires_grad=True):
        params = [
            Tensor._wrap(p.data, requires_grad=requires_grad, name=p.name)
            for p in self.params
        ]
        return self.with_params(params)

    def _apply_head(self, params, z):
        w1, b1, w2, b2 = params
        h = relu(bias_add(matmul(z, w1), b1))
        return bias_add(matmul(h, w2), b2)

    def apply_phi1(self, z):
        return self._apply_head(self.phi1_params, z)

    def apply_phi2(self, z):
        return self._apply_head(self.phi2_params, z)

    def score(self, z, zhat):
        """Score logit for a single pair of representation vectors, as a scalar."""
        z = as_tensor(z)
        zhat = as_tensor(zhat)
        if z.data.ndim == 1:
            z = reshape(z, (1, z.data.size))
        if zhat.data.ndim == 1:
            zhat = reshape(zhat, (1, zhat.data.size))
        logits = self.score_matrix(z, zhat)
        return reshape(logits, ()) if logits.data.size == 1 else logits

    def score_matrix(self, z_batch, zhat_batch):
        """All-pairs score logits: entry (i, j) scores z_i against zhat_j."""
        a = self.apply_phi1(z_batch)
        b = self.apply_phi2(zhat_batch)
        return scale(matmul(a, b, transpose_b=True), 1.0 / self.temperature)

    def _apply_head_np(self, params, z):
        w1, b1, w2, b2 = params
        h = np.maximum(np.asarray(z, dtype=np.float64) @ w1.data + b1.data, 0.0)
        return h @ w2.data + b2.data

    def score_matrix_np(self, z_batch, zhat_batch):
        """All-pairs score logits as a plain array, outside any tape."""
        a = self._apply_head_np(self.phi1_params, z_batch)
        b = self._apply_head_np(self.phi2_params, zhat_batch)
        return (a @ b.T) / self.temperature


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _encoder_block(model):
    parts = [struct.pack("<I", len(model.specs))]
    for spec in model.specs:
        parts.append(
            struct.pack(
                "<IIB", spec.in_width, spec.out_width, _ACT_CODES[spec.activation]
            )
        )
    parts.append(struct.pack("<I", model.representation_layer))
    for p in model.params:
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def _heads_block(heads):
    if heads is None:
        return struct.pack("<B", 0)
    parts = [
        struct.pack("<B", 1),
        struct.pack("<III", heads.rep_dim, heads.hidden, heads.out_dim),
        struct.pack("<d", heads.temperature),
    ]
    for p in heads.params:
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def save_params(model, path, heads=None):
    """Write model (and optional heads) to a typed binary file, bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", _MODEL_VERSION))
        fh.write(_encoder_block(model))
        fh.write(_heads_block(heads))


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.raw):
            raise ModelError(
                f"truncated model file {self.path}: needed {n} bytes at "
                f"offset {self.off}, file has {len(self.raw)}"
            )
        out = self.raw[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def load_params(path, expect_specs=None):
    """Read a model file back into (EncoderModel, ScoreHeads or None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw, path)
    if r.take(4) != _MODEL_MAGIC:
        raise ModelError(f"{path} is not a model file (bad magic)")
    (version,) = r.unpack("<I")
    if version != _MODEL_VERSION:
        raise ModelError(f"unsupported model file version {version}")
    (n_layers,) = r.unpack("<I")
    specs = []
    for _ in range(n_layers):
        in_w, out_w, act = r.unpack("<IIB")
        if act not in _ACT_NAMES:
            raise ModelError(f"unknown activation code {act} in {path}")
        specs.append(LayerSpec(in_w, out_w, _ACT_NAMES[act]))
    (rep_layer,) = r.unpack("<I")
    if expect_specs is not None and tuple(expect_specs) != tuple(specs):
        raise ModelError(
            f"model file {path} holds a different architecture than expected"
        )
    weights, biases = [], []
    for i, spec in enumerate(specs):
        weights.append(
            Tensor(
                r.floats(spec.in_width * spec.out_width).reshape(
                    spec.in_width, spec.out_width
                ),
                requires_grad=True,
                name=f"layer{i}.weight",
            )
        )
        biases.append(
            Tensor(r.floats(spec.out_width), requires_grad=True, name=f"layer{i}.bias")
        )
    model = EncoderModel(specs, weights, biases, rep_layer)

    (has_heads,) = r.unpack("<B")
    heads = None
    if has_heads == 1:
        rep_dim, hidden, out_dim = r.unpack("<III")
        (temperature,) = r.unpack("<d")
        names = ["w1", "b1", "w2", "b2"]
        shapes = [(rep_dim, hidden), (hidden,), (hidden, out_dim), (out_dim,)]
        packs = []
        for tag in ("phi1", "phi2"):
            group = []
            for nm, shape in zip(names, shapes):
                count = int(np.prod(shape))
                group.append(
                    Tensor(
                        r.floats(count).reshape(shape),
                        requires_grad=True,
                        name=f"{tag}.{nm}",
                    )
                )
            packs.append(group)
        heads = ScoreHeads(packs[0], packs[1], temperature)
    elif has_heads != 0:
        raise ModelError(f"corrupt heads flag {has_heads} in {path}")
    if r.off != len(raw):
        raise ModelError(
            f"model file {path} has {len(raw) - r.off} trailing bytes"
        )
    return model, heads
