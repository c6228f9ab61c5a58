"""Dense encoder/classifier network with hand-written backpropagation.

The network is split as ``classifier(encoder(x))``. The encoder is a chain of
dense layers, each followed by the activation, ending in the embedding layer of
width ``embedding_dim``. The classifier is a single dense layer feeding a
softmax. Everything is float64.
"""
from dataclasses import dataclass
import json

import numpy as np

from .exceptions import ConfigError, FormatError, InputError, NumericalError
from .rng import stream
from .swd import swd_value_and_gradient

__all__ = [
    "ArchSpec",
    "ModelParams",
    "Gradients",
    "OptimizerState",
    "Batch",
    "ObjectiveSpec",
    "TERMS",
    "init_model",
    "forward_encoder",
    "forward_classifier",
    "softmax",
    "cross_entropy",
    "compute_objective_and_gradients",
    "init_optimizer",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

PROB_FLOOR = 1e-12

# Objective terms in reporting order. The first four are the adaptation
# objective; the last one is the direct source/target alignment baseline.
TERMS = (
    "source_ce",
    "pseudo_ce",
    "target_pseudo_swd",
    "source_pseudo_swd",
    "source_target_swd",
)

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    hidden_dims: tuple = (32, 32)
    embedding_dim: int = 8
    num_classes: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.embedding_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"all layer widths must be >= 1, got {dims}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.embedding_dim, self.num_classes)

    @property
    def num_encoder_layers(self):
        return len(self.hidden_dims) + 1

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "num_classes": self.num_classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad architecture: {exc}") from None


@dataclass
class _Blocks:
    weights: list
    biases: list

    def flat(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @property
    def size(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b


@dataclass
class ModelParams(_Blocks):
    """Weights ``W[l]`` of shape ``(fan_in, fan_out)`` and biases ``b[l]``.

    Layers ``0 .. arch.num_encoder_layers - 1`` form the encoder, the last
    layer is the classifier.
    """

    arch: ArchSpec = None
    seed: int = None

    @property
    def encoder(self):
        m = self.arch.num_encoder_layers
        return list(zip(self.weights[:m], self.biases[:m]))

    @property
    def classifier(self):
        return self.weights[-1], self.biases[-1]

    def copy(self):
        return ModelParams(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.arch, self.seed
        )

    def with_flat(self, theta):
        """Return a copy whose entries are taken from the flat vector ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.size:
            raise InputError(f"expected {self.size} values, got {theta.size}")
        out = self.copy()
        pos = 0
        for arr in out.arrays():
            arr.ravel()[:] = theta[pos:pos + arr.size]
            pos += arr.size
        return out


@dataclass
class Gradients(_Blocks):
    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(W) for W in params.weights], [np.zeros_like(b) for b in params.biases])


def init_model(arch, seed=0):
    """Normal weights with standard deviation ``1/sqrt(fan_in)``, zero biases."""
    rng = stream(seed, "init")
    dims = arch.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, arch, seed)


def _activate(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _activation_grad(name, pre, post, g):
    if name == "relu":
        return g * (pre > 0.0)
    return g * (1.0 - post * post)


def _as_matrix(X, width, what):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != width:
        raise InputError(f"{what} must have shape (n, {width}), got {X.shape}")
    return X


def _encode(params, X):
    act = params.arch.activation
    h = _as_matrix(X, params.arch.input_dim, "features")
    cache = [(h, None)]
    for W, b in params.encoder:
        pre = h @ W + b
        h = _activate(act, pre)
        cache.append((h, pre))
    return h, cache


def _encode_backward(params, cache, g, grads):
    act = params.arch.activation
    for layer in range(params.arch.num_encoder_layers - 1, -1, -1):
        out, pre = cache[layer + 1]
        g = _activation_grad(act, pre, out, g)
        grads.weights[layer] += cache[layer][0].T @ g
        grads.biases[layer] += g.sum(axis=0)
        if layer > 0:
            g = g @ params.weights[layer].T


def forward_encoder(params, X):
    """Map features ``(n, d)`` to embeddings ``(n, p)``."""
    return _encode(params, X)[0]


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _logits(params, Z):
    W, b = params.classifier
    return _as_matrix(Z, params.arch.embedding_dim, "embeddings") @ W + b


def forward_classifier(params, Z):
    """Class probabilities ``(n, k)`` for embeddings ``(n, p)``."""
    return softmax(_logits(params, Z))


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise InputError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise InputError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class, floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    labels = _check_labels(labels, n, k)
    picked = probs[np.arange(n), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def _ce_and_logit_grad(logits, labels):
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    value = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    # the floor is flat, so clamped rows contribute nothing
    g[picked < PROB_FLOOR] = 0.0
    return value, g / n


@dataclass
class Batch:
    """Inputs for one objective evaluation; terms only read what they need."""

    source_X: np.ndarray = None
    source_y: np.ndarray = None
    target_X: np.ndarray = None
    pseudo_Z: np.ndarray = None
    pseudo_y: np.ndarray = None
    projections: object = None


@dataclass(frozen=True)
class ObjectiveSpec:
    """Weight per objective term; a zero weight disables the term."""

    source_ce: float = 0.0
    pseudo_ce: float = 0.0
    target_pseudo_swd: float = 0.0
    source_pseudo_swd: float = 0.0
    source_target_swd: float = 0.0

    @classmethod
    def imuda(cls, lam, source_ce=True, pseudo_ce=True, target_pseudo_swd=True, source_pseudo_swd=True):
        return cls(
            source_ce=lam if source_ce else 0.0,
            pseudo_ce=lam if pseudo_ce else 0.0,
            target_pseudo_swd=1.0 if target_pseudo_swd else 0.0,
            source_pseudo_swd=1.0 if source_pseudo_swd else 0.0,
        )

    @classmethod
    def baseline(cls, lam):
        return cls(source_ce=lam, source_target_swd=1.0)

    @classmethod
    def pretraining(cls):
        return cls(source_ce=1.0)

    def weights(self):
        return {t: float(getattr(self, t)) for t in TERMS}

    @property
    def enabled(self):
        return tuple(t for t in TERMS if getattr(self, t) != 0.0)


def _require(batch, term, *names):
    missing = [n for n in names if getattr(batch, n) is None]
    if missing:
        raise InputError(f"term {term} needs batch fields {missing}")


def _finite(value, term):
    if not np.isfinite(value):
        raise NumericalError("non-finite objective value", term=term)
    return value


def compute_objective_and_gradients(params, batch, objective, return_terms=False):
    """Evaluate a weighted sum of objective terms and its exact gradient.

    Returns ``(value, grads)``, or ``(value, grads, terms)`` with the weighted
    per-term values when ``return_terms`` is set. Pseudo points are constants.
    Disabled terms report 0.0.
    """
    w = objective.weights()
    grads = Gradients.zeros_like(params)
    terms = {t: 0.0 for t in TERMS}
    Wc, _ = params.classifier

    need_source = w["source_ce"] or w["source_pseudo_swd"] or w["source_target_swd"]
    need_target = w["target_pseudo_swd"] or w["source_target_swd"]
    zs = zt = None
    if need_source:
        _require(batch, "source", "source_X")
        zs, cache_s = _encode(params, batch.source_X)
        g_zs = np.zeros_like(zs)
    if need_target:
        _require(batch, "target", "target_X")
        zt, cache_t = _encode(params, batch.target_X)
        g_zt = np.zeros_like(zt)

    if w["source_ce"]:
        _require(batch, "source_ce", "source_y")
        logits = _logits(params, zs)
        value, g_logits = _ce_and_logit_grad(logits, batch.source_y)
        terms["source_ce"] = _finite(w["source_ce"] * value, "source_ce")
        g_logits *= w["source_ce"]
        grads.weights[-1] += zs.T @ g_logits
        grads.biases[-1] += g_logits.sum(axis=0)
        g_zs += g_logits @ Wc.T

    if w["pseudo_ce"]:
        _require(batch, "pseudo_ce", "pseudo_Z", "pseudo_y")
        zp = _as_matrix(batch.pseudo_Z, params.arch.embedding_dim, "pseudo points")
        value, g_logits = _ce_and_logit_grad(_logits(params, zp), batch.pseudo_y)
        terms["pseudo_ce"] = _finite(w["pseudo_ce"] * value, "pseudo_ce")
        g_logits *= w["pseudo_ce"]
        grads.weights[-1] += zp.T @ g_logits
        grads.biases[-1] += g_logits.sum(axis=0)

    if w["target_pseudo_swd"]:
        _require(batch, "target_pseudo_swd", "pseudo_Z", "projections")
        value, g_a, _ = swd_value_and_gradient(zt, batch.pseudo_Z, batch.projections)
        terms["target_pseudo_swd"] = _finite(w["target_pseudo_swd"] * value, "target_pseudo_swd")
        g_zt += w["target_pseudo_swd"] * g_a

    if w["source_pseudo_swd"]:
        _require(batch, "source_pseudo_swd", "pseudo_Z", "projections")
        value, g_a, _ = swd_value_and_gradient(zs, batch.pseudo_Z, batch.projections)
        terms["source_pseudo_swd"] = _finite(w["source_pseudo_swd"] * value, "source_pseudo_swd")
        g_zs += w["source_pseudo_swd"] * g_a

    if w["source_target_swd"]:
        _require(batch, "source_target_swd", "projections")
        value, g_a, g_b = swd_value_and_gradient(zs, zt, batch.projections)
        terms["source_target_swd"] = _finite(w["source_target_swd"] * value, "source_target_swd")
        g_zs += w["source_target_swd"] * g_a
        g_zt += w["source_target_swd"] * g_b

    if need_source:
        _encode_backward(params, cache_s, g_zs, grads)
    if need_target:
        _encode_backward(params, cache_t, g_zt, grads)

    total = 0.0
    for t in TERMS:
        total += terms[t]
    for arr in grads.arrays():
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite gradient", term=",".join(objective.enabled))
    if return_terms:
        return total, grads, terms
    return total, grads


@dataclass
class OptimizerState:
    first_moment: list
    second_moment: list
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return OptimizerState(zeros, [z.copy() for z in zeros], 0, learning_rate, beta1, beta2, eps)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Inputs are left untouched."""
    p_arrays = list(params.arrays())
    g_arrays = list(grads.arrays())
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise InputError("gradient blocks do not match parameter blocks")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params = params.copy()
    m_new, v_new = [], []
    for p, g, m, v in zip(new_params.arrays(), g_arrays, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        m_new.append(m)
        v_new.append(v)
    return new_params, OptimizerState(
        m_new, v_new, t, state.learning_rate, b1, b2, state.eps
    )


CHECKPOINT_FORMAT = "imuda-checkpoint/1"


def checkpoint_dict(params):
    return {
        "format": CHECKPOINT_FORMAT,
        "arch": params.arch.to_dict(),
        "seed": params.seed,
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(params.weights, params.biases)
        ],
    }


def save_checkpoint(params, path):
    with open(path, "w") as f:
        json.dump(checkpoint_dict(params), f, indent=1, allow_nan=False)
        f.write("\n")


def load_checkpoint(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a model checkpoint")
    arch = ArchSpec.from_dict(doc["arch"])
    dims = arch.layer_dims
    layers = doc["layers"]
    if len(layers) != len(dims) - 1:
        raise FormatError(f"{path}: expected {len(dims) - 1} layers, found {len(layers)}")
    weights, biases = [], []
    for i, layer in enumerate(layers):
        shape = (dims[i], dims[i + 1])
        W = np.array(layer["weight"], dtype=np.float64)
        b = np.array(layer["bias"], dtype=np.float64)
        if tuple(layer["shape"]) != shape or W.size != shape[0] * shape[1] or b.shape != (shape[1],):
            raise FormatError(f"{path}: layer {i} does not match architecture {shape}")
        weights.append(W.reshape(shape))
        biases.append(b)
    return ModelParams(weights, biases, arch, doc.get("seed"))
