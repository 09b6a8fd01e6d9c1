"""Fully-connected encoder and softmax classifier with manual backprop.

The networks operate on pre-extracted feature vectors. The encoder is a
stack of affine layers, each followed by ReLU; the classifier is a single
affine layer producing logits. Everything is float64 numpy so that
finite-difference gradient checks hold to tight tolerances and training is
bit-reproducible from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidDimension

__all__ = [
    "EncoderParams",
    "ClassifierParams",
    "SourceModel",
    "TrainConfig",
    "init_encoder",
    "init_classifier",
    "encode",
    "encode_with_cache",
    "encoder_backward",
    "softmax",
    "predict_proba",
    "ce_loss",
    "ce_risk",
    "accuracy",
    "train_source",
]


@dataclass
class EncoderParams:
    """Affine layer stack; weights[i] has shape (d_in_i, d_out_i)."""

    weights: list
    biases: list

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_latent(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def tensors(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class ClassifierParams:
    """Single affine head mapping latents to class logits."""

    weight: np.ndarray  # (d_latent, n_classes)
    bias: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.weight.copy(), self.bias.copy())

    def tensors(self) -> list:
        return [self.weight, self.bias]


@dataclass
class SourceModel:
    """Encoder plus classifier trained on one source domain."""

    encoder: EncoderParams
    classifier: ClassifierParams

    def encode(self, x: np.ndarray) -> np.ndarray:
        return encode(self.encoder, x)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return predict_proba(self.encoder, self.classifier, x)

    def copy(self) -> "SourceModel":
        return SourceModel(self.encoder.copy(), self.classifier.copy())


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _init_affine(d_in: int, d_out: int, rng: np.random.Generator):
    lim = np.sqrt(6.0 / (d_in + d_out))
    w = rng.uniform(-lim, lim, size=(d_in, d_out))
    b = np.zeros(d_out)
    return w, b


def init_encoder(d_in: int, hidden, d_latent: int, rng: np.random.Generator) -> EncoderParams:
    dims = [d_in, *hidden, d_latent]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        w, bias = _init_affine(a, b, rng)
        weights.append(w)
        biases.append(bias)
    return EncoderParams(weights, biases)


def init_classifier(d_latent: int, n_classes: int, rng: np.random.Generator) -> ClassifierParams:
    w, b = _init_affine(d_latent, n_classes, rng)
    return ClassifierParams(w, b)


def _check_batch(x: np.ndarray, d_in: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidDimension(f"expected a 2-D batch, got shape {x.shape}")
    if x.shape[1] != d_in:
        raise InvalidDimension(f"batch has {x.shape[1]} features, expected {d_in}")
    return x


def encode(enc: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Latent batch; ReLU follows every affine layer (latents non-negative)."""
    a = _check_batch(x, enc.d_in)
    for w, b in zip(enc.weights, enc.biases):
        a = np.maximum(a @ w + b, 0.0)
    return a


def encode_with_cache(enc: EncoderParams, x: np.ndarray):
    """Forward pass keeping per-layer inputs and ReLU masks for backprop."""
    a = _check_batch(x, enc.d_in)
    inputs, masks = [], []
    for w, b in zip(enc.weights, enc.biases):
        inputs.append(a)
        z = a @ w + b
        mask = z > 0.0
        a = np.where(mask, z, 0.0)
        masks.append(mask)
    return a, (inputs, masks)


def encoder_backward(enc: EncoderParams, cache, d_latent: np.ndarray):
    """Gradients of a scalar loss w.r.t. encoder tensors, given dLoss/dLatent.

    Returns (grads, d_input) with grads ordered like EncoderParams.tensors().
    """
    inputs, masks = cache
    d = d_latent
    grads_w = [None] * len(enc.weights)
    grads_b = [None] * len(enc.biases)
    for i in range(len(enc.weights) - 1, -1, -1):
        d = d * masks[i]
        grads_w[i] = inputs[i].T @ d
        grads_b[i] = d.sum(axis=0)
        d = d @ enc.weights[i].T
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.append(gw)
        grads.append(gb)
    return grads, d


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so huge logits cannot overflow."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(enc: EncoderParams, clf: ClassifierParams, x: np.ndarray) -> np.ndarray:
    z = encode(enc, x)
    return softmax(z @ clf.weight + clf.bias)


def _check_labels(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def ce_loss(probs: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    The gradient of mean(-log p[y]) through the softmax collapses to
    (p - onehot(y)) / batch, which is what the training loop consumes.
    """
    probs = np.asarray(probs, dtype=np.float64)
    y = _check_labels(y, probs.shape[1])
    n = probs.shape[0]
    with np.errstate(divide="ignore"):
        loss = float(np.mean(-np.log(probs[np.arange(n), y])))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, dlogits


def ce_risk(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy only (evaluation path)."""
    probs = np.asarray(probs, dtype=np.float64)
    y = _check_labels(y, probs.shape[1])
    with np.errstate(divide="ignore"):
        return float(np.mean(-np.log(probs[np.arange(probs.shape[0]), y])))


def accuracy(probs: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(y)))


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, tensors, grads):
        for t, g in zip(tensors, grads):
            t -= self.lr * g


class _Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def update(self, tensors, grads):
        if self.m is None:
            self.m = [np.zeros_like(t) for t in tensors]
            self.v = [np.zeros_like(t) for t in tensors]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for t, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            t -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return _Adam(cfg.lr) if cfg.optimizer == "adam" else _Sgd(cfg.lr)


def train_source(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    hidden,
    d_latent: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
):
    """Empirical risk minimization on one labeled source domain.

    Returns (SourceModel, trace) where trace[e] = (loss, accuracy) evaluated
    on the full dataset; entry 0 is the pre-training state, so a normal run
    ends with trace[-1][0] <= trace[0][0]. Raises DivergenceError if the
    loss goes non-finite, reporting the epoch where it happened.
    """
    x = np.asarray(x, dtype=np.float64)
    y = _check_labels(y, n_classes)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    enc = init_encoder(x.shape[1], hidden, d_latent, rng)
    clf = init_classifier(d_latent, n_classes, rng)
    opt = make_optimizer(cfg)
    tensors = enc.tensors() + clf.tensors()

    def evaluate():
        p = predict_proba(enc, clf, x)
        return ce_risk(p, y), accuracy(p, y)

    trace = [evaluate()]
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            latent, cache = encode_with_cache(enc, xb)
            probs = softmax(latent @ clf.weight + clf.bias)
            _, dlogits = ce_loss(probs, yb)
            d_clf_w = latent.T @ dlogits
            d_clf_b = dlogits.sum(axis=0)
            d_latent_grad = dlogits @ clf.weight.T
            enc_grads, _ = encoder_backward(enc, cache, d_latent_grad)
            opt.update(tensors, enc_grads + [d_clf_w, d_clf_b])
        loss, acc = evaluate()
        if not np.isfinite(loss):
            raise DivergenceError("training loss is non-finite", epoch)
        trace.append((loss, acc))
    return SourceModel(enc, clf), trace
