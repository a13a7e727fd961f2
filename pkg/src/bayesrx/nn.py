"""Small dense classifiers with hand-derived gradients, Adam, and concrete dropout.

Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b``.  Every
hidden layer uses ReLU; the output layer is a softmax, optionally split into
``n_heads`` independent softmax groups (used by the black-box detector).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-12
DEFAULT_TEMPERATURE = 0.1
DEFAULT_DROP_PROB = 0.1


class ShapeError(ValueError):
    """Input dimensions do not match the network."""


class TrainingDivergence(RuntimeError):
    """A non-finite value appeared during training."""

    def __init__(self, message, layer=None, module=None):
        super().__init__(message)
        self.layer = layer
        self.module = module


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_heads: int = 1
    activation: str = "relu"
    output_head: str = "softmax"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: weight {w.shape} incompatible with bias {b.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l}: input width {w.shape[1]} != previous output {self.weights[l - 1].shape[0]}")
        if self.weights[-1].shape[0] % self.n_heads:
            raise ShapeError("output width not divisible by head count")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def hidden_sizes(self) -> list[int]:
        return self.layer_sizes[1:-1]

    @property
    def hidden_count(self) -> int:
        return int(sum(self.hidden_sizes))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays, n_heads=1):
        return cls(list(arrays[0::2]), list(arrays[1::2]), n_heads=n_heads)

    def copy(self) -> NetworkParams:
        return replace(self, weights=[w.copy() for w in self.weights], biases=[b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_network(layer_sizes, rng, n_heads=1) -> NetworkParams:
    """Uniform fan-based initialisation, zero biases."""
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        lim = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return NetworkParams(weights, biases, n_heads=n_heads)


def zero_network(layer_sizes, n_heads=1) -> NetworkParams:
    return NetworkParams(
        [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])],
        [np.zeros(o) for o in layer_sizes[1:]],
        n_heads=n_heads,
    )


# --------------------------------------------------------------------------
# forward / loss / backward


def softmax(logits, n_heads=1):
    b, width = logits.shape
    z = logits.reshape(b, n_heads, width // n_heads)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(b, width)


def _split_mask(params, mask, batch):
    if mask is None:
        return [None] * len(params.hidden_sizes)
    mask = np.asarray(mask, dtype=float)
    if mask.shape[-1] != params.hidden_count:
        raise ShapeError(f"mask length {mask.shape[-1]} != hidden units {params.hidden_count}")
    mask = np.broadcast_to(mask, (batch, params.hidden_count))
    bounds = np.cumsum([0] + params.hidden_sizes)
    return [mask[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of hidden layers
    post: list[np.ndarray] = field(default_factory=list)  # masked activations fed onward
    masks: list = field(default_factory=list)
    probs: np.ndarray | None = None


def forward_batch(params: NetworkParams, x, mask=None, check_finite=False):
    """Return ``(probs, cache)`` for a batch ``x`` of shape ``(B, in)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(f"input width {x.shape[1]} != {params.layer_sizes[0]}")
    masks = _split_mask(params, mask, x.shape[0])
    cache = ForwardCache(inputs=x, masks=masks)
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        with np.errstate(over="ignore", invalid="ignore"):  # overflow surfaces as divergence below
            z = h @ w.T + b
        if check_finite and not np.isfinite(z).all():
            raise TrainingDivergence(f"non-finite activation in layer {l}", layer=l)
        if l == last:
            cache.probs = softmax(z, params.n_heads)
            return cache.probs, cache
        cache.pre.append(z)
        h = np.maximum(z, 0.0)
        if masks[l] is not None:
            h = h * masks[l]
        cache.post.append(h)
    raise AssertionError("unreachable")


def mlp_forward(params: NetworkParams, features, mask=None) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ShapeError("mlp_forward expects a single feature vector")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.ndim != 1:
            raise ShapeError("mask must be a vector")
        if np.any((mask < 0) | (mask > 1)):
            raise ShapeError("mask entries must lie in [0, 1]")
    probs, _ = forward_batch(params, features[None, :], mask)
    return probs[0]


def cross_entropy_loss(probs, label, diagnostics=None) -> float:
    """``-log probs[label]`` with the probability floored at ``PROB_FLOOR``."""
    probs = np.asarray(probs, dtype=float)
    if not 0 <= label < probs.size:
        raise ShapeError("label out of range")
    p = probs[label]
    if p < PROB_FLOOR:
        if diagnostics is not None:
            diagnostics.setdefault("clipped", 0)
            diagnostics["clipped"] += 1
        p = PROB_FLOOR
    return float(-np.log(p))


def batch_cross_entropy(probs, labels, n_heads=1) -> float:
    """Mean over the batch of the per-head cross-entropies summed over heads."""
    b, width = probs.shape
    labels = np.asarray(labels).reshape(b, n_heads)
    p = probs.reshape(b, n_heads, width // n_heads)
    picked = np.take_along_axis(p, labels[..., None], axis=-1)[..., 0]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).sum() / b)


def one_hot(labels, n_classes, n_heads=1):
    labels = np.asarray(labels).reshape(-1, n_heads)
    out = np.zeros((labels.shape[0], n_heads, n_classes))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out.reshape(labels.shape[0], n_heads * n_classes)


def softmax_vjp(probs, g_probs, n_heads=1):
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    b, width = probs.shape
    p = probs.reshape(b, n_heads, -1)
    g = g_probs.reshape(b, n_heads, -1)
    return (p * (g - (p * g).sum(axis=-1, keepdims=True))).reshape(b, width)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mask: np.ndarray | None = None  # (B, hidden_count), only when masks were used
    inputs: np.ndarray | None = None

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def backprop(params: NetworkParams, cache: ForwardCache, g_logits, need_inputs=False) -> Gradients:
    """Backward pass given the gradient w.r.t. the output logits."""
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    g_masks = [None] * (n_layers - 1)
    g = g_logits
    for l in range(n_layers - 1, -1, -1):
        h_in = cache.inputs if l == 0 else cache.post[l - 1]
        gw[l] = g.T @ h_in
        gb[l] = g.sum(axis=0)
        if l == 0:
            break
        g_h = g @ params.weights[l]
        relu = np.maximum(cache.pre[l - 1], 0.0)
        m = cache.masks[l - 1]
        if m is not None:
            g_masks[l - 1] = g_h * relu
            g_h = g_h * m
        g = g_h * (cache.pre[l - 1] > 0)
    grads = Gradients(gw, gb)
    if cache.masks and cache.masks[0] is not None:
        grads.mask = np.concatenate(g_masks, axis=1)
    if need_inputs:
        grads.inputs = g @ params.weights[0]
    return grads


def backward(params: NetworkParams, x, labels, mask=None, need_inputs=False):
    """Gradient of the mean cross-entropy over a batch; returns ``(loss, grads)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    probs, cache = forward_batch(params, x, mask, check_finite=True)
    loss = batch_cross_entropy(probs, labels, params.n_heads)
    if not np.isfinite(loss):
        raise TrainingDivergence("non-finite loss", layer=len(params.weights) - 1)
    width = probs.shape[1] // params.n_heads
    g_logits = (probs - one_hot(labels, width, params.n_heads)) / x.shape[0]
    return loss, backprop(params, cache, g_logits, need_inputs)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays, learning_rate=1e-3, **kw):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   learning_rate=learning_rate, **kw)


def adam_step(state: AdamState, params, grads):
    """In-place Adam update of a list of arrays; returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# --------------------------------------------------------------------------
# concrete dropout


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class DropoutPosterior:
    nominal: NetworkParams
    dropout_logits: np.ndarray
    prior_stddev: float = 1.0
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.dropout_logits = np.asarray(self.dropout_logits, dtype=float)
        if self.dropout_logits.shape != (self.nominal.hidden_count,):
            raise ShapeError("one dropout logit per hidden unit required")

    @property
    def drop_probs(self):
        return sigmoid(self.dropout_logits)

    def copy(self):
        return replace(self, nominal=self.nominal.copy(), dropout_logits=self.dropout_logits.copy())


def make_posterior(nominal, drop_prob=DEFAULT_DROP_PROB, **kw) -> DropoutPosterior:
    logit = np.log(drop_prob) - np.log1p(-drop_prob)
    return DropoutPosterior(nominal, np.full(nominal.hidden_count, logit), **kw)


def concrete_mask(logit, uniform_draw, temperature):
    """Relaxed drop indicator ``sigmoid((logit + logit(u)) / temperature)``."""
    u = np.asarray(uniform_draw, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("uniform draw must lie strictly inside (0, 1)")
    return sigmoid((np.asarray(logit, dtype=float) + np.log(u) - np.log1p(-u)) / temperature)


def concrete_keep(logits, uniform_draw, temperature):
    """Soft keep multiplier ``1 - z`` and its derivative w.r.t. the logits."""
    z = concrete_mask(logits, uniform_draw, temperature)
    return 1.0 - z, -z * (1.0 - z) / temperature


def open_uniform(rng, size):
    # rng.random is in [0, 1); nudge away from the closed end points
    return np.clip(rng.random(size), 1e-12, 1.0 - 1e-12)


def draw_concrete_keep(posterior: DropoutPosterior, rng, batch):
    """Independent relaxed keep multipliers per example: ``(batch, hidden)`` values and logit derivatives."""
    u = open_uniform(rng, (batch, posterior.nominal.hidden_count))
    return concrete_keep(posterior.dropout_logits, u, posterior.temperature)


def sample_keep_mask(drop_logits, rng) -> np.ndarray:
    return (rng.random(np.shape(drop_logits)) >= sigmoid(drop_logits)).astype(float)


def apply_keep_mask(params: NetworkParams, keep) -> NetworkParams:
    """Zero the outgoing weights of every dropped hidden unit."""
    out = params.copy()
    bounds = np.cumsum([0] + params.hidden_sizes)
    for l, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        out.weights[l + 1] = out.weights[l + 1] * keep[lo:hi][None, :]
    return out


def sample_dropout_realization(posterior: DropoutPosterior, rng) -> NetworkParams:
    return apply_keep_mask(posterior.nominal, sample_keep_mask(posterior.dropout_logits, rng))


def binary_entropy(p):
    p = np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR)
    return -(p * np.log(p) + (1 - p) * np.log1p(-p))


def unit_kl(sq_norms, drop_logits, prior_stddev, beta):
    """Per-unit ``(1-p) |w|^2 / (2 s^2) - H_b(p)`` summed and scaled by ``1/beta``.

    Returns ``(value, d value / d sq_norms, d value / d logits)``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    p = sigmoid(drop_logits)
    s2 = prior_stddev ** 2
    value = float(((1 - p) * sq_norms / (2 * s2) - binary_entropy(p)).sum())
    pc = np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR)
    # d/dp [(1-p) a - H(p)] = -a - log((1-p)/p);  dp/dalpha = p(1-p)
    dval_dp = -sq_norms / (2 * s2) - (np.log1p(-pc) - np.log(pc))
    return value / beta, (1 - p) / (2 * s2 * beta), dval_dp * p * (1 - p) / beta


def kl_regularizer(posterior: DropoutPosterior, beta):
    """Gaussian-prior dropout KL surrogate over hidden units, scaled by ``1/beta``.

    A unit's weight vector is its incoming row.  Returns ``(value,
    weight_grads, logit_grad)``; the output layer's weight gradient is zero.
    """
    params = posterior.nominal
    bounds = np.cumsum([0] + params.hidden_sizes)
    value = 0.0
    g_w = [np.zeros_like(w) for w in params.weights]
    g_logit = np.zeros_like(posterior.dropout_logits)
    for l, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        w = params.weights[l]
        v, d_sq, d_logit = unit_kl((w * w).sum(axis=1), posterior.dropout_logits[lo:hi],
                                   posterior.prior_stddev, beta)
        value += v
        g_w[l] = 2 * d_sq[:, None] * w
        g_logit[lo:hi] = d_logit
    return value, g_w, g_logit


# --------------------------------------------------------------------------
# training loops


def fit_frequentist(params: NetworkParams, x, labels, steps=500, lr=5e-3, module=None, history=None):
    """Full-batch Adam on the mean cross-entropy.  Mutates and returns ``params``."""
    arrays = params.arrays()
    state = AdamState.for_arrays(arrays, learning_rate=lr)
    for _ in range(steps):
        try:
            loss, grads = backward(params, x, labels)
        except TrainingDivergence as exc:
            exc.module = module
            raise
        if history is not None:
            history.append(loss)
        adam_step(state, arrays, grads.arrays())
    return params


def free_energy_grads(posterior: DropoutPosterior, x, labels, beta, rng, need_inputs=False):
    """One-sample reparameterised free energy and its gradients.

    Returns ``(value, param_grads, logit_grad, input_grad)``.
    """
    params = posterior.nominal
    keep, dkeep = draw_concrete_keep(posterior, rng, np.atleast_2d(x).shape[0])
    loss, grads = backward(params, x, labels, mask=keep, need_inputs=need_inputs)
    kl, kl_w, kl_logit = kl_regularizer(posterior, beta)
    g_params = grads.arrays()
    for l in range(len(params.weights)):
        g_params[2 * l] = g_params[2 * l] + kl_w[l]
    g_logit = (grads.mask * dkeep).sum(axis=0) + kl_logit
    return loss + kl, g_params, g_logit, grads.inputs


def fit_bayesian(posterior: DropoutPosterior, x, labels, beta=1e4, steps=500, lr=5e-3, rng=None,
                 module=None, history=None):
    """Minimise the per-network free energy over nominal weights and dropout logits."""
    rng = np.random.default_rng() if rng is None else rng
    arrays = posterior.nominal.arrays() + [posterior.dropout_logits]
    state = AdamState.for_arrays(arrays, learning_rate=lr)
    for _ in range(steps):
        try:
            value, g_params, g_logit, _ = free_energy_grads(posterior, x, labels, beta, rng)
        except TrainingDivergence as exc:
            exc.module = module
            raise
        if history is not None:
            history.append(value)
        adam_step(state, arrays, g_params + [g_logit])
    return posterior


# --------------------------------------------------------------------------
# snapshots: u32 layer count, u32 sizes, then f64 weights (row-major) and biases per layer


def params_to_bytes(params: NetworkParams) -> bytes:
    sizes = params.layer_sizes
    out = [struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes)]
    for w, b in zip(params.weights, params.biases):
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def params_from_bytes(data: bytes, n_heads=1) -> NetworkParams:
    (n,) = struct.unpack_from("<I", data, 0)
    sizes = struct.unpack_from(f"<{n}I", data, 4)
    offset = 4 + 4 * n
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=offset).reshape(n_out, n_in)
        offset += 8 * n_in * n_out
        b = np.frombuffer(data, dtype="<f8", count=n_out, offset=offset)
        offset += 8 * n_out
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if offset != len(data):
        raise ValueError(f"trailing bytes in snapshot ({len(data) - offset})")
    return NetworkParams(weights, biases, n_heads=n_heads)


def save_params(path, params: NetworkParams):
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path, n_heads=1) -> NetworkParams:
    return params_from_bytes(Path(path).read_bytes(), n_heads=n_heads)
