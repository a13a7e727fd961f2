"""Weighted belief propagation decoder with frequentist and Bayesian training.

Soft outputs ``L`` live in (-1, 1) with ``L = tanh(llr_total / 2)``; the
probability that a bit is one is ``(1 + L) / 2``.  Weight ``W[q, e]`` scales
the check-to-variable message on edge ``e`` both inside the iteration-``q``
variable update (applied to iteration ``q-1`` messages) and in the
iteration-``q`` marginal (applied to iteration ``q`` messages).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .nn import (AdamState, DEFAULT_DROP_PROB, DEFAULT_TEMPERATURE, TrainingDivergence, adam_step,
                 concrete_keep, open_uniform, sample_keep_mask, unit_kl)
from .polar import TannerGraph


@dataclass
class WbpParams:
    weights: np.ndarray  # (Q, E)

    @property
    def iterations(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def ones(cls, iterations, graph: TannerGraph):
        return cls(np.ones((iterations, graph.edge_count)))

    def copy(self):
        return WbpParams(self.weights.copy())


@dataclass
class WbpPosterior:
    nominal: WbpParams
    dropout_logits: np.ndarray  # (Q, E)
    mode: str = "end-to-end"  # or "modular"
    ensemble_size: int = 3
    prior_stddev: float = 1.0
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.dropout_logits.shape != self.nominal.weights.shape:
            raise ValueError("one dropout logit per weight required")
        if self.mode not in ("end-to-end", "modular"):
            raise ValueError(f"unknown posterior mode {self.mode!r}")

    @classmethod
    def initial(cls, iterations, graph, mode="end-to-end", ensemble_size=3, drop_prob=DEFAULT_DROP_PROB):
        logit = np.log(drop_prob) - np.log1p(-drop_prob)
        return cls(WbpParams.ones(iterations, graph), np.full((iterations, graph.edge_count), logit),
                   mode=mode, ensemble_size=ensemble_size)

    def copy(self):
        return replace(self, nominal=self.nominal.copy(), dropout_logits=self.dropout_logits.copy())


def _graph_args(graph):
    valid = graph.chk_edges >= 0
    return graph.edge_var, graph.var_edges, graph.chk_edges, valid


def _as_batch(llr, graph):
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr = np.atleast_2d(llr)
    if llr.shape[1] != graph.variable_count:
        raise ValueError(f"LLR length {llr.shape[1]} != variable count {graph.variable_count}")
    return llr, single


# --------------------------------------------------------------------------
# inference


def _run(llr, graph, weights, kernels=None, trace=False):
    """Unrolled WBP with per-iteration weights ``(Q, E)``; optionally keep the trace."""
    k = kernels or _kernels.active()
    edge_var, var_edges, chk_edges, valid = _graph_args(graph)
    c = np.zeros((llr.shape[0], graph.edge_count))
    steps = []
    out = llr
    for q in range(weights.shape[0]):
        a = np.ascontiguousarray(weights[q])
        t = k.var_to_check(llr, c, a, edge_var, var_edges)
        c_new, p = k.check_to_var(t, chk_edges, valid)
        out = k.marginal(llr, c_new, a, var_edges)
        if trace:
            steps.append((c, t, p, c_new, out))
        c = c_new
    return out, steps


def wbp_infer(params: WbpParams, llr, graph: TannerGraph, kernels=None):
    """Soft bit estimates ``L`` in (-1, 1) for one LLR vector or a batch."""
    llr, single = _as_batch(llr, graph)
    out, _ = _run(llr, graph, params.weights, kernels)
    soft = np.tanh(0.5 * out)
    return soft[0] if single else soft


def bp_infer(llr, graph: TannerGraph, iterations=5, kernels=None):
    return wbp_infer(WbpParams.ones(iterations, graph), llr, graph, kernels)


def hard_decide(soft) -> np.ndarray:
    """Bit is one iff the soft value is strictly positive."""
    return (np.asarray(soft) > 0).astype(np.uint8)


def _member_rng(seed, q, j):
    return np.random.default_rng([int(seed), int(q), int(j)])


def sample_weights(posterior: WbpPosterior, q, j, seed):
    keep = sample_keep_mask(posterior.dropout_logits[q], _member_rng(seed, q, j))
    return posterior.nominal.weights[q] * keep


def bayesian_wbp_infer(posterior: WbpPosterior, llr, graph, ensemble_size=None, seed=0, kernels=None):
    """Average of full-decoder realisations (ensemble at the output only)."""
    j_count = posterior.ensemble_size if ensemble_size is None else ensemble_size
    if j_count < 1:
        raise ValueError("ensemble size must be at least 1")
    llr, single = _as_batch(llr, graph)
    total = 0.0
    for j in range(j_count):
        w = np.stack([sample_weights(posterior, q, j, seed) for q in range(posterior.nominal.iterations)])
        out, _ = _run(llr, graph, w, kernels)
        total = total + np.tanh(0.5 * out)
    soft = total / j_count
    return soft[0] if single else soft


def _ensembled_iteration(posterior, q, llr, c_prev, graph, j_count, seed, k):
    """One iteration with variable-to-check messages averaged over realisations."""
    edge_var, var_edges, chk_edges, valid = _graph_args(graph)
    members = [sample_weights(posterior, q, j, seed) for j in range(j_count)]
    t = sum(k.var_to_check(llr, c_prev, a, edge_var, var_edges) for a in members) / j_count
    c, _ = k.check_to_var(t, chk_edges, valid)
    return c, members


def modular_bayesian_wbp_infer(posterior: WbpPosterior, llr, graph, ensemble_size=None, seed=0, kernels=None,
                               trace=None):
    """Ensemble inside every iteration: average the variable-to-check messages over
    ``J`` realisations of that iteration's weights before the check update."""
    k = kernels or _kernels.active()
    j_count = posterior.ensemble_size if ensemble_size is None else ensemble_size
    if j_count < 1:
        raise ValueError("ensemble size must be at least 1")
    llr, single = _as_batch(llr, graph)
    c = np.zeros((llr.shape[0], graph.edge_count))
    members = []
    for q in range(posterior.nominal.iterations):
        c, members = _ensembled_iteration(posterior, q, llr, c, graph, j_count, seed, k)
        if trace is not None:
            trace.append(c)
    if not members:
        soft = np.tanh(0.5 * llr)
    else:
        soft = sum(np.tanh(0.5 * k.marginal(llr, c, a, graph.var_edges)) for a in members) / j_count
    return soft[0] if single else soft


# --------------------------------------------------------------------------
# training


def _bit_loss(out, targets):
    """Mean binary cross-entropy with ``P(1) = sigmoid(out)`` and its gradient."""
    n = out.size
    with np.errstate(invalid="ignore"):  # NaN inputs are reported as divergence by the caller
        loss = float((np.logaddexp(0.0, out) - targets * out).sum() / n)
    grad = (0.5 * (1.0 + np.tanh(0.5 * out)) - targets) / n
    return loss, grad


def multiloss_grad(llr, targets, graph, weights, c0=None, kernels=None):
    """Sum over iterations of the bitwise cross-entropy and its gradient w.r.t. ``weights``.

    ``c0`` optionally supplies the incoming check-to-variable messages (used when a
    single iteration is trained on top of already-trained ones).
    """
    k = kernels or _kernels.active()
    edge_var, var_edges, chk_edges, valid = _graph_args(graph)
    n_iter = weights.shape[0]
    c = np.zeros((llr.shape[0], graph.edge_count)) if c0 is None else c0
    cache = []
    total = 0.0
    for q in range(n_iter):
        a = np.ascontiguousarray(weights[q])
        t = k.var_to_check(llr, c, a, edge_var, var_edges)
        c_new, p = k.check_to_var(t, chk_edges, valid)
        out = k.marginal(llr, c_new, a, var_edges)
        loss, g_out = _bit_loss(out, targets)
        total += loss
        cache.append((c, t, p, c_new, g_out))
        c = c_new
    if not np.isfinite(total):
        raise TrainingDivergence("non-finite WBP loss")
    g_w = np.zeros_like(weights)
    g_next = None
    for q in range(n_iter - 1, -1, -1):
        c_prev, t, p, c_q, g_out = cache[q]
        a = weights[q]
        g_ov = g_out[:, edge_var]
        g_w[q] += (g_ov * c_q).sum(axis=0)
        g_c = g_ov * a
        if g_next is not None:
            g_c = g_c + g_next
        g_t = k.check_to_var_backward(t, p, g_c, chk_edges, valid)
        g_x = g_t * 0.5 * (1.0 - t * t)
        g_next, g_a, _ = k.var_to_check_backward(g_x, c_prev, np.ascontiguousarray(a), edge_var, var_edges)
        g_w[q] += g_a
    return total, g_w


def _batches(n, batch_size, steps, rng):
    if batch_size is None or batch_size >= n:
        for _ in range(steps):
            yield slice(None)
        return
    for _ in range(steps):
        yield np.sort(rng.choice(n, size=batch_size, replace=False))


def train_wbp_frequentist(llr, codewords, graph, iterations=5, steps=500, lr=1e-3, batch_size=None, seed=0,
                          history=None, kernels=None) -> WbpParams:
    llr = np.atleast_2d(np.asarray(llr, dtype=float))
    targets = np.asarray(codewords, dtype=float).reshape(llr.shape)
    if llr.shape[0] == 0:
        raise ValueError("empty training set")
    params = WbpParams.ones(iterations, graph)
    state = AdamState.for_arrays([params.weights], learning_rate=lr)
    rng = np.random.default_rng([int(seed), 17])
    for idx in _batches(llr.shape[0], batch_size, steps, rng):
        loss, g = multiloss_grad(llr[idx], targets[idx], graph, params.weights, kernels=kernels)
        if history is not None:
            history.append(loss)
        adam_step(state, [params.weights], [g])
    return params


def _free_energy(w, logits, posterior, llr, targets, graph, beta, mask_rngs, c0, kernels):
    """One-sample free energy of weight rows ``w`` (one mask stream per row) and its gradients."""
    u = np.stack([open_uniform(r, w.shape[1]) for r in mask_rngs])
    keep, dkeep = concrete_keep(logits, u, posterior.temperature)
    loss, g_eff = multiloss_grad(llr, targets, graph, w * keep, c0=c0, kernels=kernels)
    kl, d_sq, d_logit = unit_kl(w * w, logits, posterior.prior_stddev, beta)
    return loss + kl, g_eff * keep + 2 * d_sq * w, g_eff * w * dkeep + d_logit


def train_wbp_bayesian(llr, codewords, graph, iterations=5, beta=1e4, steps=500, lr=1e-3, batch_size=None,
                       seed=0, ensemble_size=3, history=None, kernels=None) -> WbpPosterior:
    """Joint posterior over all iterations (output-level ensembling at inference)."""
    llr = np.atleast_2d(np.asarray(llr, dtype=float))
    targets = np.asarray(codewords, dtype=float).reshape(llr.shape)
    post = WbpPosterior.initial(iterations, graph, "end-to-end", ensemble_size)
    w, logits = post.nominal.weights, post.dropout_logits
    state = AdamState.for_arrays([w, logits], learning_rate=lr)
    batch_rng = np.random.default_rng([int(seed), 17])
    # one mask stream per iteration so a one-iteration decoder matches its modular twin
    mask_rngs = [np.random.default_rng([int(seed), q, 23]) for q in range(iterations)]
    for idx in _batches(llr.shape[0], batch_size, steps, batch_rng):
        value, g_w, g_logit = _free_energy(w, logits, post, llr[idx], targets[idx], graph, beta, mask_rngs,
                                           None, kernels)
        if history is not None:
            history.append(value)
        adam_step(state, [w, logits], [g_w, g_logit])
    return post


def train_wbp_modular_bayesian(llr, codewords, graph, iterations=5, beta=1e4, steps=500, lr=1e-3,
                               batch_size=None, seed=0, ensemble_size=3, history=None,
                               kernels=None) -> WbpPosterior:
    """Sequential per-iteration posteriors.

    Iteration ``q`` is trained on the messages produced by the already-trained,
    ensembled iterations ``1..q-1``.
    """
    k = kernels or _kernels.active()
    llr = np.atleast_2d(np.asarray(llr, dtype=float))
    targets = np.asarray(codewords, dtype=float).reshape(llr.shape)
    post = WbpPosterior.initial(iterations, graph, "modular", ensemble_size)
    c_prev = np.zeros((llr.shape[0], graph.edge_count))
    batch_rng = np.random.default_rng([int(seed), 17])
    for q in range(iterations):
        w = post.nominal.weights[q:q + 1]
        logits = post.dropout_logits[q:q + 1]
        state = AdamState.for_arrays([w, logits], learning_rate=lr)
        mask_rng = [np.random.default_rng([int(seed), q, 23])]
        curve = []
        for idx in _batches(llr.shape[0], batch_size, steps, batch_rng):
            value, g_w, g_logit = _free_energy(w, logits, post, llr[idx], targets[idx], graph, beta, mask_rng,
                                               c_prev[idx], k)
            curve.append(value)
            adam_step(state, [w, logits], [g_w, g_logit])
        if history is not None:
            history.append(curve)
        c_prev, _ = _ensembled_iteration(post, q, llr, c_prev, graph, ensemble_size, seed + 7919, k)
    return post


# --------------------------------------------------------------------------
# snapshots


def save_wbp(path, params_or_posterior):
    lines = []
    if isinstance(params_or_posterior, WbpPosterior):
        post = params_or_posterior
        lines.append(f"# wbp posterior mode={post.mode} J={post.ensemble_size} "
                     f"prior_stddev={post.prior_stddev!r} temperature={post.temperature!r}")
        for w, a in zip(post.nominal.weights, post.dropout_logits):
            lines.append(" ".join(repr(float(x)) for x in w))
            lines.append(" ".join(repr(float(x)) for x in a))
    else:
        lines.append("# wbp weights")
        for w in params_or_posterior.weights:
            lines.append(" ".join(repr(float(x)) for x in w))
    Path(path).write_text("\n".join(lines) + "\n")


def load_wbp(path):
    raw = Path(path).read_text().splitlines()
    header, rows = raw[0], [ln for ln in raw[1:] if ln.strip()]
    parse = [np.array([float(x) for x in ln.split()]) for ln in rows]
    if header.startswith("# wbp posterior"):
        meta = dict(kv.split("=") for kv in header.split()[3:])
        return WbpPosterior(WbpParams(np.stack(parse[0::2])), np.stack(parse[1::2]), mode=meta["mode"],
                            ensemble_size=int(meta["J"]), prior_stddev=float(meta["prior_stddev"]),
                            temperature=float(meta["temperature"]))
    if header.startswith("# wbp weights"):
        return WbpParams(np.stack(parse))
    raise ValueError(f"{path}: not a WBP snapshot")
