"""DeepSIC soft-interference-cancellation equalizer and the black-box DNN detector.

Soft outputs are arrays of shape ``(T, K, |S|)``.  Module ``(k, q)`` sees the
stacked real/imaginary channel output followed by the previous-iteration soft
estimates of every other user, in increasing user order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .modem import stack_real

HIDDEN = 16
BLACKBOX_HIDDEN = 32

# rng stream tags
_INIT, _TRAIN, _ENSEMBLE = 1, 2, 3


def module_rng(seed, *keys):
    return np.random.default_rng([int(seed), *map(int, keys)])


@dataclass
class DeepSicParams:
    modules: list  # modules[q][k] -> NetworkParams
    n_symbols: int

    @property
    def iterations(self) -> int:
        return len(self.modules)

    @property
    def users(self) -> int:
        return len(self.modules[0])

    @property
    def antennas(self) -> int:
        return (self.modules[0][0].layer_sizes[0] - (self.users - 1) * self.n_symbols) // 2


@dataclass
class DeepSicPosterior:
    posteriors: list  # posteriors[q][k] -> nn.DropoutPosterior
    n_symbols: int
    mode: str = "modular"  # or "end-to-end"
    ensemble_size: int = 5

    def __post_init__(self):
        if self.mode not in ("modular", "end-to-end"):
            raise ValueError(f"unknown posterior mode {self.mode!r}")
        if self.ensemble_size < 1:
            raise ValueError("ensemble size must be at least 1")

    @property
    def iterations(self) -> int:
        return len(self.posteriors)

    @property
    def users(self) -> int:
        return len(self.posteriors[0])

    def nominal(self) -> DeepSicParams:
        return DeepSicParams([[p.nominal for p in row] for row in self.posteriors], self.n_symbols)


def module_sizes(users, antennas, n_symbols):
    return [2 * antennas + (users - 1) * n_symbols, HIDDEN, n_symbols]


def init_params(users, antennas, n_symbols, iterations, seed=0) -> DeepSicParams:
    sizes = module_sizes(users, antennas, n_symbols)
    return DeepSicParams(
        [[nn.init_network(sizes, module_rng(seed, k, q, _INIT)) for k in range(users)] for q in range(iterations)],
        n_symbols,
    )


def module_input(y_real, priors, k):
    """``[Re y, Im y, P_l for l != k]`` for a batch."""
    return np.concatenate([y_real] + [p for l, p in enumerate(priors) if l != k], axis=1)


def _as_outputs(y, antennas):
    y = np.asarray(y)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != antennas:
        raise nn.ShapeError(f"channel output length {y.shape[1]} != {antennas}")
    return stack_real(y), single


def _sic(y_real, users, iterations, n_symbols, evaluate, trace=None):
    """Run the SIC schedule; ``evaluate(k, q, x)`` returns module probabilities."""
    t = y_real.shape[0]
    priors = [np.full((t, n_symbols), 1.0 / n_symbols) for _ in range(users)]
    for q in range(iterations):
        priors = [evaluate(k, q, module_input(y_real, priors, k)) for k in range(users)]
        if trace is not None:
            trace.append(np.stack(priors, axis=1))
    return np.stack(priors, axis=1)


def deepsic_infer(params: DeepSicParams, y, trace=None):
    """Frequentist inference; ``y`` is one complex N-vector or a batch ``(T, N)``."""
    y_real, single = _as_outputs(y, params.antennas)
    out = _sic(y_real, params.users, params.iterations, params.n_symbols,
               lambda k, q, x: nn.forward_batch(params.modules[q][k], x)[0], trace)
    return out[0] if single else out


def _realization(posterior, k, q, j, seed):
    return nn.sample_dropout_realization(posterior.posteriors[q][k], module_rng(seed, k, q, j, _ENSEMBLE))


def bayesian_infer(posterior: DeepSicPosterior, y, ensemble_size=None, seed=0):
    """Average of ``J`` full-architecture realisations."""
    j_count = posterior.ensemble_size if ensemble_size is None else ensemble_size
    if j_count < 1:
        raise ValueError("ensemble size must be at least 1")
    total = 0.0
    for j in range(j_count):
        member = DeepSicParams([[_realization(posterior, k, q, j, seed) for k in range(posterior.users)]
                                for q in range(posterior.iterations)], posterior.n_symbols)
        total = total + deepsic_infer(member, y)
    return total / j_count


def modular_bayesian_infer(posterior: DeepSicPosterior, y, ensemble_size=None, seed=0, trace=None):
    """Ensemble every module before its output feeds the next iteration."""
    j_count = posterior.ensemble_size if ensemble_size is None else ensemble_size
    if j_count < 1:
        raise ValueError("ensemble size must be at least 1")
    nominal = posterior.nominal()
    y_real, single = _as_outputs(y, nominal.antennas)

    def evaluate(k, q, x):
        total = 0.0
        for j in range(j_count):
            total = total + nn.forward_batch(_realization(posterior, k, q, j, seed), x)[0]
        return total / j_count

    out = _sic(y_real, posterior.users, posterior.iterations, posterior.n_symbols, evaluate, trace)
    return out[0] if single else out


def posterior_infer(posterior: DeepSicPosterior, y, ensemble_size=None, seed=0):
    if posterior.mode == "modular":
        return modular_bayesian_infer(posterior, y, ensemble_size, seed)
    return bayesian_infer(posterior, y, ensemble_size, seed)


# --------------------------------------------------------------------------
# training


def _check_pilots(symbols, y):
    symbols = np.asarray(symbols)
    if symbols.ndim != 2 or symbols.shape[0] == 0:
        from .modem import ConfigError

        raise ConfigError("pilots", "at least one pilot symbol is required")
    if np.asarray(y).shape[0] != symbols.shape[0]:
        raise nn.ShapeError("pilot symbols and outputs differ in length")
    return symbols


def train_frequentist(symbols, y, n_symbols, iterations=3, steps=500, lr=5e-3, seed=0, history=None):
    """Sequential per-module training; iteration ``q`` consumes trained iteration ``q-1`` outputs."""
    symbols = _check_pilots(symbols, y)
    users = symbols.shape[1]
    y_real = stack_real(y)
    params = init_params(users, y_real.shape[1] // 2, n_symbols, iterations, seed)
    priors = [np.full((y_real.shape[0], n_symbols), 1.0 / n_symbols) for _ in range(users)]
    for q in range(iterations):
        for k in range(users):
            curve = [] if history is not None else None
            nn.fit_frequentist(params.modules[q][k], module_input(y_real, priors, k), symbols[:, k],
                               steps=steps, lr=lr, module=(k, q), history=curve)
            if history is not None:
                history[(k, q)] = curve
        priors = [nn.forward_batch(params.modules[q][k], module_input(y_real, priors, k))[0] for k in range(users)]
    return params


def train_modular_bayesian(symbols, y, n_symbols, iterations=3, steps=500, lr=5e-3, beta=1e4, ensemble_size=5,
                           seed=0, drop_prob=nn.DEFAULT_DROP_PROB, history=None):
    """Per-module free-energy training, iteration by iteration.

    The inputs of iteration ``q+1`` are the ensembled (``J``-sample averaged)
    outputs of the trained iteration-``q`` posteriors on the pilots.
    """
    symbols = _check_pilots(symbols, y)
    users = symbols.shape[1]
    y_real = stack_real(y)
    base = init_params(users, y_real.shape[1] // 2, n_symbols, iterations, seed)
    post = DeepSicPosterior([[nn.make_posterior(m, drop_prob) for m in row] for row in base.modules],
                            n_symbols, "modular", ensemble_size)
    priors = [np.full((y_real.shape[0], n_symbols), 1.0 / n_symbols) for _ in range(users)]
    for q in range(iterations):
        inputs = [module_input(y_real, priors, k) for k in range(users)]
        for k in range(users):
            curve = [] if history is not None else None
            nn.fit_bayesian(post.posteriors[q][k], inputs[k], symbols[:, k], beta=beta, steps=steps, lr=lr,
                            rng=module_rng(seed, k, q, _TRAIN), module=(k, q), history=curve)
            if history is not None:
                history[(k, q)] = curve
        new = []
        for k in range(users):
            total = 0.0
            for j in range(ensemble_size):
                real = _realization(post, k, q, j, seed + 1)
                total = total + nn.forward_batch(real, inputs[k])[0]
            new.append(total / ensemble_size)
        priors = new
    return post


def _e2e_pass(grid, y_real, symbols, n_symbols, masks):
    """Forward then backward through the full unrolled architecture.

    ``grid[q][k]`` are NetworkParams, ``masks[q][k]`` keep multipliers or None.
    Returns ``(loss, grads[q][k])`` for the summed final-iteration cross-entropy.
    """
    iterations, users = len(grid), len(grid[0])
    t = y_real.shape[0]
    priors = [np.full((t, n_symbols), 1.0 / n_symbols) for _ in range(users)]
    caches = []
    for q in range(iterations):
        row = []
        new = []
        for k in range(users):
            probs, cache = nn.forward_batch(grid[q][k], module_input(y_real, priors, k), masks[q][k],
                                            check_finite=True)
            row.append(cache)
            new.append(probs)
        caches.append(row)
        priors = new
    loss = sum(nn.batch_cross_entropy(priors[k], symbols[:, k]) for k in range(users))
    if not np.isfinite(loss):
        raise nn.TrainingDivergence("non-finite end-to-end loss", module=(None, iterations - 1))
    grads = [[None] * users for _ in range(iterations)]
    g_probs = None
    for q in range(iterations - 1, -1, -1):
        next_g = [np.zeros((t, n_symbols)) for _ in range(users)] if q else None
        for k in range(users):
            cache = caches[q][k]
            if q == iterations - 1:
                g_logits = (cache.probs - nn.one_hot(symbols[:, k], n_symbols)) / t
            else:
                g_logits = nn.softmax_vjp(cache.probs, g_probs[k])
            g = nn.backprop(grid[q][k], cache, g_logits, need_inputs=q > 0)
            grads[q][k] = g
            if q:
                col = y_real.shape[1]
                for l in range(users):
                    if l == k:
                        continue
                    next_g[l] += g.inputs[:, col:col + n_symbols]
                    col += n_symbols
        g_probs = next_g
    return loss, grads


def train_end_to_end(symbols, y, n_symbols, iterations=3, steps=500, lr=5e-3, seed=0, bayesian=True, beta=1e4,
                     ensemble_size=5, drop_prob=nn.DEFAULT_DROP_PROB, history=None):
    """Joint training of all modules on the final-iteration loss.

    With ``bayesian`` the objective is the one-sample free energy over every
    module's nominal weights and dropout logits; otherwise plain cross-entropy.
    """
    symbols = _check_pilots(symbols, y)
    users = symbols.shape[1]
    y_real = stack_real(y)
    base = init_params(users, y_real.shape[1] // 2, n_symbols, iterations, seed)
    posts = [[nn.make_posterior(m, drop_prob) for m in row] for row in base.modules]
    arrays = []
    for row in posts:
        for p in row:
            arrays += p.nominal.arrays() + ([p.dropout_logits] if bayesian else [])
    state = nn.AdamState.for_arrays(arrays, learning_rate=lr)
    rngs = [[module_rng(seed, k, q, _TRAIN) for k in range(users)] for q in range(iterations)]
    grid = [[p.nominal for p in row] for row in posts]
    for _ in range(steps):
        masks = [[None] * users for _ in range(iterations)]
        dkeeps = [[None] * users for _ in range(iterations)]
        if bayesian:
            for q in range(iterations):
                for k in range(users):
                    masks[q][k], dkeeps[q][k] = nn.draw_concrete_keep(posts[q][k], rngs[q][k], y_real.shape[0])
        loss, grads = _e2e_pass(grid, y_real, symbols, n_symbols, masks)
        flat = []
        for q in range(iterations):
            for k in range(users):
                g = grads[q][k].arrays()
                if bayesian:
                    p = posts[q][k]
                    kl, kl_w, kl_logit = nn.kl_regularizer(p, beta)
                    loss += kl
                    for l in range(len(kl_w)):
                        g[2 * l] = g[2 * l] + kl_w[l]
                    g.append((grads[q][k].mask * dkeeps[q][k]).sum(axis=0) + kl_logit)
                flat += g
        if history is not None:
            history.append(loss)
        nn.adam_step(state, arrays, flat)
    if bayesian:
        return DeepSicPosterior(posts, n_symbols, "end-to-end", ensemble_size)
    return DeepSicParams(grid, n_symbols)


def train_bayesian_e2e(symbols, y, n_symbols, iterations=3, steps=500, lr=5e-3, beta=1e4, ensemble_size=5, seed=0,
                       drop_prob=nn.DEFAULT_DROP_PROB, history=None) -> DeepSicPosterior:
    return train_end_to_end(symbols, y, n_symbols, iterations, steps, lr, seed, True, beta, ensemble_size,
                            drop_prob, history)


def permute_users(params: DeepSicParams, perm) -> DeepSicParams:
    """Relabel users: new user ``i`` is old user ``perm[i]``."""
    perm = list(perm)
    users, s = params.users, params.n_symbols
    rows = []
    for row in params.modules:
        new_row = []
        for new_k, old_k in enumerate(perm):
            m = row[old_k].copy()
            n_y = m.layer_sizes[0] - (users - 1) * s
            old_others = [l for l in range(users) if l != old_k]
            new_others = [l for l in range(users) if l != new_k]
            cols = list(range(n_y))
            for new_l in new_others:
                pos = old_others.index(perm[new_l])
                cols += list(range(n_y + pos * s, n_y + (pos + 1) * s))
            m.weights[0] = m.weights[0][:, cols]
            new_row.append(m)
        rows.append(new_row)
    return DeepSicParams(rows, s)


# --------------------------------------------------------------------------
# black-box detector


def blackbox_sizes(users, antennas, n_symbols):
    return [2 * antennas, BLACKBOX_HIDDEN, BLACKBOX_HIDDEN, BLACKBOX_HIDDEN, users * n_symbols]


def blackbox_detect_train(symbols, y, n_symbols, steps=500, lr=5e-3, seed=0, history=None) -> nn.NetworkParams:
    symbols = _check_pilots(symbols, y)
    users = symbols.shape[1]
    y_real = stack_real(y)
    params = nn.init_network(blackbox_sizes(users, y_real.shape[1] // 2, n_symbols), module_rng(seed, 0, 0, _INIT),
                             n_heads=users)
    return nn.fit_frequentist(params, y_real, symbols, steps=steps, lr=lr, module="blackbox", history=history)


def blackbox_detect(params: nn.NetworkParams, y):
    y = np.asarray(y)
    single = y.ndim == 1
    probs, _ = nn.forward_batch(params, stack_real(np.atleast_2d(y)))
    out = probs.reshape(probs.shape[0], params.n_heads, -1)
    return out[0] if single else out


# --------------------------------------------------------------------------
# snapshots


def save_deepsic(directory, model, antennas=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if isinstance(model, DeepSicPosterior):
        grid = [[p.nominal for p in row] for row in model.posteriors]
        mode, j = model.mode, model.ensemble_size
    else:
        grid, mode, j = model.modules, "frequentist", 1
    for q, row in enumerate(grid):
        for k, m in enumerate(row):
            nn.save_params(d / f"deepsic_k{k + 1}_q{q + 1}.bin", m)
            if isinstance(model, DeepSicPosterior):
                logits = model.posteriors[q][k].dropout_logits
                (d / f"deepsic_k{k + 1}_q{q + 1}.logits.bin").write_bytes(logits.astype("<f8").tobytes())
    users = len(grid[0])
    n_ant = antennas or (grid[0][0].layer_sizes[0] - (users - 1) * model.n_symbols) // 2
    manifest = {"K": users, "Q": len(grid), "S": model.n_symbols, "N": n_ant, "mode": mode, "J": j}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_deepsic(directory):
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    grid = [[nn.load_params(d / f"deepsic_k{k + 1}_q{q + 1}.bin") for k in range(man["K"])] for q in range(man["Q"])]
    if man["mode"] == "frequentist":
        return DeepSicParams(grid, man["S"])
    posts = [[nn.DropoutPosterior(m, np.frombuffer((d / f"deepsic_k{k + 1}_q{q + 1}.logits.bin").read_bytes(),
                                                   dtype="<f8").astype(float))
              for k, m in enumerate(row)] for q, row in enumerate(grid)]
    return DeepSicPosterior(posts, man["S"], man["mode"], man["J"])
