"""Constellations, soft-bit/LLR conversion, synthetic MIMO channels and block framing."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

LLR_CLIP = 15.0


class ConfigError(ValueError):
    """Inconsistent simulation configuration."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TraceParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Constellation:
    name: str
    points: np.ndarray  # complex, index = class label used by the networks
    labels: np.ndarray  # (|S|, r) bit patterns, MSB first

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]


def _gray_psk(name, order, phase0):
    r = int(np.log2(order))
    idx = np.arange(order)
    points = np.exp(1j * (phase0 + 2 * np.pi * idx / order))
    gray = idx ^ (idx >> 1)
    labels = (gray[:, None] >> np.arange(r - 1, -1, -1)[None, :]) & 1
    return Constellation(name, points, labels.astype(np.uint8))


def constellation(name: str) -> Constellation:
    name = name.lower()
    if name == "bpsk":
        return Constellation("bpsk", np.array([1.0 + 0j, -1.0 + 0j]), np.array([[0], [1]], dtype=np.uint8))
    if name == "qpsk":
        return _gray_psk("qpsk", 4, np.pi / 4)
    if name in ("psk8", "8psk"):
        return _gray_psk("psk8", 8, 0.0)
    raise ConfigError("constellation", f"unknown constellation {name!r}")


def _label_index(const: Constellation):
    weights = 1 << np.arange(const.bits_per_symbol - 1, -1, -1)
    lookup = np.empty(const.size, dtype=np.int64)
    lookup[const.labels @ weights] = np.arange(const.size)
    return weights, lookup


def bits_to_indices(bits, const: Constellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    r = const.bits_per_symbol
    if bits.shape[-1] % r:
        raise ValueError(f"bit count {bits.shape[-1]} not divisible by {r}")
    weights, lookup = _label_index(const)
    groups = bits.reshape(*bits.shape[:-1], -1, r)
    return lookup[groups @ weights]


def indices_to_bits(indices, const: Constellation) -> np.ndarray:
    lab = const.labels[np.asarray(indices)]
    return lab.reshape(*lab.shape[:-2], -1)


def modulate(bits, const: Constellation) -> np.ndarray:
    return const.points[bits_to_indices(bits, const)]


def pad_bits(bits, r):
    """Append known zero bits so the last axis is a multiple of ``r``."""
    bits = np.asarray(bits)
    extra = (-bits.shape[-1]) % r
    if not extra:
        return bits
    pad = np.zeros(bits.shape[:-1] + (extra,), dtype=bits.dtype)
    return np.concatenate([bits, pad], axis=-1)


def soft_bit_marginals(probs, const: Constellation) -> np.ndarray:
    """``P(bit b = 1)`` for each of the ``r`` label bits; works on any leading shape."""
    return np.asarray(probs, dtype=float) @ const.labels.astype(float)


def llr_from_soft_bits(soft_bits) -> np.ndarray:
    # sums of probabilities can overshoot [0, 1] by an ulp
    c = np.clip(np.asarray(soft_bits, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        llr = np.log(c) - np.log1p(-c)
    return np.clip(llr, -LLR_CLIP, LLR_CLIP)


# --------------------------------------------------------------------------
# channels


def exp_decay_matrix(n, k) -> np.ndarray:
    rows = np.arange(n)[:, None]
    cols = np.arange(k)[None, :]
    return np.exp(-np.abs(rows - cols)).astype(float)


def noise_std(snr_db) -> float:
    """Per-real-dimension noise std for unit-energy symbols."""
    return float(np.sqrt(0.5 * 10.0 ** (-snr_db / 10.0)))


def _complex_noise(shape, sigma, rng):
    if sigma == 0:
        return np.zeros(shape, dtype=complex)
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_linear_channel(h, s, sigma, rng=None) -> np.ndarray:
    """``y = H s + w`` for symbol rows ``s`` of shape ``(T, K)`` (or one ``K`` vector)."""
    s = np.asarray(s)
    h = np.asarray(h)
    if s.shape[-1] != h.shape[1]:
        raise ValueError("symbol width does not match channel columns")
    clean = s @ h.T
    return clean + _complex_noise(clean.shape, sigma, rng)


def apply_tanh_channel(h, s, sigma, rng=None) -> np.ndarray:
    s = np.asarray(s)
    h = np.asarray(h)
    if s.shape[-1] != h.shape[1]:
        raise ValueError("symbol width does not match channel columns")
    z = 0.5 * (s @ h.T)
    z = z + _complex_noise(z.shape, sigma, rng)
    return np.tanh(z.real) + 1j * np.tanh(z.imag)


def stack_real(y) -> np.ndarray:
    y = np.asarray(y)
    return np.concatenate([y.real, y.imag], axis=-1).astype(float)


# --------------------------------------------------------------------------
# blocks


@dataclass
class TransmissionBlock:
    symbols: np.ndarray  # (T, K) constellation indices
    outputs: np.ndarray  # (T, N) complex
    channel_matrix: np.ndarray
    noise_std: float
    snr_db: float
    pilot_count: int
    constellation: Constellation
    message_bits: np.ndarray | None = None  # (K, codewords, m_len)
    codewords: np.ndarray | None = None  # (K, codewords, C)

    @property
    def info_count(self) -> int:
        return self.symbols.shape[0] - self.pilot_count

    @property
    def pilots(self):
        return self.symbols[: self.pilot_count], self.outputs[: self.pilot_count]

    @property
    def info(self):
        return self.symbols[self.pilot_count:], self.outputs[self.pilot_count:]


def symbols_per_codeword(block_length, const: Constellation) -> int:
    return -(-block_length // const.bits_per_symbol)


def make_block(*, const, users, antennas, pilot_count, info_count, snr_db, rng, channel="linear",
               channel_matrix=None, code=None) -> TransmissionBlock:
    """Generate one block: uniform pilots, uniform or coded info symbols, channel outputs."""
    if pilot_count < 0:
        raise ConfigError("pilots", "must be non-negative")
    if info_count < 0:
        raise ConfigError("info", "must be non-negative")
    h = exp_decay_matrix(antennas, users) if channel_matrix is None else np.asarray(channel_matrix)
    if h.shape != (antennas, users):
        raise ConfigError("channel", f"matrix shape {h.shape} != ({antennas}, {users})")
    pilots = rng.integers(0, const.size, size=(pilot_count, users))
    messages = codewords = None
    if code is None:
        info = rng.integers(0, const.size, size=(info_count, users))
    else:
        per_cw = symbols_per_codeword(code.block_length, const)
        if info_count % per_cw:
            raise ConfigError("info", f"{info_count} info symbols is not a multiple of {per_cw} symbols per codeword")
        n_cw = info_count // per_cw
        from .polar import encode

        messages = rng.integers(0, 2, size=(users, n_cw, code.message_length)).astype(np.uint8)
        codewords = encode(code, messages)
        padded = pad_bits(codewords, const.bits_per_symbol)
        info = bits_to_indices(padded, const).reshape(users, -1).T
    symbols = np.concatenate([pilots, info], axis=0)
    sigma = noise_std(snr_db)
    tx = const.points[symbols]
    if channel == "linear":
        y = apply_linear_channel(h, tx, sigma, rng)
    elif channel == "tanh":
        y = apply_tanh_channel(h, tx, sigma, rng)
    else:
        raise ConfigError("channel", f"unknown channel law {channel!r}")
    return TransmissionBlock(symbols, y, h, sigma, snr_db, pilot_count, const, messages, codewords)


def codeword_llrs(soft_symbols, const: Constellation, block_length) -> np.ndarray:
    """Info-symbol soft vectors ``(T, K, |S|)`` to per-codeword LLRs ``(K, codewords, C)``."""
    probs = np.asarray(soft_symbols)
    t, k, _ = probs.shape
    per_cw = symbols_per_codeword(block_length, const)
    soft = soft_bit_marginals(probs, const)  # (T, K, r)
    soft = soft.transpose(1, 0, 2).reshape(k, t // per_cw, per_cw * const.bits_per_symbol)
    return llr_from_soft_bits(soft[..., :block_length])


# --------------------------------------------------------------------------
# channel traces: header "N K B" then B blocks of N rows of K "re,im" entries


def write_channel_trace(path, matrices):
    matrices = [np.asarray(m, dtype=complex) for m in matrices]
    n, k = matrices[0].shape
    lines = [f"{n} {k} {len(matrices)}"]
    for m in matrices:
        for row in m:
            lines.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_channel_trace(path) -> list[np.ndarray]:
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise TraceParseError(1, "empty trace file")
    lineno, header = lines[0]
    try:
        n, k, b = map(int, header.split())
    except ValueError:
        raise TraceParseError(lineno, "header must be three integers 'N K B'") from None
    body = lines[1:]
    if len(body) != n * b:
        raise TraceParseError(body[-1][0] if body else lineno, f"expected {n * b} matrix rows, found {len(body)}")
    out = []
    for blk in range(b):
        m = np.empty((n, k), dtype=complex)
        for r in range(n):
            lineno, text = body[blk * n + r]
            fields = text.split()
            if len(fields) != k:
                raise TraceParseError(lineno, f"expected {k} entries, found {len(fields)}")
            for c, f in enumerate(fields):
                try:
                    re, im = f.split(",")
                    m[r, c] = complex(float(re), float(im))
                except ValueError:
                    raise TraceParseError(lineno, f"bad complex entry {f!r}") from None
        out.append(m)
    return out


def dump_block_csv(path, blocks):
    """Optional per-symbol dump: block, i, user, tx_bits, tx re/im, then y components."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = blocks[0].outputs.shape[1]
        w.writerow(["block", "i", "user", "tx_bits", "tx_symbol_re", "tx_symbol_im"]
                   + [f"y{a}_{part}" for a in range(n) for part in ("re", "im")])
        for b, blk in enumerate(blocks):
            pts = blk.constellation.points[blk.symbols]
            for i in range(blk.symbols.shape[0]):
                ys = [v for z in blk.outputs[i] for v in (repr(z.real), repr(z.imag))]
                for u in range(blk.symbols.shape[1]):
                    bits = "".join(map(str, blk.constellation.labels[blk.symbols[i, u]]))
                    w.writerow([b, i, u, bits, repr(pts[i, u].real), repr(pts[i, u].imag)] + ys)
