"""Polar code construction, encoding and Tanner graphs.

The frozen set is picked by the Bhattacharyya recursion on a binary erasure
channel.  The parity-check matrix is a GF(2) null-space basis of the
generator, so any linear code can be plugged in through :class:`CodeSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gf2


@dataclass(frozen=True)
class CodeSpec:
    generator: np.ndarray  # (m_len, C) uint8
    parity_check: np.ndarray  # (C - m_len, C) uint8
    frozen_set: tuple = ()
    name: str = "custom"

    @property
    def block_length(self) -> int:
        return self.generator.shape[1]

    @property
    def message_length(self) -> int:
        return self.generator.shape[0]

    def __post_init__(self):
        # pseudo-inverse on information coordinates, used by message recovery
        _, pivots = gf2.rref(self.generator)
        if len(pivots) != self.generator.shape[0]:
            raise ValueError("generator is rank deficient")
        object.__setattr__(self, "_info_cols", np.array(pivots))
        object.__setattr__(self, "_info_inv", gf2.inverse(self.generator[:, pivots]))


def kernel_power(n: int) -> np.ndarray:
    f = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    g = np.ones((1, 1), dtype=np.uint8)
    for _ in range(n):
        g = np.kron(g, f).astype(np.uint8)
    return g


def bhattacharyya(block_length: int, design_erasure=0.5) -> np.ndarray:
    """Erasure-channel Bhattacharyya parameters of the synthetic channels.

    Index order matches ``u @ kernel_power(n)`` without bit reversal.
    """
    z = np.array([design_erasure])
    while z.size < block_length:
        # the split of index i lands on 2i (worse) and 2i + 1 (better)
        z = np.stack([2 * z - z * z, z * z], axis=1).ravel()
    return z


def build_polar_code(block_length=128, message_length=64, design_erasure=0.5) -> CodeSpec:
    n = int(round(np.log2(block_length)))
    if 2 ** n != block_length:
        raise ValueError("block length must be a power of two")
    if not 0 < message_length <= block_length:
        raise ValueError("message length must lie in (0, C]")
    z = bhattacharyya(block_length, design_erasure)
    order = np.argsort(z, kind="stable")
    info = np.sort(order[:message_length])
    frozen = tuple(int(i) for i in np.sort(order[message_length:]))
    g = kernel_power(n)[info]
    h = gf2.null_space(g)
    return CodeSpec(g, h, frozen, name=f"polar({block_length},{message_length})")


def hamming74() -> CodeSpec:
    p = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.uint8)
    g = np.concatenate([np.eye(4, dtype=np.uint8), p], axis=1)
    h = np.concatenate([p.T, np.eye(3, dtype=np.uint8)], axis=1)
    return CodeSpec(g, h, name="hamming(7,4)")


def encode(code: CodeSpec, message) -> np.ndarray:
    """``c = G^T m`` over GF(2); accepts one message or a batch ``(B, m_len)``."""
    m = np.asarray(message)
    if m.shape[-1] != code.message_length:
        raise ValueError(f"message length {m.shape[-1]} != {code.message_length}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("message must be binary")
    return gf2.matmul(m, code.generator)


def syndrome(code: CodeSpec, word) -> np.ndarray:
    return gf2.matmul(np.asarray(word), code.parity_check.T)


def message_bit_recovery(code: CodeSpec, word):
    """Return ``(message, is_codeword)`` for one word or a batch."""
    word = np.asarray(word, dtype=np.uint8)
    m = gf2.matmul(word[..., code._info_cols], code._info_inv)
    ok = ~syndrome(code, word).any(axis=-1)
    return m, ok


@dataclass(frozen=True)
class TannerGraph:
    variable_count: int
    check_count: int
    edge_var: np.ndarray  # edge -> variable, row-major over H
    edge_chk: np.ndarray  # edge -> check
    var_edges: np.ndarray  # (C, max var degree), padded with -1
    chk_edges: np.ndarray  # (checks, max check degree), padded with -1

    @property
    def edge_count(self) -> int:
        return int(self.edge_var.size)

    def adjacency(self) -> set:
        return set(zip(self.edge_var.tolist(), self.edge_chk.tolist()))


def _padded(groups, width):
    out = np.full((len(groups), max(width, 1)), -1, dtype=np.int64)
    for i, g in enumerate(groups):
        out[i, : len(g)] = g
    return out


def tanner_graph(code_or_h) -> TannerGraph:
    h = code_or_h.parity_check if isinstance(code_or_h, CodeSpec) else np.asarray(code_or_h)
    h = np.atleast_2d(h)
    checks, variables = np.nonzero(h)  # row-major
    n_chk, n_var = h.shape
    var_groups = [np.nonzero(variables == v)[0] for v in range(n_var)]
    chk_groups = [np.nonzero(checks == c)[0] for c in range(n_chk)]
    return TannerGraph(
        variable_count=n_var,
        check_count=n_chk,
        edge_var=variables.astype(np.int64),
        edge_chk=checks.astype(np.int64),
        var_edges=_padded(var_groups, max((len(g) for g in var_groups), default=0)),
        chk_edges=_padded(chk_groups, max((len(g) for g in chk_groups), default=0)),
    )


def export_code(code: CodeSpec, path):
    lines = [f"{code.block_length} {code.message_length} {code.parity_check.shape[0]}"]
    lines += ["".join(map(str, row)) for row in code.generator]
    lines += ["".join(map(str, row)) for row in code.parity_check]
    Path(path).write_text("\n".join(lines) + "\n")


def import_code(path) -> CodeSpec:
    lines = Path(path).read_text().split()
    c, m, r = map(int, lines[:3])
    rows = np.array([[int(ch) for ch in line] for line in lines[3:]], dtype=np.uint8)
    if rows.shape != (m + r, c):
        raise ValueError(f"expected {m + r} rows of length {c}")
    return CodeSpec(rows[:m], rows[m:], name=Path(path).stem)
