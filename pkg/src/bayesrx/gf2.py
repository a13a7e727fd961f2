"""Dense GF(2) linear algebra on uint8 arrays."""

import numpy as np


def rref(a):
    """Reduced row-echelon form over GF(2); returns ``(R, pivot_columns)``."""
    r = np.array(a, dtype=np.uint8) & 1
    rows, cols = r.shape
    pivots = []
    row = 0
    for col in range(cols):
        if row == rows:
            break
        hits = np.nonzero(r[row:, col])[0]
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            r[[row, p]] = r[[p, row]]
        others = np.nonzero(r[:, col])[0]
        others = others[others != row]
        r[others] ^= r[row]
        pivots.append(col)
        row += 1
    return r, pivots


def rank(a) -> int:
    return len(rref(a)[1])


def null_space(a):
    """Basis (as rows) of ``{x : a x = 0}`` over GF(2)."""
    a = np.asarray(a, dtype=np.uint8)
    r, pivots = rref(a)
    n = a.shape[1]
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    for i, f in enumerate(free):
        basis[i, f] = 1
        for row, p in enumerate(pivots):
            basis[i, p] = r[row, f]
    return basis


def inverse(a):
    a = np.asarray(a, dtype=np.uint8)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    r, pivots = rref(np.concatenate([a, np.eye(n, dtype=np.uint8)], axis=1))
    if pivots[:n] != list(range(n)):
        raise np.linalg.LinAlgError("matrix is singular over GF(2)")
    return r[:, n:]


def matmul(a, b):
    return (np.asarray(a, dtype=np.int64) @ np.asarray(b, dtype=np.int64) % 2).astype(np.uint8)
