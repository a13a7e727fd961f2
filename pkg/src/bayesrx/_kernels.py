"""Message-passing kernels for (weighted) belief propagation.

Two interchangeable implementations: numba-compiled loops and a vectorised
numpy path over padded adjacency tables.  ``BAYESRX_NUMBA=0`` in the
environment forces the numpy path; so does a missing numba install.

Conventions (batch ``B`` frames, ``E`` edges in row-major parity-check order):

* ``llr``: (B, C) channel LLRs
* ``c``: (B, E) check-to-variable messages, ``t``: (B, E) variable-to-check
* ``a``: (E,) effective edge weights of one iteration
"""

import os

import numpy as np

ATANH_CLIP = 1.0 - 1e-7

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("BAYESRX_NUMBA", "1") != "0"


# --------------------------------------------------------------------------
# numpy implementation


class _NumpyKernels:
    name = "numpy"

    @staticmethod
    def var_sum(vals, var_edges):
        ext = np.concatenate([vals, np.zeros((vals.shape[0], 1))], axis=1)
        return ext[:, var_edges].sum(axis=-1)

    @staticmethod
    def var_to_check(llr, c_prev, a, edge_var, var_edges):
        ac = c_prev * a
        s = _NumpyKernels.var_sum(ac, var_edges)
        x = llr[:, edge_var] + s[:, edge_var] - ac
        return np.tanh(0.5 * x)

    @staticmethod
    def _gather_checks(vals, chk_edges, pad):
        ext = np.concatenate([vals, np.full((vals.shape[0], 1), pad)], axis=1)
        return ext[:, chk_edges]

    @staticmethod
    def check_to_var(t, chk_edges, valid):
        tt = _NumpyKernels._gather_checks(t, chk_edges, 1.0)
        d = tt.shape[-1]
        pre = np.ones_like(tt)
        suf = np.ones_like(tt)
        for j in range(1, d):
            pre[..., j] = pre[..., j - 1] * tt[..., j - 1]
            suf[..., d - 1 - j] = suf[..., d - j] * tt[..., d - j]
        p = (pre * suf)[:, valid]
        pc = np.clip(p, -ATANH_CLIP, ATANH_CLIP)
        return 2.0 * np.arctanh(pc), p

    @staticmethod
    def check_to_var_backward(t, p, g_c, chk_edges, valid):
        g_p = np.zeros_like(p)
        np.divide(2.0 * g_c, 1.0 - p * p, out=g_p, where=np.abs(p) < ATANH_CLIP)
        tt = _NumpyKernels._gather_checks(t, chk_edges, 1.0)
        gg = _NumpyKernels._gather_checks(g_p, chk_edges, 0.0)
        d = tt.shape[-1]
        pre = np.ones_like(tt)
        suf = np.ones_like(tt)
        fwd = np.zeros_like(tt)
        bwd = np.zeros_like(tt)
        for j in range(1, d):
            pre[..., j] = pre[..., j - 1] * tt[..., j - 1]
            fwd[..., j] = fwd[..., j - 1] * tt[..., j - 1] + gg[..., j - 1] * pre[..., j - 1]
            k = d - 1 - j
            suf[..., k] = suf[..., k + 1] * tt[..., k + 1]
            bwd[..., k] = bwd[..., k + 1] * tt[..., k + 1] + gg[..., k + 1] * suf[..., k + 1]
        return (fwd * suf + pre * bwd)[:, valid]

    @staticmethod
    def var_to_check_backward(g_x, c_prev, a, edge_var, var_edges):
        # x_e = llr_v + sum_{e' at v} a_e' c_e' - a_e c_e
        g_s = _NumpyKernels.var_sum(g_x, var_edges)
        g_ac = g_s[:, edge_var] - g_x
        return g_ac * a, (g_ac * c_prev).sum(axis=0), g_s

    @staticmethod
    def marginal(llr, c, a, var_edges):
        return llr + _NumpyKernels.var_sum(c * a, var_edges)


# --------------------------------------------------------------------------
# numba implementation


def _build_numba():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def var_to_check(llr, c_prev, a, edge_var, var_edges):
        b_n, n_e = c_prev.shape
        n_v = llr.shape[1]
        out = np.empty((b_n, n_e))
        s = np.zeros(n_v)
        for b in range(b_n):
            s[:] = 0.0
            for e in range(n_e):
                s[edge_var[e]] += a[e] * c_prev[b, e]
            for e in range(n_e):
                v = edge_var[e]
                out[b, e] = np.tanh(0.5 * (llr[b, v] + s[v] - a[e] * c_prev[b, e]))
        return out

    @njit
    def check_to_var(t, chk_edges, valid):
        b_n, n_e = t.shape
        n_c, d = chk_edges.shape
        c = np.empty((b_n, n_e))
        p = np.empty((b_n, n_e))
        pre = np.empty(d)
        for b in range(b_n):
            for h in range(n_c):
                deg = 0
                while deg < d and chk_edges[h, deg] >= 0:
                    deg += 1
                acc = 1.0
                for i in range(deg):
                    pre[i] = acc
                    acc *= t[b, chk_edges[h, i]]
                acc = 1.0
                for i in range(deg - 1, -1, -1):
                    e = chk_edges[h, i]
                    val = pre[i] * acc
                    p[b, e] = val
                    if val > ATANH_CLIP:
                        val = ATANH_CLIP
                    elif val < -ATANH_CLIP:
                        val = -ATANH_CLIP
                    c[b, e] = 2.0 * np.arctanh(val)
                    acc *= t[b, e]
        return c, p

    @njit
    def check_to_var_backward(t, p, g_c, chk_edges, valid):
        b_n, n_e = t.shape
        n_c, d = chk_edges.shape
        g_t = np.zeros((b_n, n_e))
        pre = np.empty(d)
        fwd = np.empty(d)
        gp = np.empty(d)
        for b in range(b_n):
            for h in range(n_c):
                deg = 0
                while deg < d and chk_edges[h, deg] >= 0:
                    deg += 1
                for i in range(deg):
                    e = chk_edges[h, i]
                    pv = p[b, e]
                    gp[i] = g_c[b, e] * 2.0 / (1.0 - pv * pv) if abs(pv) < ATANH_CLIP else 0.0
                acc = 1.0
                f = 0.0
                for i in range(deg):
                    pre[i] = acc
                    fwd[i] = f
                    tv = t[b, chk_edges[h, i]]
                    f = f * tv + gp[i] * acc
                    acc *= tv
                suf = 1.0
                bk = 0.0
                for i in range(deg - 1, -1, -1):
                    e = chk_edges[h, i]
                    g_t[b, e] = fwd[i] * suf + pre[i] * bk
                    tv = t[b, e]
                    bk = bk * tv + gp[i] * suf
                    suf *= tv
        return g_t

    @njit
    def var_to_check_backward(g_x, c_prev, a, edge_var, var_edges):
        b_n, n_e = g_x.shape
        n_v = var_edges.shape[0]
        g_c = np.empty((b_n, n_e))
        g_a = np.zeros(n_e)
        g_s = np.zeros((b_n, n_v))
        for b in range(b_n):
            for e in range(n_e):
                g_s[b, edge_var[e]] += g_x[b, e]
            for e in range(n_e):
                g_ac = g_s[b, edge_var[e]] - g_x[b, e]
                g_c[b, e] = g_ac * a[e]
                g_a[e] += g_ac * c_prev[b, e]
        return g_c, g_a, g_s

    @njit
    def marginal(llr, c, a, var_edges):
        b_n, n_v = llr.shape
        out = llr.copy()
        d = var_edges.shape[1]
        for b in range(b_n):
            for v in range(n_v):
                acc = 0.0
                for i in range(d):
                    e = var_edges[v, i]
                    if e < 0:
                        break
                    acc += a[e] * c[b, e]
                out[b, v] += acc
        return out

    class _NumbaKernels:
        name = "numba"

    for fn in (var_to_check, check_to_var, check_to_var_backward, var_to_check_backward, marginal):
        setattr(_NumbaKernels, fn.__name__, staticmethod(fn))
    return _NumbaKernels


numpy_kernels = _NumpyKernels
numba_kernels = _build_numba() if numba is not None else None


def active():
    return numba_kernels if USE_NUMBA else numpy_kernels
