import itertools

import numpy as np
import pytest

from bayesrx import gf2, polar


@pytest.fixture(scope="module")
def code():
    return polar.build_polar_code(128, 64)


def mod2(a, b):
    # independent GF(2) product through integer arithmetic
    return (np.asarray(a, dtype=np.int64) @ np.asarray(b, dtype=np.int64)) % 2


def test_dimensions_and_ranks(code):
    assert code.generator.shape == (64, 128)
    assert code.parity_check.shape == (64, 128)
    assert gf2.rank(code.generator) == 64
    assert gf2.rank(code.parity_check) == 64
    assert not mod2(code.parity_check, code.generator.T).any()
    assert len(code.frozen_set) == 64


def test_generator_rows_come_from_kernel(code):
    f = polar.kernel_power(7)
    info = sorted(set(range(128)) - set(code.frozen_set))
    assert np.array_equal(code.generator, f[info])


def test_bhattacharyya_recursion():
    z = polar.bhattacharyya(4, 0.5)
    # hand recursion: 0.5 -> (0.75, 0.25) -> (0.9375, 0.5625, 0.4375, 0.0625)
    assert np.allclose(z, [0.9375, 0.5625, 0.4375, 0.0625])
    # the always-frozen first index of a polar code
    assert 0 in polar.build_polar_code(8, 4).frozen_set
    with pytest.raises(ValueError):
        polar.build_polar_code(100, 50)


def test_bhattacharyya_matches_erasure_enumeration():
    # erasure probability of u_i given u_0..u_{i-1}, over every BEC(0.5) erasure pattern of x = u F
    n_len = 8
    f = polar.kernel_power(3)
    z = []
    for i in range(n_len):
        erased = 0
        for pattern in itertools.product((0, 1), repeat=n_len):
            a = f[i:, [j for j in range(n_len) if pattern[j]]]
            e = np.zeros((n_len - i, 1), dtype=np.uint8)
            e[0] = 1
            solvable = a.size and gf2.rank(np.concatenate([a, e], axis=1)) == gf2.rank(a)
            erased += not solvable
        z.append(erased / 2 ** n_len)
    assert np.allclose(polar.bhattacharyya(n_len), z)


def test_zero_message_and_linearity(code):
    assert not polar.encode(code, np.zeros(64, dtype=np.uint8)).any()
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.integers(0, 2, (2, 64))
        assert np.array_equal(polar.encode(code, a ^ b), polar.encode(code, a) ^ polar.encode(code, b))
    with pytest.raises(ValueError):
        polar.encode(code, np.full(64, 2))
    with pytest.raises(ValueError):
        polar.encode(code, np.zeros(63))


def test_hamming_codebook():
    ham = polar.hamming74()
    # textbook systematic (7,4): parity p1=d1+d2+d4, p2=d1+d3+d4, p3=d2+d3+d4
    expected = set()
    for d in itertools.product((0, 1), repeat=4):
        d1, d2, d3, d4 = d
        expected.add(d + ((d1 + d2 + d4) % 2, (d1 + d3 + d4) % 2, (d2 + d3 + d4) % 2))
    got = {tuple(int(v) for v in polar.encode(ham, m)) for m in itertools.product((0, 1), repeat=4)}
    assert got == expected and len(got) == 16
    assert not mod2(list(got), ham.parity_check.T).any()


def test_tanner_graph_edges(code):
    g = polar.tanner_graph(polar.hamming74())
    assert g.edge_count == 12
    assert g.adjacency() == {(int(v), int(c)) for c, v in zip(*np.nonzero(polar.hamming74().parity_check))}
    assert polar.tanner_graph(np.zeros((2, 5), dtype=np.uint8)).adjacency() == set()
    big = polar.tanner_graph(code)
    assert big.edge_count == int(code.parity_check.sum())
    rng = np.random.default_rng(1)
    adj = big.adjacency()
    for _ in range(100):
        v, c = int(rng.integers(128)), int(rng.integers(64))
        assert ((v, c) in adj) == bool(code.parity_check[c, v])


def test_tanner_edge_order_is_row_major():
    g = polar.tanner_graph(polar.hamming74())
    order = list(zip(g.edge_chk.tolist(), g.edge_var.tolist()))
    assert order == sorted(order)
    for v in range(7):
        edges = g.var_edges[v][g.var_edges[v] >= 0]
        assert np.all(g.edge_var[edges] == v)


def test_message_recovery(code):
    rng = np.random.default_rng(2)
    m = rng.integers(0, 2, (50, 64)).astype(np.uint8)
    c = polar.encode(code, m)
    back, ok = polar.message_bit_recovery(code, c)
    assert np.array_equal(back, m) and ok.all()
    zero, ok0 = polar.message_bit_recovery(code, np.zeros(128, dtype=np.uint8))
    assert not zero.any() and ok0
    flipped = c[0].copy()
    flipped[17] ^= 1
    _, ok1 = polar.message_bit_recovery(code, flipped)
    assert not ok1


def test_export_import(tmp_path, code):
    polar.export_code(code, tmp_path / "c.txt")
    back = polar.import_code(tmp_path / "c.txt")
    assert np.array_equal(back.generator, code.generator)
    assert np.array_equal(back.parity_check, code.parity_check)
    (tmp_path / "bad.txt").write_text("7 4 3\n1000110\n")
    with pytest.raises(ValueError):
        polar.import_code(tmp_path / "bad.txt")


def test_gf2_helpers():
    a = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=np.uint8)
    assert gf2.rank(a) == 2
    ns = gf2.null_space(a)
    assert ns.shape == (1, 3) and not mod2(a, ns.T).any()
    inv = gf2.inverse(np.array([[1, 1], [0, 1]], dtype=np.uint8))
    assert np.array_equal(mod2([[1, 1], [0, 1]], inv), np.eye(2))
