import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesrx import modem
from bayesrx.modem import ConfigError, TraceParseError


def test_exp_decay_entries():
    h = modem.exp_decay_matrix(4, 4)
    assert h[0, 0] == 1.0
    assert h[0, 1] == pytest.approx(0.36788, abs=1e-5)
    assert np.array_equal(h, h.T)
    assert modem.exp_decay_matrix(3, 2).shape == (3, 2)


def test_noiseless_linear_channel_is_exact():
    h = modem.exp_decay_matrix(3, 2)
    s = np.array([[1 + 1j, -1j], [0.5, 2]])
    assert np.array_equal(modem.apply_linear_channel(h, s, 0.0), s @ h.T)


def test_linear_noise_moments():
    rng = np.random.default_rng(0)
    sigma = 0.4
    s = np.array([0.3 - 0.7j, -1 + 0.2j])
    y = modem.apply_linear_channel(np.eye(2), np.tile(s, (100_000, 1)), sigma, rng)
    tol = 3 * sigma / math.sqrt(100_000)
    assert np.all(np.abs(y.mean(axis=0).real - s.real) < tol)
    assert np.all(np.abs(y.mean(axis=0).imag - s.imag) < tol)
    var = np.mean(np.abs(y - s) ** 2, axis=0)
    assert np.all(np.abs(var / (2 * sigma ** 2) - 1) < 0.02)


def test_tanh_channel_examples():
    assert np.array_equal(modem.apply_tanh_channel(np.eye(2), np.zeros((1, 2)), 0.0), np.zeros((1, 2)))
    y = modem.apply_tanh_channel(np.ones((1, 1)), np.array([[1.0]]), 0.0)
    assert y[0, 0].real == pytest.approx(0.46212, abs=1e-5)
    big = modem.apply_tanh_channel(np.eye(1), np.array([[20 - 20j]]), 0.0)
    assert abs(big[0, 0].real) >= 0.995 and abs(big[0, 0].imag) >= 0.995


def test_channel_shape_check():
    with pytest.raises(ValueError):
        modem.apply_linear_channel(np.eye(2), np.zeros((1, 3)), 0.0)


def test_noise_std_matches_snr_definition():
    for snr in (-3.0, 0.0, 12.0):
        sigma = modem.noise_std(snr)
        assert 10 * math.log10(1 / (2 * sigma ** 2)) == pytest.approx(snr)


# --- constellations ------------------------------------------------------------


def test_constellation_points():
    bpsk = modem.constellation("bpsk")
    assert np.array_equal(modem.modulate([0, 1], bpsk), [1, -1])
    qpsk = modem.constellation("qpsk")
    assert modem.modulate([0, 0], qpsk)[0] == pytest.approx((1 + 1j) / math.sqrt(2))
    psk8 = modem.constellation("8psk")
    assert psk8.points[2] == pytest.approx(1j)
    assert all(np.allclose(np.abs(c.points), 1) for c in (bpsk, qpsk, psk8))
    with pytest.raises(ConfigError):
        modem.constellation("16qam")


@pytest.mark.parametrize("name", ["bpsk", "qpsk", "8psk"])
def test_gray_neighbours_differ_in_one_bit(name):
    c = modem.constellation(name)
    for i in range(c.size):
        j = (i + 1) % c.size
        assert np.sum(c.labels[i] != c.labels[j]) == 1


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["bpsk", "qpsk", "8psk"]), st.integers(0, 2 ** 31 - 1))
def test_bit_round_trip(name, seed):
    c = modem.constellation(name)
    bits = np.random.default_rng(seed).integers(0, 2, size=(3, 6 * c.bits_per_symbol))
    idx = modem.bits_to_indices(bits, c)
    assert np.array_equal(modem.indices_to_bits(idx, c), bits)


def test_pad_bits():
    assert modem.pad_bits(np.ones(128, dtype=np.uint8), 3).shape == (129,)
    assert modem.pad_bits(np.ones(128, dtype=np.uint8), 2).shape == (128,)
    with pytest.raises(ValueError):
        modem.bits_to_indices(np.zeros(4), modem.constellation("8psk"))


# --- soft bits -----------------------------------------------------------------


def test_soft_bit_examples():
    q = modem.constellation("qpsk")
    assert np.allclose(modem.soft_bit_marginals(np.full(4, 0.25), q), 0.5)
    idx = int(np.nonzero((q.labels == [1, 0]).all(axis=1))[0][0])
    assert np.array_equal(modem.soft_bit_marginals(np.eye(4)[idx], q), [1, 0])
    probs = np.array([0.7, 0.1, 0.1, 0.1])
    brute = [sum(p for p, lab in zip(probs, q.labels) if lab[b]) for b in range(2)]
    assert np.allclose(modem.soft_bit_marginals(probs, q), brute)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_soft_bits_linear_and_bounded(seed):
    rng = np.random.default_rng(seed)
    c = modem.constellation("8psk")
    a, b = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
    sa, sb = modem.soft_bit_marginals(a, c), modem.soft_bit_marginals(b, c)
    assert np.all((sa >= 0) & (sa <= 1 + 1e-12))
    assert np.allclose(modem.soft_bit_marginals(0.3 * a + 0.7 * b, c), 0.3 * sa + 0.7 * sb)


def test_llr_examples():
    assert modem.llr_from_soft_bits(0.5) == 0.0
    assert modem.llr_from_soft_bits(0.7311) == pytest.approx(1.0, abs=1e-3)
    assert modem.llr_from_soft_bits(1.0) == 15.0
    assert modem.llr_from_soft_bits(0.0) == -15.0
    assert modem.llr_from_soft_bits(1.0 + 1e-16) == 15.0
    assert modem.llr_from_soft_bits(0.2) < 0 < modem.llr_from_soft_bits(0.8)


def test_codeword_llrs_strip_padding():
    c = modem.constellation("8psk")
    probs = np.zeros((43 * 2, 1, 8))
    probs[:, 0, 0] = 1.0  # label 000 everywhere
    llr = modem.codeword_llrs(probs, c, 128)
    assert llr.shape == (1, 2, 128)
    assert np.all(llr == -15.0)


# --- blocks --------------------------------------------------------------------


def test_block_sizes():
    rng = np.random.default_rng(0)
    q = modem.make_block(const=modem.constellation("qpsk"), users=4, antennas=4, pilot_count=128,
                         info_count=15232, snr_db=10.0, rng=rng)
    assert q.symbols.shape == (15360, 4)
    p = modem.make_block(const=modem.constellation("8psk"), users=4, antennas=4, pilot_count=384,
                         info_count=14976, snr_db=10.0, rng=rng)
    assert p.info_count == 14976 and p.pilots[0].shape == (384, 4)


def test_block_config_errors():
    kw = dict(const=modem.constellation("qpsk"), users=2, antennas=2, snr_db=5.0,
              rng=np.random.default_rng(0))
    with pytest.raises(ConfigError) as err:
        modem.make_block(pilot_count=-1, info_count=10, **kw)
    assert err.value.field == "pilots"
    with pytest.raises(ConfigError):
        modem.make_block(pilot_count=4, info_count=10, channel="cubic", **kw)
    with pytest.raises(ConfigError):
        modem.make_block(pilot_count=4, info_count=10, channel_matrix=np.eye(3), **kw)
    from bayesrx.polar import hamming74

    with pytest.raises(ConfigError) as err:
        modem.make_block(pilot_count=4, info_count=5, code=hamming74(), **kw)
    assert err.value.field == "info"


def test_coded_block_carries_codewords():
    from bayesrx.polar import encode, hamming74

    code = hamming74()
    blk = modem.make_block(const=modem.constellation("qpsk"), users=2, antennas=2, pilot_count=4,
                           info_count=8, snr_db=5.0, rng=np.random.default_rng(1), code=code)
    assert blk.codewords.shape == (2, 2, 7)
    assert np.array_equal(blk.codewords, encode(code, blk.message_bits))
    bits = modem.indices_to_bits(blk.info[0].T, blk.constellation)  # (users, 16)
    assert np.array_equal(bits.reshape(2, 2, 8)[..., :7], blk.codewords)


def test_empirical_snr():
    rng = np.random.default_rng(5)
    snr = 7.0
    blk = modem.make_block(const=modem.constellation("qpsk"), users=1, antennas=1, pilot_count=0,
                           info_count=100_000, snr_db=snr, rng=rng, channel_matrix=np.ones((1, 1)))
    tx = blk.constellation.points[blk.symbols]
    noise = blk.outputs - tx
    measured = 10 * math.log10(np.mean(np.abs(tx) ** 2) / np.mean(np.abs(noise) ** 2))
    assert abs(measured - snr) < 0.1


# --- traces --------------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mats = [rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2)) for _ in range(10)]
    path = tmp_path / "t.txt"
    modem.write_channel_trace(path, mats)
    back = modem.load_channel_trace(path)
    assert len(back) == 10
    assert all(np.array_equal(a, b) for a, b in zip(mats, back))


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("2 x 1\n", 1),
    ("1 2 1\n1,0 0,0 0,1\n", 2),
    ("2 1 1\n1,0\n\n1;0\n", 4),
    ("2 1 1\n1,0\n", 2),
])
def test_trace_parse_errors_name_the_line(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(TraceParseError) as err:
        modem.load_channel_trace(path)
    assert err.value.line == line


def test_block_dump(tmp_path):
    blk = modem.make_block(const=modem.constellation("bpsk"), users=2, antennas=3, pilot_count=2,
                           info_count=3, snr_db=5.0, rng=np.random.default_rng(0))
    modem.dump_block_csv(tmp_path / "d.csv", [blk])
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0].split(",")[:6] == ["block", "i", "user", "tx_bits", "tx_symbol_re", "tx_symbol_im"]
    assert len(rows[0].split(",")) == 12
    assert len(rows) == 1 + 5 * 2
