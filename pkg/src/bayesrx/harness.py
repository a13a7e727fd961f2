"""Experiment orchestration: configuration files, the detector/decoder grid,
brute-force oracles, and CSV output.

A configuration is a flat ``key = value`` text file; ``#`` starts a comment.
List-valued keys (``snr_db``, ``detector_mode``, ``decoder_mode``) take
comma-separated values and expand into a grid.  Every block is generated
once per SNR and shared by all modes so the comparison is paired.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import deepsic, metrics, modem, polar, wbp
from .modem import ConfigError
from .nn import TrainingDivergence

log = logging.getLogger(__name__)

CSV_FIELDS = ("fingerprint", "block", "snr_db", "detector_mode", "decoder_mode", "ser", "ber", "ece", "runtime_ms")
DETECTOR_MODES = ("F", "B", "MB", "blackbox")
DECODER_MODES = ("none", "F", "B", "MB", "plainBP")
TRAINED_DECODERS = ("F", "B", "MB")
ORACLE_LIMIT = 2 ** 20
DECODE_ORACLE_LIMIT = 2 ** 16


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    channel: str = "linear"  # linear | tanh | trace:<path>
    constellation: str = "qpsk"
    users: int = 4
    antennas: int = 4
    detector_iterations: int = 3
    decoder_iterations: int = 5
    pilots: int = 384
    info: int = 14976
    blocks: int = 10
    snr_db: tuple = (12.0,)
    detector_mode: tuple = ("F",)
    decoder_mode: tuple = ("none",)
    detector_ensemble: int = 5
    decoder_ensemble: int = 3
    beta: float = 1e4
    detector_steps: int = 500
    detector_lr: float = 5e-3
    decoder_steps: int = 500
    decoder_lr: float = 1e-3
    decoder_batch: int = 0  # 0: full batch
    decoder_train_snr_db: float | None = None  # default: midpoint of snr_db
    decoder_train_blocks: int = 1
    decoder_dir: str = "decoders"
    code: str = "polar128"  # polar128 | hamming74 | path to a code export
    seed: int = 0
    ece_bins: int = 10
    output: str = "results.csv"
    reliability: bool = False
    block_dump: str = ""
    record_runtime: bool = False
    base_dir: str = "."  # directory of the config file; not a config key

    @property
    def coded(self) -> bool:
        return any(m != "none" for m in self.decoder_mode)

    @property
    def train_snr(self) -> float:
        if self.decoder_train_snr_db is not None:
            return self.decoder_train_snr_db
        return 0.5 * (min(self.snr_db) + max(self.snr_db))

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(cast):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(cast(t) for t in items)

    return parse


def _optional_float(text):
    return None if text.lower() in ("", "none") else float(text)


_PARSERS = {
    "channel": str, "constellation": str, "code": str, "output": str, "decoder_dir": str, "block_dump": str,
    "users": int, "antennas": int, "detector_iterations": int, "decoder_iterations": int, "pilots": int,
    "info": int, "blocks": int, "detector_ensemble": int, "decoder_ensemble": int, "detector_steps": int,
    "decoder_steps": int, "decoder_batch": int, "decoder_train_blocks": int, "seed": int, "ece_bins": int,
    "beta": float, "detector_lr": float, "decoder_lr": float, "decoder_train_snr_db": _optional_float,
    "snr_db": _parse_list(float), "detector_mode": _parse_list(str), "decoder_mode": _parse_list(str),
    "reliability": _parse_bool, "record_runtime": _parse_bool,
}


def parse_config(text, base_dir=".") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, f"unknown key (line {lineno})")
        if key in values:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {value!r}: {exc}") from None
    cfg = ExperimentConfig(**values, base_dir=str(base_dir))
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def validate(cfg: ExperimentConfig):
    for name in ("users", "antennas", "detector_iterations", "decoder_iterations", "pilots", "info", "blocks",
                 "detector_ensemble", "decoder_ensemble", "decoder_train_blocks", "ece_bins"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, "must be positive")
    for name in ("detector_steps", "decoder_steps", "decoder_batch"):
        if getattr(cfg, name) < 0:
            raise ConfigError(name, "must be non-negative")
    if cfg.beta <= 0:
        raise ConfigError("beta", "must be positive")
    for m in cfg.detector_mode:
        if m not in DETECTOR_MODES:
            raise ConfigError("detector_mode", f"unknown mode {m!r}; choose from {', '.join(DETECTOR_MODES)}")
    for m in cfg.decoder_mode:
        if m not in DECODER_MODES:
            raise ConfigError("decoder_mode", f"unknown mode {m!r}; choose from {', '.join(DECODER_MODES)}")
    if cfg.channel not in ("linear", "tanh") and not cfg.channel.startswith("trace:"):
        raise ConfigError("channel", f"expected linear, tanh or trace:<path>, got {cfg.channel!r}")
    const = modem.constellation(cfg.constellation)
    if cfg.coded:
        code = load_code(cfg)
        per_cw = modem.symbols_per_codeword(code.block_length, const)
        if cfg.info % per_cw:
            raise ConfigError("info", f"{cfg.info} is not a multiple of {per_cw} symbols per codeword")


def load_code(cfg: ExperimentConfig) -> polar.CodeSpec:
    if cfg.code == "polar128":
        return polar.build_polar_code(128, 64)
    if cfg.code == "hamming74":
        return polar.hamming74()
    path = cfg.resolve(cfg.code)
    if not path.exists():
        raise ConfigError("code", f"no such code file {str(path)!r}")
    return polar.import_code(path)


def canonical(cfg: ExperimentConfig) -> str:
    """Stable text form of every result-affecting field."""
    skip = {"output", "decoder_dir", "block_dump", "reliability", "record_runtime", "base_dir"}
    parts = []
    for f in fields(cfg):
        if f.name in skip:
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        parts.append(f"{f.name}={v!r}")
    return ";".join(parts)


def fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def derive_seed(*parts) -> int:
    """63-bit seed from a stable hash of ``parts``."""
    digest = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2 ** 63 - 1)


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class MetricRecord:
    fingerprint: str
    block: int
    snr_db: float
    detector_mode: str
    decoder_mode: str
    ser: float
    ber: float | None
    ece: float
    runtime_ms: float | None = None

    def to_row(self):
        def num(x):
            return "" if x is None else repr(float(x))

        return [self.fingerprint, str(self.block), num(self.snr_db), self.detector_mode, self.decoder_mode,
                num(self.ser), num(self.ber), num(self.ece), num(self.runtime_ms)]

    @classmethod
    def from_row(cls, row):
        row = dict(zip(CSV_FIELDS, row)) if not isinstance(row, dict) else row

        def opt(x):
            return None if x == "" else float(x)

        return cls(row["fingerprint"], int(row["block"]), float(row["snr_db"]), row["detector_mode"],
                   row["decoder_mode"], float(row["ser"]), opt(row["ber"]), float(row["ece"]),
                   opt(row["runtime_ms"]))


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.to_row())


def read_records(path) -> list[MetricRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected columns {header}")
        return [MetricRecord.from_row(row) for row in reader]


# --------------------------------------------------------------------------
# oracles


def _symbol_grid(n_symbols, users):
    """All index tuples in S^K, user 0 most significant."""
    return np.array(list(itertools.product(range(n_symbols), repeat=users)), dtype=np.int64).reshape(-1, users)


def map_oracle_detect(h, y, sigma, const: modem.Constellation, users, channel="linear"):
    """Exact posterior over S^K for ``y = H s + w`` (or ``tanh(0.5 H s + w)``).

    Returns ``(joint, marginals)`` with shapes ``(T, |S|^K)`` and ``(T, K, |S|)``.
    """
    size = const.size ** users
    if size > ORACLE_LIMIT:
        raise ValueError(f"search space |S|^K = {size} exceeds {ORACLE_LIMIT}")
    h = np.asarray(h)
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    grid = _symbol_grid(const.size, users)
    clean = const.points[grid] @ h.T  # (M, N)
    if channel == "tanh":
        # the tanh is invertible and its Jacobian does not depend on s
        lim = 1.0 - 1e-15
        y = np.arctanh(np.clip(y.real, -lim, lim)) + 1j * np.arctanh(np.clip(y.imag, -lim, lim))
        clean = 0.5 * clean
    elif channel != "linear":
        raise ValueError(f"unknown channel law {channel!r}")
    chunk = max(1, (1 << 22) // size)
    joint = np.empty((y.shape[0], size))
    for lo in range(0, y.shape[0], chunk):
        d = y[lo:lo + chunk, None, :] - clean[None]
        d2 = (d.real ** 2 + d.imag ** 2).sum(axis=-1)
        if sigma > 0:
            score = -d2 / (2.0 * sigma ** 2)
            score -= score.max(axis=1, keepdims=True)
            w = np.exp(score)
        else:
            w = (d2 == d2.min(axis=1, keepdims=True)).astype(float)
        joint[lo:lo + chunk] = w / w.sum(axis=1, keepdims=True)
    shaped = joint.reshape((y.shape[0],) + (const.size,) * users)
    marg = np.stack([shaped.sum(axis=tuple(a + 1 for a in range(users) if a != k)) for k in range(users)], axis=1)
    return joint, marg


def ml_oracle_decode(code: polar.CodeSpec, llr):
    """Exact bitwise MAP decisions by enumerating every codeword (ties go to 0)."""
    m_len = code.message_length
    if 2 ** m_len > DECODE_ORACLE_LIMIT:
        raise ValueError(f"{2 ** m_len} codewords exceed the enumeration limit {DECODE_ORACLE_LIMIT}")
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr = np.atleast_2d(llr)
    msgs = ((np.arange(2 ** m_len)[:, None] >> np.arange(m_len - 1, -1, -1)) & 1).astype(np.uint8)
    cws = polar.encode(code, msgs).astype(float)
    log_p1 = -np.logaddexp(0.0, -llr)
    log_p0 = -np.logaddexp(0.0, llr)
    score = log_p1 @ cws.T + log_p0 @ (1.0 - cws).T
    w = np.exp(score - score.max(axis=1, keepdims=True))
    p1 = w @ cws
    p0 = w @ (1.0 - cws)
    bits = (p1 > p0).astype(np.uint8)
    return bits[0] if single else bits


# --------------------------------------------------------------------------
# detection and decoding


def _channel_law(cfg):
    return "linear" if cfg.channel.startswith("trace:") else cfg.channel


def load_trace(cfg) -> list | None:
    if not cfg.channel.startswith("trace:"):
        return None
    mats = modem.load_channel_trace(cfg.resolve(cfg.channel[len("trace:"):]))
    for m in mats:
        if m.shape != (cfg.antennas, cfg.users):
            raise ConfigError("channel", f"trace matrix shape {m.shape} != ({cfg.antennas}, {cfg.users})")
    return mats


def make_blocks_for(cfg, snr, index, trace, code, const, tag="block", snr_override=None):
    rng = np.random.default_rng(derive_seed(cfg.seed, tag, repr(float(snr)), index))
    h = None if trace is None else trace[index % len(trace)]
    return modem.make_block(const=const, users=cfg.users, antennas=cfg.antennas, pilot_count=cfg.pilots,
                            info_count=cfg.info, snr_db=snr if snr_override is None else snr_override, rng=rng,
                            channel=_channel_law(cfg), channel_matrix=h, code=code)


def detect(cfg, mode, block, seed):
    """Train the detector on the block's pilots and return soft info-symbol outputs ``(T, K, |S|)``."""
    sp, yp = block.pilots
    _, yi = block.info
    n = block.constellation.size
    q = cfg.detector_iterations
    kw = dict(steps=cfg.detector_steps, lr=cfg.detector_lr, seed=seed)
    if mode == "F":
        return deepsic.deepsic_infer(deepsic.train_frequentist(sp, yp, n, q, **kw), yi)
    if mode == "B":
        post = deepsic.train_bayesian_e2e(sp, yp, n, q, beta=cfg.beta, ensemble_size=cfg.detector_ensemble, **kw)
        return deepsic.bayesian_infer(post, yi, seed=seed)
    if mode == "MB":
        post = deepsic.train_modular_bayesian(sp, yp, n, q, beta=cfg.beta, ensemble_size=cfg.detector_ensemble,
                                              **kw)
        return deepsic.modular_bayesian_infer(post, yi, seed=seed)
    if mode == "blackbox":
        return deepsic.blackbox_detect(deepsic.blackbox_detect_train(sp, yp, n, **kw), yi)
    raise ConfigError("detector_mode", f"unknown mode {mode!r}")


def decode(cfg, mode, decoder, llr, graph, seed):
    """Soft bit values in (-1, 1) for LLR rows."""
    if mode == "plainBP":
        return wbp.bp_infer(llr, graph, cfg.decoder_iterations)
    if mode == "F":
        return wbp.wbp_infer(decoder, llr, graph)
    if mode == "B":
        return wbp.bayesian_wbp_infer(decoder, llr, graph, seed=seed)
    if mode == "MB":
        return wbp.modular_bayesian_wbp_infer(decoder, llr, graph, seed=seed)
    raise ConfigError("decoder_mode", f"unknown mode {mode!r}")


def decoder_path(cfg, out_dir, det_mode, dec_mode) -> Path:
    base = Path(cfg.decoder_dir)
    if not base.is_absolute():
        base = Path(out_dir) / base
    # keyed by fingerprint so a changed config or seed never picks up a stale decoder
    return base / f"wbp_{fingerprint(cfg)}_{det_mode}_{dec_mode}.txt"


def decoder_training_set(cfg, det_mode, code, const, trace):
    """Detector LLRs and true codewords from offline coded transmissions at the training SNR."""
    llrs, words = [], []
    for b in range(cfg.decoder_train_blocks):
        blk = make_blocks_for(cfg, cfg.train_snr, b, trace, code, const, tag="decoder-train")
        soft = detect(cfg, det_mode, blk, derive_seed(cfg.seed, "decoder-train-detector", det_mode, b))
        llrs.append(modem.codeword_llrs(soft, const, code.block_length).reshape(-1, code.block_length))
        words.append(blk.codewords.reshape(-1, code.block_length))
    return np.concatenate(llrs), np.concatenate(words)


def train_decoder(cfg, det_mode, dec_mode, code, const, trace, graph=None):
    graph = polar.tanner_graph(code) if graph is None else graph
    llr, words = decoder_training_set(cfg, det_mode, code, const, trace)
    seed = derive_seed(cfg.seed, "decoder", det_mode, dec_mode) % (2 ** 31)
    kw = dict(iterations=cfg.decoder_iterations, steps=cfg.decoder_steps, lr=cfg.decoder_lr,
              batch_size=cfg.decoder_batch or None, seed=seed)
    if dec_mode == "F":
        out = wbp.train_wbp_frequentist(llr, words, graph, **kw)
        weights = out.weights
    elif dec_mode == "B":
        out = wbp.train_wbp_bayesian(llr, words, graph, beta=cfg.beta, ensemble_size=cfg.decoder_ensemble, **kw)
        weights = np.concatenate([out.nominal.weights, out.dropout_logits])
    elif dec_mode == "MB":
        out = wbp.train_wbp_modular_bayesian(llr, words, graph, beta=cfg.beta, ensemble_size=cfg.decoder_ensemble,
                                             **kw)
        weights = np.concatenate([out.nominal.weights, out.dropout_logits])
    else:
        raise ConfigError("decoder_mode", f"{dec_mode!r} has no trainable decoder")
    if not np.isfinite(weights).all():
        raise TrainingDivergence(f"non-finite WBP parameters ({det_mode}/{dec_mode})", module=("wbp", dec_mode))
    return out


def train_decoders(cfg, out_dir, only_missing=False) -> list[Path]:
    """Train and store one decoder per (detector mode, trained decoder mode) pair of the config."""
    if not cfg.coded:
        return []
    code = load_code(cfg)
    const = modem.constellation(cfg.constellation)
    trace = load_trace(cfg)
    graph = polar.tanner_graph(code)
    written = []
    for det in cfg.detector_mode:
        for dec in cfg.decoder_mode:
            if dec not in TRAINED_DECODERS:
                continue
            path = decoder_path(cfg, out_dir, det, dec)
            if only_missing and path.exists():
                continue
            log.info("training %s decoder for %s detector at %.3g dB", dec, det, cfg.train_snr)
            model = train_decoder(cfg, det, dec, code, const, trace, graph)
            path.parent.mkdir(parents=True, exist_ok=True)
            wbp.save_wbp(path, model)
            written.append(path)
    return written


def _load_decoders(cfg, out_dir):
    decoders = {}
    for det in cfg.detector_mode:
        for dec in cfg.decoder_mode:
            if dec in TRAINED_DECODERS:
                model = wbp.load_wbp(decoder_path(cfg, out_dir, det, dec))
                if isinstance(model, wbp.WbpPosterior):
                    model.ensemble_size = cfg.decoder_ensemble
                decoders[det, dec] = model
    return decoders


# --------------------------------------------------------------------------
# experiment runs


@dataclass
class BlockResult:
    records: list
    tables: dict  # detector mode -> ReliabilityTable
    block: modem.TransmissionBlock | None = None


def _message_ber(code, soft, block):
    words = wbp.hard_decide(soft)
    msgs, _ = polar.message_bit_recovery(code, words)
    truth = block.message_bits.reshape(-1, code.message_length)
    return metrics.ber(msgs, truth)


def run_block(cfg, fp, snr, index, *, trace, code, graph, decoders, const, keep_block=False) -> BlockResult:
    blk = make_blocks_for(cfg, snr, index, trace, code if cfg.coded else None, const)
    si, _ = blk.info
    records, tables = [], {}
    for det in cfg.detector_mode:
        t0 = time.perf_counter()
        soft = detect(cfg, det, blk, derive_seed(cfg.seed, "detector", det, repr(float(snr)), index) % (2 ** 31))
        t_det = time.perf_counter() - t0
        conf, correct = metrics.prediction_records(soft, si)
        table = metrics.reliability_table(conf, correct, cfg.ece_bins)
        tables[det] = table
        ser = metrics.ser(metrics.hard_symbols(soft), si)
        ece = table.ece()
        llr = None
        for dec in cfg.decoder_mode:
            ber = None
            t1 = time.perf_counter()
            if dec != "none":
                if llr is None:
                    llr = modem.codeword_llrs(soft, const, code.block_length).reshape(-1, code.block_length)
                seed = derive_seed(cfg.seed, "decode", det, dec, repr(float(snr)), index) % (2 ** 31)
                bits = decode(cfg, dec, decoders.get((det, dec)), llr, graph, seed)
                ber = _message_ber(code, bits, blk)
            runtime = (t_det + time.perf_counter() - t1) * 1e3 if cfg.record_runtime else None
            records.append(MetricRecord(fp, index, float(snr), det, dec, ser, ber, ece, runtime))
    return BlockResult(records, tables, blk if keep_block else None)


def _map_ordered(fn, tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def run_experiment(cfg: ExperimentConfig, out_dir=".", threads=1, write=True) -> list[MetricRecord]:
    """Run the full grid; results are identical for any thread count."""
    out_dir = Path(out_dir)
    const = modem.constellation(cfg.constellation)
    trace = load_trace(cfg)
    code = load_code(cfg) if cfg.coded else None
    graph = polar.tanner_graph(code) if code is not None else None
    if cfg.coded:
        train_decoders(cfg, out_dir, only_missing=True)
    decoders = _load_decoders(cfg, out_dir) if cfg.coded else {}
    fp = fingerprint(cfg)
    tasks = [(snr, b) for snr in cfg.snr_db for b in range(cfg.blocks)]

    def work(task):
        snr, b = task
        return run_block(cfg, fp, snr, b, trace=trace, code=code, graph=graph, decoders=decoders, const=const,
                         keep_block=bool(cfg.block_dump))

    results = _map_ordered(work, tasks, threads)
    records = [r for res in results for r in res.records]
    if write:
        write_records(out_dir / cfg.output, records)
        if cfg.reliability:
            _write_reliability(cfg, out_dir, tasks, results)
        if cfg.block_dump:
            _write_block_dumps(cfg, out_dir, tasks, results)
    return records


def _snr_tag(snr):
    return f"{float(snr):g}".replace("-", "m")


def _write_reliability(cfg, out_dir, tasks, results):
    for det in cfg.detector_mode:
        for snr in cfg.snr_db:
            merged = None
            for (s, _), res in zip(tasks, results):
                if s == snr:
                    merged = res.tables[det] if merged is None else merged.merge(res.tables[det])
            merged.to_csv(Path(out_dir) / f"reliability_{det}_snr{_snr_tag(snr)}.csv")


def _write_block_dumps(cfg, out_dir, tasks, results):
    stem = Path(cfg.block_dump)
    for snr in cfg.snr_db:
        blocks = [res.block for (s, _), res in zip(tasks, results) if s == snr]
        modem.dump_block_csv(Path(out_dir) / f"{stem.stem}_snr{_snr_tag(snr)}{stem.suffix or '.csv'}", blocks)


def run_oracle(cfg: ExperimentConfig, out_dir=".", threads=1, write=True) -> list[MetricRecord]:
    """MAP detection (and bitwise-MAP decoding for small codes) on the config's blocks."""
    out_dir = Path(out_dir)
    const = modem.constellation(cfg.constellation)
    if const.size ** cfg.users > ORACLE_LIMIT:
        raise ConfigError("users", f"|S|^K = {const.size ** cfg.users} is too large for the MAP oracle")
    trace = load_trace(cfg)
    code = load_code(cfg) if cfg.coded else None
    if code is not None and 2 ** code.message_length > DECODE_ORACLE_LIMIT:
        raise ConfigError("code", "the bitwise-MAP decoding oracle needs at most 16 message bits")
    fp = fingerprint(cfg)
    tasks = [(snr, b) for snr in cfg.snr_db for b in range(cfg.blocks)]

    def work(task):
        snr, b = task
        blk = make_blocks_for(cfg, snr, b, trace, code, const)
        si, yi = blk.info
        _, soft = map_oracle_detect(blk.channel_matrix, yi, blk.noise_std, const, cfg.users, _channel_law(cfg))
        conf, correct = metrics.prediction_records(soft, si)
        ser = metrics.ser(metrics.hard_symbols(soft), si)
        ece, _ = metrics.ece(conf, correct, cfg.ece_bins)
        ber, dec = None, "none"
        if code is not None:
            llr = modem.codeword_llrs(soft, const, code.block_length).reshape(-1, code.block_length)
            words = ml_oracle_decode(code, llr)
            msgs, _ = polar.message_bit_recovery(code, words)
            ber = metrics.ber(msgs, blk.message_bits.reshape(-1, code.message_length))
            dec = "map"
        return MetricRecord(fp, b, float(snr), "map", dec, ser, ber, ece, None)

    records = _map_ordered(work, tasks, threads)
    if write:
        write_records(out_dir / cfg.output, records)
    return records


# --------------------------------------------------------------------------
# sweeps


SUMMARY_FIELDS = ("fingerprint", "snr_db", "detector_mode", "decoder_mode", "blocks", "ser", "ber", "ece")


def aggregate(records):
    """Mean metrics over blocks per (fingerprint, snr, detector, decoder), in first-seen order."""
    groups = {}
    for r in records:
        groups.setdefault((r.fingerprint, r.snr_db, r.detector_mode, r.decoder_mode), []).append(r)
    out = []
    for (fp, snr, det, dec), rs in groups.items():
        bers = [r.ber for r in rs if r.ber is not None]
        out.append({
            "fingerprint": fp, "snr_db": snr, "detector_mode": det, "decoder_mode": dec, "blocks": len(rs),
            "ser": float(np.mean([r.ser for r in rs])),
            "ber": float(np.mean(bers)) if bers else None,
            "ece": float(np.mean([r.ece for r in rs])),
        })
    return out


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in rows:
            w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in SUMMARY_FIELDS])


def sweep(config_paths, out_dir=".", threads=1, seed=None) -> list[MetricRecord]:
    """Run several configs into one raw CSV (``sweep.csv``) plus block means (``sweep_summary.csv``)."""
    out_dir = Path(out_dir)
    records = []
    for path in config_paths:
        cfg = load_config(path)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        sub = out_dir / Path(path).stem
        records += run_experiment(cfg, sub, threads)
    write_records(out_dir / "sweep.csv", records)
    write_summary(out_dir / "sweep_summary.csv", aggregate(records))
    return records


def config_dict(cfg: ExperimentConfig) -> dict:
    return {k: v for k, v in asdict(cfg).items() if k != "base_dir"}
