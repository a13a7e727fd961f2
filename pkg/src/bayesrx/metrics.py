"""Symbol/bit error rates and binned expected calibration error."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def ser(estimated, true) -> float:
    estimated, true = np.asarray(estimated), np.asarray(true)
    if estimated.shape != true.shape:
        raise ValueError(f"shape mismatch {estimated.shape} vs {true.shape}")
    return float(np.mean(estimated != true))


def ber(estimated, true) -> float:
    estimated, true = np.asarray(estimated), np.asarray(true)
    if estimated.shape != true.shape:
        raise ValueError(f"shape mismatch {estimated.shape} vs {true.shape}")
    return float(np.mean(estimated != true))


def hard_symbols(soft) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(soft, axis=-1)


def prediction_records(soft, true_symbols):
    """Confidence (max probability) and correctness per (time, user)."""
    soft = np.asarray(soft)
    conf = soft.max(axis=-1).ravel()
    correct = (hard_symbols(soft) == np.asarray(true_symbols)).ravel()
    return conf, correct


@dataclass
class ReliabilityTable:
    counts: np.ndarray
    correct_sums: np.ndarray
    confidence_sums: np.ndarray

    @property
    def bins(self) -> int:
        return self.counts.size

    @property
    def edges(self):
        return np.arange(self.bins + 1) / self.bins

    @property
    def accuracy(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.correct_sums / self.counts, np.nan)

    @property
    def confidence(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.confidence_sums / self.counts, np.nan)

    def merge(self, other: ReliabilityTable) -> ReliabilityTable:
        if other.bins != self.bins:
            raise ValueError("bin counts differ")
        return ReliabilityTable(self.counts + other.counts, self.correct_sums + other.correct_sums,
                                self.confidence_sums + other.confidence_sums)

    def ece(self) -> float:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("no records")
        value = 0.0
        for n, acc, conf in zip(self.counts, self.accuracy, self.confidence):
            if n:
                value += (n / total) * abs(acc - conf)
        return float(value)

    def to_csv(self, path):
        edges = self.edges
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "count", "acc", "conf"])
            for r in range(self.bins):
                acc = "" if not self.counts[r] else repr(float(self.accuracy[r]))
                conf = "" if not self.counts[r] else repr(float(self.confidence[r]))
                w.writerow([repr(float(edges[r])), repr(float(edges[r + 1])), int(self.counts[r]), acc, conf])


def bin_index(confidence, bins):
    """Bins are (0, 1/R], ..., ((R-1)/R, 1]; a value on an edge goes to the lower bin."""
    upper = np.arange(1, bins + 1) / bins
    return np.minimum(np.searchsorted(upper, confidence, side="left"), bins - 1)


def reliability_table(confidence, correct, bins=10) -> ReliabilityTable:
    confidence = np.asarray(confidence, dtype=float).ravel()
    correct = np.asarray(correct, dtype=float).ravel()
    if bins < 1:
        raise ValueError("need at least one bin")
    idx = bin_index(confidence, bins)
    return ReliabilityTable(
        np.bincount(idx, minlength=bins),
        np.bincount(idx, weights=correct, minlength=bins),
        np.bincount(idx, weights=confidence, minlength=bins),
    )


def ece(confidence, correct, bins=10):
    """Return ``(ece, table)``."""
    if np.size(confidence) == 0:
        raise ValueError("empty record set")
    table = reliability_table(confidence, correct, bins)
    return table.ece(), table
