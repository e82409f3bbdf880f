"""Evaluation metrics: OSPA localization error, aggregate downlink capacity,
and classification accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class OspaConfig:
    order_p: float = 2.0
    gate_m: float = 5.0

    def __post_init__(self):
        if self.order_p < 1.0:
            raise ValueError("OSPA order must be >= 1")
        if self.gate_m <= 0.0:
            raise ValueError("OSPA gate must be > 0")


@dataclass
class OspaResult:
    """OSPA value with its decomposition (terms are p-th-power sums)."""

    total: float
    localization_term: float
    missed_term: float
    false_alarm_term: float
    matched_pairs: list
    cardinality: int


def assignment(cost):
    """Optimal rectangular linear assignment; returns (row_idx, col_idx)."""
    cost = np.asarray(cost, dtype=float)
    if cost.size and (not np.all(np.isfinite(cost)) or np.any(cost < 0)):
        raise ValueError("assignment costs must be finite and nonnegative")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def ospa(truth, estimates, config=OspaConfig()):
    """OSPA between a truth set and an estimate set of planar positions.

    The assignment minimizes the gate-saturated matched cost
    sum(min(d, gate)^p); assigned pairs beyond the gate count as one missed
    detection plus one false alarm. The total is
    ((sum_matched d^p + gate^p/2 * (missed + false)) / N_c)^(1/p) with
    N_c = |truth| + |estimates| - |matched|.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    estimates = np.asarray(estimates, dtype=float).reshape(-1, 2)
    if not (np.all(np.isfinite(truth)) and np.all(np.isfinite(estimates))):
        raise ValueError("positions must be finite")
    m, n = len(truth), len(estimates)
    p, gate = config.order_p, config.gate_m
    if m == 0 and n == 0:
        return OspaResult(0.0, 0.0, 0.0, 0.0, [], 0)

    matched = []
    loc = 0.0
    if m > 0 and n > 0:
        d = np.linalg.norm(truth[:, None, :] - estimates[None, :, :], axis=2)
        cost = np.minimum(d, gate) ** p
        rows, cols = assignment(cost)
        for i, j in zip(rows, cols):
            if d[i, j] < gate:
                matched.append((int(i), int(j)))
                loc += d[i, j] ** p
    z = len(matched)
    n_c = m + n - z
    missed = 0.5 * gate ** p * (m - z)
    false = 0.5 * gate ** p * (n - z)
    total = ((loc + missed + false) / n_c) ** (1.0 / p)
    return OspaResult(total=float(total), localization_term=float(loc),
                      missed_term=float(missed), false_alarm_term=float(false),
                      matched_pairs=matched, cardinality=n_c)


@dataclass(frozen=True)
class CapacityParams:
    comm_snr_linear: float = 6.43
    n_sensing: int = 3
    n_total: int = 6
    rho_p: float = 0.3
    num_subcarriers: int = 3168
    subcarrier_spacing_hz: float = 120e3

    def __post_init__(self):
        if not 0 <= self.n_sensing <= self.n_total:
            raise ValueError("n_sensing must lie in [0, n_total]")
        if self.comm_snr_linear <= 0:
            raise ValueError("communication SNR must be > 0")


def aggregate_capacity(params):
    """Mean downlink rate per BS in bit/s; sensing BSs lose rho_p of power."""
    bw = params.subcarrier_spacing_hz * params.num_subcarriers
    snr = params.comm_snr_linear
    sensing = params.n_sensing * bw * math.log2(1.0 + (1.0 - params.rho_p) * snr)
    comm_only = (params.n_total - params.n_sensing) * bw * math.log2(1.0 + snr)
    return (sensing + comm_only) / params.n_total


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, predicted_positive, actually_positive):
        if predicted_positive and actually_positive:
            self.tp += 1
        elif predicted_positive and not actually_positive:
            self.fp += 1
        elif not predicted_positive and actually_positive:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def accuracy(counts):
    """(TP + TN) / (TP + TN + FP + FN)."""
    if counts.total <= 0:
        raise ValueError("no classifications counted")
    return (counts.tp + counts.tn) / counts.total
