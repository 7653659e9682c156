"""Error metrics: BER/SER and normalized range/velocity errors with matching.

Detections are paired to ground-truth targets one-to-one by nearest bistatic
range (globally greedy).  A matched target contributes its squared relative
error, saturated at 1.0 so a wildly wrong estimate is no worse than a miss;
an unmatched target contributes 1.0.  Spurious (unmatched) detections do not
enter the NMSE itself but are reported so the training loss can penalize
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ERROR_SATURATION = 1.0


@dataclass
class SensingErrors:
    nmse_range: float
    nmse_velocity: float
    n_matched: int
    n_missed: int
    n_false: int


def match_by_range(detected_ranges: np.ndarray, true_ranges: np.ndarray) -> list[tuple[int, int]]:
    """Greedy one-to-one (truth, detection) pairs ordered by range distance."""
    pairs = sorted(
        ((abs(detected_ranges[d] - true_ranges[t]), t, d)
         for t in range(len(true_ranges)) for d in range(len(detected_ranges))),
        key=lambda item: item[0],
    )
    used_t: set[int] = set()
    used_d: set[int] = set()
    matches = []
    for _, t, d in pairs:
        if t in used_t or d in used_d:
            continue
        used_t.add(t)
        used_d.add(d)
        matches.append((t, d))
    return matches


def sensing_errors(detected_ranges, detected_velocities, true_ranges,
                   true_velocities) -> SensingErrors:
    detected_ranges = np.asarray(detected_ranges, dtype=float)
    detected_velocities = np.asarray(detected_velocities, dtype=float)
    true_ranges = np.asarray(true_ranges, dtype=float)
    true_velocities = np.asarray(true_velocities, dtype=float)
    n_true = len(true_ranges)
    if n_true == 0:
        raise ValueError("at least one true target is required")
    matches = match_by_range(detected_ranges, true_ranges)
    err_r = np.full(n_true, ERROR_SATURATION)
    err_v = np.full(n_true, ERROR_SATURATION)
    for t, d in matches:
        rel_r = (detected_ranges[d] - true_ranges[t]) / true_ranges[t]
        rel_v = (detected_velocities[d] - true_velocities[t]) / true_velocities[t]
        err_r[t] = min(rel_r**2, ERROR_SATURATION)
        err_v[t] = min(rel_v**2, ERROR_SATURATION)
    return SensingErrors(
        nmse_range=float(np.mean(err_r)),
        nmse_velocity=float(np.mean(err_v)),
        n_matched=len(matches),
        n_missed=n_true - len(matches),
        n_false=len(detected_ranges) - len(matches),
    )


def bit_error_rate(detected_bits: np.ndarray, true_bits: np.ndarray) -> float:
    detected_bits = np.asarray(detected_bits).ravel()
    true_bits = np.asarray(true_bits).ravel()
    if detected_bits.size != true_bits.size:
        raise ValueError("bit streams must have equal length")
    return float(np.mean(detected_bits != true_bits))


def symbol_error_rate(detected_symbols: np.ndarray, true_symbols: np.ndarray,
                      tol: float = 1e-9) -> float:
    detected_symbols = np.asarray(detected_symbols).ravel()
    true_symbols = np.asarray(true_symbols).ravel()
    if detected_symbols.size != true_symbols.size:
        raise ValueError("symbol streams must have equal length")
    return float(np.mean(np.abs(detected_symbols - true_symbols) > tol))
