"""Bit generation, Gray-mapped QAM, pilot/data framing, grid <-> vector reshaping.

Gray mapping (documented so bit error rates are reproducible): a symbol of
k bits is split into I bits (first k/2) and Q bits (last k/2).  Each half is
Gray-decoded to an amplitude level; the level order for the Gray sequence
00, 01, 11, 10 is -3, -1, +1, +3 (16-QAM), and analogously for 4/64-QAM.
Constellations are normalized to unit average symbol energy.

Pilots are a receiver-known constant-amplitude pseudo-random QPSK sequence
seeded from a fixed constant; within a pilot symbol row, transmit antennas
occupy disjoint subcarrier combs so per-element channel division stays
well conditioned.
"""

from __future__ import annotations

import numpy as np

from ._accel import nearest_symbol_indices
from .config import PILOT_SEED, SystemConfig

_GRAY_AXIS_ORDER = {
    1: [0, 1],
    2: [0, 1, 3, 2],
    3: [0, 1, 3, 2, 6, 7, 5, 4],
}


def _axis_levels(bits_per_axis: int) -> np.ndarray:
    """Amplitude level for each integer axis value under the Gray order."""
    n_levels = 1 << bits_per_axis
    levels = np.empty(n_levels)
    amplitudes = np.arange(-(n_levels - 1), n_levels, 2, dtype=float)
    for position, code in enumerate(_GRAY_AXIS_ORDER[bits_per_axis]):
        levels[code] = amplitudes[position]
    return levels


def constellation(order: int) -> np.ndarray:
    """Unit-energy Gray-mapped square QAM constellation, indexed by symbol integer."""
    if order not in (4, 16, 64):
        raise ValueError(f"unsupported QAM order {order}")
    k = order.bit_length() - 1
    half = k // 2
    levels = _axis_levels(half)
    idx = np.arange(order)
    i_val = levels[idx >> half]
    q_val = levels[idx & ((1 << half) - 1)]
    points = i_val + 1j * q_val
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def minimum_distance(order: int) -> float:
    """Closed-form minimum distance of the unit-energy square constellation."""
    return 2.0 / np.sqrt(2.0 * (order - 1) / 3.0)


def random_bits(seed: int, count: int) -> np.ndarray:
    """Deterministic uniform bits (uint8 array of 0/1)."""
    if count <= 0:
        raise ValueError(f"count must be positive (got {count})")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=count, dtype=np.uint8)


def qam_modulate(bits: np.ndarray, order: int) -> np.ndarray:
    """Map a bit array to Gray-coded QAM symbols."""
    points = constellation(order)
    k = order.bit_length() - 1
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size % k:
        raise ValueError(f"bit count {bits.size} not divisible by {k}")
    weights = 1 << np.arange(k - 1, -1, -1)
    idx = bits.reshape(-1, k) @ weights
    return points[idx]


def qam_demodulate(symbols: np.ndarray, order: int) -> np.ndarray:
    """Hard-decision demapping; ties break toward the smaller symbol index."""
    points = constellation(order)
    idx = nearest_symbol_indices(np.asarray(symbols, dtype=np.complex128), points)
    k = order.bit_length() - 1
    shifts = np.arange(k - 1, -1, -1)
    bits = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return bits.reshape(-1)


def hard_symbols(values: np.ndarray, order: int) -> np.ndarray:
    """Project arbitrary complex values onto the nearest constellation points."""
    points = constellation(order)
    idx = nearest_symbol_indices(np.asarray(values, dtype=np.complex128), points)
    return points[idx].reshape(np.shape(values))


# -- pilots and frames -------------------------------------------------------

def pilot_rows(config: SystemConfig, antenna: int) -> np.ndarray:
    """Pilot-row contents for one antenna: QPSK on its comb, zero elsewhere.

    Shape (P, N) where P is the number of pilot symbol rows in the frame.
    """
    rows = config.pilot_symbol_indices
    comb = config.pilot_comb(antenna)
    rng = np.random.default_rng([PILOT_SEED, antenna])
    quadrant = rng.integers(0, 4, size=(rows.size, comb.size))
    qpsk = np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * quadrant))
    out = np.zeros((rows.size, config.num_subcarriers), dtype=np.complex128)
    out[:, comb] = qpsk
    return out


def assemble_frame(data_symbols: np.ndarray, pilot_symbols: np.ndarray,
                   config: SystemConfig) -> np.ndarray:
    """Interleave data rows and pilot rows into one (M, N) resource grid."""
    n = config.num_subcarriers
    data_rows = config.data_symbol_indices
    p_rows = config.pilot_symbol_indices
    data_symbols = np.asarray(data_symbols, dtype=np.complex128)
    pilot_symbols = np.asarray(pilot_symbols, dtype=np.complex128)
    if data_symbols.shape != (data_rows.size, n):
        raise ValueError(f"data shape {data_symbols.shape} != {(data_rows.size, n)}")
    if pilot_symbols.shape != (p_rows.size, n):
        raise ValueError(f"pilot shape {pilot_symbols.shape} != {(p_rows.size, n)}")
    grid = np.empty((config.num_symbols, n), dtype=np.complex128)
    grid[data_rows] = data_symbols
    grid[p_rows] = pilot_symbols
    return grid


def extract_data(grid: np.ndarray, config: SystemConfig) -> np.ndarray:
    return np.asarray(grid)[config.data_symbol_indices]


def extract_pilot(grid: np.ndarray, config: SystemConfig) -> np.ndarray:
    return np.asarray(grid)[config.pilot_symbol_indices]


def build_tx_frames(bits_per_antenna: list[np.ndarray], config: SystemConfig) -> np.ndarray:
    """Modulate per-antenna bit blocks and assemble the (Nt, M, N) frame stack."""
    frames = []
    for antenna, bits in enumerate(bits_per_antenna):
        symbols = qam_modulate(bits, config.qam_order)
        data = symbols.reshape(config.num_data_symbols, config.num_subcarriers)
        frames.append(assemble_frame(data, pilot_rows(config, antenna), config))
    return np.stack(frames)


def bits_per_antenna_count(config: SystemConfig) -> int:
    k = config.qam_order.bit_length() - 1
    return config.num_data_symbols * config.num_subcarriers * k


# -- vec / unvec -------------------------------------------------------------

def vectorize(grid: np.ndarray) -> np.ndarray:
    """Column-major stacking of an (M, N) grid into a length M*N vector."""
    return np.asarray(grid).reshape(-1, order="F")


def devectorize(vec: np.ndarray, num_symbols: int, num_subcarriers: int) -> np.ndarray:
    vec = np.asarray(vec)
    if vec.size != num_symbols * num_subcarriers:
        raise ValueError(f"length {vec.size} != {num_symbols}*{num_subcarriers}")
    return vec.reshape(num_symbols, num_subcarriers, order="F")
