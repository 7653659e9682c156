"""Rebuild path channels from sensed (range, velocity) pairs and angle estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PathChannel, steering_vector
from .config import SystemConfig
from .sensing import SensingEstimate

ANGLE_GRID = np.deg2rad(np.arange(-90, 91, dtype=float))  # 1 degree scan


@dataclass
class AngleEstimate:
    aod_rad: float
    aoa_rad: float
    peak_to_mean: float

    @property
    def confident(self) -> bool:
        return self.peak_to_mean >= 3.0


def delay_doppler_from_rv(r_m: float, v_m_s: float, config: SystemConfig) -> tuple[float, float]:
    """tau = r/c and f_d = f_c * v / c."""
    if r_m <= 0:
        raise ValueError("range must be positive")
    c = config.speed_of_light_m_s
    return r_m / c, config.carrier_freq_hz * v_m_s / c


def estimate_angles(spatial_snapshot: np.ndarray) -> AngleEstimate:
    """Matched-beam scan of an (Nr, Nt) snapshot over a 1-degree angle grid."""
    snapshot = np.asarray(spatial_snapshot, dtype=np.complex128)
    if not np.any(np.abs(snapshot) > 0):
        raise ValueError("spatial snapshot is zero")
    n_r, n_t = snapshot.shape
    d_r = np.stack([steering_vector(a, n_r) for a in ANGLE_GRID])  # (G, Nr)
    d_t = np.stack([steering_vector(a, n_t) for a in ANGLE_GRID])  # (G, Nt)
    scores = np.abs(d_r.conj() @ snapshot @ d_t.T)                 # (G_rx, G_tx)
    best_rx, best_tx = np.unravel_index(np.argmax(scores), scores.shape)
    peak_to_mean = float(scores[best_rx, best_tx] / np.mean(scores))
    return AngleEstimate(
        aod_rad=float(ANGLE_GRID[best_tx]),
        aoa_rad=float(ANGLE_GRID[best_rx]),
        peak_to_mean=peak_to_mean,
    )


def matched_spatial_snapshot(rx_frames: np.ndarray, tx_frames: np.ndarray,
                             phase: np.ndarray) -> np.ndarray:
    """Correlate receive frames against (transmit reference x phase template).

    Returns an (Nr, Nt) snapshot whose dominant structure is the steering
    outer product of the path matching ``phase``; other paths and symbol
    content average out.  ``phase`` has grid shape (M, N).
    """
    template = tx_frames * phase[None, :, :]          # (Nt, M, N)
    energy = np.sum(np.abs(template) ** 2)
    if energy <= 0:
        raise ValueError("transmit reference is empty")
    flat_rx = rx_frames.reshape(rx_frames.shape[0], -1)
    flat_t = template.reshape(template.shape[0], -1)
    return flat_rx @ flat_t.conj().T / energy


def reconstruct_channel(estimate: SensingEstimate, angles: list, gains: np.ndarray,
                        config: SystemConfig) -> list[PathChannel]:
    """Build one path per detection from (r, v), an angle pair, and a complex gain."""
    if len(angles) != len(estimate) or len(gains) != len(estimate):
        raise ValueError("need one angle pair and one gain per detection")
    paths = []
    for k in range(len(estimate)):
        tau, f_d = delay_doppler_from_rv(estimate.ranges_m[k], estimate.velocities_m_s[k], config)
        aod, aoa = angles[k]
        paths.append(PathChannel(
            complex_gain=complex(gains[k]), delay_s=tau, doppler_hz=f_d,
            aod_rad=aod, aoa_rad=aoa,
            num_tx=config.num_tx_antennas, num_rx=config.num_rx_antennas,
        ))
    return paths


def fit_path_gains(rx_frames: np.ndarray, tx_frames: np.ndarray, paths: list,
                   config: SystemConfig) -> np.ndarray:
    """Joint least-squares complex gains of unit-gain path templates.

    Solves min_g || Y - sum_l g_l T_l ||^2 where T_l applies path l's steering
    geometry and phase law (gain stripped) to the transmit reference.  A tiny
    relative ridge keeps coincident detections solvable.
    """
    if not paths:
        return np.empty(0, dtype=np.complex128)
    n_t, m, n = tx_frames.shape
    sym = np.repeat(np.arange(m), n)
    sub = np.tile(np.arange(n), m)
    x_flat = tx_frames.reshape(n_t, m * n)
    templates = []
    for p in paths:
        phase = p.phase_law(sym, sub, config)
        templates.append((p.spatial_matrix @ x_flat) * phase[None, :])
    t_stack = np.stack([t.ravel() for t in templates])      # (L, Nr*M*N)
    y_flat = rx_frames.ravel()
    gram = t_stack.conj() @ t_stack.T
    rhs = t_stack.conj() @ y_flat
    ridge = 1e-9 * np.trace(gram).real / max(len(paths), 1)
    gains = np.linalg.solve(gram + ridge * np.eye(len(paths)), rhs)
    return gains
