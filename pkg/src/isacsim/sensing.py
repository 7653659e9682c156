"""Passive range/velocity estimation from the quotient grid.

Transform conventions.  A path contributes exp(-2j*pi*n*df*tau) along
subcarriers and exp(+2j*pi*f_d*m*T) along symbols (see channel.py).  Both
axes are correlated against templates sampled at *interval centers*
(k + 1/2), so a noiseless tone lands in the interval index
floor(value / bin) and the midpoint estimate (k + 1/2) * bin is the
nearest sampled point to the truth:

    velocity statistic  V[k] = | sum_m q[m] exp(-2j*pi*(k+1/2)*m/M_I) |
    range statistic     R[k] = | sum_n q[n] exp(+2j*pi*(k+1/2)*n/N_I) |

Statistics are magnitude-averaged across the other axis (noncoherent) and
normalized by the populated-cell count so velocity and range peaks share one
scale for thresholding.  Cells where the reference transmit estimate is
(near) zero are zeroed and counted instead of divided.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DETECTION_CAP, SystemConfig

ZERO_GUARD = 1e-12


@dataclass
class QuotientResult:
    values: np.ndarray          # (M, N) complex, zeros where guarded
    guarded_cells: int          # how many divisions the guard absorbed


@dataclass
class SensingEstimate:
    """Per-detection ranges, velocities, interval indices, and peak magnitudes."""

    ranges_m: np.ndarray = field(default_factory=lambda: np.empty(0))
    velocities_m_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    range_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    velocity_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    range_magnitudes: np.ndarray = field(default_factory=lambda: np.empty(0))
    velocity_magnitudes: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        n = len(self.ranges_m)
        for name in ("velocities_m_s", "range_indices", "velocity_indices",
                     "range_magnitudes", "velocity_magnitudes"):
            if len(getattr(self, name)) != n:
                raise ValueError("all detection sequences must share one length")

    def __len__(self) -> int:
        return len(self.ranges_m)

    @classmethod
    def from_lists(cls, ranges, velocities, r_idx, v_idx, r_mag, v_mag) -> "SensingEstimate":
        return cls(
            ranges_m=np.asarray(ranges, dtype=float),
            velocities_m_s=np.asarray(velocities, dtype=float),
            range_indices=np.asarray(r_idx, dtype=np.int64),
            velocity_indices=np.asarray(v_idx, dtype=np.int64),
            range_magnitudes=np.asarray(r_mag, dtype=float),
            velocity_magnitudes=np.asarray(v_mag, dtype=float),
        )


def quotient_grid(rx_grid: np.ndarray, tx_hat: np.ndarray) -> QuotientResult:
    """Elementwise rx/tx division with a guard on (near-)zero references."""
    rx_grid = np.asarray(rx_grid)
    tx_hat = np.asarray(tx_hat)
    if rx_grid.shape != tx_hat.shape:
        raise ValueError(f"grid shapes differ: {rx_grid.shape} vs {tx_hat.shape}")
    live = np.abs(tx_hat) >= ZERO_GUARD
    values = np.zeros_like(rx_grid, dtype=np.complex128)
    np.divide(rx_grid, tx_hat, out=values, where=live)
    return QuotientResult(values=values, guarded_cells=int(np.size(live) - np.count_nonzero(live)))


def _populated(values: np.ndarray) -> tuple[np.ndarray, int]:
    mask = np.abs(values) > 0
    return mask, int(np.count_nonzero(mask))


def velocity_spectrum(values: np.ndarray, config: SystemConfig,
                      bin_limit: int | None = None) -> np.ndarray:
    """Column-averaged, count-normalized velocity statistic over M_I intervals."""
    m, n = values.shape
    m_i = config.dft_points_doppler
    _, nnz = _populated(values)
    if nnz == 0:
        return np.zeros(m_i if bin_limit is None else bin_limit)
    shift = np.exp(-1j * np.pi * np.arange(m) / m_i)
    spec = np.abs(np.fft.fft(values * shift[:, None], n=m_i, axis=0)).mean(axis=1)
    spec /= nnz / n
    return spec if bin_limit is None else spec[:bin_limit]


def range_spectrum(values: np.ndarray, config: SystemConfig,
                   bin_limit: int | None = None) -> np.ndarray:
    """Row-averaged, count-normalized range statistic over N_I intervals."""
    m, n = values.shape
    n_i = config.idft_points_range
    _, nnz = _populated(values)
    if nnz == 0:
        return np.zeros(n_i if bin_limit is None else bin_limit)
    shift = np.exp(1j * np.pi * np.arange(n) / n_i)
    spec = np.abs(np.fft.ifft(values * shift[None, :], n=n_i, axis=1) * n_i).mean(axis=0)
    spec /= nnz / m
    return spec if bin_limit is None else spec[:bin_limit]


def estimate_velocity(values: np.ndarray, config: SystemConfig,
                      bin_limit: int | None = None) -> tuple[int, float, float]:
    """(interval index, peak magnitude, midpoint velocity) of the velocity statistic."""
    spec = velocity_spectrum(values, config, bin_limit)
    idx = int(np.argmax(spec))
    velocity = (idx + 0.5) * config.velocity_bin_m_s
    return idx, float(spec[idx]), velocity


def estimate_range(values: np.ndarray, config: SystemConfig,
                   bin_limit: int | None = None) -> tuple[int, float, float]:
    """(interval index, peak magnitude, midpoint range) of the range statistic."""
    spec = range_spectrum(values, config, bin_limit)
    idx = int(np.argmax(spec))
    rng_m = (idx + 0.5) * config.range_bin_m
    return idx, float(spec[idx]), rng_m


def _alias_limits(live: np.ndarray, config: SystemConfig) -> tuple[int, int]:
    """Unambiguous search bands implied by the populated-cell pattern.

    Velocity is always restricted to the positive half-space (the documented
    approaching-target convention), which suppresses mirror-image bins;
    strided row/column occupancy (pilot-only rows, antenna combs) narrows
    the bands further to one grating-lobe period.
    """
    v_limit = config.dft_points_doppler // 2
    r_limit = config.idft_points_range
    rows = np.flatnonzero(live.any(axis=1))
    cols = np.flatnonzero(live.any(axis=0))
    row_stride = int(np.gcd.reduce(np.diff(rows))) if rows.size > 1 else config.num_symbols
    col_stride = int(np.gcd.reduce(np.diff(cols))) if cols.size > 1 else config.num_subcarriers
    if row_stride > 1:
        v_limit = min(v_limit, max(1, config.dft_points_doppler // row_stride))
    if col_stride > 1:
        r_limit = min(r_limit, max(1, config.idft_points_range // col_stride))
    return v_limit, r_limit


def _detection_phase(r_m: float, v_m_s: float, config: SystemConfig) -> np.ndarray:
    """Phase template over the full grid for a detected (range, velocity) pair."""
    tau = r_m / config.speed_of_light_m_s
    f_d = v_m_s * config.carrier_freq_hz / config.speed_of_light_m_s
    m = np.arange(config.num_symbols)[:, None]
    n = np.arange(config.num_subcarriers)[None, :]
    return np.exp(1j * 2.0 * np.pi * (f_d * m * config.symbol_period_s
                                      - n * config.subcarrier_spacing_hz * tau))


def detect_targets(rx_grid: np.ndarray, tx_hat: np.ndarray, threshold: float,
                   config: SystemConfig, angle_hints=None,
                   velocity_bin_limit: int | None = None,
                   range_bin_limit: int | None = None,
                   cap: int = DETECTION_CAP,
                   refine_sweeps: int = 1) -> SensingEstimate:
    """Successive-cancellation multi-target detection on one antenna stream.

    The fractional ``threshold`` is taken relative to the larger of the two
    first-pass peak statistics.  Each accepted detection is reconstructed on
    this stream (least-squares amplitude against the phase template times the
    transmit reference) and subtracted from the residual receive grid before
    the next pass.  After the greedy passes, ``refine_sweeps`` re-estimation
    sweeps revisit each detection with all others cancelled, which removes
    most of the peak bias that overlapping responses cause on small grids
    (estimates stay on the interval grid; no sub-bin interpolation).

    ``angle_hints`` is accepted for interface symmetry with the
    multi-antenna reconstruction; the (0,0) stream template does not depend
    on the hinted angles.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    del angle_hints
    rx_grid = np.asarray(rx_grid, dtype=np.complex128)
    tx_hat = np.asarray(tx_hat, dtype=np.complex128)
    live = np.abs(tx_hat) >= ZERO_GUARD

    auto_v, auto_r = _alias_limits(live, config)
    velocity_bin_limit = min(velocity_bin_limit or auto_v, auto_v)
    range_bin_limit = min(range_bin_limit or auto_r, auto_r)

    def measure(grid):
        quotient = quotient_grid(grid * live, tx_hat)
        iv, mv, vel = estimate_velocity(quotient.values, config, velocity_bin_limit)
        ir, mr, rng_m = estimate_range(quotient.values, config, range_bin_limit)
        return iv, mv, vel, ir, mr, rng_m

    def component(rng_m, vel, grid):
        """LS-fitted single-detection contribution on this stream."""
        template = _detection_phase(rng_m, vel, config) * tx_hat * live
        denom = np.vdot(template, template).real
        if denom <= 0:
            return np.zeros_like(template)
        return (np.vdot(template, grid * live) / denom) * template

    detections: list[tuple] = []  # (r, v, ir, iv, mr, mv, component grid)
    residual = rx_grid.copy()
    reference = None
    seen: set[tuple[int, int]] = set()
    for _ in range(cap):
        iv, mv, vel, ir, mr, rng_m = measure(residual)
        peak = max(mv, mr)
        if reference is None:
            if peak <= 0:
                break
            reference = peak
        if peak < threshold * reference:
            break
        if (ir, iv) in seen:
            # cancellation failed to flatten this peak; further passes are sterile
            break
        seen.add((ir, iv))
        part = component(rng_m, vel, residual)
        detections.append((rng_m, vel, ir, iv, mr, mv, part))
        residual = residual - part

    for _ in range(refine_sweeps if detections else 0):
        for k in range(len(detections)):
            others = rx_grid - sum(d[6] for i, d in enumerate(detections) if i != k)
            iv, mv, vel, ir, mr, rng_m = measure(others)
            detections[k] = (rng_m, vel, ir, iv, mr, mv, component(rng_m, vel, others))

    # detections that refined onto the same cell are one target
    unique: dict[tuple[int, int], tuple] = {}
    for d in detections:
        unique.setdefault((d[2], d[3]), d)
    detections = list(unique.values())

    return SensingEstimate.from_lists(
        [d[0] for d in detections], [d[1] for d in detections],
        [d[2] for d in detections], [d[3] for d in detections],
        [d[4] for d in detections], [d[5] for d in detections],
    )
