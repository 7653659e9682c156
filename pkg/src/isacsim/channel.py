"""Multipath bistatic channel: geometry, Doppler, synthesis, and application.

Conventions (fixed here, relied on by the sensing module):
  * per-path phase over the grid is
        h(m, n) = exp(-2j*pi * n*df * tau) * exp(+2j*pi * f_d * m * T)
    i.e. the Doppler phase advances with the symbol index for positive f_d;
  * the constant carrier-delay phase exp(-2j*pi * f_c * tau) is folded into
    the scalar path gain;
  * ``spatial_matrix`` is the pure-geometry steering outer product
    d_r(aoa) d_t(aod)^H (unit norm, rank 1); the scalar amplitude lives in
    ``complex_gain``.  The composite per-element channel is
        H(m, n) = complex_gain * h(m, n) * spatial_matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import mix_paths
from .config import SPEED_OF_LIGHT, SystemConfig


def steering_vector(angle_rad: float, n_elements: int) -> np.ndarray:
    """Half-wavelength ULA steering vector, unit Euclidean norm."""
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    k = np.arange(n_elements)
    # d_a / lambda = 1/2 for half-wavelength spacing
    return np.exp(2j * np.pi * 0.5 * k * np.sin(angle_rad)) / np.sqrt(n_elements)


def large_scale_gain(r1_m: float, r2_m: float, rcs_m2: float, lambda_m: float) -> float:
    """Bistatic large-scale amplitude factor sigma*lambda^2 / ((4 pi)^3 (r1 r2)^2)."""
    if r1_m <= 0 or r2_m <= 0:
        raise ValueError("propagation legs must be positive")
    return rcs_m2 * lambda_m**2 / ((4.0 * np.pi) ** 3 * (r1_m * r2_m) ** 2)


def small_scale_gain(rng: np.random.Generator, size=None):
    """Weibull(shape=2) fading amplitude with unit second moment (Rayleigh magnitude)."""
    return rng.weibull(2.0, size=size)


def radial_speed(v_prime_m_s: float, alpha_rad: float, aod_rad: float, aoa_rad: float) -> float:
    """Radial (sensed) speed of a mover: -2 v' cos((aoa-aod)/2) cos(alpha-(aoa+aod)/2)."""
    half_diff = 0.5 * (aoa_rad - aod_rad)
    half_sum = 0.5 * (aoa_rad + aod_rad)
    return -2.0 * v_prime_m_s * np.cos(half_diff) * np.cos(alpha_rad - half_sum)


def doppler_exact(v_prime_m_s: float, alpha_rad: float, aod_rad: float,
                  aoa_rad: float, fc_hz: float) -> float:
    """Bistatic Doppler shift from the relativistic two-hop frequency chain."""
    beta = v_prime_m_s / SPEED_OF_LIGHT
    if beta >= 1.0:
        raise ValueError("speed must be below the speed of light")
    cos_t = np.cos(alpha_rad - aod_rad)
    cos_r = np.cos(alpha_rad - aoa_rad)
    return -beta * fc_hz * (cos_t + cos_r) / (1.0 + beta * cos_r)


def doppler_approx(v_prime_m_s: float, alpha_rad: float, aod_rad: float,
                   aoa_rad: float, fc_hz: float) -> float:
    """First-order (beta << 1) Doppler: the sum-to-product form of the exact shift."""
    return radial_speed(v_prime_m_s, alpha_rad, aod_rad, aoa_rad) * fc_hz / SPEED_OF_LIGHT


@dataclass
class Target:
    """Ground-truth kinematics and geometry of one scatterer."""

    range_tx_leg_m: float
    range_rx_leg_m: float
    absolute_speed_m_s: float
    heading_rad: float
    aod_rad: float
    aoa_rad: float
    rcs_m2: float = 1.0

    def __post_init__(self):
        if self.range_tx_leg_m <= 0 or self.range_rx_leg_m <= 0:
            raise ValueError("propagation legs must be positive")
        if abs(self.aod_rad) >= np.pi / 2 or abs(self.aoa_rad) >= np.pi / 2:
            raise ValueError("angles must lie in the open half-space (-pi/2, pi/2)")

    @property
    def bistatic_range_m(self) -> float:
        return self.range_tx_leg_m + self.range_rx_leg_m

    @property
    def radial_speed_m_s(self) -> float:
        return radial_speed(self.absolute_speed_m_s, self.heading_rad,
                            self.aod_rad, self.aoa_rad)

    @classmethod
    def from_radial(cls, bistatic_range_m: float, radial_speed_m_s: float,
                    aod_rad: float = 0.0, aoa_rad: float = 0.0,
                    rcs_m2: float = 1.0) -> "Target":
        """Build a target with the requested sensed (range, radial speed).

        The heading is placed along the receding angle bisector, which makes
        the absolute speed v' = v_radial / (2 cos((aoa-aod)/2)) and keeps the
        kinematic fields self-consistent.
        """
        half_diff = 0.5 * (aoa_rad - aod_rad)
        half_sum = 0.5 * (aoa_rad + aod_rad)
        heading = half_sum + np.pi if radial_speed_m_s >= 0 else half_sum
        v_prime = abs(radial_speed_m_s) / (2.0 * np.cos(half_diff))
        return cls(
            range_tx_leg_m=bistatic_range_m / 2.0,
            range_rx_leg_m=bistatic_range_m / 2.0,
            absolute_speed_m_s=v_prime,
            heading_rad=heading,
            aod_rad=aod_rad,
            aoa_rad=aoa_rad,
            rcs_m2=rcs_m2,
        )

    @classmethod
    def from_mapping(cls, raw: dict) -> "Target":
        raw = dict(raw)
        expect_range = raw.pop("bistatic_range_m", None)
        expect_radial = raw.pop("radial_speed_m_s", None)
        target = cls(**raw)
        if expect_range is not None and abs(expect_range - target.bistatic_range_m) > 1e-9 * expect_range:
            raise ValueError("bistatic_range_m disagrees with the leg sum")
        if expect_radial is not None:
            computed = target.radial_speed_m_s
            if abs(expect_radial - computed) > 1e-9 * max(abs(expect_radial), 1e-30):
                raise ValueError(
                    f"radial_speed_m_s {expect_radial} disagrees with computed {computed}"
                )
        return target


@dataclass
class PathChannel:
    """One propagation path: scalar gain, delay/Doppler phase law, steering geometry."""

    complex_gain: complex
    delay_s: float
    doppler_hz: float
    aod_rad: float
    aoa_rad: float
    num_tx: int
    num_rx: int
    spatial_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        d_t = steering_vector(self.aod_rad, self.num_tx)
        d_r = steering_vector(self.aoa_rad, self.num_rx)
        self.spatial_matrix = np.outer(d_r, d_t.conj())

    def phase_law(self, sym_idx: np.ndarray, sub_idx: np.ndarray,
                  config: SystemConfig) -> np.ndarray:
        """Unit-magnitude per-cell phase factor at the given (symbol, subcarrier) cells."""
        delay_phase = -2.0 * np.pi * np.asarray(sub_idx) * config.subcarrier_spacing_hz * self.delay_s
        doppler_phase = 2.0 * np.pi * self.doppler_hz * np.asarray(sym_idx) * config.symbol_period_s
        return np.exp(1j * (delay_phase + doppler_phase))


@dataclass
class ChannelRealization:
    paths: list
    noise_variance: float = 0.0

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("a realization needs at least one path")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")


def synthesize_path(target: Target, config: SystemConfig, fading_amplitude: float = 1.0) -> PathChannel:
    """Deterministic path for a target; pass a Weibull draw to add small-scale fading."""
    delay = target.bistatic_range_m / config.speed_of_light_m_s
    doppler = doppler_approx(
        target.absolute_speed_m_s, target.heading_rad,
        target.aod_rad, target.aoa_rad, config.carrier_freq_hz,
    )
    amplitude = fading_amplitude * large_scale_gain(
        target.range_tx_leg_m, target.range_rx_leg_m, target.rcs_m2, config.wavelength_m
    )
    gain = amplitude * np.exp(-2j * np.pi * config.carrier_freq_hz * delay)
    return PathChannel(
        complex_gain=gain, delay_s=delay, doppler_hz=doppler,
        aod_rad=target.aod_rad, aoa_rad=target.aoa_rad,
        num_tx=config.num_tx_antennas, num_rx=config.num_rx_antennas,
    )


def realize_channel(targets: list, config: SystemConfig,
                    rng: np.random.Generator | None = None) -> ChannelRealization:
    """Synthesize all paths; when an rng is given, draw per-path Weibull fading."""
    fades = np.ones(len(targets)) if rng is None else small_scale_gain(rng, len(targets))
    paths = [synthesize_path(t, config, fade) for t, fade in zip(targets, fades)]
    return ChannelRealization(paths=paths)


# -- application -------------------------------------------------------------

def full_grid_cells(config: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (symbol, subcarrier) index arrays covering the whole frame."""
    sym = np.repeat(np.arange(config.num_symbols), config.num_subcarriers)
    sub = np.tile(np.arange(config.num_subcarriers), config.num_symbols)
    return sym, sub


def path_arrays(paths: list, config: SystemConfig, sym_idx: np.ndarray,
                sub_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stack gain-weighted spatial matrices (L, Nr, Nt) and phase laws (L, E)."""
    weighted = np.stack([p.complex_gain * p.spatial_matrix for p in paths])
    phases = np.stack([p.phase_law(sym_idx, sub_idx, config) for p in paths])
    return weighted, phases


def apply_paths(tx_frames: np.ndarray, paths: list, config: SystemConfig) -> np.ndarray:
    """Noiseless receive frames (Nr, M, N) for transmit frames (Nt, M, N)."""
    n_t, m, n = tx_frames.shape
    if n_t != config.num_tx_antennas:
        raise ValueError(f"expected {config.num_tx_antennas} transmit grids, got {n_t}")
    sym, sub = full_grid_cells(config)
    weighted, phases = path_arrays(paths, config, sym, sub)
    y = mix_paths(weighted, phases, tx_frames.reshape(n_t, m * n))
    return y.reshape(config.num_rx_antennas, m, n)


def awgn_variance_for_snr(snr_db: float, mean_rx_power: float) -> float:
    """Per-element complex noise variance for an SNR defined at the receiver."""
    if mean_rx_power <= 0:
        raise ValueError("mean receive power must be positive")
    return mean_rx_power / 10.0 ** (snr_db / 10.0)


def add_awgn(rx_frames: np.ndarray, noise_variance: float,
             rng: np.random.Generator) -> np.ndarray:
    scale = np.sqrt(noise_variance / 2.0)
    noise = rng.standard_normal(rx_frames.shape) + 1j * rng.standard_normal(rx_frames.shape)
    return rx_frames + scale * noise


def apply_channel(tx_frames: np.ndarray, realization: ChannelRealization,
                  config: SystemConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the multipath channel and (for positive noise variance) AWGN."""
    rx = apply_paths(tx_frames, realization.paths, config)
    if realization.noise_variance > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_variance > 0")
        rx = add_awgn(rx, realization.noise_variance, rng)
    return rx
