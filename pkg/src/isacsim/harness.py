"""End-to-end trials: pilot stage, Monte Carlo runs, SNR sweeps, CSV output.

Methods
-------
perfect       pseudo-inverse detection with the true channel; sensing from
              the true transmitted symbols (both error-free references).
isac-net      the unfolded receiver with trained per-layer scalars.
alg3          the same receiver with the untrained default scalars, i.e. the
              plain alternating detection/sensing/reconstruction loop.
conventional  pseudo-inverse detection with pilot-estimated channel, then
              one sensing pass on its own demodulated symbols.
2d-dft        alias of the conventional serial pipeline, reported from the
              sensing side of the comparison.

All randomness derives from the trial seed; trials at one (method, SNR) are
aggregated in seed order, so outputs are reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics, waveform
from .channel import (
    Target,
    add_awgn,
    apply_paths,
    awgn_variance_for_snr,
    realize_channel,
)
from .config import SLOT_SYMBOLS, ConfigError, SystemConfig, load_config_text
from .detection import conventional_detect
from .reconstruction import (
    estimate_angles,
    fit_path_gains,
    matched_spatial_snapshot,
    reconstruct_channel,
)
from .sensing import SensingEstimate, detect_targets
from .unfolded import (
    DEFAULT_NUM_LAYERS,
    NetworkParams,
    build_tx_reference,
    default_params,
    network_forward,
    _phase_grid,
    _pilot_only_frame,
)

METHOD_PERFECT = "perfect"
METHOD_UNFOLDED = "isac-net"
METHOD_BASELINE = "alg3"
METHOD_CONVENTIONAL = "conventional"
METHOD_2DDFT = "2d-dft"
METHODS = (METHOD_PERFECT, METHOD_UNFOLDED, METHOD_BASELINE, METHOD_CONVENTIONAL, METHOD_2DDFT)

CSV_HEADER = "method,snr_db,trials,ber,ser,nmse_range,nmse_velocity,detected_mean"


@dataclass
class PilotInit:
    paths: list
    estimate: SensingEstimate
    angles: list


@dataclass
class PilotEstimate:
    """Per-element least-squares channel samples on the pilot combs."""

    samples: np.ndarray       # (Nr, Nt, P, N) complex, NaN where not estimated
    snapshot: np.ndarray      # (Nr, Nt) averaged spatial correlation


@dataclass
class TrialResult:
    ber: float
    ser: float
    nmse_range: float
    nmse_velocity: float
    detected_count: int
    per_layer_trace: list
    seed: int
    snr_db: float
    false_alarms: int = 0

    def __post_init__(self):
        if not (0.0 <= self.ber <= 1.0 and 0.0 <= self.ser <= 1.0):
            raise ValueError("error rates must lie in [0, 1]")
        if self.nmse_range < 0 or self.nmse_velocity < 0:
            raise ValueError("NMSE values must be nonnegative")


# -- pilot stage ---------------------------------------------------------------

def pilot_channel_estimate(rx_pilot: np.ndarray, tx_pilot: np.ndarray,
                           config: SystemConfig) -> PilotEstimate:
    """Least-squares channel samples per pilot resource element plus a snapshot.

    rx_pilot: (Nr, P, N) received pilot rows; tx_pilot: (Nt, P, N) known pilot
    rows (zero off-comb).  With unit-magnitude pilots the per-element error
    variance equals the noise variance.
    """
    if rx_pilot.shape[1] == 0:
        raise ValueError("frame contains no pilot rows")
    n_r, p, n = rx_pilot.shape
    n_t = tx_pilot.shape[0]
    samples = np.full((n_r, n_t, p, n), np.nan + 0j, dtype=np.complex128)
    snapshot = np.zeros((n_r, n_t), dtype=np.complex128)
    for i in range(n_t):
        comb = config.pilot_comb(i)
        ref = tx_pilot[i][:, comb]
        est = rx_pilot[:, :, comb] / ref[None, :, :]
        samples[:, i][:, :, comb] = est
        snapshot[:, i] = est.reshape(n_r, -1).mean(axis=1)
    return PilotEstimate(samples=samples, snapshot=snapshot)




def pilot_initial_sensing(rx_frames: np.ndarray, config: SystemConfig,
                          threshold: float = 0.35) -> PilotInit:
    """Coarse sensing and channel seed from the pilot rows alone.

    The pilot rows repeat every slot, so the velocity search is limited to
    the unambiguous band M_I / 14; the antenna combs similarly limit the
    range search to N_I / Nt.
    """
    tx_pilot_frames = np.stack([
        _pilot_only_frame(config, antenna) for antenna in range(config.num_tx_antennas)
    ])
    estimate = detect_targets(
        rx_frames[0], tx_pilot_frames[0], threshold, config,
        velocity_bin_limit=max(1, config.dft_points_doppler // SLOT_SYMBOLS),
        range_bin_limit=max(1, config.idft_points_range // config.num_tx_antennas),
    )
    if len(estimate) == 0:
        return PilotInit(paths=[], estimate=estimate, angles=[])
    angles = []
    for k in range(len(estimate)):
        phase = _phase_grid(estimate.ranges_m[k], estimate.velocities_m_s[k], config)
        snap = matched_spatial_snapshot(rx_frames, tx_pilot_frames, phase)
        found = estimate_angles(snap)
        angles.append((found.aod_rad, found.aoa_rad))
    unit_paths = reconstruct_channel(estimate, angles, np.ones(len(estimate), dtype=complex), config)
    gains = fit_path_gains(rx_frames, tx_pilot_frames, unit_paths, config)
    paths = reconstruct_channel(estimate, angles, gains, config)
    return PilotInit(paths=paths, estimate=estimate, angles=angles)


# -- metrics -------------------------------------------------------------------

def compute_metrics(detected_bits, true_bits, hard_symbols, true_symbols,
                    estimate: SensingEstimate, true_targets,
                    seed: int = 0, snr_db: float = 0.0,
                    per_layer_trace=None) -> TrialResult:
    """Assemble a TrialResult; misses contribute 1.0 to each NMSE."""
    err = metrics.sensing_errors(
        estimate.ranges_m, estimate.velocities_m_s,
        [t.bistatic_range_m for t in true_targets],
        [t.radial_speed_m_s for t in true_targets],
    )
    return TrialResult(
        ber=metrics.bit_error_rate(detected_bits, true_bits),
        ser=metrics.symbol_error_rate(hard_symbols, true_symbols),
        nmse_range=err.nmse_range,
        nmse_velocity=err.nmse_velocity,
        detected_count=len(estimate),
        per_layer_trace=per_layer_trace or [],
        seed=seed,
        snr_db=snr_db,
        false_alarms=err.n_false,
    )


# -- scenes ----------------------------------------------------------------------

def three_target_scene() -> list[Target]:
    """Three movers at 10/50/100 m and 5/10/15 m/s with amplitude-equalized RCS.

    RCS scales with (r1 r2)^2 so the three echoes arrive with comparable
    power; the angle spread keeps the composite per-element channel well
    conditioned for two antennas.
    """
    spots = [
        (10.0, 5.0, np.deg2rad(-30.0), np.deg2rad(30.0)),
        (50.0, 10.0, 0.0, 0.0),
        (100.0, 15.0, np.deg2rad(30.0), np.deg2rad(-30.0)),
    ]
    ref_product = (spots[0][0] / 2.0) ** 2
    targets = []
    for r, v, aod, aoa in spots:
        legs_product = (r / 2.0) ** 2
        targets.append(Target.from_radial(
            r, v, aod_rad=aod, aoa_rad=aoa, rcs_m2=(legs_product / ref_product) ** 2,
        ))
    return targets


def single_target_scene(range_m: float = 10.0, speed_m_s: float = 15.0) -> list[Target]:
    return [Target.from_radial(range_m, speed_m_s)]


# -- trials ----------------------------------------------------------------------

def _trial_seeds(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(8)


def _data_view(frames: np.ndarray, config: SystemConfig) -> np.ndarray:
    return frames[:, config.data_symbol_indices, :].reshape(frames.shape[0], -1)


def synthesize_trial(config: SystemConfig, targets, seed: int, fading: bool = False):
    """Deterministic transmit frames, channel paths, and noisy receive frames."""
    seeds = _trial_seeds(seed)
    bit_count = waveform.bits_per_antenna_count(config)
    bits = [waveform.random_bits(int(seeds[a]) + a, bit_count)
            for a in range(config.num_tx_antennas)]
    tx_frames = waveform.build_tx_frames(bits, config)
    fade_rng = np.random.default_rng(seeds[6]) if fading else None
    realization = realize_channel(targets, config, fade_rng)
    rx_clean = apply_paths(tx_frames, realization.paths, config)
    noise_var = awgn_variance_for_snr(config.snr_db, float(np.mean(np.abs(rx_clean) ** 2)))
    rx = add_awgn(rx_clean, noise_var, np.random.default_rng(seeds[7]))
    return bits, tx_frames, realization, rx


def _serial_receiver(rx_frames: np.ndarray, pilot_init: PilotInit, config: SystemConfig,
                     threshold: float = 0.5):
    """Conventional pipeline: equalize with pilot CSI, then sense from the demod."""
    rx_data = _data_view(rx_frames, config)
    hard = conventional_detect(rx_data, pilot_init.paths, config)
    tx_ref = build_tx_reference(hard, np.stack([
        _pilot_only_frame(config, a) for a in range(config.num_tx_antennas)
    ]), config)
    estimate = detect_targets(rx_frames[0], tx_ref[0], threshold, config)
    return hard, estimate


def _perfect_receiver(rx_frames, tx_frames, true_paths, config):
    rx_data = _data_view(rx_frames, config)
    hard = conventional_detect(rx_data, true_paths, config)
    estimate = detect_targets(rx_frames[0], tx_frames[0], 0.5, config)
    return hard, estimate


def run_trial(config: SystemConfig, targets, params: NetworkParams | None = None,
              seed: int = 0, method: str = METHOD_UNFOLDED,
              fading: bool = False) -> TrialResult:
    """One deterministic end-to-end trial of the selected method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    bits, tx_frames, realization, rx = synthesize_trial(config, targets, seed, fading)
    true_data = _data_view(tx_frames, config)
    pilot_init = pilot_initial_sensing(rx, config)

    per_layer = None
    if method in (METHOD_UNFOLDED, METHOD_BASELINE):
        if method == METHOD_UNFOLDED and params is not None:
            net_params = params
        else:
            k = params.num_layers if params is not None else DEFAULT_NUM_LAYERS
            net_params = default_params(k)
        hard_grids, estimate, trace = network_forward(rx, pilot_init, net_params, config)
        hard = hard_grids.reshape(config.num_tx_antennas, -1)
        per_layer = [
            _layer_metrics(t, bits, true_data, targets, config) for t in trace
        ]
    elif method == METHOD_PERFECT:
        hard, estimate = _perfect_receiver(rx, tx_frames, realization.paths, config)
    else:  # conventional and 2d-dft share the serial pipeline
        hard, estimate = _serial_receiver(rx, pilot_init, config)

    detected_bits = waveform.qam_demodulate(hard.ravel(), config.qam_order)
    true_bits = np.concatenate(bits)
    return compute_metrics(detected_bits, true_bits, hard, true_data, estimate, targets,
                           seed=seed, snr_db=config.snr_db, per_layer_trace=per_layer)


def _layer_metrics(trace_entry, bits, true_data, targets, config):
    hard = trace_entry.hard_symbols
    detected_bits = waveform.qam_demodulate(hard.ravel(), config.qam_order)
    err = metrics.sensing_errors(
        trace_entry.estimate.ranges_m, trace_entry.estimate.velocities_m_s,
        [t.bistatic_range_m for t in targets],
        [t.radial_speed_m_s for t in targets],
    )
    return {
        "ber": metrics.bit_error_rate(detected_bits, np.concatenate(bits)),
        "ser": metrics.symbol_error_rate(hard, true_data),
        "nmse_range": err.nmse_range,
        "nmse_velocity": err.nmse_velocity,
    }


def trial_loss(result: TrialResult, targets, lambda_weight: float = 0.5) -> float:
    """Scalar training loss from a finished trial (matches the network loss)."""
    fa = result.false_alarms / len(targets)
    sensing = 0.5 * ((result.nmse_range + fa) + (result.nmse_velocity + fa))
    return lambda_weight * result.ser + (1.0 - lambda_weight) * sensing


def make_scene_objective(config: SystemConfig, targets, lambda_weight: float = 0.5,
                         snr_list=None):
    """Objective for the trainer: seed -> loss of one unfolded trial."""

    def objective(params: NetworkParams, seed: int) -> float:
        cfg = config
        if snr_list is not None:
            cfg = replace(config, snr_db=float(snr_list[seed % len(snr_list)]))
        result = run_trial(cfg, targets, params, seed=seed, method=METHOD_UNFOLDED)
        return trial_loss(result, targets, lambda_weight)

    return objective


# -- sweeps and persistence ------------------------------------------------------

def sweep(config: SystemConfig, targets, params_store, snr_list, trials: int,
          methods=METHODS) -> list[dict]:
    """Mean metrics per (method, SNR) over trial seeds 0..trials-1.

    All methods see the same trial seeds at each SNR (common random numbers).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    from .unfolded import nearest_params

    rows = []
    for method in methods:
        for snr in snr_list:
            cfg = replace(config, snr_db=float(snr))
            params = None
            if method == METHOD_UNFOLDED and params_store:
                params = nearest_params(params_store, float(snr))
            results = [run_trial(cfg, targets, params, seed, method) for seed in range(trials)]
            rows.append({
                "method": method,
                "snr_db": float(snr),
                "trials": trials,
                "ber": float(np.mean([r.ber for r in results])),
                "ser": float(np.mean([r.ser for r in results])),
                "nmse_range": float(np.mean([r.nmse_range for r in results])),
                "nmse_velocity": float(np.mean([r.nmse_velocity for r in results])),
                "detected_mean": float(np.mean([r.detected_count for r in results])),
            })
    return rows


def format_csv(rows: list[dict]) -> str:
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(",".join([
            row["method"],
            _fmt(row["snr_db"]),
            str(row["trials"]),
            _fmt(row["ber"]),
            _fmt(row["ser"]),
            _fmt(row["nmse_range"]),
            _fmt(row["nmse_velocity"]),
            _fmt(row["detected_mean"]),
        ]))
    return "\n".join(lines) + "\n"


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def load_scenario(path) -> tuple[SystemConfig, list[Target]]:
    """Read a config file with optional [target] blocks."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    cfg, raw_targets = load_config_text(text)
    try:
        targets = [Target.from_mapping(raw) for raw in raw_targets]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad target block in {path}: {exc}") from exc
    return cfg, targets


# -- symbol-corruption sensing experiment (error-coupling analysis) ---------------

def corrupted_symbol_sensing(config: SystemConfig, targets, p_random: float,
                             seed: int, threshold: float = 0.5) -> TrialResult:
    """Sense from true symbols with a fraction p replaced by random symbols.

    Models a receiver whose demodulation has a given error level, isolating
    the coupling between symbol errors and sensing accuracy.
    """
    if not 0.0 <= p_random <= 1.0:
        raise ValueError("p_random must lie in [0, 1]")
    bits, tx_frames, realization, rx = synthesize_trial(config, targets, seed)
    true_data = _data_view(tx_frames, config)
    corrupt_rng = np.random.default_rng(_trial_seeds(seed)[5] + 1)
    data = true_data.copy()
    if p_random > 0:
        mask = corrupt_rng.random(data.shape) < p_random
        points = waveform.constellation(config.qam_order)
        data[mask] = points[corrupt_rng.integers(0, len(points), size=int(mask.sum()))]
    tx_ref = build_tx_reference(data, np.stack([
        _pilot_only_frame(config, a) for a in range(config.num_tx_antennas)
    ]), config)
    estimate = detect_targets(rx[0], tx_ref[0], threshold, config)
    return compute_metrics(
        waveform.qam_demodulate(data.ravel(), config.qam_order), np.concatenate(bits),
        data, true_data, estimate, targets, seed=seed, snr_db=config.snr_db,
    )
