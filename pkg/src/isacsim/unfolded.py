"""The unfolded K-layer receiver: detection, sensing, and channel rebuild per layer.

Each layer carries five scalars (eta1..eta5): detector memory, residual
memory, detection threshold, estimate memory, and channel-gain memory.  With
the untrained defaults (1, 0, 0.5, 0, 0) a layer reduces exactly to one pass
of the plain alternating receiver, so the default network is the non-learned
baseline.  Training is gradient-free simultaneous perturbation over all 5*K
scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, waveform
from .config import DETECTION_CAP, SystemConfig
from .detection import DetectorState, PathOperator, damp_step, preconditioner_for
from .reconstruction import (
    estimate_angles,
    fit_path_gains,
    matched_spatial_snapshot,
    reconstruct_channel,
)
from .sensing import SensingEstimate, detect_targets

DEFAULT_NUM_LAYERS = 7


@dataclass
class LayerParams:
    eta1: float = 1.0
    eta2: float = 0.0
    eta3: float = 0.5
    eta4: float = 0.0
    eta5: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta3 <= 1.0:
            raise ValueError(f"eta3 must lie in (0, 1], got {self.eta3}")
        for name in ("eta1", "eta2", "eta4", "eta5"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass
class NetworkParams:
    layers: list[LayerParams]
    snr_key_db: float = 0.0

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("at least one layer is required")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def to_array(self) -> np.ndarray:
        return np.array([[p.eta1, p.eta2, p.eta3, p.eta4, p.eta5] for p in self.layers])

    @classmethod
    def from_array(cls, values: np.ndarray, snr_key_db: float) -> "NetworkParams":
        layers = [LayerParams(*row) for row in np.asarray(values, dtype=float)]
        return cls(layers=layers, snr_key_db=snr_key_db)


def default_params(num_layers: int = DEFAULT_NUM_LAYERS, snr_key_db: float = 0.0) -> NetworkParams:
    return NetworkParams(layers=[LayerParams() for _ in range(num_layers)],
                         snr_key_db=snr_key_db)


# -- parameter persistence ---------------------------------------------------

def save_params(params_list, path) -> None:
    """Write one stanza per parameter set: K line, SNR line, K rows of 5 scalars.

    Floats are written with repr(), which round-trips exactly.
    """
    if isinstance(params_list, NetworkParams):
        params_list = [params_list]
    lines = []
    for params in params_list:
        lines.append(str(params.num_layers))
        lines.append(repr(float(params.snr_key_db)))
        for layer in params.layers:
            lines.append(" ".join(repr(float(v)) for v in
                                  (layer.eta1, layer.eta2, layer.eta3, layer.eta4, layer.eta5)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> list[NetworkParams]:
    with open(path, encoding="ascii") as fh:
        tokens = [line.strip() for line in fh if line.strip()]
    out = []
    pos = 0
    while pos < len(tokens):
        try:
            k = int(tokens[pos])
            snr = float(tokens[pos + 1])
            rows = [tuple(float(v) for v in tokens[pos + 2 + i].split()) for i in range(k)]
        except (ValueError, IndexError) as exc:
            raise ValueError(f"malformed parameter file {path}") from exc
        out.append(NetworkParams(layers=[LayerParams(*row) for row in rows], snr_key_db=snr))
        pos += 2 + k
    if not out:
        raise ValueError(f"empty parameter file {path}")
    return out


def nearest_params(params_list: list[NetworkParams], snr_db: float) -> NetworkParams:
    return min(params_list, key=lambda p: abs(p.snr_key_db - snr_db))


# -- network state and forward pass -------------------------------------------

@dataclass
class NetworkState:
    x_estimate: np.ndarray            # (Nt, E_data)
    residual: np.ndarray              # (Nr, E_data)
    estimate: SensingEstimate
    angles: list                      # (aod, aoa) per tracked target
    paths: list                       # PathChannel per tracked target


@dataclass
class LayerTrace:
    hard_symbols: np.ndarray
    estimate: SensingEstimate
    residual_energy: float


def initial_state(pilot_paths, pilot_estimate, pilot_angles, rx_data: np.ndarray,
                  config: SystemConfig) -> NetworkState:
    """State entering layer 1: zero symbols, residual = received data signal.

    Seeding the residual with the data signal makes the first symbol update
    a least-squares solve against the pilot-seeded channel; with a zero
    residual the first update would be a no-op and the pilot stage would be
    discarded.
    """
    e_data = config.num_data_symbols * config.num_subcarriers
    return NetworkState(
        x_estimate=np.zeros((config.num_tx_antennas, e_data), dtype=np.complex128),
        residual=np.array(rx_data, dtype=np.complex128, copy=True),
        estimate=pilot_estimate,
        angles=list(pilot_angles),
        paths=list(pilot_paths),
    )


def build_tx_reference(x_data: np.ndarray, tx_pilot_frames: np.ndarray,
                       config: SystemConfig) -> np.ndarray:
    """Best-known transmit frames: known pilots plus current data estimates."""
    ref = np.array(tx_pilot_frames, copy=True)
    shape = (config.num_tx_antennas, config.num_data_symbols, config.num_subcarriers)
    ref[:, config.data_symbol_indices, :] = x_data.reshape(shape)
    return ref


# a decision enters the sensing/refit reference only when the soft value lies
# within this fraction of the minimum constellation distance of its slice
REFERENCE_GATE = 0.35


def sensing_reference(x_soft: np.ndarray, tx_pilot_frames: np.ndarray,
                      config: SystemConfig) -> np.ndarray:
    """Sensing reference: pilots plus reliability-gated hard decisions.

    Cells whose soft estimate sits far from the sliced symbol (or near the
    origin, where the zero initial state would slice arbitrarily) stay zero
    so the quotient guard skips them; at low SNR the reference then leans on
    the error-free pilots instead of error-laden decisions.
    """
    points = waveform.constellation(config.qam_order)
    hard = waveform.hard_symbols(x_soft, config.qam_order)
    gate = REFERENCE_GATE * waveform.minimum_distance(config.qam_order)
    confident = (np.abs(x_soft - hard) <= gate) & (np.abs(x_soft) >= 0.5 * np.min(np.abs(points)))
    return build_tx_reference(hard * confident, tx_pilot_frames, config)


def _blend_roster(state: NetworkState, new_est: SensingEstimate, eta4: float,
                  config: SystemConfig):
    """Merge new detections into the tracked roster.

    New detections matching an existing entry within one range AND one
    velocity bin are convex-combined (weight eta4 on the old value); the
    rest are appended.  Old entries without a match survive only when
    eta4 > 0.5.  Returns per-entry records:
    (r, v, r_idx, v_idx, r_mag, v_mag, old_angle_or_None, old_gain_or_None, has_new).
    """
    r_bin = config.range_bin_m
    v_bin = config.velocity_bin_m_s
    old_taken = [False] * len(state.estimate)
    records = []
    for d in range(len(new_est)):
        match = None
        best = np.inf
        for t in range(len(state.estimate)):
            if old_taken[t]:
                continue
            dr = abs(new_est.ranges_m[d] - state.estimate.ranges_m[t])
            dv = abs(new_est.velocities_m_s[d] - state.estimate.velocities_m_s[t])
            if dr <= r_bin and dv <= v_bin and dr < best:
                best = dr
                match = t
        if match is not None:
            old_taken[match] = True
            r = eta4 * state.estimate.ranges_m[match] + (1.0 - eta4) * new_est.ranges_m[d]
            v = eta4 * state.estimate.velocities_m_s[match] + (1.0 - eta4) * new_est.velocities_m_s[d]
            old_gain = state.paths[match].complex_gain
        else:
            r = new_est.ranges_m[d]
            v = new_est.velocities_m_s[d]
            old_gain = None
        records.append((r, v, new_est.range_indices[d], new_est.velocity_indices[d],
                        new_est.range_magnitudes[d], new_est.velocity_magnitudes[d],
                        None, old_gain, True))
    if eta4 > 0.5:
        for t in range(len(state.estimate)):
            if not old_taken[t]:
                records.append((
                    state.estimate.ranges_m[t], state.estimate.velocities_m_s[t],
                    state.estimate.range_indices[t], state.estimate.velocity_indices[t],
                    state.estimate.range_magnitudes[t], state.estimate.velocity_magnitudes[t],
                    state.angles[t], state.paths[t].complex_gain, False,
                ))
    if len(records) > DETECTION_CAP:
        records.sort(key=lambda rec: max(rec[4], rec[5]), reverse=True)
        records = records[:DETECTION_CAP]
    return records


def layer_forward(state: NetworkState, rx_frames: np.ndarray, tx_pilot_frames: np.ndarray,
                  params: LayerParams, config: SystemConfig) -> NetworkState:
    """One unfolded layer: detector update, sensing with cancellation, channel rebuild."""
    sym_idx, sub_idx = _data_cell_indices(config)
    rx_data = rx_frames[:, config.data_symbol_indices, :].reshape(config.num_rx_antennas, -1)

    operator = PathOperator(state.paths, config, sym_idx, sub_idx)
    det = damp_step(
        DetectorState(state.x_estimate, state.residual),
        rx_data, operator, params.eta1, params.eta2, preconditioner_for(operator),
    )

    tx_ref = sensing_reference(det.x_estimate, tx_pilot_frames, config)
    new_est = detect_targets(rx_frames[0], tx_ref[0], params.eta3, config)

    records = _blend_roster(state, new_est, params.eta4, config)
    if not records:
        return NetworkState(det.x_estimate, det.residual, SensingEstimate(), [], [])

    # angles: fresh matched-beam estimate for entries with a new detection
    angles = []
    for (r, v, _ri, _vi, _rm, _vm, old_angle, _old_gain, has_new) in records:
        if has_new or old_angle is None:
            phase = _phase_grid(r, v, config)
            snapshot = matched_spatial_snapshot(rx_frames, tx_ref, phase)
            est = estimate_angles(snapshot)
            angles.append((est.aod_rad, est.aoa_rad))
        else:
            angles.append(old_angle)

    roster = SensingEstimate.from_lists(
        [rec[0] for rec in records], [rec[1] for rec in records],
        [rec[2] for rec in records], [rec[3] for rec in records],
        [rec[4] for rec in records], [rec[5] for rec in records],
    )
    # gains are always calibrated on the error-free pilot cells; feeding data
    # decisions into the amplitude fit couples decision errors back into the
    # channel and drifts the loop (the data signal contributes through the
    # detection geometry instead)
    unit_paths = reconstruct_channel(roster, angles, np.ones(len(records), dtype=complex), config)
    new_gains = fit_path_gains(rx_frames, tx_pilot_frames, unit_paths, config)
    blended = []
    for gain, (_r, _v, _ri, _vi, _rm, _vm, _oa, old_gain, _new) in zip(new_gains, records):
        blended.append(params.eta5 * old_gain + gain if old_gain is not None else gain)
    paths = reconstruct_channel(roster, angles, np.asarray(blended), config)

    # structural safeguard: a candidate that only reshuffles targets inside
    # their ambiguity cells (one-to-one match within one range and one
    # velocity bin) never displaces the tracked geometry, because such flips
    # are residual near-ties that would churn the channel without evidence.
    # A candidate that changes the scene structure (target appears,
    # disappears, or moves beyond a bin) replaces the roster only when it
    # explains the received signal decisively better.
    if state.paths:
        prev_unit = reconstruct_channel(
            state.estimate, state.angles,
            np.ones(len(state.estimate), dtype=complex), config,
        )
        prev_gains = fit_path_gains(rx_frames, tx_pilot_frames, prev_unit, config)
        prev_paths = reconstruct_channel(state.estimate, state.angles, prev_gains, config)
        keep = not _structurally_different(roster, state.estimate, config)
        if not keep:
            keep_margin = 0.98
            keep = _model_residual(rx_frames, paths, tx_ref, config) > \
                keep_margin * _model_residual(rx_frames, prev_paths, tx_ref, config)
        if keep:
            return NetworkState(det.x_estimate, det.residual,
                                state.estimate, list(state.angles), prev_paths)
    return NetworkState(det.x_estimate, det.residual, roster, angles, paths)


def _structurally_different(candidate: SensingEstimate, previous: SensingEstimate,
                            config: SystemConfig) -> bool:
    """True when the rosters do not match one-to-one within one bin per axis."""
    if len(candidate) != len(previous):
        return True
    taken = [False] * len(previous)
    for d in range(len(candidate)):
        hit = None
        for t in range(len(previous)):
            if taken[t]:
                continue
            if (abs(candidate.ranges_m[d] - previous.ranges_m[t]) <= config.range_bin_m
                    and abs(candidate.velocities_m_s[d] - previous.velocities_m_s[t])
                    <= config.velocity_bin_m_s):
                hit = t
                break
        if hit is None:
            return True
        taken[hit] = True
    return False


def _model_residual(rx_frames, paths, tx_ref, config: SystemConfig) -> float:
    from .channel import apply_paths

    if not paths:
        return float(np.sum(np.abs(rx_frames) ** 2))
    return float(np.sum(np.abs(rx_frames - apply_paths(tx_ref, paths, config)) ** 2))


def network_forward(rx_frames: np.ndarray, pilot_init, params: NetworkParams,
                    config: SystemConfig):
    """Run all layers; returns (hard data grids, final estimate, per-layer trace)."""
    tx_pilot_frames = np.stack([
        _pilot_only_frame(config, antenna) for antenna in range(config.num_tx_antennas)
    ])
    rx_data = rx_frames[:, config.data_symbol_indices, :].reshape(config.num_rx_antennas, -1)
    state = initial_state(pilot_init.paths, pilot_init.estimate, pilot_init.angles,
                          rx_data, config)
    trace = []
    for layer in params.layers:
        state = layer_forward(state, rx_frames, tx_pilot_frames, layer, config)
        hard = waveform.hard_symbols(state.x_estimate, config.qam_order)
        trace.append(LayerTrace(
            hard_symbols=hard,
            estimate=state.estimate,
            residual_energy=float(np.sum(np.abs(state.residual) ** 2)),
        ))
    shape = (config.num_tx_antennas, config.num_data_symbols, config.num_subcarriers)
    return trace[-1].hard_symbols.reshape(shape), state.estimate, trace


def _pilot_only_frame(config: SystemConfig, antenna: int) -> np.ndarray:
    grid = np.zeros((config.num_symbols, config.num_subcarriers), dtype=np.complex128)
    grid[config.pilot_symbol_indices] = waveform.pilot_rows(config, antenna)
    return grid


def _phase_grid(r_m: float, v_m_s: float, config: SystemConfig) -> np.ndarray:
    tau = r_m / config.speed_of_light_m_s
    f_d = v_m_s * config.carrier_freq_hz / config.speed_of_light_m_s
    m = np.arange(config.num_symbols)[:, None]
    n = np.arange(config.num_subcarriers)[None, :]
    return np.exp(1j * 2.0 * np.pi * (f_d * m * config.symbol_period_s
                                      - n * config.subcarrier_spacing_hz * tau))


def _data_cell_indices(config: SystemConfig):
    rows = config.data_symbol_indices
    sym = np.repeat(rows, config.num_subcarriers)
    sub = np.tile(np.arange(config.num_subcarriers), rows.size)
    return sym, sub


# -- loss and training ---------------------------------------------------------

def loss(hard_symbols, true_symbols, estimate: SensingEstimate, true_targets,
         lambda_weight: float = 0.5) -> float:
    """lambda * SER + (1 - lambda) * 0.5 * (NMSE_r + NMSE_v).

    Misses contribute 1.0 to each NMSE; every spurious detection adds a
    further 1.0 / L to each, so detection churn is penalized.
    """
    if not 0.0 <= lambda_weight <= 1.0:
        raise ValueError("lambda_weight must lie in [0, 1]")
    ser = metrics.symbol_error_rate(hard_symbols, true_symbols)
    true_r = [t.bistatic_range_m for t in true_targets]
    true_v = [t.radial_speed_m_s for t in true_targets]
    err = metrics.sensing_errors(estimate.ranges_m, estimate.velocities_m_s, true_r, true_v)
    false_pen = err.n_false / len(true_targets)
    sensing_term = 0.5 * ((err.nmse_range + false_pen) + (err.nmse_velocity + false_pen))
    return lambda_weight * ser + (1.0 - lambda_weight) * sensing_term


def train(initial: NetworkParams, scene_objective, epochs: int, batch_size: int,
          step_size: float, rng: np.random.Generator,
          num_validation: int = 16, progress=None) -> NetworkParams:
    """Simultaneous-perturbation stochastic search over the 5K layer scalars.

    ``scene_objective(params, seed) -> float`` evaluates one scene.  Each
    epoch draws one Rademacher perturbation, evaluates the +/- points on a
    fresh batch (shared seeds, common random numbers), and steps along the
    estimated gradient.  The parameter set with the lowest running
    validation loss is returned, so the result never validates worse than
    ``initial``.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")

    val_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=num_validation)]

    def batch_loss(params: NetworkParams, seeds) -> float:
        return float(np.mean([scene_objective(params, s) for s in seeds]))

    theta = initial.to_array().ravel()
    best_params = NetworkParams.from_array(theta.reshape(-1, 5), initial.snr_key_db)
    best_val = batch_loss(best_params, val_seeds)
    if progress:
        progress(0, best_val)

    for epoch in range(1, epochs + 1):
        batch_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=batch_size)]
        delta = rng.integers(0, 2, size=theta.size) * 2.0 - 1.0
        scale = 0.05 * np.abs(theta) + 0.01
        plus = _project(theta + scale * delta)
        minus = _project(theta - scale * delta)
        loss_plus = batch_loss(NetworkParams.from_array(plus.reshape(-1, 5), initial.snr_key_db),
                               batch_seeds)
        loss_minus = batch_loss(NetworkParams.from_array(minus.reshape(-1, 5), initial.snr_key_db),
                                batch_seeds)
        gradient = (loss_plus - loss_minus) / (2.0 * scale * delta)
        theta = _project(theta - step_size * gradient)
        candidate = NetworkParams.from_array(theta.reshape(-1, 5), initial.snr_key_db)
        val = batch_loss(candidate, val_seeds)
        if val < best_val:
            best_val = val
            best_params = candidate
        if progress:
            progress(epoch, best_val)
    return best_params


def _project(theta: np.ndarray) -> np.ndarray:
    """Clip eta3 into (0, 1] and keep the other scalars in a sane box."""
    out = np.clip(theta.reshape(-1, 5), -4.0, 4.0)
    out[:, 2] = np.clip(out[:, 2], 1e-3, 1.0)
    return out.ravel()
