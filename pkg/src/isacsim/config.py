"""System configuration: numerology, grid sizes, antennas, and file parsing.

Configuration files are flat ``key = value`` text with optional repeated
``[target]`` blocks.  ``#`` starts a comment.  Unknown keys are rejected.
Fractions such as ``1/14`` are accepted for real-valued fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# detections are capped per sensing pass; the tracked-target roster shares the cap
DETECTION_CAP = 8

SLOT_SYMBOLS = 14

# seed for the receiver-known pseudo-random QPSK pilot sequence
PILOT_SEED = 20886


class ConfigError(ValueError):
    """Raised for malformed configuration files or inconsistent parameters."""


@dataclass
class SystemConfig:
    """All simulation scalars.

    Derived quantities (wavelength, element spacing, bin widths, pilot row
    layout) are computed, never stored independently.
    """

    carrier_freq_hz: float = 4.0e9
    subcarrier_spacing_hz: float = 120.0e3
    num_symbols: int = 28
    num_subcarriers: int = 64
    dft_points_doppler: int = 280
    idft_points_range: int = 640
    symbol_period_s: float = 10.38e-6
    elementary_period_s: float = 8.3e-6
    guard_period_s: float = 2.08e-6
    num_tx_antennas: int = 2
    num_rx_antennas: int = 2
    pilot_ratio: float = 1.0 / 14.0
    qam_order: int = 16
    snr_db: float = 20.0
    speed_of_light_m_s: float = SPEED_OF_LIGHT

    def __post_init__(self):
        t_sum = self.elementary_period_s + self.guard_period_s
        if abs(self.symbol_period_s - t_sum) > 1e-9 * abs(self.symbol_period_s):
            raise ConfigError(
                f"symbol_period_s must equal elementary + guard period "
                f"({self.symbol_period_s} vs {t_sum})"
            )
        k = self.pilot_ratio * SLOT_SYMBOLS
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ConfigError(f"pilot_ratio*{SLOT_SYMBOLS} must be a positive integer (got {k})")
        if self.dft_points_doppler < self.num_symbols:
            raise ConfigError("dft_points_doppler must be >= num_symbols")
        if self.idft_points_range < self.num_subcarriers:
            raise ConfigError("idft_points_range must be >= num_subcarriers")
        for name in ("num_symbols", "num_subcarriers", "num_tx_antennas", "num_rx_antennas"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.qam_order not in (4, 16, 64):
            raise ConfigError(f"unsupported qam_order {self.qam_order}")

    # -- derived quantities -------------------------------------------------

    @property
    def wavelength_m(self) -> float:
        return self.speed_of_light_m_s / self.carrier_freq_hz

    @property
    def element_spacing_m(self) -> float:
        return self.wavelength_m / 2.0

    @property
    def pilots_per_slot(self) -> int:
        return int(round(self.pilot_ratio * SLOT_SYMBOLS))

    @property
    def pilot_symbol_indices(self) -> np.ndarray:
        m = np.arange(self.num_symbols)
        return m[(m % SLOT_SYMBOLS) < self.pilots_per_slot]

    @property
    def data_symbol_indices(self) -> np.ndarray:
        m = np.arange(self.num_symbols)
        return m[(m % SLOT_SYMBOLS) >= self.pilots_per_slot]

    @property
    def num_data_symbols(self) -> int:
        return int(self.data_symbol_indices.size)

    @property
    def range_bin_m(self) -> float:
        """Width of one range interval of the zero-padded subcarrier transform."""
        return self.speed_of_light_m_s / (self.idft_points_range * self.subcarrier_spacing_hz)

    @property
    def velocity_bin_m_s(self) -> float:
        """Width of one velocity interval of the zero-padded symbol transform."""
        return self.speed_of_light_m_s / (
            self.symbol_period_s * self.dft_points_doppler * self.carrier_freq_hz
        )

    def pilot_comb(self, antenna: int) -> np.ndarray:
        """Subcarriers carrying pilots for one transmit antenna (disjoint combs)."""
        if not 0 <= antenna < self.num_tx_antennas:
            raise ConfigError(f"antenna index {antenna} out of range")
        return np.arange(antenna, self.num_subcarriers, self.num_tx_antennas)


# a full-scale configuration used only for numerology-exact tests; trials at
# this size are far too slow for the acceptance runtime budget
def table_scale_kwargs() -> dict:
    return dict(
        num_symbols=256,
        num_subcarriers=1024,
        dft_points_doppler=2560,
        idft_points_range=10240,
        num_tx_antennas=8,
        num_rx_antennas=8,
    )


# -- config file parsing ----------------------------------------------------

_CONFIG_KEYS = {
    "carrier_freq_hz": float,
    "subcarrier_spacing_hz": float,
    "num_symbols": int,
    "num_subcarriers": int,
    "dft_points_doppler": int,
    "idft_points_range": int,
    "symbol_period_s": float,
    "elementary_period_s": float,
    "guard_period_s": float,
    "num_tx_antennas": int,
    "num_rx_antennas": int,
    "pilot_ratio": float,
    "qam_order": int,
    "snr_db": float,
    "speed_of_light_m_s": float,
}

# accepted but derived: validated against the computed value, never stored
_DERIVED_CONFIG_KEYS = ("wavelength_m", "element_spacing_m")

_TARGET_KEYS = {
    "range_tx_leg_m": float,
    "range_rx_leg_m": float,
    "absolute_speed_m_s": float,
    "heading_rad": float,
    "aod_rad": float,
    "aoa_rad": float,
    "rcs_m2": float,
}
_DERIVED_TARGET_KEYS = ("bistatic_range_m", "radial_speed_m_s")


def _parse_number(raw: str, caster, key: str, lineno: int):
    raw = raw.strip()
    try:
        if "/" in raw and caster is float:
            num, den = raw.split("/")
            return float(num) / float(den)
        if caster is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return caster(raw)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"line {lineno}: cannot parse value for '{key}': {raw!r}") from None


def parse_config_text(text: str) -> tuple[dict, list[dict]]:
    """Parse config text into a SystemConfig kwargs dict and raw target dicts."""
    cfg: dict = {}
    targets: list[dict] = []
    current: dict | None = None  # None = global section

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[target]":
                raise ConfigError(f"line {lineno}: unknown section {line!r}")
            current = {}
            targets.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if current is None:
            if key in _CONFIG_KEYS:
                cfg[key] = _parse_number(raw, _CONFIG_KEYS[key], key, lineno)
            elif key in _DERIVED_CONFIG_KEYS:
                cfg.setdefault("_derived", {})[key] = _parse_number(raw, float, key, lineno)
            else:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
        else:
            if key in _TARGET_KEYS:
                current[key] = _parse_number(raw, _TARGET_KEYS[key], key, lineno)
            elif key in _DERIVED_TARGET_KEYS:
                current[key] = _parse_number(raw, float, key, lineno)
            else:
                raise ConfigError(f"line {lineno}: unknown target key '{key}'")
    return cfg, targets


def config_from_mapping(cfg: dict) -> SystemConfig:
    cfg = dict(cfg)
    derived = cfg.pop("_derived", {})
    config = SystemConfig(**cfg)
    for key, value in derived.items():
        computed = getattr(config, key)
        if abs(value - computed) > 1e-9 * abs(computed):
            raise ConfigError(f"derived key '{key}'={value} disagrees with computed {computed}")
    return config


def load_config_text(text: str) -> tuple[SystemConfig, list[dict]]:
    cfg, targets = parse_config_text(text)
    return config_from_mapping(cfg), targets
