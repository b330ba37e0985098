"""
Configuration, network geometry and physical-layer constants.

All distances are in meters and angles in radians. Coordinates are 3D:
APs sit at ``AP_HEIGHT`` and UEs/target at ``UE_HEIGHT``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.constants import speed_of_light

AP_HEIGHT = 10.0
UE_HEIGHT = 1.5
SHADOWING_STD_DB = 4.0
ASD_AZIMUTH = np.deg2rad(15.0)
ASD_ELEVATION = np.deg2rad(15.0)

# counter keys for RNG substreams
STREAM_APS = 0
STREAM_DROP = 1
STREAM_SHADOWING = 2
STREAM_ENSEMBLE = 3
STREAM_DETECTION = 4
STREAM_SYMBOLS = 5
STREAM_TRIALS_H0 = 6
STREAM_TRIALS_H1 = 7


class ConfigError(ValueError):
    """Raised for invalid scenario or experiment configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and experiment parameters of one ISAC deployment.

    Powers are in watts unless the field name says otherwise; ``noise_power``
    is in dBm, ``gamma_c`` in dB and ``rcs_variance`` in dBsm.
    ``rzf_lambda=None`` selects ``n_ue / p_tx_max`` in noise-normalized units.
    """

    area_side: float = 500.0
    hotspot_side: float = 15.0
    n_tx: int = 16
    n_rx: int = 2
    n_ue: int = 8
    m_antennas: int = 4
    carrier_freq: float = 1.9e9
    bandwidth: float = 20e6
    noise_power: float = -94.0
    p_tx_max: float = 1.0
    pilot_power: float = 0.2
    tau_c: int = 200
    tau_p: int = 10
    tau_sense: int = 10
    gamma_c: float = 3.0
    p_fa: float = 0.1
    clutter_scale: float = 0.3
    rcs_variance: float = 5.0
    rzf_lambda: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tau_p >= self.tau_c:
            raise ConfigError("tau_p must be smaller than tau_c")
        if self.tau_p < 1 or self.tau_sense < 1:
            raise ConfigError("tau_p and tau_sense must be positive")
        if self.tau_sense > self.tau_c - self.tau_p:
            raise ConfigError("tau_sense must not exceed tau_c - tau_p")
        if not 0.0 < self.clutter_scale <= 1.0:
            raise ConfigError("clutter_scale must lie in (0, 1]")
        if self.n_rx < 1 or self.n_tx < 1 or self.n_ue < 0:
            raise ConfigError("need n_tx >= 1, n_rx >= 1, n_ue >= 0")
        if self.m_antennas < 1:
            raise ConfigError("m_antennas must be >= 1")
        if min(self.p_tx_max, self.pilot_power, self.carrier_freq, self.bandwidth) <= 0:
            raise ConfigError("powers, carrier frequency and bandwidth must be positive")
        if not 0.0 < self.p_fa < 1.0:
            raise ConfigError("p_fa must lie in (0, 1)")
        if self.hotspot_side <= 0 or self.hotspot_side > self.area_side:
            raise ConfigError("hotspot must be a nonempty square inside the area")
        if self.rzf_lambda is not None and self.rzf_lambda <= 0:
            raise ConfigError("rzf_lambda must be positive")

    @property
    def noise_variance(self) -> float:
        """Noise power in watts."""
        return 10.0 ** ((self.noise_power - 30.0) / 10.0)

    @property
    def gamma_c_linear(self) -> float:
        return 10.0 ** (self.gamma_c / 10.0)

    @property
    def rcs_variance_linear(self) -> float:
        return 10.0 ** (self.rcs_variance / 10.0)

    @property
    def wavelength(self) -> float:
        return speed_of_light / self.carrier_freq

    @property
    def regularization(self) -> float:
        """RZF regularization in noise-normalized units."""
        if self.rzf_lambda is not None:
            return float(self.rzf_lambda)
        return max(self.n_ue, 1) / self.p_tx_max

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: dict[str, str]) -> "ScenarioConfig":
        """Apply ``key=value`` string overrides, coercing to the field type."""
        changes = {}
        for key, raw in overrides.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown configuration key {key!r}")
            changes[key] = _coerce(key, raw)
        return self.replace(**changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_file(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        unknown = set(data) - set(_FIELD_TYPES)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**{k: _coerce(k, v) for k, v in data.items()})

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        return cls.from_dict(read_config_file(path))


def read_config_file(path) -> dict:
    """Flat key-value mapping from a YAML file (values not yet validated)."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError("config file must hold a flat key-value mapping")
    return data


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        if "None" in kind:
            return None
        raise ConfigError(f"{key} cannot be empty")
    try:
        if kind == "int":
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError
            return int(as_float)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key}") from None


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the entity identified by ``keys``.

    Streams are derived by counter (spawn key), so any subset of drops or
    trials can be regenerated in any order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class NetworkGeometry:
    """Positions of all nodes; angles and distances are derived on access."""

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    ue_positions: np.ndarray
    target_position: np.ndarray
    hotspot_center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def tx_target_distances(self) -> np.ndarray:
        return np.linalg.norm(self.tx_positions - self.target_position, axis=1)

    @property
    def rx_target_distances(self) -> np.ndarray:
        return np.linalg.norm(self.rx_positions - self.target_position, axis=1)

    @property
    def tx_target_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation from each transmitter AP toward the target."""
        return direction_angles(self.tx_positions, self.target_position)

    @property
    def target_rx_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation from the target toward each receiver AP."""
        return direction_angles(self.target_position, self.rx_positions)

    def with_target(self, target_position) -> "NetworkGeometry":
        return dataclasses.replace(self, target_position=np.asarray(target_position, dtype=float))


def direction_angles(origin, destination) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth (from the x-axis) and elevation of ``destination - origin``."""
    delta = np.asarray(destination, dtype=float) - np.asarray(origin, dtype=float)
    horizontal = np.hypot(delta[..., 0], delta[..., 1])
    return np.arctan2(delta[..., 1], delta[..., 0]), np.arctan2(delta[..., 2], horizontal)


def hotspot_center(config: ScenarioConfig) -> np.ndarray:
    half = config.area_side / 2.0
    return np.array([half, half, UE_HEIGHT])


def place_aps(config: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform AP layout; the ``n_rx`` APs nearest the hotspot center receive."""
    n_ap = config.n_tx + config.n_rx
    if n_ap < config.n_rx:
        raise ConfigError("fewer APs than sensing receivers")
    xy = rng.uniform(0.0, config.area_side, size=(n_ap, 2))
    aps = np.column_stack([xy, np.full(n_ap, AP_HEIGHT)])
    center = hotspot_center(config)
    dist = np.hypot(aps[:, 0] - center[0], aps[:, 1] - center[1])
    order = np.argsort(dist, kind="stable")
    rx_idx = np.sort(order[: config.n_rx])
    tx_mask = np.ones(n_ap, dtype=bool)
    tx_mask[rx_idx] = False
    return aps[tx_mask], aps[rx_idx]


def drop_ues(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    xy = rng.uniform(0.0, config.area_side, size=(config.n_ue, 2))
    return np.column_stack([xy, np.full(config.n_ue, UE_HEIGHT)])


def drop_targets(config: ScenarioConfig, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform point(s) inside the central hotspot square."""
    center = hotspot_center(config)
    half = config.hotspot_side / 2.0
    shape = (2,) if size is None else (size, 2)
    xy = center[:2] + rng.uniform(-half, half, size=shape)
    z = np.full(xy.shape[:-1] + (1,), UE_HEIGHT)
    return np.concatenate([xy, z], axis=-1)


def place_network(config: ScenarioConfig, seed: int, drop: int = 0) -> NetworkGeometry:
    """Deterministic geometry for ``(config, seed, drop)``.

    The AP layout depends on the seed only; UEs and the target are redrawn
    for every drop.
    """
    tx, rx = place_aps(config, substream(seed, STREAM_APS))
    rng = substream(seed, STREAM_DROP, drop)
    ues = drop_ues(config, rng)
    target = drop_targets(config, rng)
    return NetworkGeometry(tx, rx, ues, target, hotspot_center(config))


def array_response(azimuth, elevation, m: int) -> np.ndarray:
    """Half-wavelength ULA response, shape ``broadcast(azimuth, elevation) + (m,)``."""
    if m < 1:
        raise ValueError("antenna count must be >= 1")
    phase = np.sin(np.asarray(azimuth, dtype=float)) * np.cos(np.asarray(elevation, dtype=float))
    n = np.arange(m)
    return np.exp(1j * np.pi * np.multiply.outer(phase, n))


def bistatic_gain(d_tx, d_rx, carrier_freq: float):
    """Two-way radar range equation gain (linear) for a bistatic path."""
    d_tx = np.asarray(d_tx, dtype=float)
    d_rx = np.asarray(d_rx, dtype=float)
    if np.any(d_tx <= 0) or np.any(d_rx <= 0):
        raise ValueError("bistatic distances must be positive")
    wavelength = speed_of_light / carrier_freq
    return wavelength**2 / ((4 * np.pi) ** 3 * d_tx**2 * d_rx**2)


def pathloss_umi(distance, carrier_freq: float = 1.9e9):
    """3GPP UMi NLOS large-scale gain (linear, without shadowing)."""
    distance = np.asarray(distance, dtype=float)
    loss_db = 36.7 * np.log10(distance) + 22.7 + 26.0 * np.log10(carrier_freq / 1e9)
    return 10.0 ** (-loss_db / 10.0)


def shadowing(rng: np.random.Generator, shape, std_db: float = SHADOWING_STD_DB) -> np.ndarray:
    """Independent log-normal shadowing factors (linear)."""
    return 10.0 ** (std_db * rng.standard_normal(shape) / 10.0)
