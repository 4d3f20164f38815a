"""Shared domain types for the polling/piggyback performance model.

Units convention: the frame duration is the time unit.  Every delay is
expressed in frames, every rate in packets per frame, so the offered load
rho_in = lam * t_frame coincides numerically with lam.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


# Serialized key for every NetworkConfig attribute.  "lambda" is a Python
# keyword, so the attribute is called lam but the wire name stays lambda.
_FIELD_TO_KEY = {
    "n_ss": "n_ss",
    "n_tos": "n_tos",
    "n_slots": "n_slots",
    "w0": "w0",
    "m_exp": "m_exp",
    "t16_frames": "t16_frames",
    "max_retx": "max_retx",
    "max_piggy": "max_piggy",
    "lam": "lambda",
    "t_frame": "t_frame",
}
_KEY_TO_FIELD = {v: k for k, v in _FIELD_TO_KEY.items()}

_INT_FIELDS = ("n_ss", "n_tos", "n_slots", "w0", "m_exp",
               "t16_frames", "max_retx", "max_piggy")


@dataclass(frozen=True)
class NetworkConfig:
    """Protocol and traffic parameters of one network scenario.

    Defaults are the baseline scenario used throughout the experiments:
    10 stations, 20 transmission opportunities and 7 data slots per frame,
    initial window 32 doubling up to 2^5*32, a 6-frame grant window, at most
    5 retransmissions, piggyback disabled, one packet per station per frame.
    """

    n_ss: int = 10          # N, number of subscriber stations
    n_tos: int = 20         # N_s, transmission opportunities per UL subframe
    n_slots: int = 7        # L, data slots per UL subframe
    w0: int = 32            # W0, initial contention window
    m_exp: int = 5          # m, window doubling cap (max window 2^m * W0)
    t16_frames: int = 6     # M, grant-wait window in frames
    max_retx: int = 5       # D, max retransmissions of a bandwidth request
    max_piggy: int = 0      # G, max consecutive piggybacks (0 disables)
    lam: float = 1.0        # packet arrival rate per SS, packets/frame
    t_frame: float = 1.0    # frame duration; fixed at 1 by the units convention

    @property
    def rho_in(self) -> float:
        """Offered load lam * t_frame."""
        return self.lam * self.t_frame

    def to_dict(self) -> dict:
        return {_FIELD_TO_KEY[f.name]: getattr(self, f.name) for f in fields(self)}

    def with_updates(self, **updates) -> "NetworkConfig":
        return replace(self, **updates)


def validate(config: NetworkConfig) -> NetworkConfig:
    """Check every invariant; return the config unchanged or raise ConfigError."""
    c = config
    for name, low in (("n_ss", 1), ("n_tos", 1), ("n_slots", 1), ("w0", 1),
                      ("m_exp", 0), ("t16_frames", 1), ("max_retx", 0),
                      ("max_piggy", 0)):
        v = getattr(c, name)
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{name} must be an integer, got {v!r}")
        if v < low:
            raise ConfigError(f"{name} must be >= {low}, got {v}")
    if c.w0 < c.n_tos:
        raise ConfigError(
            f"w0 must be >= n_tos (w0={c.w0}, n_tos={c.n_tos}); smaller "
            "windows leave transmission opportunities that are never chosen")
    if not (isinstance(c.lam, (int, float)) and math.isfinite(c.lam) and c.lam > 0):
        raise ConfigError(f"lambda must be a positive finite rate, got {c.lam!r}")
    if c.t_frame != 1.0:
        raise ConfigError(
            f"t_frame must be 1.0 (frame duration is the time unit), got {c.t_frame!r}")
    return c


def config_from_dict(data: dict) -> NetworkConfig:
    """Build a NetworkConfig from serialized keys; unknown keys are an error."""
    unknown = sorted(set(data) - set(_KEY_TO_FIELD))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        field = _KEY_TO_FIELD[key]
        if field in _INT_FIELDS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            try:
                kwargs[field] = int(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be an integer, got {value!r}") from None
        else:
            try:
                kwargs[field] = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be a number, got {value!r}") from None
    return NetworkConfig(**kwargs)


def config_to_json(config: NetworkConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def config_from_json(text: str) -> NetworkConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON config: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("JSON config must be an object")
    return config_from_dict(data)


def config_to_kv(config: NetworkConfig) -> str:
    """Flat key=value rendering, one field per line."""
    return "".join(f"{k}={v}\n" for k, v in config.to_dict().items())


def config_from_kv(text: str) -> NetworkConfig:
    """Parse the flat key=value format; '#' starts a comment."""
    data = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in data:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            data[key] = float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: non-numeric value {value!r}") from None
    return config_from_dict(data)


def load_config(path) -> NetworkConfig:
    """Load a config file, sniffing JSON vs key=value by the leading brace."""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    if text.lstrip().startswith("{"):
        return config_from_json(text)
    return config_from_kv(text)


# Field order doubles as the column order in CSV output.
SOLUTION_FIELDS = (
    "p", "q", "es", "pi0", "rho", "p_f", "tau", "omega", "z", "phi", "b00",
    "p_b", "p_s", "p_d", "q_m", "e_r", "e_p",
    "es_c", "es2", "es_q", "ew", "th_c", "th_pg", "th",
)


@dataclass(frozen=True)
class ModelSolution:
    """Converged fixed-point triple plus every derived closed-form quantity."""

    p: float        # BR collision probability in a TO
    q: float        # per-frame grant probability for a pending BR
    es: float       # mean service delay E{S}, frames
    pi0: float      # empty-queue-at-departure probability
    rho: float      # utilization lam*E{S}, clamped to [0,1] for reporting
    p_f: float      # per-round failure probability
    tau: float      # sum of per-round BR transmission weights
    omega: float    # mean backoff frames weighted over retry rounds
    z: float        # mean piggybacks per contention-served packet
    phi: float      # idle-state normalization factor
    b00: float      # stationary probability of the first BR-transmission state
    p_b: float      # probability an SS transmits a BR in a frame
    p_s: float      # probability a TO carries a successful BR
    p_d: float      # drop probability per created BR
    q_m: float      # probability of a grant within the full wait window
    e_r: float      # mean pending contending BRs per frame
    e_p: float      # mean data slots consumed by piggyback per frame
    es_c: float     # mean service delay via contention, frames
    es2: float      # second moment of the service delay, frames^2
    es_q: float     # mean service delay seen by queued packets, frames
    ew: float       # mean waiting delay, frames (inf marks saturation)
    th_c: float     # contention throughput, packets/frame
    th_pg: float    # piggyback throughput, packets/frame
    th: float       # total throughput, packets/frame

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in SOLUTION_FIELDS}
