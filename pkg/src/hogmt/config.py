"""Experiment configuration: flat ``key = value`` text with dotted keys.

Lines starting with ``#`` and blank lines are ignored. Every key is listed
in :data:`SCHEMA`; unknown keys, bad values and failed cross-checks raise
:class:`ConfigError` naming the offending key.

Profile values (``channel.gain_mean_profile``, ``channel.gain_std_profile``)
accept a scalar, a comma list of ``num_time`` values, or
``sine:offset,amplitude,cycles[,phase_deg]`` meaning
``offset + amplitude * sin(2 pi cycles t / T + phase)``.

Grid values accept a comma list or ``start:stop:step`` (stop inclusive).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .kernels import ChannelConfig
from .modem import Scheme

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "Key",
    "SCHEMA",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "schema_help",
]

SCHEMA_VERSION = 1
ARMS = ("hogmt", "zf", "thp_zf", "ideal")
POWER_MODES = ("unnormalized", "genie_normalized")
PROCESSES = ("channel", "two_mode", "wssus")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _float(v: str) -> float:
    x = float(v)
    if not math.isfinite(x) and v.strip().lower() not in ("inf", "+inf"):
        raise ValueError(f"not a finite number: {v!r}")
    return x


def _int(v: str) -> int:
    return int(v, 0)


def _str(v: str) -> str:
    return v.strip()


def _grid(v: str) -> list[float]:
    v = v.strip()
    if ":" in v:
        parts = [float(p) for p in v.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError("range must be start:stop:step with step > 0")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [float(np.round(start + i * step, 12)) for i in range(max(n, 0))]
    return [float(p) for p in v.split(",") if p.strip()]


def _list(v: str) -> list[str]:
    return [p.strip() for p in v.split(",") if p.strip()]


def _optional_float(v: str) -> float | None:
    return None if v.strip().lower() in ("none", "") else float(v)


def _profile(v: str):
    v = v.strip()
    if v.lower().startswith("sine:"):
        args = [float(p) for p in v[5:].split(",")]
        if len(args) not in (3, 4):
            raise ValueError("sine profile needs offset,amplitude,cycles[,phase_deg]")
        return ("sine", tuple(args))
    vals = [float(p) for p in v.split(",")]
    return vals[0] if len(vals) == 1 else vals


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


SCHEMA: tuple[Key, ...] = (
    Key("schema_version", _int, SCHEMA_VERSION, "config schema version; must be 1"),
    Key("channel.num_users", _int, 10, "number of users U"),
    Key("channel.num_time", _int, 100, "number of time instances T"),
    Key("channel.tap_count_min", _int, 10, "minimum active delay taps per (u, u', t)"),
    Key("channel.tap_count_max", _int, 20, "maximum active delay taps per (u, u', t); <= num_time"),
    Key("channel.gain_mean_profile", _profile, 1.0, "per-time mean tap gain: scalar, list, or sine:..."),
    Key("channel.gain_std_profile", _profile, 0.3, "per-time tap gain std: scalar, list, or sine:..."),
    Key("channel.cross_user_coupling", _float, 1.0, "power of cross-user paths relative to own paths, [0, 1]"),
    Key("channel.delay_decay", _optional_float, None, "power-delay profile constant in taps; none = equal-power taps"),
    Key("sweep.modulations", _list, ["QAM16"], "comma list of BPSK, QPSK, QAM16, QAM64"),
    Key("sweep.epsilons", _grid, [1e-1, 1e-2, 1e-3, 1e-4], "eigen-selection thresholds, each in (0, 1)"),
    Key("sweep.epsilon_mode", _str, "relative", "relative (sigma > eps*sigma_1) or absolute (sigma > eps)"),
    Key("sweep.snr_db", _grid, [0.0, 4.0, 8.0, 12.0, 16.0, 20.0], "SNR grid in dB: list or start:stop:step"),
    Key("sweep.trials", _int, 200, "channel realizations per point"),
    Key("sweep.arms", _list, list(ARMS), "subset of hogmt, zf, thp_zf, ideal"),
    Key("sweep.power_mode", _str, "unnormalized", "unnormalized or genie_normalized"),
    Key("sweep.workers", _int, 1, "worker processes (results do not depend on it)"),
    Key("sweep.failure_threshold", _float, 0.01, "max failed-item fraction before exit code 3"),
    Key("seed.master", _int, 0, "master seed for all derived streams"),
    Key("output.dir", _str, "out", "output directory"),
    Key("stats.process", _str, "channel", "ensemble source: channel, two_mode, or wssus"),
    Key("stats.realizations", _int, 500, "ensemble size; 1 treats a single kernel as deterministic"),
    Key("stats.num_freq", _int, 0, "frequency bins F; 0 means F = num_time"),
    Key("stats.prototype_width", _float, math.inf, "prototype window width in bins; inf = flat"),
    Key("stats.lambdas", _grid, [4.0, 1.0], "two_mode process: mode variances"),
    Key("stats.pairing", _str, "printed", "LSF axis pairing: printed or decomposition"),
    Key("stats.user_pair", _list, ["0", "0"], "channel process: (u, u') slice of the impulse response"),
    Key("stats.max_modes", _int, 50, "ensemble modes kept by the KL decomposition"),
    Key("stats.stationarity_bound", _float, 0.1, "off-support CCF energy bound for the WSSUS check"),
)

_BY_NAME = {k.name: k for k in SCHEMA}


def schema_help() -> str:
    """One line per key: name, default and description."""
    width = max(len(k.name) for k in SCHEMA)
    lines = []
    for k in SCHEMA:
        d = k.default
        if isinstance(d, list):
            d = ",".join(str(x) for x in d)
        lines.append(f"  {k.name:<{width}}  (default {d})  {k.help}")
    return "\n".join(lines)


def _realize_profile(spec, T: int, key: str) -> np.ndarray | float:
    if isinstance(spec, tuple) and spec and spec[0] == "sine":
        args = spec[1]
        off, amp, cyc = args[:3]
        ph = math.radians(args[3]) if len(args) == 4 else 0.0
        t = np.arange(T)
        return off + amp * np.sin(2 * np.pi * cyc * t / T + ph)
    if isinstance(spec, list) and len(spec) != T:
        raise ConfigError(key, f"list has {len(spec)} values, expected num_time={T}")
    return spec


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings.

    ``text`` is the canonical serialization (every key, sorted) and
    ``sha256`` its digest; both ignore comments and key order of the input.
    """

    channel: ChannelConfig
    modulations: list[str]
    epsilons: list[float]
    epsilon_mode: str
    snr_db_grid: list[float]
    trials: int
    arms: list[str]
    master_seed: int
    output_dir: Path
    power_mode: str
    workers: int = 1
    failure_threshold: float = 0.01
    stats: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def replace(self, **overrides: str) -> "ExperimentConfig":
        """Re-parse with some keys overridden (values as config text)."""
        raw = dict(self.raw)
        raw.update({k: str(v) for k, v in overrides.items()})
        return parse_config("".join(f"{k} = {v}\n" for k, v in raw.items()))


def _raw_default(k: Key) -> str:
    d = k.default
    if isinstance(d, list):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in d)
    if d is None:
        return "none"
    return repr(d) if isinstance(d, float) else str(d)


def parse_config(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {k.name: _raw_default(k) for k in SCHEMA}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _BY_NAME:
            raise ConfigError(key, "unknown key")
        if key in seen:
            raise ConfigError(key, "given more than once")
        seen.add(key)
        raw[key] = value

    vals: dict[str, Any] = {}
    for k in SCHEMA:
        try:
            vals[k.name] = k.parse(raw[k.name])
        except (ValueError, TypeError) as exc:
            raise ConfigError(k.name, f"invalid value {raw[k.name]!r} ({exc})") from None
    return _build(vals, raw)


def _build(v: dict, raw: dict) -> ExperimentConfig:
    if v["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {v['schema_version']}")
    T = v["channel.num_time"]
    for key in ("channel.num_users", "channel.num_time", "channel.tap_count_min", "channel.tap_count_max"):
        if v[key] < 1:
            raise ConfigError(key, "must be >= 1")
    if v["channel.tap_count_min"] > v["channel.tap_count_max"]:
        raise ConfigError("channel.tap_count_min", "exceeds channel.tap_count_max")
    if v["channel.tap_count_max"] > T:
        raise ConfigError("channel.tap_count_max", f"exceeds channel.num_time={T}")
    c = v["channel.cross_user_coupling"]
    if not 0.0 <= c <= 1.0:
        raise ConfigError("channel.cross_user_coupling", "must lie in [0, 1]")
    dd = v["channel.delay_decay"]
    if dd is not None and not dd > 0:
        raise ConfigError("channel.delay_decay", "must be positive or none")
    mean = _realize_profile(v["channel.gain_mean_profile"], T, "channel.gain_mean_profile")
    std = _realize_profile(v["channel.gain_std_profile"], T, "channel.gain_std_profile")
    if np.any(np.asarray(std) < 0):
        raise ConfigError("channel.gain_std_profile", "entries must be >= 0")
    seed = v["seed.master"]
    if not 0 <= seed < 2**63:
        raise ConfigError("seed.master", "must be in [0, 2^63)")
    channel = ChannelConfig(
        v["channel.num_users"],
        T,
        v["channel.tap_count_min"],
        v["channel.tap_count_max"],
        tuple(np.atleast_1d(mean)) if np.ndim(mean) else mean,
        tuple(np.atleast_1d(std)) if np.ndim(std) else std,
        c,
        seed,
        dd,
    )

    mods = v["sweep.modulations"]
    if not mods:
        raise ConfigError("sweep.modulations", "must not be empty")
    for m in mods:
        try:
            Scheme.parse(m)
        except ValueError as exc:
            raise ConfigError("sweep.modulations", str(exc)) from None
    mods = [Scheme.parse(m).value for m in mods]

    eps = v["sweep.epsilons"]
    if not eps:
        raise ConfigError("sweep.epsilons", "must not be empty")
    if v["sweep.epsilon_mode"] not in ("relative", "absolute"):
        raise ConfigError("sweep.epsilon_mode", "must be relative or absolute")
    for e in eps:
        if v["sweep.epsilon_mode"] == "relative" and not 0.0 < e < 1.0:
            raise ConfigError("sweep.epsilons", f"value {e!r} outside (0, 1)")
        if not e > 0:
            raise ConfigError("sweep.epsilons", f"value {e!r} must be positive")
    snr = v["sweep.snr_db"]
    if not snr:
        raise ConfigError("sweep.snr_db", "must not be empty")
    if not all(math.isfinite(s) for s in snr):
        raise ConfigError("sweep.snr_db", "values must be finite")
    if v["sweep.trials"] < 1:
        raise ConfigError("sweep.trials", "must be >= 1")
    arms = v["sweep.arms"]
    if not arms:
        raise ConfigError("sweep.arms", "must not be empty")
    for a in arms:
        if a not in ARMS:
            raise ConfigError("sweep.arms", f"unknown arm {a!r}; choose from {', '.join(ARMS)}")
    if v["sweep.power_mode"] not in POWER_MODES:
        raise ConfigError("sweep.power_mode", f"must be one of {', '.join(POWER_MODES)}")
    if v["sweep.workers"] < 1:
        raise ConfigError("sweep.workers", "must be >= 1")
    if not 0.0 <= v["sweep.failure_threshold"] <= 1.0:
        raise ConfigError("sweep.failure_threshold", "must lie in [0, 1]")

    stats = {
        "process": v["stats.process"],
        "realizations": v["stats.realizations"],
        "num_freq": v["stats.num_freq"] or T,
        "prototype_width": v["stats.prototype_width"],
        "lambdas": v["stats.lambdas"],
        "pairing": v["stats.pairing"],
        "max_modes": v["stats.max_modes"],
        "stationarity_bound": v["stats.stationarity_bound"],
    }
    if stats["process"] not in PROCESSES:
        raise ConfigError("stats.process", f"must be one of {', '.join(PROCESSES)}")
    if stats["realizations"] < 1:
        raise ConfigError("stats.realizations", "must be >= 1")
    if stats["num_freq"] < v["channel.tap_count_max"]:
        raise ConfigError("stats.num_freq", "must be >= channel.tap_count_max")
    if not stats["prototype_width"] > 0:
        raise ConfigError("stats.prototype_width", "must be positive")
    if stats["pairing"] not in ("printed", "decomposition"):
        raise ConfigError("stats.pairing", "must be printed or decomposition")
    if len(stats["lambdas"]) < 1 or any(x < 0 for x in stats["lambdas"]):
        raise ConfigError("stats.lambdas", "need non-negative variances")
    if stats["max_modes"] < 1:
        raise ConfigError("stats.max_modes", "must be >= 1")
    try:
        pair = tuple(int(x) for x in v["stats.user_pair"])
    except ValueError:
        raise ConfigError("stats.user_pair", "must be two integers") from None
    U = v["channel.num_users"]
    if len(pair) != 2 or not all(0 <= p < U for p in pair):
        raise ConfigError("stats.user_pair", f"need two user indices in [0, {U})")
    stats["user_pair"] = pair

    return ExperimentConfig(
        channel=channel,
        modulations=mods,
        epsilons=[float(e) for e in eps],
        epsilon_mode=v["sweep.epsilon_mode"],
        snr_db_grid=[float(s) for s in snr],
        trials=v["sweep.trials"],
        arms=[a for a in ARMS if a in arms],
        master_seed=seed,
        output_dir=Path(v["output.dir"]),
        power_mode=v["sweep.power_mode"],
        workers=v["sweep.workers"],
        failure_threshold=v["sweep.failure_threshold"],
        stats=stats,
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
