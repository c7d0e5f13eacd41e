"""Scenario parameters, derived frame geometry and time/symbol conversions."""

from __future__ import annotations

import configparser
import dataclasses
import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

# Float slack used whenever a time is converted to an integer count of
# symbols/ticks, so that 3e-4 / 1e-4 == 2.9999999999999996 still maps to 3.
EPS = 1e-9
START_STATES = ("handover", "completion", "stationary")


class ConfigError(ValueError):
    """Raised for invalid or inconsistent scenario parameters."""


class Striping(str, enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    RECTANGULAR = "rectangular"

    @classmethod
    def parse(cls, value: "str | Striping") -> "Striping":
        if isinstance(value, Striping):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown striping policy {value!r}") from None


def parse_ratio(value: Any) -> Fraction:
    """Parse a DL:UL ratio given as ``"13/12"``, ``"1.5"``, a number or a Fraction."""
    if isinstance(value, Fraction):
        return value
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse ratio {value!r}") from None


_TIME_UNITS = {"s": 1, "ms": 1000, "us": 10**6, "µs": 10**6, "ns": 10**9}  # units per second


def parse_duration(value: Any) -> float:
    """Parse seconds, optionally with a unit suffix (``"50us"``, ``"5ms"``)."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().replace(" ", "")
    for unit in sorted(_TIME_UNITS, key=len, reverse=True):
        if text.endswith(unit) and not text[: -len(unit)].endswith("e"):
            return float(text[: -len(unit)]) / _TIME_UNITS[unit]
    return float(text)


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete parameter set of one primary/secondary scenario.

    Defaults reproduce the typical values of the WiMAX/WLAN study
    (5 ms frames, 30 subchannels, 26 DL symbols at R = 13/12, S_P = 10,
    S_S = 60, C_B = 55, W_0 = 4, m = 4). Durations are in seconds.

    ``phase_ticks`` is the number of phase classes per WiMAX symbol used by
    the contention network; 1 gives plain symbol-indexed classes.
    ``rounding`` selects how a duration is turned into a phase advance:
    ``"ceil"`` (always round up) or ``"dither"`` (floor plus a Bernoulli
    step with the fractional part as probability).
    ``start_state`` picks the model for the primary buffer state seen by a
    starting data transmission (see :mod:`cogwlan.txtime`).
    """

    t_frame: float = 5e-3
    n_subchannels: int = 30
    k_sym_dl: int = 26
    ratio_r: Fraction = Fraction(13, 12)
    nu: int = 2
    s_p: int = 10
    s_s: int = 60
    c_b: int = 55
    lambda_p: float = 25.0
    n_s: int = 10
    w0: int = 4
    m_stages: int = 4
    t_rts: float = 50e-6
    t_cts: float = 50e-6
    t_ack: float = 50e-6
    t_idle: float = 20e-6
    t_coll: float | None = None
    striping: Striping = Striping.HORIZONTAL
    phase_ticks: int = 10
    rounding: str = "ceil"
    start_state: str = "handover"

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratio_r", parse_ratio(self.ratio_r))
        object.__setattr__(self, "striping", Striping.parse(self.striping))
        if self.t_coll is None:
            # collided RTS plus one idle-slot guard before the CTS timeout
            object.__setattr__(self, "t_coll", self.t_rts + self.t_idle)
        self.validate()

    @property
    def collision_time(self) -> float:
        assert self.t_coll is not None
        return self.t_coll

    def validate(self) -> None:
        positive_ints = ("n_subchannels", "k_sym_dl", "nu", "s_p", "s_s", "c_b",
                         "n_s", "m_stages", "phase_ticks")
        for name in positive_ints:
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.w0 < 2 or int(self.w0) != self.w0:
            raise ConfigError(f"w0 must be an integer >= 2, got {self.w0!r}")
        if self.k_sym_dl % self.nu:
            raise ConfigError(f"k_sym_dl={self.k_sym_dl} is not divisible by nu={self.nu}")
        if self.ratio_r <= 0:
            raise ConfigError("ratio_r must be positive")
        k_sym = Fraction(self.k_sym_dl) * (self.ratio_r + 1) / self.ratio_r
        if k_sym.denominator != 1:
            raise ConfigError(
                f"k_sym_dl={self.k_sym_dl} with R={self.ratio_r} gives a non-integer "
                f"frame length of {k_sym} symbols")
        if self.t_frame <= 0:
            raise ConfigError("t_frame must be positive")
        if self.lambda_p < 0 or not math.isfinite(self.lambda_p):
            raise ConfigError("lambda_p must be finite and >= 0")
        for name in ("t_rts", "t_cts", "t_ack", "t_idle", "t_coll"):
            value = getattr(self, name)
            if value is None or value < 0 or not math.isfinite(value):
                raise ConfigError(f"{name} must be a finite duration >= 0")
        if self.t_rts <= 0:
            raise ConfigError("t_rts must be positive")
        if self.start_state not in START_STATES:
            raise ConfigError(f"start_state must be one of {START_STATES}, got {self.start_state!r}")
        if self.rounding not in ("ceil", "dither"):
            raise ConfigError(f"rounding must be 'ceil' or 'dither', got {self.rounding!r}")

    def replace(self, **changes: Any) -> "ScenarioConfig":
        """Copy with changes; a new ``t_rts``/``t_idle`` re-derives a defaulted ``t_coll``."""
        if "t_coll" not in changes and self.t_coll == self.t_rts + self.t_idle:
            changes["t_coll"] = None
        return dataclasses.replace(self, **changes)

    def with_ratio(self, ratio: Any) -> "ScenarioConfig":
        """Change the DL:UL ratio keeping the frame length in symbols fixed."""
        ratio = parse_ratio(ratio)
        k_sym = derive_geometry(self).k_sym
        k_dl = Fraction(k_sym) * ratio / (ratio + 1)
        if k_dl.denominator != 1 or int(k_dl) % self.nu:
            raise ConfigError(
                f"R={ratio} does not split a {k_sym}-symbol frame into whole DL slots")
        return self.replace(ratio_r=ratio, k_sym_dl=int(k_dl))


@dataclass(frozen=True)
class FrameGeometry:
    k_sym: int        # symbols per frame
    k_sym_dl: int     # symbols in the DL subframe
    t_sym: float
    t_dl: float
    t_frame: float
    m: int            # slots in the DL subframe
    n: int            # slots needed to drain a full primary buffer
    rows: int         # subchannels
    cols_dl: int      # slot columns in the DL subframe
    nu: int
    s_p: int
    c_b: int
    phase_ticks: int

    @property
    def t_tick(self) -> float:
        return self.t_sym / self.phase_ticks

    @property
    def n_phases(self) -> int:
        return self.k_sym * self.phase_ticks

    @property
    def t_col(self) -> float:
        return self.nu * self.t_sym


def derive_geometry(cfg: ScenarioConfig) -> FrameGeometry:
    k_sym = Fraction(cfg.k_sym_dl) * (cfg.ratio_r + 1) / cfg.ratio_r
    if k_sym.denominator != 1:
        raise ConfigError(f"non-integer K_sym = {k_sym}")
    k_sym = int(k_sym)
    t_sym = cfg.t_frame / k_sym
    cols = cfg.k_sym_dl // cfg.nu
    m = cfg.n_subchannels * cols
    if m < 1 or t_sym <= 0:
        raise ConfigError("degenerate frame geometry")
    return FrameGeometry(
        k_sym=k_sym, k_sym_dl=cfg.k_sym_dl, t_sym=t_sym, t_dl=cfg.k_sym_dl * t_sym,
        t_frame=cfg.t_frame, m=m, n=cfg.c_b * cfg.s_p, rows=cfg.n_subchannels,
        cols_dl=cols, nu=cfg.nu, s_p=cfg.s_p, c_b=cfg.c_b, phase_ticks=cfg.phase_ticks)


def to_symbols(t: float, geometry: FrameGeometry) -> int:
    """Duration in whole WiMAX symbols, rounded up."""
    if t < 0:
        raise ValueError("negative duration")
    return max(0, math.ceil(t / geometry.t_sym - EPS))


def to_ticks(t: float, geometry: FrameGeometry) -> int:
    """Duration in whole phase ticks, rounded up."""
    if t < 0:
        raise ValueError("negative duration")
    return max(0, math.ceil(t / geometry.t_tick - EPS))


def tick_shift(duration: float, geometry: FrameGeometry, rounding: str = "ceil") -> tuple[tuple[int, float], ...]:
    """A duration as phase-tick advances with weights.

    ``ceil`` rounds up; ``dither`` splits between floor and ceil so the
    mean advance equals the exact duration.
    """
    x = duration / geometry.t_tick
    if rounding == "ceil":
        return ((max(0, math.ceil(x - EPS)), 1.0),)
    if rounding == "dither":
        lo = math.floor(x + EPS)
        frac = x - lo
        if frac < EPS:
            return ((lo, 1.0),)
        return ((lo, 1.0 - frac), (lo + 1, frac))
    raise ValueError(f"unknown rounding {rounding!r}")


def advance_symbol(i: int, delta: int, k_sym: int) -> int:
    """Symbol index ``i`` (1-based) moved forward by ``delta``, wrapping at the frame end."""
    return (i + delta - 1) % k_sym + 1


# ---------------------------------------------------------------------------
# configuration files

SECTIONS: dict[str, tuple[str, ...]] = {
    "primary": ("t_frame", "n_subchannels", "k_sym_dl", "ratio_r", "nu", "s_p", "c_b",
                "lambda_p", "striping"),
    "secondary": ("s_s", "n_s"),
    "mac": ("w0", "m_stages", "t_rts", "t_cts", "t_ack", "t_idle", "t_coll"),
    "experiment": ("phase_ticks", "rounding", "start_state", "mode", "seed", "frames", "warmup_frames",
                   "batches", "gate", "jobs", "max_grid", "sweep_lambda_p", "sweep_n_s",
                   "sweep_ratio_r", "sweep_striping"),
}
_DURATIONS = {"t_frame", "t_rts", "t_cts", "t_ack", "t_idle", "t_coll"}
_INTS = {"n_subchannels", "k_sym_dl", "nu", "s_p", "c_b", "s_s", "n_s", "w0", "m_stages",
         "phase_ticks"}
_SCENARIO_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def coerce_field(name: str, raw: Any) -> Any:
    """Convert a textual value for a ScenarioConfig field."""
    if name in _DURATIONS:
        return parse_duration(raw)
    if name in _INTS:
        value = float(str(raw).strip())
        if value != int(value):
            raise ConfigError(f"{name} must be an integer, got {raw!r}")
        return int(value)
    if name == "ratio_r":
        return parse_ratio(raw)
    if name == "lambda_p":
        return float(raw)
    if name == "striping":
        return Striping.parse(raw)
    if name in ("rounding", "start_state"):
        return str(raw).strip().lower()
    raise ConfigError(f"unknown scenario field {name!r}")


def read_config(path: str | Path) -> tuple[ScenarioConfig, dict[str, str]]:
    """Read an INI-style scenario file.

    Returns the scenario and the raw experiment settings that are not
    scenario fields (sweeps, seeds, gates). Unknown sections or keys raise
    :class:`ConfigError`.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # type: ignore[assignment]
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_sections({s: dict(parser[s]) for s in parser.sections()})


def config_from_sections(
        sections: Mapping[str, Mapping[str, str]]) -> tuple[ScenarioConfig, dict[str, str]]:
    fields: dict[str, Any] = {}
    extra: dict[str, str] = {}
    for section, items in sections.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in items.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if key in _SCENARIO_FIELDS:
                fields[key] = coerce_field(key, raw)
            else:
                extra[key] = raw
    return ScenarioConfig(**fields), extra
