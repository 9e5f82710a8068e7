"""Pipeline configuration: JSON file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .coverage import CoverageConfig
from .errors import ConfigError
from .mapmatch import MatchConfig, Policy
from .sim import SimConfig
from .skf import MOVE, STAY, SkfConfig


@dataclass
class PathsConfig:
    data_dir: str = "data"          # simulator output / pipeline input
    out_dir: str = "out"
    cdr: str | None = None
    coverage: str | None = None
    roads: str | None = None
    buildings: str | None = None
    truth: str | None = None
    observations: str | None = None

    _DEFAULTS = {
        "cdr": "cdr.csv",
        "coverage": "coverage.geojson",
        "roads": "roads.geojson",
        "buildings": "buildings.geojson",
        "truth": "truth.csv",
        "observations": "observations.csv",
    }

    def input(self, name: str) -> Path:
        explicit = getattr(self, name)
        return Path(explicit) if explicit else Path(self.data_dir) / self._DEFAULTS[name]

    def output(self, filename: str) -> Path:
        return Path(self.out_dir) / filename


@dataclass
class EvalConfig:
    max_skew: float = 60.0
    bin_width: float = 500.0


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    skf: SkfConfig = field(default_factory=SkfConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    jobs: int = 1

    def validate(self) -> "PipelineConfig":
        c = self.coverage
        _require(c.weight > 0 and math.isfinite(c.weight), "coverage.weight", "must be > 0")
        _require(c.shift_factor >= 0, "coverage.shift_factor", "must be >= 0")
        _require(c.grad_tol > 0, "coverage.grad_tol", "must be > 0")
        _require(c.max_iter >= 0, "coverage.max_iter", "must be >= 0")
        _require(c.min_radius > 0, "coverage.min_radius", "must be > 0")

        s = self.skf
        _require(0 < s.stay_prob < 1, "skf.stay_prob", "model-transition diagonal must be in (0, 1)")
        _require(s.q_move >= 0, "skf.q_move", "must be >= 0")
        _require(s.q_stay >= 0, "skf.q_stay", "must be >= 0")
        _require(s.velocity_eps >= 0, "skf.velocity_eps", "must be >= 0")
        _require(s.v_max > 0, "skf.v_max", "must be > 0")
        _require(s.r_mode in ("cell", "fixed"), "skf.r_mode", "must be 'cell' or 'fixed'")
        _require(s.fixed_r > 0, "skf.fixed_r", "must be > 0")
        _require(s.max_gap_s > 0, "skf.max_gap_s", "must be > 0")
        _require(0 <= s.threshold <= 1, "skf.threshold", "must be in [0, 1]")
        _require(len(s.models) >= 1 and set(s.models) <= {MOVE, STAY}
                 and len(set(s.models)) == len(s.models), "skf.models",
                 "must be distinct names from MOVE, STAY")

        m = self.match
        _require(m.radius > 0, "match.radius", "must be > 0")
        _require(m.policy in (Policy.EXPAND.value, Policy.STRICT.value), "match.policy",
                 "must be EXPAND or STRICT")
        _require(m.max_doublings >= 0, "match.max_doublings", "must be >= 0")

        e = self.eval
        _require(e.max_skew >= 0, "eval.max_skew", "must be >= 0")
        _require(e.bin_width > 0, "eval.bin_width", "must be > 0")
        _require(self.jobs >= 1, "jobs", "must be >= 1")
        try:
            self.sim.validate()
        except ValueError as exc:
            name = str(exc).split()[0]
            raise ConfigError(f"sim.{name}", str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _require(ok: bool, path: str, reason: str) -> None:
    if not ok:
        raise ConfigError(path, reason)


# ------------------------------------------------------------- conversion

def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{k}]") for k, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{k}]") for k, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(path, f"expected a boolean, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        try:
            f = float(value)
        except ValueError:
            raise ConfigError(path, f"expected an integer, got {value!r}") from None
        if not f.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(f)
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(path, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _hints(cls):
    import sys
    module = sys.modules[cls.__module__]
    return typing.get_type_hints(cls, vars(module))


def _update(obj, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected an object")
    hints = _hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(path, "unknown field")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _update(current, value, path)
        else:
            changes[key] = _coerce(value, hints[key], path)
    return dataclasses.replace(obj, **changes)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _nest(dotted: str, value) -> dict:
    out: dict = {}
    node = out
    parts = dotted.split(".")
    if not all(parts):
        raise ConfigError(dotted, "empty key component")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then the JSON file at ``path``, then ``key=value`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
        cfg = _update(cfg, data, "")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(item, "override must look like key=value")
        cfg = _update(cfg, _nest(key.strip(), _parse_value(raw)), "")
    return cfg.validate()
