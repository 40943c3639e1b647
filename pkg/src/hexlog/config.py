# Flat key=value scenario files. '#' starts a comment, blank lines are
# skipped, every error names the offending line.
from __future__ import annotations

import math

from .metrics import CostWeights
from .sim import ScenarioConfig


class ConfigError(Exception):
    pass


def parse_k(text: str):
    """Threshold values are non-negative integers or the literal INF."""
    s = text.strip()
    if s.upper() == "INF":
        return math.inf
    try:
        v = int(s)
    except ValueError:
        raise ConfigError(f"k must be a non-negative integer or INF, got {text!r}")
    if v < 0:
        raise ConfigError(f"k must be >= 0, got {v}")
    return v


def _parse_failure_times(text: str) -> tuple[tuple[int, int], ...]:
    """Comma list of tick:host pairs, e.g. '40:0,90:2'."""
    out = []
    s = text.strip()
    if not s:
        return ()
    for part in s.split(","):
        try:
            t_str, h_str = part.split(":")
            out.append((int(t_str), int(h_str)))
        except ValueError:
            raise ConfigError(f"bad failure entry {part.strip()!r}, want tick:host")
    return tuple(out)


_INT_KEYS = {
    "grid_radius", "num_hosts", "checkpoint_interval_ticks",
    "reconnect_delay_ticks", "repair_delay_ticks", "run_length_ticks",
    "rng_seed", "weight_trace", "weight_checkpoint", "weight_entry",
}
_FLOAT_KEYS = {"msg_rate", "move_prob", "disconnect_prob", "failure_rate"}
_KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | {"k", "failure_times"}


def parse_config(text: str, *, overrides: dict | None = None) -> ScenarioConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key == "k":
                values[key] = parse_k(val)
            else:
                values[key] = _parse_failure_times(val)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key!r}")
    if overrides:
        values.update(overrides)
    base = CostWeights()
    weights = CostWeights(
        trace=values.pop("weight_trace", base.trace),
        checkpoint=values.pop("weight_checkpoint", base.checkpoint),
        entry=values.pop("weight_entry", base.entry),
    )
    try:
        return ScenarioConfig(weights=weights, **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))


def load_config(path: str, *, overrides: dict | None = None) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    return parse_config(text, overrides=overrides)
