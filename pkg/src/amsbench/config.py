"""Experiment configuration: flat INI sections with typed validation.

Every key can be overridden from the environment as
``AMSBENCH_<SECTION>_<KEY>`` (upper case), e.g. ``AMSBENCH_SYNTH_N_PATIENTS=200``.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .courses import TARGETS

ENV_PREFIX = "AMSBENCH_"
RESOLUTIONS = ("24h", "1h-fused")
FAMILIES = ("logreg", "mlp", "gru")
TASK_MODES = ("stl", "hard", "uncertainty", "mmoe")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


def _csv(cast=str):
    def parse(text: str):
        return tuple(cast(v.strip()) for v in text.split(",") if v.strip())
    return parse


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    cast: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _unit(x):
    return 0.0 <= x <= 1.0


def _subset(allowed):
    return lambda vals: len(vals) > 0 and all(v in allowed for v in vals)


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": Key(int, None, lambda v: v >= 0, "non-negative integer"),
    },
    "cohort": {
        "source": Key(str, "synthetic", lambda v: v in ("synthetic", "tables"), "synthetic or tables"),
        "path": Key(str, ""),
    },
    "synth": {
        "n_patients": Key(int, 1500, lambda v: v >= 1, ">= 1"),
        "prevalence_iv_to_oral": Key(float, 0.0035, _unit, "in [0, 1]"),
        "prevalence_deescalation": Key(float, 0.0392, _unit, "in [0, 1]"),
        "prevalence_discontinuation": Key(float, 0.0169, _unit, "in [0, 1]"),
        "prevalence_short_course": Key(float, 0.0577, _unit, "in [0, 1]"),
        "signal_strength": Key(float, 1.0, lambda v: v >= 0, ">= 0"),
        "vital_rate_per_hour": Key(float, 0.5, lambda v: v > 0, "> 0"),
        "lab_rate_per_hour": Key(float, 0.08, lambda v: v > 0, "> 0"),
        "readmission_fraction": Key(float, 0.03, _unit, "in [0, 1]"),
    },
    "features": {
        "anchor_hour": Key(int, 8, lambda v: 0 <= v <= 23, "hour in 0..23"),
        "window_hours": Key(int, 24, lambda v: v > 0, "> 0"),
        "bins": Key(int, 24, lambda v: v > 0, "> 0"),
        "vitals": Key(_csv(), ("TEMP", "HR", "RR", "SPO2", "DBP", "SBP")),
        "labs": Key(_csv(), ("WBC", "CRP", "PCT", "HGB", "SODIUM")),
        "high_priority_asi": Key(int, 8, lambda v: v >= 0, ">= 0"),
        "resolutions": Key(_csv(), ("24h", "1h-fused"), _subset(RESOLUTIONS), f"subset of {RESOLUTIONS}"),
        "leak_check": Key(_bool, True),
    },
    "split": {
        "train": Key(float, 0.72, _unit, "in [0, 1]"),
        "val": Key(float, 0.08, _unit, "in [0, 1]"),
        "test": Key(float, 0.20, _unit, "in [0, 1]"),
    },
    "prep": {
        "winsor_low": Key(float, 1.0, lambda v: 0 <= v < 50, "in [0, 50)"),
        "winsor_high": Key(float, 99.0, lambda v: 50 < v <= 100, "in (50, 100]"),
        "max_seq_len": Key(int, 512, lambda v: v >= 1, ">= 1"),
        "label_noise": Key(float, 0.0, lambda v: 0 <= v < 0.5, "in [0, 0.5)"),
    },
    "train": {
        "lr": Key(float, 1e-3, lambda v: v > 0, "> 0"),
        "weight_decay": Key(float, 1e-2, lambda v: v >= 0, ">= 0"),
        "batch_size": Key(int, 8, lambda v: v >= 1, ">= 1"),
        "max_epochs": Key(int, 30, lambda v: v >= 0, ">= 0"),
        "patience": Key(int, 5, lambda v: v >= 1, ">= 1"),
        "clip_norm": Key(float, 2.0, lambda v: v > 0, "> 0"),
        "pos_weight_cap": Key(float, 100.0, lambda v: v >= 1, ">= 1"),
        "beta1": Key(float, 0.9, lambda v: 0 <= v < 1, "in [0, 1)"),
        "beta2": Key(float, 0.999, lambda v: 0 <= v < 1, "in [0, 1)"),
        "eps": Key(float, 1e-8, lambda v: v > 0, "> 0"),
        "hidden": Key(int, 128, lambda v: v >= 1, ">= 1"),
        "layers": Key(int, 2, lambda v: v >= 1, ">= 1"),
        "dropout": Key(float, 0.2, lambda v: 0 <= v < 1, "in [0, 1)"),
        "n_experts": Key(int, 4, lambda v: v >= 1, ">= 1"),
        "expert_dim": Key(int, 64, lambda v: v >= 1, ">= 1"),
        "proj_width": Key(int, 32, lambda v: v >= 1, ">= 1"),
        "conv_channels": Key(_csv(int), (32, 64), lambda v: len(v) >= 1 and min(v) >= 1, "positive widths"),
        "kernel": Key(int, 3, lambda v: v >= 1, ">= 1"),
        "mlp_hidden": Key(int, 64, lambda v: v >= 1, ">= 1"),
        "mlp_max_epochs": Key(int, 200, lambda v: v >= 0, ">= 0"),
        "logreg_c": Key(float, 1.0, lambda v: v > 0, "> 0"),
        "logreg_max_iter": Key(int, 3000, lambda v: v >= 1, ">= 1"),
    },
    "matrix": {
        "models": Key(_csv(), ("logreg", "mlp", "gru"), _subset(FAMILIES), f"subset of {FAMILIES}"),
        "resolutions": Key(_csv(), ("24h",), _subset(RESOLUTIONS), f"subset of {RESOLUTIONS}"),
        "task_modes": Key(_csv(), ("stl",), _subset(TASK_MODES), f"subset of {TASK_MODES}"),
        "targets": Key(_csv(), TARGETS, _subset(TARGETS), f"subset of {TARGETS}"),
        "mtl_targets": Key(_csv(), ("deescalation", "discontinuation", "short_course"),
                           lambda v: len(v) >= 2 and all(t in TARGETS for t in v), "two or more targets"),
    },
    "report": {
        "n_bins": Key(int, 10, lambda v: v >= 2, ">= 2"),
        "threshold": Key(float, 0.5, _unit, "in [0, 1]"),
    },
}


class Config:
    """Validated, typed view over an INI file plus environment overrides."""

    def __init__(self, values: dict[str, dict[str, Any]], raw: dict[str, dict[str, str]]):
        self._values = values
        self.raw = raw

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self._values[section]

    def get(self, section: str, key: str):
        return self._values[section][key]

    def section_text(self, *sections: str) -> str:
        """Canonical text of the named sections (sorted keys, typed values)."""
        lines = []
        for s in sections:
            lines.append(f"[{s}]")
            for k in sorted(self._values[s]):
                lines.append(f"{k} = {_render(self._values[s][k])}")
        return "\n".join(lines) + "\n"

    def digest(self, *sections: str) -> str:
        return hashlib.sha256(self.section_text(*(sections or tuple(SCHEMA))).encode()).hexdigest()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.section_text(*SCHEMA))
        return path

    def with_seed(self, seed: int) -> "Config":
        values = {s: dict(v) for s, v in self._values.items()}
        values["run"]["seed"] = int(seed)
        return Config(values, self.raw)


def _render(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def default_config_text() -> str:
    return resources.files("amsbench").joinpath("configs/default.cfg").read_text("utf-8")


def load_config(path=None, env: dict | None = None, seed: int | None = None) -> Config:
    """Parse ``path`` (or the packaged default), apply env overrides and validate."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if path is None:
            parser.read_string(default_config_text())
        else:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("config", f"file not found: {path}")
            parser.read_string(p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).replace("\n", " ")) from None
    raw: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key, val in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            raw.setdefault(section, {})[key] = val
    for section, keys in SCHEMA.items():
        for key in keys:
            name = f"{ENV_PREFIX}{section}_{key}".upper()
            if name in env:
                raw.setdefault(section, {})[key] = env[name]
    if seed is not None:
        raw.setdefault("run", {})["seed"] = str(seed)
    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, spec in keys.items():
            field = f"{section}.{key}"
            text = raw.get(section, {}).get(key)
            if text is None:
                if spec.default is None:
                    raise ConfigError(field, "required value missing")
                values[section][key] = spec.default
                continue
            try:
                val = spec.cast(text.strip())
            except ValueError:
                raise ConfigError(field, f"cannot parse {text!r}") from None
            if spec.check is not None and not spec.check(val):
                raise ConfigError(field, f"value {text.strip()!r} out of range ({spec.rule})")
            values[section][key] = val
    split = values["split"]
    if abs(split["train"] + split["val"] + split["test"] - 1.0) > 1e-9:
        raise ConfigError("split", "train + val + test must equal 1")
    if values["prep"]["winsor_low"] >= values["prep"]["winsor_high"]:
        raise ConfigError("prep.winsor_low", "must be below winsor_high")
    feats = values["features"]
    if (feats["window_hours"] * 60) % feats["bins"]:
        raise ConfigError("features.bins", "window must divide evenly into bins")
    if values["cohort"]["source"] == "tables" and not values["cohort"]["path"]:
        raise ConfigError("cohort.path", "required when source = tables")
    missing = [r for r in values["matrix"]["resolutions"] if r not in feats["resolutions"]]
    if missing:
        raise ConfigError("matrix.resolutions", f"{missing} not produced by features.resolutions")
    return Config(values, raw)
