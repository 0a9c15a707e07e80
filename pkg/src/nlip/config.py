"""Declarative experiment configuration.

A config file is plain ``key = value`` text with an ``[experiment]`` section
naming the pipeline and an optional section named after the pipeline holding
its parameters::

    [experiment]
    pipeline = wave-fig4
    output = runs/fig4

    [wave-fig4]
    snr_db = 12
    seed = 7

Every key is either consumed or rejected; unknown keys are errors.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _opt_float(text: str) -> float | None:
    t = text.strip().lower()
    if t in ("", "none", "off"):
        return None
    return math.inf if t in ("inf", "infinity") else float(t)


def _stage(text: str) -> str:
    t = text.strip()
    if t not in ("raw", "linearized"):
        raise ValueError("noise_stage must be 'raw' or 'linearized'")
    return t


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


Parser = Callable[[str], Any]

# key -> (parser, default); every key has a default so each pipeline runs on defaults
SCHEMAS: dict[str, dict[str, tuple[Parser, Any]]] = {
    "identity-suite": {
        "m": (int, 2),
        "q": (str, "sinpi"),
        "q_amp": (float, 1.0),
        "n_values": (_ints, (16, 32, 64)),
        "eps_values": (_floats, (4e-3, 2e-3, 1e-3, 5e-4)),
        "eps_fixed": (float, 1e-6),
        "first_order_eps": (float, 1e-3),
        "null_samples": (_positive_int, 10000),
        "seed": (int, 0),
        "wave_nx": (_positive_int, 128),
        "fourth_nx": (_positive_int, 64),
        "fourth_eps": (_floats, (0.2, 0.1, 0.05, 0.025)),
    },
    "elliptic-recon": {
        "n": (_positive_int, 64),
        "m": (int, 2),
        "eps": (float, 1e-3),
        "kmax": (int, 3),
        "delta": (float, 1e-2),
        "q": (str, "sin2pi"),
        "q_amp": (float, 1.0),
        "tolerance": (float, 0.15),
    },
    "wave-fig4": {
        "nx": (_positive_int, 256),
        "T": (float, 4.0),
        "m": (int, 2),
        "eps": (float, 1e-2),
        "sigma_p": (float, 0.05),
        "spacing": (float, 0.05),
        "snr_db": (_opt_float, None),
        "seed": (int, None),
        "noise_stage": (_stage, "raw"),
        "q": (str, "wave-smooth"),
        "q_amp": (float, 0.5),
        "tolerance": (float, 0.30),
    },
    "wave-sweep": {
        "nx": (_positive_int, 128),
        "T": (float, 3.0),
        "m": (int, 2),
        "eps": (float, 1e-2),
        "sigma_p": (float, 0.05),
        "spacing": (float, 0.1),
        "q": (str, "wave-smooth"),
        "q_amp": (float, 0.5),
        "q2": (str, "const"),
        "q2_amp": (float, 2.0),
        "deltas": (_floats, (1e-3, 1e-2, 1e-1, 1.0)),
        "s": (float, 1.0),
        "sigma_m": (int, 4),
    },
    "passive-cone": {
        "M": (_positive_int, 256),
        "c_amp": (float, 0.3),
        "observers": (_positive_int, 8),
        "cone_observers": (_positive_int, 24),
        "sources": (_positive_int, 20),
        "rank_samples": (_positive_int, 100),
        "test_points": (_positive_int, 5),
        "seed": (int, 1),
        "rank_fraction": (float, 0.9),
        "cone_tolerance": (float, 0.05),
    },
}

PIPELINES = tuple(SCHEMAS)


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str
    params: dict[str, Any] = field(default_factory=dict)
    output: Path | None = None

    def __getitem__(self, key: str):
        return self.params[key]


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (T vs t)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if not cp.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    exp = dict(cp.items("experiment"))
    pipeline = exp.pop("pipeline", None)
    if pipeline is None:
        raise ConfigError(f"{source}: [experiment] needs a 'pipeline' key")
    if pipeline not in SCHEMAS:
        raise ConfigError(f"{source}: unknown pipeline {pipeline!r}; choose from {', '.join(PIPELINES)}")
    output = exp.pop("output", None)
    if exp:
        raise ConfigError(f"{source}: unknown keys in [experiment]: {', '.join(sorted(exp))}")
    extra = [s for s in cp.sections() if s not in ("experiment", pipeline)]
    if extra:
        raise ConfigError(f"{source}: unexpected sections: {', '.join(extra)}")

    schema = SCHEMAS[pipeline]
    raw = dict(cp.items(pipeline)) if cp.has_section(pipeline) else {}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{source}: unknown keys for {pipeline}: {', '.join(unknown)}")
    params = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                params[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key!r}: {raw[key]!r} ({exc})") from exc
        else:
            params[key] = default
    if params.get("snr_db") is not None and not math.isinf(params["snr_db"]) and params.get("seed") is None:
        raise ConfigError(f"{source}: 'seed' is mandatory whenever 'snr_db' is set")
    return ExperimentConfig(pipeline, params, Path(output) if output else None)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
