"""Flat ``key = value`` experiment files mapped onto :class:`app.models.RunConfig`."""
import logging
import math
import os
import re
from pathlib import Path
from typing import Any, Mapping, Optional

from pydantic import ValidationError

from app.errors import ContractViolation
from app.models import ContinuationSettings, NetworkParams, PerturbParams, RunConfig

logger = logging.getLogger(__name__)

NETWORK_KEYS = set(NetworkParams.model_fields)
PERTURB_KEYS = set(PerturbParams.model_fields)
SETTINGS_KEYS = set(ContinuationSettings.model_fields)
TOP_KEYS = {"command", "pattern", "angle", "free", "lmax", "resonance_tol", "output_dir", "workers"}
KNOWN_KEYS = NETWORK_KEYS | PERTURB_KEYS | SETTINGS_KEYS | TOP_KEYS

_PI_MULTIPLE = re.compile(r"^(?P<coef>[+-]?(?:\d+(?:\.\d*)?|\.\d+)?(?:[eE][+-]?\d+)?)\s*\*?\s*pi\s*(?:/\s*(?P<den>\d+(?:\.\d*)?))?$")


def parse_number(text: str) -> float:
    """Float literal or a multiple of pi such as ``pi/2``, ``-pi``, ``3*pi/2``."""
    text = text.strip().lower()
    try:
        return float(text)
    except ValueError:
        pass
    match = _PI_MULTIPLE.match(text)
    if not match:
        raise ContractViolation(f"cannot read {text!r} as a number")
    coef = match.group("coef")
    value = math.pi * (float(coef) if coef not in ("", "+", "-") else (-1.0 if coef == "-" else 1.0))
    if match.group("den"):
        value /= float(match.group("den"))
    return value


def read_config_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"{path}:{number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ContractViolation(f"{path}:{number}: unknown key {key!r}")
        values[key] = value
    return values


def _coerce(key: str, value: Any) -> Any:
    if not isinstance(value, str):
        return value
    if key in ("command", "pattern", "free", "output_dir", "orientation"):
        return value
    if key == "angle":
        return [parse_number(part) for part in value.split(",") if part.strip()]
    if key in ("m", "n", "ntst", "ncol", "max_iter", "max_steps", "lmax", "workers"):
        return int(value)
    return parse_number(value)


def build_config(values: Mapping[str, Any]) -> RunConfig:
    unknown = set(values) - KNOWN_KEYS
    if unknown:
        raise ContractViolation(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        coerced = {key: _coerce(key, value) for key, value in values.items()}
    except ValueError as exc:
        raise ContractViolation(str(exc)) from exc

    top = {key: coerced[key] for key in TOP_KEYS & set(coerced)}
    if "angle" in top:
        angle = top.pop("angle")
        top["angles"] = angle if isinstance(angle, list) else [float(angle)]
    top.setdefault("output_dir", os.environ.get("TORUS_OUTPUT_DIR", "output"))
    try:
        return RunConfig(
            network=NetworkParams(**{key: coerced[key] for key in NETWORK_KEYS & set(coerced)}),
            perturb=PerturbParams(**{key: coerced[key] for key in PERTURB_KEYS & set(coerced)}),
            settings=ContinuationSettings(**{key: coerced[key] for key in SETTINGS_KEYS & set(coerced)}),
            **top,
        )
    except ValidationError as exc:
        raise ContractViolation(f"invalid configuration: {exc}") from exc


def flatten(config: RunConfig) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    flat.update(config.network.model_dump())
    flat.update(config.perturb.model_dump())
    flat.update(config.settings.model_dump())
    flat.update(
        command=config.command,
        pattern=config.pattern,
        angle=list(config.angles),
        free=config.free,
        lmax=config.lmax,
        resonance_tol=config.resonance_tol,
        output_dir=config.output_dir,
        workers=config.workers,
    )
    return flat


def load_config(path: Optional[Path] = None) -> RunConfig:
    if path is None:
        return build_config({})
    values = read_config_file(path)
    logger.info("Loaded %d settings from %s", len(values), path)
    return build_config(values)


def overlay(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Apply command-line values on top of a config; ``None`` means not given."""
    given = {key: value for key, value in overrides.items() if value is not None}
    if not given:
        return config
    flat = flatten(config)
    flat.update(given)
    return build_config(flat)
