"""Reading, validating and locating model files.

A model file is YAML with four keys::

    label: simple walk, m=4/5
    mode: subcritical          # or supercritical
    jump:                      # offset, probability
      - [-1, 1/2]
      - [1, 1/2]
    offspring:                 # number of children, probability
      - [0, 1/5]
      - [1, 4/5]

Probabilities are numbers or ``"p/q"`` strings. ``jump`` and ``offspring``
may also be written as mappings ``{offset: probability}``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from .errors import ModelValidationError
from .model import (
    SUBCRITICAL,
    SUPERCRITICAL,
    JumpDistribution,
    ModelSpec,
    OffspringDistribution,
    _jump_violations,
    _offspring_violations,
)

BUILTIN_MODELS = ("special_m05", "special_m08", "special_m09", "period2", "r2_nrc", "supercritical")
SUBCRITICAL_BUILTINS = BUILTIN_MODELS[:5]


def parse_probability(value) -> float:
    """Number or ``"p/q"`` string to float; rationals are rounded once."""
    if isinstance(value, bool):
        raise ValueError(f"not a probability: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ValueError(f"not a probability: {value!r}")


def _pairs(section, name: str, problems: list[str]) -> list[tuple[int, float]]:
    if isinstance(section, dict):
        raw = list(section.items())
    elif isinstance(section, list):
        raw = []
        for i, item in enumerate(section):
            if isinstance(item, (list, tuple)) and len(item) == 2:
                raw.append(tuple(item))
            elif isinstance(item, dict) and len(item) == 1:
                raw.append(next(iter(item.items())))
            else:
                problems.append(f"{name}: entry {i} must be a [value, probability] pair")
    else:
        problems.append(f"{name}: expected a list of pairs or a mapping")
        return []
    out = []
    for key, prob in raw:
        if isinstance(key, bool) or not isinstance(key, int):
            problems.append(f"{name}: {key!r} is not an integer")
            continue
        try:
            p = parse_probability(prob)
        except ValueError as exc:
            problems.append(f"{name}: {exc}")
            continue
        if not math.isfinite(p):
            problems.append(f"{name}: probability of {key} is not finite")
            continue
        out.append((key, p))
    return out


def model_from_dict(doc, source: str = "<model>") -> ModelSpec:
    """Build a :class:`ModelSpec`, collecting every violation before raising."""
    if not isinstance(doc, dict):
        raise ModelValidationError([f"{source}: top level must be a mapping"])
    problems: list[str] = []
    for key in ("jump", "offspring", "mode"):
        if key not in doc:
            problems.append(f"missing section '{key}'")
    unknown = set(doc) - {"jump", "offspring", "mode", "label"}
    if unknown:
        problems.append(f"unknown keys: {', '.join(sorted(map(str, unknown)))}")

    jump_pairs = _pairs(doc.get("jump", []), "jump", problems)
    off_pairs = _pairs(doc.get("offspring", []), "offspring", problems)
    if jump_pairs:
        offsets = [y for y, _ in jump_pairs]
        probs = [p for _, p in jump_pairs]
        problems.extend(_jump_violations(offsets, probs, strict=True))
    off_probs: list[float] = []
    if off_pairs:
        if any(k < 0 for k, _ in off_pairs):
            problems.append("offspring: counts must be nonnegative")
        elif len({k for k, _ in off_pairs}) != len(off_pairs):
            problems.append("offspring: counts must be distinct")
        else:
            off_probs = [0.0] * (max(k for k, _ in off_pairs) + 1)
            for k, p in off_pairs:
                off_probs[k] = p
            problems.extend(_offspring_violations(off_probs))
    mode = doc.get("mode")
    if mode is not None and mode not in (SUBCRITICAL, SUPERCRITICAL):
        problems.append(f"mode: must be '{SUBCRITICAL}' or '{SUPERCRITICAL}', got {mode!r}")
    elif mode is not None and off_probs and not problems:
        mean = math.fsum(k * p for k, p in enumerate(off_probs))
        actual = SUBCRITICAL if mean < 1 else SUPERCRITICAL
        if actual != mode:
            problems.append(f"mode: declared {mode} but offspring mean is {mean:.6g}")
    if problems:
        raise ModelValidationError(problems)
    label = str(doc.get("label", source))
    return ModelSpec(JumpDistribution.from_pairs(jump_pairs),
                     OffspringDistribution(tuple(off_probs)), mode, label)


def load_yaml_text(text: str, source: str = "<model>"):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ModelValidationError([f"{source}: parse error{where}: {problem}"]) from exc


def load_model(path) -> ModelSpec:
    """Load a model from a file path or a built-in name such as ``special_m08``."""
    if isinstance(path, str) and path in BUILTIN_MODELS:
        return builtin_model(path)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ModelValidationError([f"{p}: cannot read ({exc.strerror})"]) from exc
    return model_from_dict(load_yaml_text(text, str(p)), str(p))


def validate_model_file(path) -> list[str]:
    """All violations found in a model file; empty when the file is valid."""
    try:
        load_model(path)
    except ModelValidationError as exc:
        return list(exc.violations)
    return []


def builtin_path(name: str):
    if name not in BUILTIN_MODELS:
        raise KeyError(f"unknown built-in model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")
    return resources.files("brwmax") / "models" / f"{name}.yaml"


def builtin_model(name: str) -> ModelSpec:
    text = builtin_path(name).read_text()
    return model_from_dict(load_yaml_text(text, name), name)
