"""Plain-text run configuration: parsing and validation.

A run is described by one YAML file with nested sections (``data``,
``terms``, ``engine``, ``simulate``, ``paths``); every option can be
overridden by a command-line flag.  All parse problems raise
:class:`~dhazard.errors.ConfigError` with the offending key in the
message.
"""

from __future__ import annotations

import yaml

from .basis import TermSpec
from .data import ColumnSchema
from .engine import EngineConfig
from .errors import ConfigError
from .simulate import SimConfig

__all__ = [
    "load_config",
    "parse_schema",
    "parse_terms",
    "parse_engine",
    "parse_sim",
]


def load_config(path):
    """Read the YAML configuration document as a dictionary."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    return doc


def _take(section, name, allowed):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown option(s) {sorted(unknown)}")


def parse_schema(section):
    """Build a :class:`ColumnSchema` from the ``data`` section."""
    section = dict(section or {})
    _take(
        section,
        "data",
        {"id", "time", "event", "covariates", "categorical", "horizon"},
    )
    try:
        return ColumnSchema(
            id=section.get("id", "id"),
            time=section.get("time", "time"),
            event=section.get("event", "event"),
            covariates=tuple(section.get("covariates", ())),
            categorical=tuple(section.get("categorical", ())),
        ), section.get("horizon")
    except TypeError as exc:
        raise ConfigError(f"data: {exc}") from None


def parse_terms(entries):
    """Build the term list from the ``terms`` section."""
    if not entries:
        raise ConfigError("terms: at least one term is required")
    terms = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"terms[{i}]: expected a mapping")
        _take(
            entry,
            f"terms[{i}]",
            {"name", "kind", "columns", "basis_dim", "degree", "penalty_order"},
        )
        if "name" not in entry or "kind" not in entry:
            raise ConfigError(f"terms[{i}]: 'name' and 'kind' are required")
        terms.append(
            TermSpec(
                name=entry["name"],
                kind=entry["kind"],
                columns=tuple(entry.get("columns", ())),
                basis_dim=entry.get("basis_dim"),
                degree=int(entry.get("degree", 3)),
                penalty_order=int(entry.get("penalty_order", 2)),
            )
        )
    return terms


def parse_engine(section, seed=None):
    """Build an :class:`EngineConfig` from the ``engine`` section."""
    section = dict(section or {})
    fields = {
        "iterations",
        "step",
        "batch_rows",
        "burn_in",
        "seed",
        "select",
        "tau_init",
        "tau_bounds",
        "tau_grid_points",
        "tau_passes",
        "optimize_tau",
        "early_stop_tol",
        "early_stop_patience",
    }
    _take(section, "engine", fields)
    if seed is not None:
        section["seed"] = seed
    if "tau_bounds" in section:
        bounds = section["tau_bounds"]
        if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
            raise ConfigError("engine.tau_bounds: expected [low, high]")
        section["tau_bounds"] = (float(bounds[0]), float(bounds[1]))
    try:
        config = EngineConfig(**section)
        config.validate()
    except TypeError as exc:
        raise ConfigError(f"engine: {exc}") from None
    return config


def parse_sim(section, seed=None):
    """Build a :class:`SimConfig` from the ``simulate`` section."""
    section = dict(section or {})
    _take(
        section,
        "simulate",
        {"n", "k", "baseline_level", "effect_sd", "spatial", "seed", "replications"},
    )
    if seed is not None:
        section["seed"] = seed
    try:
        config = SimConfig(**section)
        config.validate()
    except TypeError as exc:
        raise ConfigError(f"simulate: {exc}") from None
    return config
