"""Run configuration: one JSON file per experiment, validated before any work.

Sections: model (linear matrices or a registered nonlinear model), the
parameter uncertainty box, labeled output regions, the formula with its
ordered proposition list, grid and input sampling, synthesis and simulation
settings, and the output directory.  Cross references (proposition names vs.
regions, dimensions across sections) are checked here so later stages can
assume a coherent setup.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .abstraction import Grid, build_grid, input_sampling
from .models import (
    LabelingMap,
    LinearModel,
    NonlinearModel,
    UncertaintyBox,
    make_nonlinear,
)
from .scltl import Formula, FormulaSyntaxError, parse_formula


class ConfigError(ValueError):
    """Configuration rejected; ``path`` locates the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path}: {message}")
        self.path = path


def _expect_keys(section: dict, path: str, required: set, optional: set = frozenset()):
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object")
    unknown = set(section) - required - set(optional)
    if unknown:
        raise ConfigError(path, f"unknown key(s) {sorted(unknown)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(path, f"missing key(s) {sorted(missing)}")


def _matrix(section: dict, path: str, key: str) -> np.ndarray:
    try:
        return np.asarray(section[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}", "expected a numeric matrix") from None


@dataclass
class RunConfig:
    raw: dict
    model: object  # LinearModel | NonlinearModel
    theta_box: UncertaintyBox
    nominal_theta: np.ndarray
    formula_text: str
    formula: Formula
    ap: tuple
    labeling: LabelingMap
    grid: Grid
    inputs: np.ndarray
    tol: float
    max_iter: int
    runs: int
    horizon: Optional[int]
    seed: int
    initial_lattice: tuple
    interior_samples: int
    output_dir: str

    @property
    def is_linear(self) -> bool:
        return isinstance(self.model, LinearModel)


def load_config(path: str) -> RunConfig:
    """Read and validate a JSON run configuration.

    ``output_dir`` is resolved relative to the configuration file.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)  # json.JSONDecodeError carries line/column
    cfg = validate_config(raw)
    if not os.path.isabs(cfg.output_dir):
        cfg.output_dir = os.path.normpath(
            os.path.join(os.path.dirname(os.path.abspath(path)), cfg.output_dir)
        )
    return cfg


def validate_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$", "top level must be an object")
    _expect_keys(
        raw,
        "$",
        {"model", "uncertainty", "formula", "ap", "regions", "grid", "inputs", "output_dir"},
        {"synthesis", "simulation", "validation"},
    )

    model, nominal = _build_model(raw["model"])

    try:
        theta_box = UncertaintyBox.from_intervals(raw["uncertainty"])
    except ValueError as exc:
        raise ConfigError("$.uncertainty", str(exc)) from None
    if isinstance(model, LinearModel):
        if theta_box.dim != model.n:
            raise ConfigError("$.uncertainty", "additive uncertainty must match the state dimension")
        if not theta_box.contains(nominal):
            raise ConfigError("$.uncertainty", "nominal parameter outside the box")
    else:
        if theta_box.dim != model.theta0.shape[0]:
            raise ConfigError("$.uncertainty", "box dimension must match the model parameter")
        if not theta_box.contains(model.theta0):
            raise ConfigError("$.uncertainty", "nominal parameter outside the box")

    ap = raw["ap"]
    if not isinstance(ap, list) or not all(isinstance(p, str) for p in ap):
        raise ConfigError("$.ap", "expected a list of proposition names")
    if len(ap) > 16:
        raise ConfigError("$.ap", "at most 16 propositions supported")

    regions = raw["regions"]
    if not isinstance(regions, dict):
        raise ConfigError("$.regions", "expected an object of name -> box")
    try:
        labeling = LabelingMap.from_regions(ap, {k: np.asarray(v, dtype=float) for k, v in regions.items()})
    except ValueError as exc:
        raise ConfigError("$.regions", str(exc)) from None
    p_out = model.p if isinstance(model, LinearModel) else model.n
    if labeling.boxes.shape[1] != p_out:
        raise ConfigError("$.regions", f"region boxes must live in the {p_out}-dimensional output space")

    if not isinstance(raw["formula"], str):
        raise ConfigError("$.formula", "expected a formula string")
    try:
        formula = parse_formula(raw["formula"], ap)
    except FormulaSyntaxError as exc:
        raise ConfigError("$.formula", str(exc)) from None

    grid_sec = raw["grid"]
    _expect_keys(grid_sec, "$.grid", {"bounds", "cells"})
    try:
        grid = build_grid(grid_sec["bounds"], grid_sec["cells"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("$.grid", str(exc)) from None
    if grid.n != model.n:
        raise ConfigError("$.grid", "grid dimension must match the state dimension")

    inputs_sec = raw["inputs"]
    _expect_keys(inputs_sec, "$.inputs", {"bounds", "samples"})
    try:
        inputs = input_sampling(inputs_sec["bounds"], inputs_sec["samples"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("$.inputs", str(exc)) from None
    if inputs.shape[1] != model.m:
        raise ConfigError("$.inputs", "input bounds must match the model input dimension")

    synth = raw.get("synthesis", {})
    _expect_keys(synth, "$.synthesis", set(), {"tol", "max_iter"})
    tol = float(synth.get("tol", 1e-6))
    max_iter = int(synth.get("max_iter", 5000))
    if tol < 0 or max_iter < 1:
        raise ConfigError("$.synthesis", "need tol >= 0 and max_iter >= 1")

    sim = raw.get("simulation", {})
    _expect_keys(sim, "$.simulation", set(), {"runs", "horizon", "seed"})
    runs = int(sim.get("runs", 10000))
    horizon = sim.get("horizon")
    if horizon is not None:
        horizon = int(horizon)
        if horizon < 1:
            raise ConfigError("$.simulation.horizon", "must be >= 1 (or null for automatic)")
    seed = int(sim.get("seed", 0))

    val = raw.get("validation", {})
    _expect_keys(val, "$.validation", set(), {"initial_lattice", "interior_samples"})
    lattice = tuple(int(k) for k in val.get("initial_lattice", [5] * grid.n))
    if len(lattice) != grid.n:
        raise ConfigError("$.validation.initial_lattice", "one count per grid axis required")
    interior = int(val.get("interior_samples", 8))

    output_dir = raw["output_dir"]
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("$.output_dir", "expected a nonempty path string")

    return RunConfig(
        raw=raw,
        model=model,
        theta_box=theta_box,
        nominal_theta=nominal,
        formula_text=raw["formula"],
        formula=formula,
        ap=tuple(ap),
        labeling=labeling,
        grid=grid,
        inputs=inputs,
        tol=tol,
        max_iter=max_iter,
        runs=runs,
        horizon=horizon,
        seed=seed,
        initial_lattice=lattice,
        interior_samples=interior,
        output_dir=output_dir,
    )


def _build_model(section) -> tuple:
    if not isinstance(section, dict) or "type" not in section:
        raise ConfigError("$.model", "expected an object with a 'type' field")
    kind = section["type"]
    if kind == "linear":
        _expect_keys(section, "$.model", {"type", "A", "B", "C", "R"})
        try:
            model = LinearModel(
                A=_matrix(section, "$.model", "A"),
                B=_matrix(section, "$.model", "B"),
                C=_matrix(section, "$.model", "C"),
                R=_matrix(section, "$.model", "R"),
            )
        except ValueError as exc:
            raise ConfigError("$.model", str(exc)) from None
        return model, np.zeros(model.n)
    if kind == "vanderpol":
        _expect_keys(section, "$.model", {"type", "tau", "R"}, {"theta0"})
        theta0 = float(np.atleast_1d(np.asarray(section.get("theta0", 1.0), dtype=float))[0])
        try:
            model = make_nonlinear(
                "vanderpol",
                tau=float(section["tau"]),
                R=_matrix(section, "$.model", "R"),
                theta0=theta0,
            )
        except ValueError as exc:
            raise ConfigError("$.model", str(exc)) from None
        return model, model.theta0
    raise ConfigError("$.model.type", f"unknown model type {kind!r} (linear, vanderpol)")
