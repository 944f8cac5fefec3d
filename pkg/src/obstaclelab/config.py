"""TOML experiment configuration: parsing, validation and construction of the run objects."""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .exponent import Flux, make_exponent, make_weight
from .fields import make_field
from .grid import Grid, build_grid
from .harness import HarnessConfig
from .measure import MeasureData

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "default_config_text"]

SECTIONS = ("domain", "exponent", "flux", "measure", "obstacles", "solver", "harness", "chain", "sweep")

DEFAULTS = {
    "seed": 0,
    "domain": {"kind": "unit_square", "N": 33},
    "exponent": {"kind": "constant", "p": 2.0},
    "flux": {"weight": "constant", "value": 1.0, "eps_reg": -1.0},
    "measure": {"atoms": [], "weights": [], "density": "zero"},
    "obstacles": {"psi1": {"kind": "none"}, "psi2": {"kind": "none"}, "g": {"kind": "zero"}},
    "solver": {"tol": 1e-9, "max_sweeps": 100000, "omega": "auto", "mode": "double", "lumping": "nearest"},
    "harness": {
        "q": [0.5, 1.0, 1.5],
        "alpha": [0.25],
        "eps": 0.5,
        "n_level": 2.0,
        "delta": 0.125,
        "i_list": [],
        "r_list": [1.5],
        "tau0": 0.1,
        "R": 0.5,
        "variants": ["general", "constant_p"],
    },
    "chain": {"center": [0.5, 0.0], "rho": [0.4, 0.3, 0.2]},
    "sweep": {"N": [33, 65], "q": [1.0], "alpha": [0.25]},
}


class ConfigError(ValueError):
    """Configuration problem; the message names the offending key."""


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    grid: Grid
    flux: Flux
    measure: MeasureData
    psi1: np.ndarray | None
    psi2: np.ndarray | None
    g: np.ndarray
    fields: dict
    solver: dict
    harness: HarnessConfig
    variants: tuple
    chain: dict
    sweep: dict

    def with_grid(self, n):
        """Same experiment on a grid of a different resolution."""
        raw = copy.deepcopy(self.raw)
        raw["domain"]["N"] = int(n)
        return parse_config(raw)


# registry parameters are free-form in these tables
OPEN = ("exponent", "flux")


def _merge(base, over, where=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        loc = f"{where}.{key}" if where else key
        if where in OPEN and key not in base:
            out[key] = val
            continue
        if key not in base:
            raise ConfigError(f"unknown key {loc!r}")
        if isinstance(base[key], dict) and key not in ("psi1", "psi2", "g"):
            if not isinstance(val, dict):
                raise ConfigError(f"{loc!r} must be a table")
            out[key] = _merge(base[key], val, loc)
        else:
            out[key] = val
    return out


def _field(spec, grid, loc):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{loc!r} must be a table with a 'kind' key")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if spec["kind"] == "none":
        return None, None
    try:
        f = make_field(spec["kind"], **params)
    except ValueError as exc:
        raise ConfigError(f"{loc}: {exc}") from exc
    return f(grid.coords), f


def parse_config(data: dict) -> ExperimentConfig:
    raw = _merge(DEFAULTS, data)
    try:
        seed = int(raw["seed"])
        if seed < 0:
            raise ConfigError("'seed' must be a non-negative integer")
        dom = raw["domain"]
        grid = build_grid(dom["kind"], int(dom["N"]))
        ex = dict(raw["exponent"])
        exponent = make_exponent(ex.pop("kind"), **ex)
        fx = dict(raw["flux"])
        eps_reg = float(fx.pop("eps_reg"))
        weight = make_weight(fx.pop("weight"), **fx)
        flux = Flux(exponent, weight, None if eps_reg < 0 else eps_reg)
        ms = raw["measure"]
        atoms = np.asarray(ms["atoms"], dtype=float).reshape(-1, grid.dim) if ms["atoms"] else np.zeros((0, grid.dim))
        dens_vals, _ = _field({"kind": ms["density"]} if isinstance(ms["density"], str) else ms["density"], grid, "measure.density")
        density = None if dens_vals is None or not np.any(dens_vals) else np.where(grid.in_domain, dens_vals, 0.0)
        measure = MeasureData(atoms, np.asarray(ms["weights"], dtype=float), density)
        measure.validate(grid)
        ob = raw["obstacles"]
        psi1, f1 = _field(ob["psi1"], grid, "obstacles.psi1")
        psi2, f2 = _field(ob["psi2"], grid, "obstacles.psi2")
        g, fg = _field(ob["g"], grid, "obstacles.g")
        if g is None:
            g, fg = np.zeros(grid.n_lattice), make_field("zero")
        sv = dict(raw["solver"])
        if sv["mode"] not in ("double", "lower", "equation"):
            raise ConfigError(f"solver.mode must be double, lower or equation, got {sv['mode']!r}")
        if not (sv["omega"] == "auto" or isinstance(sv["omega"], (int, float))):
            raise ConfigError("solver.omega must be 'auto' or a number")
        hs = raw["harness"]
        harness = HarnessConfig(
            eps=float(hs["eps"]), n_level=float(hs["n_level"]), delta=float(hs["delta"]),
            q_list=tuple(float(q) for q in hs["q"]), alpha_list=tuple(float(a) for a in hs["alpha"]),
            R=float(hs["R"]), tau0=float(hs["tau0"]),
            i_list=tuple(int(i) for i in hs["i_list"]), r_list=tuple(float(r) for r in hs["r_list"]),
        )
        harness.validate(grid.dim, exponent.p_minus)
        variants = tuple(hs["variants"])
        for v in variants:
            if v not in ("general", "p_minus_ge_2", "constant_p"):
                raise ConfigError(f"harness.variants: unknown variant {v!r}")
        if "constant_p" in variants and not exponent.is_constant:
            raise ConfigError("harness.variants: constant_p needs a constant exponent")
        if "p_minus_ge_2" in variants and exponent.p_minus < 2:
            raise ConfigError("harness.variants: p_minus_ge_2 needs p^- >= 2")
        ch = raw["chain"]
        chain = {"center": [float(c) for c in ch["center"]], "rho": [float(r) for r in ch["rho"]]}
        sw = raw["sweep"]
        sweep = {"N": [int(n) for n in sw["N"]], "q": [float(q) for q in sw["q"]], "alpha": [float(a) for a in sw["alpha"]]}
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return ExperimentConfig(
        raw=raw, seed=seed, grid=grid, flux=flux, measure=measure, psi1=psi1, psi2=psi2, g=g,
        fields={"psi1": f1, "psi2": f2, "g": fg}, solver=sv, harness=harness, variants=variants,
        chain=chain, sweep=sweep,
    )


def default_config_text():
    return resources.files("obstaclelab").joinpath("data/default.toml").read_text()


def load_config(path=None) -> ExperimentConfig:
    """Read a TOML file (the shipped default when ``path`` is None)."""
    try:
        text = default_config_text() if path is None else open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path or 'default.toml'}: {exc}") from exc
    return parse_config(data)
