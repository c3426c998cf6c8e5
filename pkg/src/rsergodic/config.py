"""Run configuration: JSON schema, loading and model construction.

A config is one JSON document::

    {
      "schema_version": 1,
      "seed": 12345,
      "model": {"kind": "example2", "kappa1": 1, "kappa2": 0.5, "T": 12},
      "certificates": ["t-m-infi", "b-t-4"],
      "simulation": {"dt": 0.001, "horizon": 10, "paths": 5000,
                     "record_every": 250, "x0": 1.0, "i0": 0,
                     "y": "stationary", "burn_in": 10},
      "thresholds": [-1.0]
    }

``model.kind`` is ``"finite"`` (dense ``Q`` and ``beta``), ``"birth_death"``
(``birth``, ``death`` and ``beta`` of a truncated chain) or ``"example2"``.
Drift and diffusion coefficients use the closed vocabulary of
:class:`~rsergodic.dynamics.Coefficient` (``constant``, ``linear``,
``polynomial``, ``trig``, ``sum``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .certificates import THEOREMS
from .chains import BirthDeathSpec, birth_death_g, validate_generator
from .dynamics import Coefficient, RegimeModel, RhoFunction, SimulationGrid
from .errors import ConfigError
from .examples import RHO_H_EPS, example2
from .partition import build_partition

__all__ = ["SCHEMA", "RunConfig", "ModelBundle", "load_config", "parse_config", "build_model"]

SCHEMA_VERSION = 1

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_coef = {
    "$id": "coefficient",
    "type": "object",
    "oneOf": [
        {"required": ["kind", "params"],
         "properties": {"kind": {"enum": ["constant", "linear", "polynomial", "trig"]}, "params": _vec},
         "additionalProperties": False},
        {"required": ["kind", "terms"],
         "properties": {"kind": {"const": "sum"},
                        "terms": {"type": "array", "items": {"$ref": "coefficient"}, "minItems": 1}},
         "additionalProperties": False},
    ],
}
_moment = {
    "type": "object",
    "required": ["theta", "K"],
    "properties": {"theta": _vec, "K": _vec, "rho_eps": {"type": "number", "exclusiveMinimum": 0},
                   "tail_theta": _num, "tail_K": _num},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "model"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "model": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["finite", "birth_death", "example2"]},
                "Q": _mat,
                "birth": _vec,
                "death": _vec,
                "beta": _vec,
                "drift": {"type": "array", "items": _coef},
                "sigma": {"type": "array", "items": _coef},
                "C1": {"type": "number", "exclusiveMinimum": 0},
                "moment": _moment,
                "tail_sup": _num,
                "tail_bounds": {"type": "array", "items": {"type": "array", "items": _num,
                                                          "minItems": 3, "maxItems": 3}},
                "kappa1": {"type": "number", "exclusiveMinimum": 0},
                "kappa2": _num,
                "T": {"type": "integer", "minimum": 3},
                "a2": {"type": "number", "exclusiveMinimum": 0},
                "b1": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "certificates": {"type": "array", "items": {"enum": list(THEOREMS)}, "minItems": 1},
        "simulation": {
            "type": "object",
            "required": ["dt", "horizon", "paths"],
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "paths": {"type": "integer", "minimum": 2},
                "record_every": {"type": "integer", "minimum": 1},
                "x0": _num,
                "i0": {"type": "integer", "minimum": 0},
                "y": {"oneOf": [_num, {"const": "stationary"}]},
                "j0": {"type": "integer", "minimum": 0},
                "burn_in": {"type": "number", "exclusiveMinimum": 0},
                "burn_in_dt": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "thresholds": _vec,
        "output": {"type": "string"},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class SimulationSpec:
    grid: SimulationGrid
    paths: int
    x0: float = 1.0
    i0: int = 0
    y: float | str = "stationary"
    j0: int | None = None
    burn_in: float = 10.0
    burn_in_dt: float | None = None


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration.  ``seed`` is mandatory."""

    raw: dict
    seed: int
    certificates: tuple
    simulation: SimulationSpec | None
    thresholds: tuple | None
    output: str | None = None
    source: str | None = None
    extra: dict = field(default_factory=dict)


def parse_config(doc, seed=None, thresholds=None, source=None) -> RunConfig:
    """Validate a config document; ``seed`` and ``thresholds`` override it."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    seed = doc.get("seed") if seed is None else int(seed)
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    sim = None
    if "simulation" in doc:
        s = doc["simulation"]
        try:
            grid = SimulationGrid(float(s["dt"]), float(s["horizon"]), int(s.get("record_every", 1)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        sim = SimulationSpec(grid, int(s["paths"]), float(s.get("x0", 1.0)), int(s.get("i0", 0)),
                             s.get("y", "stationary"), s.get("j0"), float(s.get("burn_in", 10.0)),
                             s.get("burn_in_dt"))
    th = thresholds if thresholds is not None else doc.get("thresholds")
    kind = doc["model"]["kind"]
    default = ("t-m-infi",) if kind in ("example2", "birth_death") else ("main-1",)
    return RunConfig(doc, int(seed), tuple(doc.get("certificates", default)), sim,
                     None if th is None else tuple(float(t) for t in th), doc.get("output"), source)


def load_config(path, seed=None, thresholds=None) -> RunConfig:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    return parse_config(doc, seed, thresholds, str(p))


@dataclass
class ModelBundle:
    """Everything the drivers need, built from the model section."""

    kind: str
    Q: object
    beta: np.ndarray
    model: RegimeModel | None
    C1: float | None = None
    moment: dict | None = None
    thresholds: tuple | None = None
    tail_sup: float | None = None
    tail_bounds: dict | None = None
    g: object = None
    spec: object = None

    def partition(self, thresholds=None):
        th = thresholds if thresholds is not None else self.thresholds
        return build_partition(self.beta, (0.0,) if th is None else th, tail_sup=self.tail_sup)


def _coefficients(m, n):
    if "drift" not in m and "sigma" not in m:
        return None
    if "drift" not in m or "sigma" not in m:
        raise ConfigError("drift and sigma must be given together")
    if len(m["drift"]) != n or len(m["sigma"]) != n:
        raise ConfigError(f"drift and sigma need one entry per regime ({n})")
    try:
        return (tuple(Coefficient.from_dict(c) for c in m["drift"]),
                tuple(Coefficient.from_dict(c) for c in m["sigma"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad coefficient: {exc}") from None


def build_model(cfg: RunConfig) -> ModelBundle:
    m = cfg.raw["model"]
    kind = m["kind"]
    if kind == "example2":
        e = example2(m.get("kappa1", 1.0), m.get("kappa2", 0.5), m.get("T", 12), m.get("a2", 2.0), m.get("b1", 1.0))
        moment = {"theta": e.theta_H, "K": e.K_H, "rho_eps": RHO_H_EPS, "tail_theta": e.tail_theta,
                  "tail_K": e.tail_K, "thresholds": e.moment_thresholds}
        return ModelBundle(kind, e.Q, e.beta, e.model(), None, moment,
                           cfg.thresholds or e.thresholds, e.tail_sup, e.tail_bounds, e.g, e.spec)
    try:
        if kind == "finite":
            if "Q" not in m:
                raise ConfigError("finite model needs Q")
            Q = validate_generator(np.asarray(m["Q"], dtype=float))
            spec = g = None
        else:
            if "birth" not in m or "death" not in m:
                raise ConfigError("birth_death model needs birth and death")
            spec = BirthDeathSpec(np.asarray(m["birth"], dtype=float), np.asarray(m["death"], dtype=float))
            Q = spec.generator()
            g = birth_death_g(spec)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad generator: {exc}") from None
    if "beta" not in m:
        raise ConfigError("model needs beta")
    beta = np.asarray(m["beta"], dtype=float)
    if beta.size != Q.size:
        raise ConfigError(f"beta has {beta.size} entries, generator has {Q.size} states")
    coefs = _coefficients(m, Q.size)
    moment = None
    if "moment" in m:
        mo = dict(m["moment"])
        mo["theta"] = np.asarray(mo["theta"], dtype=float)
        mo["K"] = np.asarray(mo["K"], dtype=float)
        if mo["theta"].size != Q.size or mo["K"].size != Q.size:
            raise ConfigError("moment theta and K need one entry per regime")
        mo.setdefault("rho_eps", RHO_H_EPS)
        mo.setdefault("thresholds", cfg.thresholds or (0.0,))
        moment = mo
    model = None
    if coefs is not None:
        model = RegimeModel(coefs[0], coefs[1], Q=Q, beta=tuple(beta.tolist()),
                            theta=None if moment is None else tuple(moment["theta"].tolist()),
                            K=None if moment is None else tuple(moment["K"].tolist()))
    tb = None
    if "tail_bounds" in m:
        tb = {(int(i), int(k)): float(v) for i, k, v in m["tail_bounds"]}
    return ModelBundle(kind, Q, beta, model, m.get("C1"), moment, cfg.thresholds,
                       m.get("tail_sup"), tb, g, spec)


def moment_rho(bundle: ModelBundle):
    return RhoFunction.linear().smoothed(float(bundle.moment["rho_eps"]))
