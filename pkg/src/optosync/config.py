"""Scenario and sweep descriptions: YAML loading, validation, round-tripping.

A scenario file pins everything a run needs: physical parameters (with the
bath given either as an occupation number or a temperature, never both), the
control law, the integration plan, the mapping pair used for error reporting,
the RNG seed and the controller noise level.  Validation failures raise
ConfigError carrying the offending key path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .dynamics import IntegratorConfig
from .measures import ConstantShift, GeneralizedMapping, Identity, TimeShift
from .model import (
    OMEGA_REF,
    ConstantError,
    ControlLaw,
    NoControl,
    SystemParams,
    TimeDelay,
    mean_phonon_number,
)

__all__ = ["ConfigError", "Scenario", "SweepSpec", "load_scenario", "load_sweep",
           "scenario_from_dict", "sweep_from_dict"]

SWEEP_AXES = ("c_minus", "tau", "c_max", "nbar")


class ConfigError(ValueError):
    """Invalid or contradictory configuration; names the key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Scenario:
    """One fully specified simulation."""

    name: str
    params: SystemParams
    law: ControlLaw
    integrator: IntegratorConfig
    h1: GeneralizedMapping
    h2: GeneralizedMapping
    seed: int = 0
    noise_sigma: float = 0.0
    temperature_K: Optional[float] = None  # set when nbar came from a temperature

    @property
    def tail_window(self) -> tuple[float, float]:
        """Post-transient window used for all time averages."""
        return (self.integrator.t_end / 2.0, self.integrator.t_end)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name}
        p = self.params._asdict()
        if self.temperature_K is not None:
            del p["nbar"]
            p["temperature_K"] = self.temperature_K
        d["params"] = p
        d["control"] = _law_to_dict(self.law)
        d["integrator"] = {
            "dt": self.integrator.dt,
            "t_end": self.integrator.t_end,
            "output_stride": self.integrator.output_stride,
            "record_covariance": self.integrator.record_covariance,
        }
        d["mapping"] = {"h1": _mapping_to_obj(self.h1), "h2": _mapping_to_obj(self.h2)}
        d["seed"] = self.seed
        d["noise_sigma"] = self.noise_sigma
        return d


@dataclass(frozen=True)
class SweepSpec:
    """A scan of one scalar axis on top of a base scenario."""

    base: Scenario
    axis: str
    values: tuple[float, ...]
    replicas: int = 1

    def point(self, value: float) -> Scenario:
        """Base scenario with the axis set to ``value`` (name suffixed)."""
        sc = self.base
        name = f"{sc.name}_{self.axis}_{value:g}"
        if self.axis == "nbar":
            return replace(
                sc,
                name=name,
                params=sc.params._replace(nbar=value),
                temperature_K=None,
            )
        if self.axis == "c_minus":
            law = sc.law._replace(c_minus=value)
            h2 = ConstantShift(value) if isinstance(sc.h2, ConstantShift) else sc.h2
            return replace(sc, name=name, law=law, h2=h2)
        if self.axis == "tau":
            law = sc.law._replace(tau=value)
            h2 = TimeShift(value) if isinstance(sc.h2, TimeShift) else sc.h2
            return replace(sc, name=name, law=law, h2=h2)
        if self.axis == "c_max":
            return replace(sc, name=name, law=sc.law._replace(c_max=value))
        raise ConfigError("sweep.axis", f"unknown axis {self.axis!r}")


# --- dict <-> object ------------------------------------------------------------


def _require(d: dict, key: str, path: str) -> Any:
    if key not in d:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return d[key]


def _as_float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _reject_unknown(d: dict, allowed: set[str], path: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")


def _params_from_dict(d: Any, path: str) -> tuple[SystemParams, Optional[float]]:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping of parameter names to numbers")
    base_keys = {"delta", "omega_m1", "omega_m2", "g1", "g2", "E",
                 "kappa", "gamma1", "gamma2"}
    _reject_unknown(d, base_keys | {"nbar", "temperature_K"}, path)
    has_nbar = "nbar" in d
    has_temp = "temperature_K" in d
    if has_nbar == has_temp:
        raise ConfigError(
            f"{path}.nbar", "exactly one of nbar / temperature_K must be given"
        )
    kwargs = {k: _as_float(_require(d, k, path), f"{path}.{k}") for k in base_keys}
    temperature = None
    if has_temp:
        temperature = _as_float(d["temperature_K"], f"{path}.temperature_K")
        if temperature <= 0.0:
            raise ConfigError(f"{path}.temperature_K", "must be > 0")
        kwargs["nbar"] = mean_phonon_number(temperature, OMEGA_REF)
    else:
        kwargs["nbar"] = _as_float(d["nbar"], f"{path}.nbar")
    params = SystemParams(**kwargs)
    try:
        params.validate()
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc
    return params, temperature


def _law_from_dict(d: Any, path: str) -> ControlLaw:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping with a 'law' key")
    kind = _require(d, "law", path)
    fields = {
        "none": set(),
        "constant_error": {"k", "c_minus"},
        "time_delay": {"k", "tau", "c_max"},
    }
    if kind not in fields:
        raise ConfigError(f"{path}.law", f"unknown law {kind!r}")
    _reject_unknown(d, fields[kind] | {"law"}, path)
    try:
        if kind == "none":
            return NoControl()
        if kind == "constant_error":
            law: ControlLaw = ConstantError(
                k=_as_float(_require(d, "k", path), f"{path}.k"),
                c_minus=_as_float(_require(d, "c_minus", path), f"{path}.c_minus"),
            )
        else:
            law = TimeDelay(
                k=_as_float(_require(d, "k", path), f"{path}.k"),
                tau=_as_float(_require(d, "tau", path), f"{path}.tau"),
                c_max=_as_float(_require(d, "c_max", path), f"{path}.c_max"),
            )
        law.validate()
        return law
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _law_to_dict(law: ControlLaw) -> dict:
    if isinstance(law, NoControl):
        return {"law": "none"}
    if isinstance(law, ConstantError):
        return {"law": "constant_error", "k": law.k, "c_minus": law.c_minus}
    return {"law": "time_delay", "k": law.k, "tau": law.tau, "c_max": law.c_max}


def _mapping_from_obj(obj: Any, path: str) -> GeneralizedMapping:
    if obj == "identity":
        return Identity()
    if isinstance(obj, dict) and len(obj) == 1:
        (kind, value), = obj.items()
        value = _as_float(value, f"{path}.{kind}")
        if kind == "shift":
            return ConstantShift(value)
        if kind == "delay":
            if value < 0.0:
                raise ConfigError(f"{path}.delay", "must be >= 0")
            return TimeShift(value)
    raise ConfigError(path, f"expected 'identity', {{shift: c}} or {{delay: tau}}, got {obj!r}")


def _mapping_to_obj(h: GeneralizedMapping):
    if isinstance(h, Identity):
        return "identity"
    if isinstance(h, ConstantShift):
        return {"shift": h.c}
    return {"delay": h.tau}


def _default_mappings(law: ControlLaw) -> tuple[GeneralizedMapping, GeneralizedMapping]:
    if isinstance(law, ConstantError):
        return Identity(), ConstantShift(law.c_minus)
    if isinstance(law, TimeDelay):
        return Identity(), TimeShift(law.tau)
    return Identity(), Identity()


def scenario_from_dict(d: Any, path: str = "scenario") -> Scenario:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping")
    _reject_unknown(
        d, {"name", "params", "control", "integrator", "mapping", "seed", "noise_sigma"}, path
    )
    name = _require(d, "name", path)
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{path}.name", "must be a non-empty string")
    params, temperature = _params_from_dict(_require(d, "params", path), f"{path}.params")
    law = _law_from_dict(_require(d, "control", path), f"{path}.control")
    if not isinstance(law, NoControl) and params.gamma1 != params.gamma2:
        raise ConfigError(
            f"{path}.params.gamma2",
            "the control laws assume equal mechanical dampings (gamma1 == gamma2)",
        )

    integ = d.get("integrator", {})
    if not isinstance(integ, dict):
        raise ConfigError(f"{path}.integrator", "expected a mapping")
    _reject_unknown(integ, {"dt", "t_end", "output_stride", "record_covariance"},
                    f"{path}.integrator")
    cfg = IntegratorConfig(
        dt=_as_float(integ.get("dt", 1e-3), f"{path}.integrator.dt"),
        t_end=_as_float(integ.get("t_end", 500.0), f"{path}.integrator.t_end"),
        output_stride=int(integ.get("output_stride", 100)),
        record_covariance=bool(integ.get("record_covariance", True)),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}.integrator", str(exc)) from exc

    mapping = d.get("mapping")
    if mapping is None:
        h1, h2 = _default_mappings(law)
    else:
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path}.mapping", "expected a mapping")
        _reject_unknown(mapping, {"h1", "h2"}, f"{path}.mapping")
        h1 = _mapping_from_obj(mapping.get("h1", "identity"), f"{path}.mapping.h1")
        h2 = _mapping_from_obj(mapping.get("h2", "identity"), f"{path}.mapping.h2")

    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"{path}.seed", f"expected an integer, got {seed!r}")
    sigma = _as_float(d.get("noise_sigma", 0.0), f"{path}.noise_sigma")
    if sigma < 0.0:
        raise ConfigError(f"{path}.noise_sigma", "must be >= 0")

    return Scenario(
        name=name,
        params=params,
        law=law,
        integrator=cfg,
        h1=h1,
        h2=h2,
        seed=seed,
        noise_sigma=sigma,
        temperature_K=temperature,
    )


def sweep_from_dict(d: Any, path: str = "sweep") -> SweepSpec:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping")
    _reject_unknown(d, {"scenario", "axis", "values", "replicas"}, path)
    base = scenario_from_dict(_require(d, "scenario", path), f"{path}.scenario")
    axis = _require(d, "axis", path)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"{path}.axis", f"must be one of {SWEEP_AXES}, got {axis!r}")
    if axis == "c_minus" and not isinstance(base.law, ConstantError):
        raise ConfigError(f"{path}.axis", "c_minus sweep needs a constant_error law")
    if axis in ("tau", "c_max") and not isinstance(base.law, TimeDelay):
        raise ConfigError(f"{path}.axis", f"{axis} sweep needs a time_delay law")
    raw_values = _require(d, "values", path)
    if not isinstance(raw_values, (list, tuple)) or not raw_values:
        raise ConfigError(f"{path}.values", "expected a non-empty list of numbers")
    values = tuple(_as_float(v, f"{path}.values[{i}]") for i, v in enumerate(raw_values))
    for i, v in enumerate(values):
        if not math.isfinite(v):
            raise ConfigError(f"{path}.values[{i}]", "must be finite")
    replicas = d.get("replicas", 1)
    if isinstance(replicas, bool) or not isinstance(replicas, int) or replicas < 1:
        raise ConfigError(f"{path}.replicas", f"expected an integer >= 1, got {replicas!r}")
    spec = SweepSpec(base=base, axis=axis, values=values, replicas=replicas)
    for v in values:  # fail fast on values the law/params would reject
        try:
            pt = spec.point(v)
            if hasattr(pt.law, "validate"):
                pt.law.validate()
            pt.params.validate()
        except ValueError as exc:
            raise ConfigError(f"{path}.values", f"value {v:g}: {exc}") from exc
    return spec


def _load_yaml(path: str | Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found")
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}")


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file."""
    return scenario_from_dict(_load_yaml(path), "scenario")


def load_sweep(path: str | Path) -> SweepSpec:
    """Parse and validate a sweep file."""
    return sweep_from_dict(_load_yaml(path), "sweep")
