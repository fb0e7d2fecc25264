"""Scenario configuration: YAML schema, validation, presets and building.

A configuration is a nested mapping. Unknown keys are rejected with the
dotted path of the offending entry. See ``README.md`` for the full schema.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import yaml

from . import controllers as ctl
from .domain import (
    History,
    HKSystem,
    ModelParams,
    constant_delay,
    cucker_smale,
    hat_kernel,
    linear_ramp,
    sinusoidal_delay,
    table_delay,
    table_kernel,
    uniform_kernel,
)
from .engine import IntegratorConfig, ModelKind
from .errors import ConfigError, DomainError, NumericalError

SECTION6_PARAMS = {
    "n_agents": 50,
    "dim": 1,
    "gamma": 1.0,
    "control_bound": 1.0,
    "a_inner": 1.0,
    "a_outer": 2.0,
}

_TOP = {
    "model", "params", "influence", "phi", "delay", "kernel", "policy", "initial",
    "t_end", "step", "interp", "quad_rule", "quad_points_min", "seed", "lyapunov_weight",
}
_PARAMS = set(SECTION6_PARAMS) | {"lipschitz_phi"}
_KINDS = {
    "influence": {"linear_ramp": set()},
    "phi": {"cucker_smale": {"exponent"}},
    "delay": {
        "constant": {"tau"},
        "sinusoidal": {"mean", "amplitude", "omega"},
        "table": {"times", "values"},
    },
    "kernel": {
        "uniform": {"height"},
        "hat": {"center", "width"},
        "table": {"s", "values"},
    },
    "policy": {
        "zero": set(),
        "consensus": set(),
        "steer": {"target"},
        "waypoint": {"target", "dwell", "spacing", "settle_radius", "pass_radius", "max_phase_time"},
    },
    "initial": {
        "section6": {"leader", "shift"},
        "constant": {"leader", "followers"},
        "table": {"times", "states"},
        "random": {"radius", "center"},
    },
}
_REQUIRED = {
    ("delay", "constant"): {"tau"},
    ("delay", "sinusoidal"): {"mean", "amplitude"},
    ("delay", "table"): {"times", "values"},
    ("kernel", "hat"): {"center", "width"},
    ("kernel", "table"): {"s", "values"},
    ("policy", "steer"): {"target"},
    ("policy", "waypoint"): {"target"},
    ("initial", "constant"): {"leader", "followers"},
    ("initial", "table"): {"times", "states"},
}

DEFAULTS = {
    "model": "pointwise",
    "influence": {"kind": "linear_ramp"},
    "phi": {"kind": "cucker_smale"},
    "delay": {"kind": "constant", "tau": 1.0},
    "policy": {"kind": "consensus"},
    "initial": {"kind": "section6"},
    "t_end": 40.0,
    "step": 0.01,
    "interp": "hermite",
    "quad_rule": "trapezoid",
    "quad_points_min": 3,
    "seed": 0,
}


def _number(path, value, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _vector(path, value, dim):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a vector, got {value!r}") from None
    if arr.shape != (dim,):
        raise ConfigError(path, f"expected a vector of length {dim}, got shape {arr.shape}")
    return arr


def _descriptor(section, raw):
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected a mapping")
    kind = raw.get("kind")
    kinds = _KINDS[section]
    if kind not in kinds:
        raise ConfigError(f"{section}.kind", f"expected one of {sorted(kinds)}, got {kind!r}")
    for key in raw:
        if key != "kind" and key not in kinds[kind]:
            raise ConfigError(f"{section}.{key}", f"unknown key for kind {kind!r}")
    for key in _REQUIRED.get((section, kind), ()):
        if key not in raw:
            raise ConfigError(f"{section}.{key}", "missing")
    return dict(raw)


@dataclass(frozen=True)
class Scenario:
    """A built, ready-to-integrate scenario."""

    system: HKSystem
    history: History
    policy: Any
    model: ModelKind
    integrator: IntegratorConfig
    t_end: float
    lyapunov_weight: Optional[float] = None


class ScenarioConfig:
    """Validated scenario description.

    ``data`` holds the canonical nested mapping (defaults filled in), which is
    what :meth:`to_dict` returns and what YAML round-trips.
    """

    def __init__(self, data: dict):
        self.data = self._validate(data)

    # ---------------------------------------------------------- validation

    @staticmethod
    def _validate(raw: dict) -> dict:
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "configuration must be a mapping")
        for key in raw:
            if key not in _TOP:
                raise ConfigError(str(key), "unknown key")
        data = copy.deepcopy(DEFAULTS)
        data.update(copy.deepcopy(raw))
        if data["model"] not in ("pointwise", "distributed"):
            raise ConfigError("model", f"expected 'pointwise' or 'distributed', got {data['model']!r}")
        params = dict(SECTION6_PARAMS)
        for key, value in (raw.get("params") or {}).items():
            if key not in _PARAMS:
                raise ConfigError(f"params.{key}", "unknown key")
            params[key] = value
        for key in ("n_agents", "dim"):
            params[key] = _number(f"params.{key}", params[key], positive=True, integer=True)
        for key in ("gamma", "control_bound", "a_inner", "a_outer", "lipschitz_phi"):
            if key in params:
                params[key] = _number(f"params.{key}", params[key], positive=True)
        data["params"] = params
        for section in ("influence", "phi", "delay", "policy", "initial"):
            data[section] = _descriptor(section, data[section])
        if data["model"] == "distributed":
            data["kernel"] = _descriptor("kernel", data.get("kernel") or {"kind": "uniform"})
        elif data.get("kernel") is not None:
            data["kernel"] = _descriptor("kernel", data["kernel"])
        else:
            data.pop("kernel", None)
        data["t_end"] = _number("t_end", data["t_end"], positive=True)
        data["step"] = _number("step", data["step"], positive=True)
        data["quad_points_min"] = _number("quad_points_min", data["quad_points_min"], integer=True)
        data["seed"] = _number("seed", data["seed"], integer=True)
        if data.get("lyapunov_weight") is not None:
            data["lyapunov_weight"] = _number("lyapunov_weight", data["lyapunov_weight"], positive=True)
        if data["interp"] not in ("hermite", "linear"):
            raise ConfigError("interp", "expected 'hermite' or 'linear'")
        if data["quad_rule"] not in ("trapezoid", "simpson"):
            raise ConfigError("quad_rule", "expected 'trapezoid' or 'simpson'")
        init = data["initial"]
        if init["kind"] == "section6" and (params["n_agents"], params["dim"]) != (50, 1):
            raise ConfigError("initial.kind", "section6 data needs n_agents=50 and dim=1")
        return data

    # -------------------------------------------------------- (de)serialise

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<yaml>", str(exc)) from None
        return cls(raw or {})

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def dump(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_yaml())

    def with_value(self, path: str, value) -> "ScenarioConfig":
        """Copy with one dotted entry replaced."""
        data = self.to_dict()
        node = data
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
        return ScenarioConfig(data)

    # ------------------------------------------------------------- building

    @property
    def model(self) -> ModelKind:
        return ModelKind(self.data["model"])

    def build(self) -> Scenario:
        try:
            return self._build()
        except ConfigError:
            raise
        except NumericalError:
            raise
        except DomainError as exc:
            raise ConfigError(_guess_field(exc), str(exc)) from exc

    def _build(self) -> Scenario:
        d = self.data
        p = d["params"]
        phi_d = d["phi"]
        phi = cucker_smale(float(phi_d.get("exponent", 1.5)))
        params = ModelParams(
            n_agents=p["n_agents"],
            dim=p["dim"],
            gamma=p["gamma"],
            control_bound=p["control_bound"],
            a_inner=p["a_inner"],
            a_outer=p["a_outer"],
            lipschitz_phi=p.get("lipschitz_phi", phi.lipschitz),
        )
        influence = linear_ramp(params.a_inner, params.a_outer)
        delay = _build_delay(d["delay"])
        kernel = None
        if "kernel" in d:
            kernel = _build_kernel(d["kernel"], delay)
        system = HKSystem(params, influence, phi, delay, kernel)
        history = _build_history(d["initial"], params, delay.tau_max, d["seed"])
        policy = _build_policy(d["policy"], params, self.model)
        integrator = IntegratorConfig(d["step"], d["interp"], d["quad_rule"], d["quad_points_min"])
        return Scenario(
            system, history, policy, self.model, integrator, d["t_end"], d.get("lyapunov_weight")
        )


def _guess_field(exc) -> str:
    text = str(exc).lower()
    for key in ("kernel", "delay", "tau", "phi", "history", "target", "step"):
        if key in text:
            return {"tau": "delay", "history": "initial", "target": "policy"}.get(key, key)
    return "params"


def _build_delay(d):
    kind = d["kind"]
    if kind == "constant":
        return constant_delay(_number("delay.tau", d["tau"], positive=True))
    if kind == "sinusoidal":
        return sinusoidal_delay(
            _number("delay.mean", d["mean"], positive=True),
            _number("delay.amplitude", d["amplitude"]),
            _number("delay.omega", d.get("omega", 1.0)),
        )
    return table_delay(d["times"], d["values"])


def _build_kernel(d, delay):
    kind = d["kind"]
    if kind == "uniform":
        return uniform_kernel(delay.tau_max, delay.tau_min, _number("kernel.height", d.get("height", 1.0), positive=True))
    if kind == "hat":
        return hat_kernel(
            _number("kernel.center", d["center"]),
            _number("kernel.width", d["width"], positive=True),
            delay.tau_max,
            delay.tau_min,
        )
    return table_kernel(d["s"], d["values"], delay.tau_min)


def alternating_state(leader=0.0, shift=0.0) -> np.ndarray:
    """Leader plus the 50 alternating followers ``(-1)^i i / 50`` (shape ``(51, 1)``)."""
    x = np.array([leader] + [(-1) ** i * i / 50 for i in range(1, 51)], dtype=float)
    return (x + shift)[:, None]


def _build_history(d, params, tau_max, seed):
    kind = d["kind"]
    n, dim = params.n_agents, params.dim
    if kind == "section6":
        return History.constant(
            alternating_state(
                _number("initial.leader", d.get("leader", 0.0)),
                _number("initial.shift", d.get("shift", 0.0)),
            ),
            tau_max,
        )
    if kind == "constant":
        leader = _vector("initial.leader", d["leader"], dim)
        followers = np.asarray(d["followers"], dtype=float).reshape(-1, dim)
        if followers.shape[0] != n:
            raise ConfigError("initial.followers", f"expected {n} followers, got {followers.shape[0]}")
        return History.constant(np.vstack([leader, followers]), tau_max)
    if kind == "random":
        rng = np.random.default_rng(seed)
        radius = _number("initial.radius", d.get("radius", 1.0), positive=True)
        center = _vector("initial.center", d.get("center", [0.0] * dim), dim)
        return History.constant(center + random_ball(rng, n + 1, dim, radius), tau_max)
    times = np.asarray(d["times"], dtype=float)
    states = np.asarray(d["states"], dtype=float)
    if states.ndim == 2 and dim == 1:
        states = states[..., None]
    if states.shape != (times.size, n + 1, dim):
        raise ConfigError("initial.states", f"expected shape {(times.size, n + 1, dim)}, got {states.shape}")
    if times[0] > -tau_max + 1e-12:
        raise ConfigError("initial.times", f"history must start at or before -{tau_max}")
    return History(times, states)


def random_ball(rng, count, dim, radius):
    """``count`` points uniformly distributed in the ``dim``-ball of ``radius``."""
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / dim)
    return v * r[:, None]


def _build_policy(d, params, model):
    kind = d["kind"]
    if kind == "zero":
        return ctl.ZeroControl()
    if kind == "consensus":
        return ctl.consensus_for(model)
    target = tuple(_vector("policy.target", d["target"], params.dim))
    if kind == "steer":
        return ctl.Steer(target)
    opts = {}
    for key in ("dwell", "spacing", "settle_radius", "pass_radius", "max_phase_time"):
        if key in d:
            opts[key] = _number(f"policy.{key}", d[key], positive=True)
    return ctl.WaypointController(target, **opts)


# ------------------------------------------------------------------ presets


def fig1_config(tau: float = 1.0) -> ScenarioConfig:
    """Consensus control on the 50-agent data with constant delay ``tau``."""
    return ScenarioConfig(
        {
            "model": "pointwise",
            "delay": {"kind": "constant", "tau": float(tau)},
            "policy": {"kind": "consensus"},
            "initial": {"kind": "section6"},
            "t_end": float(max(40.0, 12.0 * tau)),
            "step": 0.01 if tau < 10 else 0.05,
        }
    )


def fig2_config(tau: float = 1.0, target: float = 4.0, shift: float = 0.0) -> ScenarioConfig:
    """Waypoint steering of the 50-agent data to ``target``."""
    return ScenarioConfig(
        {
            "model": "pointwise",
            "delay": {"kind": "constant", "tau": float(tau)},
            "policy": {"kind": "waypoint", "target": [float(target + shift)]},
            "initial": {"kind": "section6", "shift": float(shift)},
            "t_end": 100.0,
            "step": 0.01 if tau < 10 else 0.05,
        }
    )


PRESETS = {"fig1": fig1_config, "fig2": fig2_config}
