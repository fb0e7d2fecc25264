"""Fixed-step RK4 method of steps for the pointwise and distributed models.

Delayed states are read from the already computed part of the solution by
dense interpolation (cubic Hermite by default). When a stage needs a state
inside the step being taken, the engine uses

* a quadratic through ``y_{n-1}``, ``y'_{n-1}`` and ``y_n`` while the
  derivative at ``t_n`` is still unknown (first stage), and
* extrapolation of the last cubic Hermite segment afterwards.

At the stage time itself the stage value is used directly, so a zero delay
reads the current state exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .domain import History, HKSystem, Trajectory, interpolate_grid, _hermite
from .errors import DomainError, HistoryUnderflowError, KernelViolationError, StepSizeError

_EPS = 1e-12


class ModelKind(enum.Enum):
    POINTWISE = "pointwise"
    DISTRIBUTED = "distributed"


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size and numerical options.

    ``step`` is an upper bound: the engine uses ``t_end / ceil(t_end / step)``
    so that the final time is a grid point.
    """

    step: float
    interp: str = "hermite"
    quad_rule: str = "trapezoid"
    quad_points_min: int = 3

    def __post_init__(self):
        if not self.step > 0:
            raise StepSizeError("step must be positive")
        if self.interp not in ("hermite", "linear"):
            raise StepSizeError(f"unknown interpolation {self.interp!r}")
        if self.quad_rule not in ("trapezoid", "simpson"):
            raise StepSizeError(f"unknown quadrature rule {self.quad_rule!r}")
        if self.quad_points_min < 3:
            raise StepSizeError("quad_points_min must be at least 3")

    def check_for(self, system: HKSystem, model: ModelKind):
        if model is ModelKind.DISTRIBUTED:
            if system.kernel is None:
                raise DomainError("distributed model needs a kernel")
            tau_min = system.delay.tau_min
            if not tau_min > 0:
                raise DomainError("distributed model needs tau_min > 0")
            if self.step > tau_min / 2 + _EPS:
                raise StepSizeError(
                    f"step {self.step} exceeds tau_min/2 = {tau_min / 2} for the distributed model"
                )


class Window(NamedTuple):
    """Quadrature nodes over ``[t - tau(t), t]`` (lags ascending from 0)."""

    lags: np.ndarray
    weights: np.ndarray  # rule weights times beta(lag)
    mass: float  # discrete h(t)


class Probe(NamedTuple):
    """What the right-hand side and a feedback law see at one stage."""

    t: float
    y: np.ndarray
    delayed: Optional[np.ndarray] = None  # (N+1, d), pointwise model
    window: Optional[Window] = None
    window_states: Optional[np.ndarray] = None  # (m, N+1, d), distributed model


def rule_weights(m: int, spacing: float, rule: str) -> np.ndarray:
    if rule == "simpson":
        if m % 2 == 0:
            raise DomainError("Simpson's rule needs an odd number of points")
        w = np.ones(m)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * spacing / 3.0
    w = np.full(m, spacing)
    w[0] = w[-1] = 0.5 * spacing
    return w


def quadrature_window(system: HKSystem, cfg: IntegratorConfig, t: float) -> Window:
    tau = float(system.delay(t))
    m = max(cfg.quad_points_min, math.ceil(tau / cfg.step - 1e-9) + 1)
    if cfg.quad_rule == "simpson" and m % 2 == 0:
        m += 1
    lags = np.linspace(0.0, tau, m)
    w = rule_weights(m, tau / (m - 1), cfg.quad_rule) * system.kernel(lags)
    mass = float(w.sum())
    if not mass > 0:
        raise KernelViolationError(f"discrete kernel mass at t={t} is {mass}")
    return Window(lags, w, mass)


def pointwise_field(system: HKSystem, y: np.ndarray, yd: np.ndarray) -> np.ndarray:
    """Follower velocities for the pointwise model; row 0 (leader) is zero."""
    p = system.params
    x = y[1:]
    diff = yd[None, 1:, :] - x[:, None, :]  # [i, j] = x_j(t - tau) - x_i(t)
    a = system.influence(np.linalg.norm(diff, axis=-1))
    np.fill_diagonal(a, 0.0)
    out = np.zeros_like(y)
    out[1:] = np.einsum("ij,ijk->ik", a, diff) / p.n_agents
    lead = yd[0][None, :] - x
    out[1:] += p.gamma * system.phi(np.linalg.norm(lead, axis=-1))[:, None] * lead
    return out


def distributed_field(system: HKSystem, y: np.ndarray, window: Window, ys: np.ndarray) -> np.ndarray:
    """Follower velocities for the distributed model; row 0 (leader) is zero.

    ``ys[k]`` holds all agents at time ``t - window.lags[k]``.
    """
    p = system.params
    x = y[1:]
    w = window.weights
    diff = ys[:, None, 1:, :] - x[None, :, None, :]  # [k, i, j]
    a = system.influence(np.linalg.norm(diff, axis=-1))
    idx = np.arange(p.n_agents)
    a[:, idx, idx] = 0.0
    out = np.zeros_like(y)
    out[1:] = np.einsum("k,kij,kijd->id", w, a, diff) / (p.n_agents * window.mass)
    lead = ys[:, None, 0, :] - x[None, :, :]  # [k, i]
    ph = system.phi(np.linalg.norm(lead, axis=-1))
    out[1:] += p.gamma * np.einsum("k,ki,kid->id", w, ph, lead) / window.mass
    return out


class _Buffer:
    """Growing solution record with the stage-aware lookup rules."""

    def __init__(self, hist_times, hist_states, hist_derivs, n_forward, interp):
        nh = hist_times.size
        total = nh + n_forward
        shape = (total,) + hist_states.shape[1:]
        self.times = np.empty(total)
        self.states = np.empty(shape)
        self.derivs = np.empty(shape)
        self.times[:nh] = hist_times
        self.states[:nh] = hist_states
        self.derivs[:nh] = hist_derivs
        self.origin = nh - 1
        self.n_states = nh  # samples with a known state
        self.n_done = nh  # samples with a known derivative
        self.interp = interp

    def lookup(self, s, t_stage, y_stage):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s)
        out = np.empty((flat.size,) + y_stage.shape)
        nd = self.n_done
        t_done = self.times[nd - 1]
        grid = flat <= t_done + _EPS
        stage = (flat >= t_stage - _EPS) & ~grid
        rest = ~(grid | stage)
        if np.any(grid):
            out[grid] = interpolate_grid(
                self.times[:nd], self.states[:nd], self.derivs[:nd], flat[grid], self.interp
            )
        if np.any(stage):
            out[stage] = y_stage
        if np.any(rest):
            out[rest] = self._inside_step(flat[rest])
        return out[0] if s.ndim == 0 else out

    def _inside_step(self, s):
        nd = self.n_done
        if self.n_states > nd:
            # derivative at the newest sample not known yet
            t0, t1 = self.times[nd - 1], self.times[nd]
            y0, y1, d0 = self.states[nd - 1], self.states[nd], self.derivs[nd - 1]
            dt = t1 - t0
            th = ((s - t0) / dt)[:, None, None]
            if self.interp == "linear" or t0 < -_EPS:
                return (1 - th) * y0 + th * y1
            return y0 + th * dt * d0 + th * th * (y1 - y0 - dt * d0)
        t0, t1 = self.times[nd - 2], self.times[nd - 1]
        y1, d1 = self.states[nd - 1], self.derivs[nd - 1]
        if self.interp == "linear" or t0 < -_EPS:
            return y1 + (s - t1)[:, None, None] * d1
        dt = t1 - t0
        th = ((s - t0) / dt)[:, None, None]
        return _hermite(self.states[nd - 2], y1, self.derivs[nd - 2], d1, dt, th)


class IntegrationContext:
    """Read access for policies during an integration."""

    def __init__(self, system, cfg, model, step, buffer):
        self.system = system
        self.cfg = cfg
        self.model = model
        self.step = step
        self._buf = buffer

    @property
    def times(self):
        return self._buf.times[: self._buf.n_states]

    @property
    def states(self):
        return self._buf.states[: self._buf.n_states]


def _history_grid(history: History, step: float, tau_max: float) -> np.ndarray:
    if history.start > -tau_max + _EPS:
        raise HistoryUnderflowError(
            f"initial history starts at {history.start}, needs to cover [-{tau_max}, 0]"
        )
    back = -np.arange(0, math.ceil(-history.start / step - 1e-9) + 1) * step
    back = back[back > history.start]
    return np.union1d(history.times, back)


def make_probe(system, cfg, model, t, y, lookup):
    """Gather the delayed information needed at stage ``(t, y)``."""
    if model is ModelKind.POINTWISE:
        s = t - float(system.delay(t))
        return Probe(t, y, delayed=lookup(s))
    win = quadrature_window(system, cfg, t)
    return Probe(t, y, window=win, window_states=lookup(t - win.lags))


def field(system, model, probe: Probe, u) -> np.ndarray:
    if model is ModelKind.POINTWISE:
        dy = pointwise_field(system, probe.y, probe.delayed)
    else:
        dy = distributed_field(system, probe.y, probe.window, probe.window_states)
    dy[0] = u
    return dy


def integrate(
    system: HKSystem,
    policy,
    history: History,
    t_end: float,
    cfg: IntegratorConfig,
    model: ModelKind = ModelKind.POINTWISE,
) -> Trajectory:
    """Integrate from the initial history up to ``t_end``.

    ``policy`` supplies the leader control (see :mod:`hkdelay.controllers`).
    Derivatives and controls are stored at every grid point.
    """
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    cfg.check_for(system, model)
    p = system.params
    if history.n_agents != p.n_agents or history.dim != p.dim:
        raise DomainError(
            f"history has N={history.n_agents}, d={history.dim}; params say N={p.n_agents}, d={p.dim}"
        )
    n_steps = math.ceil(t_end / cfg.step - 1e-9)
    h = t_end / n_steps
    hist_t = _history_grid(history, h, system.delay.tau_max)
    buf = _Buffer(hist_t, history.at(hist_t), history.slopes(hist_t), n_steps, cfg.interp)
    ctx = IntegrationContext(system, cfg, model, h, buf)

    def rhs(t, y, ctrl_state):
        probe = make_probe(system, cfg, model, t, y, lambda s: buf.lookup(s, t, y))
        return field(system, model, probe, policy.control(ctrl_state, ctx, probe))

    state = policy.initial_state(ctx)
    events = []
    last_phase = getattr(state, "label", None)
    if last_phase is not None:
        events.append((0.0,) + last_phase)
    y = buf.states[buf.origin].copy()
    controls = np.empty((buf.times.size, p.dim))
    controls[: buf.origin] = buf.derivs[: buf.origin, 0]
    for n in range(n_steps + 1):
        t = n * h
        idx = buf.origin + n
        state = policy.advance(state, ctx, t, y)
        label = getattr(state, "label", None)
        if label is not None and label != last_phase:
            events.append((t,) + label)
            last_phase = label
        k1 = rhs(t, y, state)
        buf.derivs[idx] = k1
        controls[idx] = k1[0]
        buf.n_done = idx + 1
        if n == n_steps:
            break
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, state)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, state)
        k4 = rhs(t + h, y + h * k3, state)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        buf.times[idx + 1] = (n + 1) * h
        buf.states[idx + 1] = y
        buf.n_states = idx + 2
    return Trajectory(buf.times, buf.states, buf.derivs, controls, cfg.interp, tuple(events))


def lookup(traj: Trajectory, s):
    """Interpolated states of all agents at time(s) ``s``."""
    return traj.lookup(s)


def _probe_from_trajectory(traj, system, cfg, model, t):
    y = traj.lookup(t)
    return make_probe(system, cfg, model, t, y, traj.lookup)


def rhs_pointwise(traj: Trajectory, t: float, system: HKSystem, u_value) -> np.ndarray:
    """Right-hand side of the pointwise model at time ``t`` of a recorded trajectory."""
    probe = _probe_from_trajectory(traj, system, None, ModelKind.POINTWISE, t)
    return field(system, ModelKind.POINTWISE, probe, np.asarray(u_value, dtype=float))


def rhs_distributed(
    traj: Trajectory, t: float, system: HKSystem, u_value, cfg: IntegratorConfig
) -> np.ndarray:
    """Right-hand side of the distributed model, window integrals by ``cfg.quad_rule``."""
    if system.kernel is None:
        raise DomainError("distributed model needs a kernel")
    probe = _probe_from_trajectory(traj, system, cfg, ModelKind.DISTRIBUTED, t)
    return field(system, ModelKind.DISTRIBUTED, probe, np.asarray(u_value, dtype=float))
