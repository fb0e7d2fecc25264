"""Leader control laws.

A policy is an immutable object with three methods used by the engine:

``initial_state(ctx)``
    controller state at ``t = 0`` (``None`` for memoryless laws);
``advance(state, ctx, t, y)``
    called once at every grid point, returns the (possibly new) state;
``control(state, ctx, probe)``
    the control value at one Runge-Kutta stage.

Every law returns controls with ``|u| <= M``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .domain import HKSystem, Trajectory
from .engine import IntegratorConfig, ModelKind, Probe, make_probe
from .errors import CertificateViolationError, ControllerTimeoutError, DomainError


def _clip_to_ball(u: np.ndarray, bound: float) -> np.ndarray:
    # guards only against round-off: the laws satisfy |u| <= M analytically
    n = float(np.linalg.norm(u))
    if n > bound:
        u = u * (bound / n)
        while float(np.linalg.norm(u)) > bound:
            u = u * (1.0 - 2.0**-52)
    return u


def farthest_follower(y: np.ndarray) -> int:
    """0-based follower index of ``max_i |x_i - x_0|``, lowest index on ties."""
    return int(np.argmax(np.linalg.norm(y[1:] - y[0], axis=-1)))


def _alpha(phi_p: float, total: float, n: int, gamma: float, bound: float) -> float:
    first = phi_p / n
    if total > 0:
        return 0.5 * min(first, 2.0 * bound / (gamma * total))
    return 0.5 * first


def consensus_pointwise_control(system: HKSystem, y: np.ndarray, yd: np.ndarray):
    """Saturated consensus feedback from current leader and delayed followers.

    Returns ``(u, alpha)``.
    """
    p = system.params
    rel = yd[1:] - y[0]  # x_j(t - tau) - x_0(t)
    dist = np.linalg.norm(rel, axis=-1)
    k = farthest_follower(y)
    alpha = _alpha(float(system.phi(dist[k])), float(dist.sum()), p.n_agents, p.gamma, p.control_bound)
    u = p.gamma * alpha * (system.phi(dist)[:, None] * rel).sum(axis=0)
    return _clip_to_ball(u, p.control_bound), alpha


def distributed_alphas(system: HKSystem, y: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Saturation coefficient at every window sample ``ys[k]``."""
    p = system.params
    rel = ys[:, 1:, :] - y[0]  # [k, j]
    dist = np.linalg.norm(rel, axis=-1)
    k = farthest_follower(y)
    first = system.phi(dist[:, k]) / p.n_agents
    total = dist.sum(axis=1)
    with np.errstate(divide="ignore"):
        second = np.where(total > 0, 2.0 * p.control_bound / (p.gamma * total), np.inf)
    return 0.5 * np.minimum(first, second)


def consensus_distributed_control(system: HKSystem, y, window, ys):
    """Kernel-averaged saturated feedback; returns ``(u, alphas)``."""
    p = system.params
    rel = ys[:, 1:, :] - y[0]
    dist = np.linalg.norm(rel, axis=-1)
    alphas = distributed_alphas(system, y, ys)
    inner = alphas[:, None] * np.einsum("kj,kjd->kd", system.phi(dist), rel)
    u = p.gamma * (window.weights @ inner) / window.mass
    return _clip_to_ball(u, p.control_bound), alphas


def u_steer(x0_now, xi, bound: float, dead_band: Optional[float] = None) -> np.ndarray:
    """Bang-bang steering of the leader toward ``xi`` at speed ``bound``.

    Inside the dead band (default ``1e-6 * max(1, |xi|)``) the control is zero.
    """
    x0_now = np.asarray(x0_now, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if dead_band is None:
        dead_band = steer_dead_band(xi)
    gap = xi - x0_now
    dist = float(np.linalg.norm(gap))
    if dist <= dead_band:
        return np.zeros_like(gap)
    return _clip_to_ball(bound * gap / dist, bound)


def steer_dead_band(xi) -> float:
    return 1e-6 * max(1.0, float(np.linalg.norm(xi)))


def _held_steer(x0_now, xi, bound, step):
    """Control held over one step: full speed, or exactly the remaining gap."""
    u = u_steer(x0_now, xi, bound)
    gap = float(np.linalg.norm(np.asarray(xi) - x0_now))
    if gap < bound * step and gap > 0 and np.any(u):
        u = u * (gap / (bound * step))
    return u


# ---------------------------------------------------------------- policies


@dataclass(frozen=True)
class ZeroControl:
    def initial_state(self, ctx):
        return None

    def advance(self, state, ctx, t, y):
        return state

    def control(self, state, ctx, probe):
        return np.zeros(ctx.system.params.dim)


@dataclass(frozen=True)
class PointwiseConsensus:
    def initial_state(self, ctx):
        if ctx.model is not ModelKind.POINTWISE:
            raise DomainError("pointwise consensus control needs the pointwise model")
        return None

    def advance(self, state, ctx, t, y):
        return state

    def control(self, state, ctx, probe):
        return consensus_pointwise_control(ctx.system, probe.y, probe.delayed)[0]


@dataclass(frozen=True)
class DistributedConsensus:
    def initial_state(self, ctx):
        if ctx.model is not ModelKind.DISTRIBUTED:
            raise DomainError("distributed consensus control needs the distributed model")
        return None

    def advance(self, state, ctx, t, y):
        return state

    def control(self, state, ctx, probe):
        return consensus_distributed_control(
            ctx.system, probe.y, probe.window, probe.window_states
        )[0]


def consensus_for(model: ModelKind):
    return PointwiseConsensus() if model is ModelKind.POINTWISE else DistributedConsensus()


@dataclass(frozen=True)
class SteerState:
    held: np.ndarray


@dataclass(frozen=True)
class Steer:
    """Drive the leader to ``target`` with sample-and-hold bang-bang control."""

    target: tuple

    def initial_state(self, ctx):
        return SteerState(np.zeros(ctx.system.params.dim))

    def advance(self, state, ctx, t, y):
        p = ctx.system.params
        return SteerState(_held_steer(y[0], np.asarray(self.target), p.control_bound, ctx.step))

    def control(self, state, ctx, probe):
        return state.held


# ---------------------------------------------------------------- waypoints


@dataclass(frozen=True)
class WaypointPlan:
    """Chain of leader rest points ending at the target.

    Consecutive points are at most ``delta / 4`` apart.
    """

    waypoints: tuple
    spacing: float
    settle_radius: float
    pass_radius: float
    dwell: float

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise DomainError("waypoints must be a non-empty list of vectors")
        if pts.shape[0] > 1:
            gaps = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
            if np.any(gaps > self.spacing * (1 + 1e-12)):
                raise DomainError("consecutive waypoints farther apart than the spacing")
        if min(self.settle_radius, self.pass_radius, self.dwell) <= 0:
            raise DomainError("radii and dwell must be positive")

    @property
    def target(self) -> np.ndarray:
        return np.asarray(self.waypoints[-1], dtype=float)

    def __len__(self):
        return len(self.waypoints)


def build_waypoint_plan(
    x_star, x_bar, delta: float, settle_radius=None, pass_radius=None, dwell=1.0
) -> WaypointPlan:
    """Equally spaced points from ``x_star`` to ``x_bar``, spacing at most ``delta/4``."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    a = np.atleast_1d(np.asarray(x_star, dtype=float))
    b = np.atleast_1d(np.asarray(x_bar, dtype=float))
    dist = float(np.linalg.norm(b - a))
    n_seg = math.ceil(4.0 * dist / delta - 1e-12) if dist > 0 else 0
    if n_seg == 0:
        pts = [b]
    else:
        pts = [a + (b - a) * (k / n_seg) for k in range(n_seg)] + [b]
    spacing = dist / n_seg if n_seg else delta / 4.0
    return WaypointPlan(
        tuple(tuple(map(float, z)) for z in pts),
        spacing,
        delta / 4.0 if settle_radius is None else settle_radius,
        delta / 2.0 if pass_radius is None else pass_radius,
        dwell,
    )


CONSENSUS, STEERING, SETTLING, DONE = "consensus", "steering", "settling", "done"


@dataclass(frozen=True)
class ControllerState:
    """Phase of the waypoint automaton.

    ``last_bad`` is the latest grid time at which the exit condition of the
    current phase failed; the phase may end once ``t - last_bad >= dwell``.
    """

    phase: str
    phase_entry_time: float
    current_waypoint_index: int
    plan: Optional[WaypointPlan] = None
    last_bad: float = -math.inf
    held: Optional[np.ndarray] = None
    warnings: tuple = ()

    @property
    def label(self):
        return (self.phase, self.current_waypoint_index)


def check_halanay_condition(system: HKSystem):
    margin = float(system.phi(system.params.a_inner / 2)) - 1.0 / (2.0 * system.params.gamma)
    return margin > 0, margin


@dataclass(frozen=True)
class WaypointController:
    """Consensus, then alternate steering to and settling at each waypoint.

    Parameters
    ----------
    target : sequence of float
        Final consensus opinion ``x_bar``.
    dwell : float, optional
        Length of the trailing window for settledness checks (default
        ``tau_max``).
    spacing, settle_radius, pass_radius : float, optional
        Defaults ``delta/4``, ``delta/4`` and ``delta/2``.
    max_phase_time : float
        A phase lasting longer raises :class:`ControllerTimeoutError`.
    """

    target: tuple
    dwell: Optional[float] = None
    spacing: Optional[float] = None
    settle_radius: Optional[float] = None
    pass_radius: Optional[float] = None
    max_phase_time: float = 500.0

    def _radii(self, system):
        delta = system.params.a_inner
        return (
            self.dwell if self.dwell is not None else system.delay.tau_max,
            self.spacing if self.spacing is not None else delta / 4.0,
            self.settle_radius if self.settle_radius is not None else delta / 4.0,
            self.pass_radius if self.pass_radius is not None else delta / 2.0,
        )

    def initial_state(self, ctx):
        ok, margin = check_halanay_condition(ctx.system)
        if not ok:
            raise CertificateViolationError(
                f"phi(delta/2) - 1/(2 gamma) = {margin:.6g} <= 0: settling is not guaranteed"
            )
        if len(self.target) != ctx.system.params.dim:
            raise DomainError("target dimension does not match the model")
        state = ControllerState(CONSENSUS, 0.0, 0)
        return replace(state, last_bad=self._scan(state, ctx, 0.0))

    # condition of the current phase at one sample
    def _bad(self, state, ctx, y) -> bool:
        dwell, spacing, settle, _ = self._radii(ctx.system)
        if state.phase == CONSENSUS:
            return float(np.max(np.linalg.norm(y[1:] - y[0], axis=-1))) > spacing
        if state.phase == SETTLING:
            z = np.asarray(state.plan.waypoints[state.current_waypoint_index])
            return float(np.max(np.linalg.norm(y[1:] - z, axis=-1))) > settle
        return False

    def _scan(self, state, ctx, t) -> float:
        """Latest sample time in ``[t - dwell, t]`` violating the phase condition."""
        dwell = self._radii(ctx.system)[0]
        times, states = ctx.times, ctx.states
        sel = np.nonzero(times >= t - dwell - 1e-12)[0]
        last = -math.inf
        for i in sel:
            if times[i] > t + 1e-12:
                break
            if self._bad(state, ctx, states[i]):
                last = float(times[i])
        if times[sel[0]] > t - dwell + 1e-12 and last == -math.inf:
            # window reaches before the recorded data: count the gap as unsettled
            last = float(times[sel[0]])
        return last

    def _enter(self, phase, index, ctx, t, y, state):
        new = replace(state, phase=phase, current_waypoint_index=index, phase_entry_time=t)
        if phase in (CONSENSUS, SETTLING):
            new = replace(new, last_bad=self._scan(new, ctx, t))
        if phase == SETTLING:
            _, _, _, pass_r = self._radii(ctx.system)
            z = np.asarray(state.plan.waypoints[index])
            mask = ctx.times >= t - self._radii(ctx.system)[0] - 1e-12
            spread = float(np.max(np.linalg.norm(ctx.states[mask][:, 1:] - z, axis=-1)))
            if spread > pass_r:
                new = replace(new, warnings=state.warnings + ((t, index, spread),))
        return new

    def advance(self, state: ControllerState, ctx, t, y) -> ControllerState:
        return self.step(state, ctx, t, y)

    def step(self, state, ctx, t, y):
        """Advance the automaton at grid time ``t``; may pass several phases."""
        system = ctx.system
        dwell = self._radii(system)[0]
        if state.phase != DONE and t - state.phase_entry_time > self.max_phase_time:
            raise ControllerTimeoutError(
                f"phase {state.phase}({state.current_waypoint_index}) exceeded {self.max_phase_time}"
            )
        for _ in range(4):
            if state.phase in (CONSENSUS, SETTLING):
                if self._bad(state, ctx, y):
                    state = replace(state, last_bad=t)
                if t - state.last_bad < dwell - 1e-9:
                    break
                if state.phase == CONSENSUS:
                    _, _, settle, pass_r = self._radii(system)
                    plan = build_waypoint_plan(
                        y[0], self.target, system.params.a_inner, settle, pass_r, dwell
                    )
                    state = replace(state, plan=plan)
                    nxt = 1 if len(plan) > 1 else 0
                    phase = STEERING if nxt else SETTLING
                    state = self._enter(phase, nxt, ctx, t, y, state)
                    continue
                k = state.current_waypoint_index
                if k + 1 < len(state.plan):
                    state = self._enter(STEERING, k + 1, ctx, t, y, state)
                    continue
                state = self._enter(DONE, k, ctx, t, y, state)
                break
            if state.phase == STEERING:
                z = np.asarray(state.plan.waypoints[state.current_waypoint_index])
                if np.linalg.norm(y[0] - z) <= steer_dead_band(z):
                    state = self._enter(SETTLING, state.current_waypoint_index, ctx, t, y, state)
                    continue
                held = _held_steer(y[0], z, system.params.control_bound, ctx.step)
                state = replace(state, held=held)
                break
            break
        return state

    def control(self, state, ctx, probe):
        if state.phase == CONSENSUS:
            if ctx.model is ModelKind.POINTWISE:
                return consensus_pointwise_control(ctx.system, probe.y, probe.delayed)[0]
            return consensus_distributed_control(
                ctx.system, probe.y, probe.window, probe.window_states
            )[0]
        if state.phase == STEERING:
            return state.held
        return np.zeros(ctx.system.params.dim)


def waypoint_controller_step(state, ctx, t, y, controller: WaypointController, probe: Probe):
    """One automaton update followed by the control of the resulting phase."""
    state = controller.step(state, ctx, t, y)
    return controller.control(state, ctx, probe), state


# ------------------------------------------------- evaluation on trajectories


def _probe(traj: Trajectory, system, t, model, cfg=None):
    return make_probe(system, cfg, model, t, traj.lookup(t), traj.lookup)


def alpha_pointwise(traj: Trajectory, t: float, system: HKSystem) -> float:
    probe = _probe(traj, system, t, ModelKind.POINTWISE)
    return consensus_pointwise_control(system, probe.y, probe.delayed)[1]


def u_consensus_pointwise(traj: Trajectory, t: float, system: HKSystem) -> np.ndarray:
    probe = _probe(traj, system, t, ModelKind.POINTWISE)
    return consensus_pointwise_control(system, probe.y, probe.delayed)[0]


def alpha_distributed(traj: Trajectory, t: float, s, system: HKSystem):
    """Saturation coefficient for delayed sample time(s) ``s`` in ``[t - tau(t), t]``."""
    y = traj.lookup(t)
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    out = distributed_alphas(system, y, traj.lookup(ss))
    return float(out[0]) if np.ndim(s) == 0 else out


def u_consensus_distributed(
    traj: Trajectory, t: float, system: HKSystem, cfg: IntegratorConfig
) -> np.ndarray:
    probe = _probe(traj, system, t, ModelKind.DISTRIBUTED, cfg)
    return consensus_distributed_control(system, probe.y, probe.window, probe.window_states)[0]
