"""Diagnostics and certificates computed from trajectories.

Integral diagnostics read the derivative and control samples stored on the
trajectory grid and integrate them with the trapezoid rule over the trailing
window ``[t - tau_max, t]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .domain import DelayLaw, History, HKSystem, Kernel, LeaderInfluencePhi, ModelParams, Trajectory, eval_h
from .enclosing import enclosing_ball
from .engine import ModelKind
from .errors import DomainError

_EPS = 1e-12


# ------------------------------------------------------------ basic series


def d0(traj: Trajectory, t: float):
    """Largest follower-leader distance at ``t`` and the (1-based) agent attaining it."""
    y = traj.lookup(t)
    dist = np.linalg.norm(y[1:] - y[0], axis=-1)
    k = int(np.argmax(dist))
    return float(dist[k]), k + 1


def d0_series(traj: Trajectory) -> np.ndarray:
    return np.max(np.linalg.norm(traj.states[:, 1:] - traj.states[:, None, 0], axis=-1), axis=1)


def control_norm_series(traj: Trajectory) -> np.ndarray:
    return np.linalg.norm(traj.controls, axis=-1)


def radius_R(history: History) -> float:
    """Largest opinion norm over the initial history, leader included."""
    return float(np.max(np.linalg.norm(history.values, axis=-1)))


def radius_R_star(history: History, tau0: float) -> float:
    """Radius of the smallest ball holding every follower on ``[-tau0, 0]``."""
    return enclosing_ball(_follower_points(history, tau0))[1]


def enclosing_center(history: History, tau0: float) -> np.ndarray:
    return enclosing_ball(_follower_points(history, tau0))[0]


def _follower_points(history: History, tau0: float) -> np.ndarray:
    if tau0 < 0 or -tau0 < history.start - _EPS:
        raise DomainError("tau0 must lie in [0, tau_max]")
    inside = history.times[history.times > -tau0]
    times = np.concatenate([[-tau0], inside])
    # piecewise-linear data: the ball of the sample points holds every segment
    return history.at(times)[:, 1:, :].reshape(-1, history.dim)


# ------------------------------------------------------------ certificates


def r_gamma(params: ModelParams, R: float) -> float:
    return params.gamma * params.lipschitz_phi * R + params.gamma + 1.0


def tau_bound_pointwise(params: ModelParams, phi: LeaderInfluencePhi, R: float) -> float:
    """Largest admissible maximal delay for the pointwise consensus result."""
    if R < 0:
        raise DomainError("R must be non-negative")
    g = params.gamma
    f = float(phi(2.0 * R))
    return math.log1p(g * f / (g * (1.0 + 2.0 * g) * f + 4.0 * (1.0 + g) * r_gamma(params, R)))


def tau_bound_distributed(params: ModelParams, phi: LeaderInfluencePhi, R: float, mass) -> float:
    """Delay bound for the distributed model; ``mass`` is a kernel or its total ``B``."""
    B = mass.b_total if isinstance(mass, Kernel) else float(mass)
    if not B > 0:
        raise DomainError("kernel mass B must be positive")
    if R < 0:
        raise DomainError("R must be non-negative")
    g = params.gamma
    f = float(phi(2.0 * R))
    denom = 4.0 * r_gamma(params, R) * B * (1.0 + g) + g * f * B * (1.0 + 2.0 * g)
    return math.log1p(g * f / denom)


def check_halanay(params: ModelParams, phi: LeaderInfluencePhi):
    """``(phi(delta/2) > 1/(2 gamma), margin)``."""
    margin = float(phi(params.a_inner / 2.0)) - 1.0 / (2.0 * params.gamma)
    return margin > 0, margin


def lyapunov_weight_interval(params, phi, R, tau_max, mass=None):
    """Feasible Lyapunov weights ``[lo, hi)``, or ``None`` when empty.

    ``mass`` is ``None`` for the pointwise functional, otherwise the kernel
    mass ``B`` (or the kernel).
    """
    B = 1.0 if mass is None else (mass.b_total if isinstance(mass, Kernel) else float(mass))
    g = params.gamma
    e = math.exp(-tau_max)
    denom = e - B * (1.0 + 2.0 * g) * (1.0 - e)
    if denom <= 0:
        return None
    lo = r_gamma(params, R) / denom
    hi = g * float(phi(2.0 * R)) / (4.0 * B * (1.0 + g) * (1.0 - e))
    if not lo < hi:
        return None
    return lo, hi


def default_lyapunov_weight(params, phi, R, tau_max, mass=None) -> Optional[float]:
    iv = lyapunov_weight_interval(params, phi, R, tau_max, mass)
    return None if iv is None else 0.5 * (iv[0] + iv[1])


@dataclass(frozen=True)
class Certificates:
    radius_R: float
    radius_R_star: float
    r_gamma: float
    tau_max: float
    tau_bound_pointwise: float
    tau_bound_pointwise_star: float
    halanay_ok: bool
    halanay_margin: float
    tau_bound_distributed: Optional[float] = None
    kernel_mass: Optional[float] = None
    lyapunov_weight: Optional[float] = None

    @property
    def pointwise_margin(self) -> float:
        return self.tau_bound_pointwise - self.tau_max

    @property
    def distributed_margin(self) -> Optional[float]:
        if self.tau_bound_distributed is None:
            return None
        return self.tau_bound_distributed - self.tau_max

    def complies(self, model: ModelKind) -> bool:
        if model is ModelKind.DISTRIBUTED:
            return self.distributed_margin is not None and self.distributed_margin > 0
        return self.pointwise_margin > 0

    def as_dict(self) -> dict:
        return {
            "radius_R": self.radius_R,
            "radius_R_star": self.radius_R_star,
            "r_gamma": self.r_gamma,
            "tau_max": self.tau_max,
            "tau_bound_pointwise": self.tau_bound_pointwise,
            "tau_bound_pointwise_star": self.tau_bound_pointwise_star,
            "pointwise_margin": self.pointwise_margin,
            "tau_bound_distributed": self.tau_bound_distributed,
            "distributed_margin": self.distributed_margin,
            "kernel_mass": self.kernel_mass,
            "halanay_ok": self.halanay_ok,
            "halanay_margin": self.halanay_margin,
            "lyapunov_weight": self.lyapunov_weight,
        }


def certify(system: HKSystem, history: History, model: ModelKind = ModelKind.POINTWISE) -> Certificates:
    p, phi = system.params, system.phi
    tau_max = system.delay.tau_max
    R = radius_R(history)
    R_star = radius_R_star(history, float(system.delay(0.0)))
    ok, margin = check_halanay(p, phi)
    B = system.kernel.b_total if system.kernel is not None else None
    weight = default_lyapunov_weight(
        p, phi, R, tau_max, B if model is ModelKind.DISTRIBUTED else None
    )
    return Certificates(
        radius_R=R,
        radius_R_star=R_star,
        r_gamma=r_gamma(p, R),
        tau_max=tau_max,
        tau_bound_pointwise=tau_bound_pointwise(p, phi, R),
        tau_bound_pointwise_star=tau_bound_pointwise(p, phi, R_star),
        halanay_ok=ok,
        halanay_margin=margin,
        tau_bound_distributed=None if B is None else tau_bound_distributed(p, phi, R, B),
        kernel_mass=B,
        lyapunov_weight=weight,
    )


# ------------------------------------------------------- window integrals


def _speed(traj: Trajectory) -> np.ndarray:
    # max_j |x_j'| + |u| at every sample
    return np.max(np.linalg.norm(traj.derivs[:, 1:], axis=-1), axis=1) + np.linalg.norm(
        traj.controls, axis=-1
    )


def _window(traj: Trajectory, t: float, length: float, speed=None):
    """Lags ``w`` (ascending from 0 to ``length``) and the speed at ``t - w``."""
    if t - length < traj.t_start - _EPS or t > traj.t_end + _EPS:
        raise DomainError(f"window [{t - length}, {t}] outside the trajectory")
    g = _speed(traj) if speed is None else speed
    ts = traj.times
    lo = np.searchsorted(ts, t - length - _EPS, side="left")
    hi = np.searchsorted(ts, t + _EPS, side="right")
    lags = t - ts[lo:hi][::-1]
    vals = g[lo:hi][::-1]
    if lags.size == 0 or lags[0] > _EPS:
        lags = np.concatenate([[0.0], lags])
        vals = np.concatenate([[np.interp(t, ts, g)], vals])
    else:
        lags[0] = 0.0
    if lags[-1] < length - _EPS:
        lags = np.concatenate([lags, [length]])
        vals = np.concatenate([vals, [np.interp(t - length, ts, g)]])
    else:
        lags[-1] = length
    return lags, vals


def _inner(lags, vals):
    # G(w) = integral of the speed over [t - w, t]
    return cumulative_trapezoid(vals, lags, initial=0.0)


def _tau_max(traj, tau_max):
    return -traj.t_start if tau_max is None else tau_max


def sigma_tau(traj: Trajectory, t: float, tau_max: Optional[float] = None, speed=None) -> float:
    """Integral of ``max_j |x_j'| + |u|`` over ``[t - tau_max, t]``."""
    L = _tau_max(traj, tau_max)
    lags, vals = _window(traj, t, L, speed)
    return float(trapezoid(vals, lags))


def lambda_tau(traj: Trajectory, t: float, k: Kernel, dl: DelayLaw, speed=None) -> float:
    """Kernel-weighted double integral used for the distributed model."""
    lags, vals = _window(traj, t, k.tau_max if dl is None else dl.tau_max, speed)
    G = _inner(lags, vals)
    return float(trapezoid(k(lags) * G, lags)) / eval_h(k, dl, max(t, 0.0))


def lyapunov_pointwise(
    traj: Trajectory, t: float, weight: float, tau_max: Optional[float] = None, speed=None
) -> float:
    """``d0(t)`` plus ``weight`` times the exponentially weighted double integral."""
    L = _tau_max(traj, tau_max)
    lags, vals = _window(traj, t, L, speed)
    G = _inner(lags, vals)
    return d0(traj, t)[0] + weight * float(trapezoid(np.exp(-lags) * G, lags))


def lyapunov_distributed(
    traj: Trajectory, t: float, weight: float, k: Kernel, tau_max: Optional[float] = None, speed=None
) -> float:
    """``d0(t)`` plus ``weight`` times the kernel-weighted triple integral."""
    L = k.tau_max if tau_max is None else tau_max
    lags, vals = _window(traj, t, L, speed)
    G = _inner(lags, vals)
    J = cumulative_trapezoid(np.exp(-lags) * G, lags, initial=0.0)
    return d0(traj, t)[0] + weight * float(trapezoid(k(lags) * J, lags))


def lyapunov_series(traj: Trajectory, weight: float, kernel: Optional[Kernel] = None, tau_max=None):
    """Functional at every grid point with ``t >= tau_max`` (NaN before)."""
    L = (kernel.tau_max if kernel is not None else _tau_max(traj, None)) if tau_max is None else tau_max
    out = np.full(traj.times.shape, np.nan)
    speed = _speed(traj)
    for i, t in enumerate(traj.times):
        if t < L - _EPS:
            continue
        if kernel is None:
            out[i] = lyapunov_pointwise(traj, t, weight, L, speed)
        else:
            out[i] = lyapunov_distributed(traj, t, weight, kernel, L, speed)
    return out


# ------------------------------------------------------------ rates & flags


def fit_decay_rate(times, series, window=None) -> float:
    """Negated least-squares slope of ``log(series)`` over ``window``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(series, dtype=float)
    if window is not None:
        mask = (t >= window[0] - _EPS) & (t <= window[1] + _EPS)
        t, v = t[mask], v[mask]
    if t.size < 2:
        raise DomainError("need at least two samples in the fit window")
    if np.any(~(v > 0)):
        raise DomainError("series must be strictly positive on the fit window")
    slope = np.polyfit(t, np.log(v), 1)[0]
    return float(-slope)


def consensus_time(times, d0_values, threshold: float) -> Optional[float]:
    """First non-negative time with ``d0 < threshold``."""
    t = np.asarray(times)
    hit = np.nonzero((t >= -_EPS) & (np.asarray(d0_values) < threshold))[0]
    return float(t[hit[0]]) if hit.size else None


def is_oscillating(times, d0_values, threshold: float, rel_rise: float = 0.05) -> bool:
    """True when ``d0`` climbs back above an earlier minimum by more than
    ``threshold`` (and by more than ``rel_rise`` of that minimum)."""
    t = np.asarray(times)
    v = np.asarray(d0_values)[t >= -_EPS]
    if v.size < 2:
        return False
    run_min = np.minimum.accumulate(v)
    rise = v - run_min
    return bool(np.any((rise > threshold) & (rise > rel_rise * run_min)))


def max_norm_series(traj: Trajectory, center=None) -> np.ndarray:
    """``max_i |x_i(t) - center|`` over all agents, leader included."""
    c = 0.0 if center is None else np.asarray(center, dtype=float)
    return np.max(np.linalg.norm(traj.states - c, axis=-1), axis=1)


# ------------------------------------------------------------------ report


@dataclass(frozen=True, eq=False)
class RunReport:
    times: np.ndarray
    d0_series: np.ndarray
    control_norm_series: np.ndarray
    lyapunov_series: Optional[np.ndarray]
    fitted_rate: Optional[float]
    certificates: Certificates
    consensus_time: Optional[float]
    consensus_threshold: float
    oscillating: bool
    terminal_d0: float
    max_control_norm: float
    events: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def consensus_reached(self) -> bool:
        return self.consensus_time is not None

    def summary(self) -> dict:
        return {
            "consensus_reached": self.consensus_reached,
            "consensus_time": self.consensus_time,
            "consensus_threshold": self.consensus_threshold,
            "oscillating": self.oscillating,
            "fitted_rate": self.fitted_rate,
            "terminal_d0": self.terminal_d0,
            "max_control_norm": self.max_control_norm,
            "certificates": self.certificates.as_dict(),
            "events": [list(e) for e in self.events],
            **self.extras,
        }


def analyze(
    traj: Trajectory,
    system: HKSystem,
    history: History,
    model: ModelKind = ModelKind.POINTWISE,
    lyapunov_weight: Optional[float] = None,
    with_lyapunov: bool = True,
) -> RunReport:
    """Build the diagnostics report of one run."""
    certs = certify(system, history, model)
    times = traj.times
    dz = d0_series(traj)
    threshold = 1e-3 * max(1.0, certs.radius_R)
    tc = consensus_time(times, dz, threshold)
    weight = certs.lyapunov_weight if lyapunov_weight is None else lyapunov_weight
    lyap = None
    if with_lyapunov and weight is not None:
        kernel = system.kernel if model is ModelKind.DISTRIBUTED else None
        lyap = lyapunov_series(traj, weight, kernel, system.delay.tau_max)
    rate = None
    stop = tc if tc is not None else traj.t_end
    mask = (times >= 0) & (times <= stop + _EPS)
    pos = dz[mask] > 0
    if np.count_nonzero(pos) >= 2:
        first_zero = np.argmin(pos) if not pos.all() else pos.size
        if first_zero >= 2:
            rate = fit_decay_rate(times[mask][:first_zero], dz[mask][:first_zero])
    un = control_norm_series(traj)
    return RunReport(
        times=times,
        d0_series=dz,
        control_norm_series=un,
        lyapunov_series=lyap,
        fitted_rate=rate,
        certificates=certs,
        consensus_time=tc,
        consensus_threshold=threshold,
        oscillating=is_oscillating(times, dz, threshold),
        terminal_d0=float(dz[-1]),
        max_control_norm=float(un[times >= 0].max()),
        events=traj.events,
    )


def steering_containment(traj: Trajectory, xi, t0: float = 0.0, t1: Optional[float] = None):
    """``(worst, bound)``: max over ``[t0, t1]`` of ``max_i |x_i - xi|`` versus
    the same quantity over the trailing ``tau_max`` window before ``t0``."""
    xi = np.asarray(xi, dtype=float)
    L = -traj.t_start
    t = traj.times
    t1 = traj.t_end if t1 is None else t1
    dist = max_norm_series(traj, xi)
    before = (t >= t0 - L - _EPS) & (t <= t0 + _EPS)
    during = (t >= t0 - _EPS) & (t <= t1 + _EPS)
    return float(dist[during].max()), float(dist[before].max())
