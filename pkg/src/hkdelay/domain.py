"""Model parameters, influence functions, delay laws, kernels and containers.

Everything here is immutable after construction. Function-valued fields are
vectorised callables: they take a numpy array and return an array of the same
shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, HistoryUnderflowError, KernelViolationError, LookupRangeError

ArrayFn = Callable[[np.ndarray], np.ndarray]

#: sample count used by the construction-time invariant checks
N_CHECK = 10_000

# tolerance used when comparing grid times
_TIME_EPS = 1e-12


def _as_array(fn: ArrayFn, s) -> np.ndarray:
    return np.asarray(fn(np.asarray(s, dtype=float)), dtype=float)


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of the leader-follower dynamics.

    Attributes
    ----------
    n_agents : int
        Number of followers ``N`` (the leader is index 0 and comes on top).
    dim : int
        Opinion dimension ``d``.
    gamma : float
        Strength of the leader's pull on every follower.
    control_bound : float
        Admissibility bound ``M`` on the leader control.
    a_inner, a_outer : float
        Plateau end ``delta`` and cut-off ``r`` of the peer influence.
    lipschitz_phi : float
        Lipschitz constant ``L`` of the leader influence.
    """

    n_agents: int
    dim: int
    gamma: float
    control_bound: float
    a_inner: float
    a_outer: float
    lipschitz_phi: float

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 1:
            raise DomainError(f"n_agents must be a positive integer, got {self.n_agents!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError(f"dim must be a positive integer, got {self.dim!r}")
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma!r}")
        if not self.control_bound > 0:
            raise DomainError(f"control_bound must be positive, got {self.control_bound!r}")
        if not 0 < self.a_inner < self.a_outer:
            raise DomainError(
                f"need 0 < a_inner < a_outer, got a_inner={self.a_inner!r}, a_outer={self.a_outer!r}"
            )
        if not self.lipschitz_phi > 0:
            raise DomainError(f"lipschitz_phi must be positive, got {self.lipschitz_phi!r}")


def _check_distance(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(np.isnan(s)):
        raise DomainError("distance argument must be non-negative")
    return s


def _largest_jump(fn, s, v, candidates: int = 8, depth: int = 60) -> float:
    """Residual jump left after bisecting the steepest sample intervals.

    A continuous function's increments shrink with the interval; a jump
    survives bisection down to round-off width.
    """
    dv = np.abs(np.diff(v))
    worst = 0.0
    for i in np.argsort(dv)[::-1][:candidates]:
        if dv[i] == 0.0:
            break
        lo, hi = s[i], s[i + 1]
        flo, fhi = float(fn(lo)), float(fn(hi))
        for _ in range(depth):
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            fm = float(fn(mid))
            if abs(fm - flo) >= abs(fhi - fm):
                hi, fhi = mid, fm
            else:
                lo, flo = mid, fm
        worst = max(worst, abs(fhi - flo))
    return worst


@dataclass(frozen=True)
class InfluenceA:
    """Peer cut-off weight ``a``: 1 on ``[0, a_inner]``, 0 from ``a_outer`` on.

    The profile is checked at construction on a dense sample for the plateau,
    the cut-off, monotonicity and (approximate) continuity.
    """

    a_inner: float
    a_outer: float
    profile: ArrayFn
    name: str = "custom"

    def __post_init__(self):
        if not 0 < self.a_inner < self.a_outer:
            raise DomainError("need 0 < a_inner < a_outer")
        s = np.linspace(0.0, 2.0 * self.a_outer, N_CHECK)
        v = _as_array(self.profile, s)
        if np.any(v < 0) or np.any(v > 1):
            raise DomainError("influence a must take values in [0, 1]")
        if np.any(v[s <= self.a_inner] != 1.0):
            raise DomainError("influence a must equal 1 on [0, a_inner]")
        if np.any(v[s >= self.a_outer] != 0.0):
            raise DomainError("influence a must vanish on [a_outer, inf)")
        if np.any(np.diff(v) > 0):
            raise DomainError("influence a must be non-increasing")
        jump = _largest_jump(self.profile, s, v)
        if jump > 1e-4:
            raise DomainError(f"influence a looks discontinuous (jump {jump:.3g})")

    def __call__(self, s):
        return _as_array(self.profile, s)


def linear_ramp(a_inner: float = 1.0, a_outer: float = 2.0) -> InfluenceA:
    """Piecewise-linear cut-off, ``(a_outer - s)/(a_outer - a_inner)`` on the band."""
    width = a_outer - a_inner

    def profile(s):
        return np.clip((a_outer - s) / width, 0.0, 1.0)

    return InfluenceA(a_inner, a_outer, profile, name="linear_ramp")


def eval_influence_a(f: InfluenceA, s):
    """Evaluate the cut-off weight at distance ``s`` (scalar or array)."""
    s = _check_distance(s)
    v = f(s)
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class LeaderInfluencePhi:
    """Leader influence ``phi``: positive, non-increasing, ``phi(0) = 1``.

    ``lipschitz`` is supplied by the caller and verified on sampled pairs.
    """

    profile: ArrayFn
    lipschitz: float
    name: str = "custom"
    check_range: float = 50.0

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise DomainError("lipschitz constant must be positive")
        if abs(float(_as_array(self.profile, 0.0)) - 1.0) > 1e-15:
            raise DomainError("phi(0) must equal 1")
        s = np.concatenate(
            [np.linspace(0.0, 4.0, N_CHECK), np.linspace(4.0, self.check_range, N_CHECK)[1:]]
        )
        v = _as_array(self.profile, s)
        if np.any(v <= 0):
            raise DomainError("phi must be strictly positive")
        if np.any(np.diff(v) > 0):
            raise DomainError("phi must be non-increasing")
        ratio = np.max(np.abs(np.diff(v)) / np.diff(s))
        if ratio > self.lipschitz + 1e-9:
            raise DomainError(
                f"sampled Lipschitz ratio {ratio:.10g} exceeds declared constant {self.lipschitz:.10g}"
            )

    def __call__(self, s):
        return _as_array(self.profile, s)


def cucker_smale(exponent: float = 1.5) -> LeaderInfluencePhi:
    """``phi(s) = (1 + s^2)^(-exponent)``.

    Its Lipschitz constant is ``|phi'|`` at the inflection ``s = (2*exponent + 1)^(-1/2)``.
    """
    if not exponent > 0:
        raise DomainError("exponent must be positive")
    s_crit = 1.0 / math.sqrt(2.0 * exponent + 1.0)
    lip = 2.0 * exponent * s_crit * (1.0 + s_crit**2) ** (-exponent - 1.0)

    def profile(s):
        return (1.0 + s * s) ** (-exponent)

    return LeaderInfluencePhi(profile, lip, name="cucker_smale")


def eval_influence_phi(f: LeaderInfluencePhi, s):
    """Evaluate the leader influence at distance ``s`` (scalar or array)."""
    s = _check_distance(s)
    v = f(s)
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class DelayLaw:
    """Time-varying delay ``tau(t)`` with bounds ``tau_min <= tau(t) <= tau_max``."""

    tau_of_t: ArrayFn
    tau_max: float
    tau_min: float = 0.0
    name: str = "custom"
    check_horizon: float = 100.0

    def __post_init__(self):
        if not self.tau_max > 0:
            raise DomainError("tau_max must be positive")
        if not 0 <= self.tau_min <= self.tau_max:
            raise DomainError("need 0 <= tau_min <= tau_max")
        t = np.linspace(0.0, self.check_horizon, N_CHECK)
        v = _as_array(self.tau_of_t, t)
        if np.any(v < self.tau_min - 1e-12) or np.any(v > self.tau_max + 1e-12):
            raise DomainError("tau(t) leaves [tau_min, tau_max] on the sampled horizon")
        jump = _largest_jump(self.tau_of_t, t, v)
        if jump > 1e-4:
            raise DomainError(f"tau(t) looks discontinuous (jump {jump:.3g})")

    def __call__(self, t):
        v = _as_array(self.tau_of_t, t)
        return float(v) if v.ndim == 0 else v

    @property
    def is_constant(self) -> bool:
        return self.name == "constant"


def constant_delay(tau: float) -> DelayLaw:
    def tau_of_t(t):
        return np.full_like(t, tau, dtype=float)

    return DelayLaw(tau_of_t, tau, tau, name="constant")


def sinusoidal_delay(mean: float, amplitude: float, omega: float = 1.0) -> DelayLaw:
    """``tau(t) = mean + amplitude * sin(omega * t)``."""
    amp = abs(amplitude)
    if mean - amp < 0:
        raise DomainError("sinusoidal delay would become negative")

    def tau_of_t(t):
        return mean + amplitude * np.sin(omega * t)

    return DelayLaw(tau_of_t, mean + amp, mean - amp, name="sinusoidal")


def table_delay(times: Sequence[float], values: Sequence[float]) -> DelayLaw:
    """Piecewise-linear delay through ``(times, values)``, held flat outside."""
    tt = np.asarray(times, dtype=float)
    vv = np.asarray(values, dtype=float)
    if tt.ndim != 1 or tt.shape != vv.shape or tt.size < 1 or np.any(np.diff(tt) <= 0):
        raise DomainError("delay table needs matching, strictly increasing times")

    def tau_of_t(t):
        return np.interp(t, tt, vv)

    return DelayLaw(tau_of_t, float(vv.max()), float(vv.min()), name="table")


@dataclass(frozen=True)
class Kernel:
    """Distributed-delay weight ``beta`` on ``[0, tau_max]``.

    ``b_total`` is the kernel mass over the full window, computed at
    construction. ``breakpoints`` are passed to the adaptive quadrature so
    that narrow or kinked kernels are resolved.
    """

    beta_of_s: ArrayFn
    tau_max: float
    tau_min: float
    name: str = "custom"
    breakpoints: tuple = ()
    b_total: float = field(init=False)

    def __post_init__(self):
        if not self.tau_max > 0 or not 0 < self.tau_min <= self.tau_max:
            raise DomainError("kernel needs 0 < tau_min <= tau_max")
        s = np.linspace(0.0, self.tau_max, N_CHECK)
        if np.any(_as_array(self.beta_of_s, s) < 0):
            raise DomainError("kernel must be non-negative")
        if self.mass(self.tau_min) <= 0:
            raise KernelViolationError("kernel has no mass on [0, tau_min]")
        object.__setattr__(self, "b_total", self.mass(self.tau_max))

    def __call__(self, s):
        return _as_array(self.beta_of_s, s)

    def mass(self, upper: float) -> float:
        """Integral of the kernel over ``[0, upper]``."""
        if upper <= 0:
            return 0.0
        pts = [p for p in self.breakpoints if 0 < p < upper] or None
        val, _ = integrate.quad(
            lambda w: float(self.beta_of_s(np.asarray(w, dtype=float))),
            0.0,
            upper,
            points=pts,
            limit=200,
            epsabs=1e-13,
            epsrel=1e-11,
        )
        return val

    def scaled(self, factor: float) -> "Kernel":
        """The same kernel shape with its mass multiplied by ``factor``."""
        base = self.beta_of_s
        return Kernel(
            lambda s: factor * base(s), self.tau_max, self.tau_min, self.name, self.breakpoints
        )


def uniform_kernel(tau_max: float, tau_min: float, height: float = 1.0) -> Kernel:
    def beta(s):
        return np.full_like(s, height, dtype=float)

    return Kernel(beta, tau_max, tau_min, name="uniform")


def hat_kernel(center: float, width: float, tau_max: float, tau_min: float) -> Kernel:
    """Unit-area triangular kernel of support ``width`` centred at ``center``."""
    if not width > 0:
        raise DomainError("hat width must be positive")
    half = 0.5 * width

    def beta(s):
        return np.maximum(0.0, 1.0 - np.abs(s - center) / half) / half

    return Kernel(
        beta, tau_max, tau_min, name="hat", breakpoints=(center - half, center, center + half)
    )


def table_kernel(s_points: Sequence[float], values: Sequence[float], tau_min: float) -> Kernel:
    ss = np.asarray(s_points, dtype=float)
    vv = np.asarray(values, dtype=float)
    if ss.ndim != 1 or ss.shape != vv.shape or ss.size < 2 or np.any(np.diff(ss) <= 0):
        raise DomainError("kernel table needs matching, strictly increasing abscissae")

    def beta(s):
        return np.interp(s, ss, vv)

    return Kernel(beta, float(ss[-1]), tau_min, name="table", breakpoints=tuple(ss[1:-1]))


def eval_h(k: Kernel, dl: DelayLaw, t: float) -> float:
    """Kernel mass over the active window ``[0, tau(t)]``."""
    if t < 0:
        raise DomainError("h(t) is defined for t >= 0")
    val = k.mass(dl(t))
    if not val > 0:
        raise KernelViolationError(f"h({t}) = {val} is not positive")
    return val


@dataclass(frozen=True)
class HKSystem:
    """Everything that defines the dynamics apart from the control and data."""

    params: ModelParams
    influence: InfluenceA
    phi: LeaderInfluencePhi
    delay: DelayLaw
    kernel: Optional[Kernel] = None

    def __post_init__(self):
        p = self.params
        if (self.influence.a_inner, self.influence.a_outer) != (p.a_inner, p.a_outer):
            raise DomainError("influence cut-offs disagree with params")
        if self.phi.lipschitz > p.lipschitz_phi * (1 + 1e-12):
            raise DomainError("params.lipschitz_phi is below the verified Lipschitz constant")
        if self.kernel is not None and self.kernel.tau_max + 1e-12 < self.delay.tau_max:
            raise DomainError("kernel support is shorter than tau_max")


@dataclass(frozen=True, eq=False)
class History:
    """Initial data on ``[-tau_max, 0]``, linear between sample times.

    ``values`` has shape ``(K, N+1, d)``; index 0 along the agent axis is the
    leader.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise DomainError("history values must have shape (K, N+1, d) matching times")
        if t.size < 2 or np.any(np.diff(t) <= 0) or t[-1] != 0.0:
            raise DomainError("history times must increase strictly and end at 0")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, state, tau_max: float) -> "History":
        state = np.asarray(state, dtype=float)
        if state.ndim == 1:
            state = state[:, None]
        return cls(np.array([-tau_max, 0.0]), np.stack([state, state]))

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def n_agents(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def at(self, s):
        """Linear interpolation of the history at time(s) ``s``."""
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s)
        if np.any(flat < self.times[0] - _TIME_EPS) or np.any(flat > _TIME_EPS):
            raise HistoryUnderflowError("query outside the initial-history interval")
        k = np.clip(np.searchsorted(self.times, flat, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        th = np.clip((flat - t0) / (t1 - t0), 0.0, 1.0)[:, None, None]
        out = (1.0 - th) * self.values[k] + th * self.values[k + 1]
        return out[0] if s.ndim == 0 else out

    def slopes(self, s) -> np.ndarray:
        """Left derivative of the piecewise-linear history (right at the start)."""
        flat = np.atleast_1d(np.asarray(s, dtype=float))
        k = np.clip(np.searchsorted(self.times, flat, side="left") - 1, 0, self.times.size - 2)
        dt = (self.times[k + 1] - self.times[k])[:, None, None]
        return (self.values[k + 1] - self.values[k]) / dt

    def shifted(self, offset) -> "History":
        return History(self.times, self.values + np.asarray(offset, dtype=float))


def _hermite(y0, y1, d0, d1, dt, th):
    th2 = th * th
    th3 = th2 * th
    h00 = 2 * th3 - 3 * th2 + 1
    h10 = th3 - 2 * th2 + th
    h01 = -2 * th3 + 3 * th2
    h11 = th3 - th2
    return h00 * y0 + h10 * dt * d0 + h01 * y1 + h11 * dt * d1


def interpolate_grid(times, states, derivs, s, interp="hermite", extrapolate=False):
    """Dense evaluation of sampled states at time(s) ``s``.

    Segments that end at or before ``t = 0`` are always linear (initial data is
    piecewise linear); later segments use ``interp``. With ``extrapolate``,
    queries past the last sample continue the final segment's polynomial.
    """
    s = np.asarray(s, dtype=float)
    flat = np.atleast_1d(s)
    n = times.shape[0]
    if np.any(flat < times[0] - _TIME_EPS):
        raise HistoryUnderflowError(
            f"lookup at {flat.min():.6g} precedes history start {times[0]:.6g}"
        )
    if not extrapolate and np.any(flat > times[-1] + _TIME_EPS):
        raise LookupRangeError(f"lookup at {flat.max():.6g} beyond last time {times[-1]:.6g}")
    if n == 1:
        out = np.repeat(states[:1], flat.size, axis=0)
        return out[0] if s.ndim == 0 else out
    k = np.clip(np.searchsorted(times, flat, side="right") - 1, 0, n - 2)
    t0 = times[k]
    t1 = times[k + 1]
    dt = t1 - t0
    th = (flat - t0) / dt
    th = np.where(np.abs(th) < _TIME_EPS, 0.0, th)
    th = np.where(np.abs(th - 1.0) < _TIME_EPS, 1.0, th)
    if not extrapolate:
        th = np.clip(th, 0.0, 1.0)
    th3 = th[:, None, None]
    y0 = states[k]
    y1 = states[k + 1]
    lin = (1.0 - th3) * y0 + th3 * y1
    if interp == "hermite":
        herm = _hermite(y0, y1, derivs[k], derivs[k + 1], dt[:, None, None], th3)
        use_h = (t1 > _TIME_EPS)[:, None, None]
        out = np.where(use_h, herm, lin)
    else:
        out = lin
    # exact reproduction at grid points
    at0 = th == 0.0
    at1 = th == 1.0
    if np.any(at0):
        out[at0] = y0[at0]
    if np.any(at1):
        out[at1] = y1[at1]
    return out[0] if s.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution on ``[-tau_max, t_end]`` with dense lookup.

    Attributes
    ----------
    times : (K,) array
        Strictly increasing sample times, starting at the history start.
    states, derivs : (K, N+1, d) arrays
        Opinions and their time derivatives; index 0 is the leader.
    controls : (K, d) array
        Leader control ``u`` at each sample (equal to ``derivs[:, 0]``).
    interp : str
        ``"hermite"`` or ``"linear"`` for segments after ``t = 0``.
    events : tuple
        Controller phase transitions as ``(t, phase, index)`` records.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    controls: np.ndarray
    interp: str = "hermite"
    events: tuple = ()

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.states, dtype=float)
        dx = np.array(self.derivs, dtype=float)
        u = np.array(self.controls, dtype=float)
        if x.ndim != 3 or x.shape[0] != t.shape[0] or dx.shape != x.shape:
            raise DomainError("states/derivs must be (K, N+1, d) arrays matching times")
        if u.shape != (t.shape[0], x.shape[2]):
            raise DomainError("controls must be a (K, d) array")
        if np.any(np.diff(t) <= 0):
            raise DomainError("trajectory times must increase strictly")
        if self.interp not in ("hermite", "linear"):
            raise DomainError(f"unknown interpolation {self.interp!r}")
        for name, arr in (("times", t), ("states", x), ("derivs", dx), ("controls", u)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_history(cls, history: History, step: Optional[float] = None) -> "Trajectory":
        """Trajectory covering only the initial-history interval."""
        times = history.times
        if step is not None:
            uniform = -np.arange(0, math.ceil(-history.start / step - 1e-9) + 1) * step
            uniform = uniform[uniform > history.start]
            times = np.union1d(times, uniform)
        states = history.at(times)
        derivs = history.slopes(times)
        return cls(times, states, derivs, derivs[:, 0, :].copy())

    @property
    def n_agents(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def origin(self) -> int:
        """Index of the sample at ``t = 0``."""
        return int(np.searchsorted(self.times, -_TIME_EPS, side="right"))

    def lookup(self, s):
        """States of all agents at time(s) ``s``; exact at grid points."""
        return interpolate_grid(self.times, self.states, self.derivs, s, self.interp)

    def forward(self) -> slice:
        return slice(self.origin, None)
