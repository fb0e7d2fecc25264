"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines as they are
produced; they are also repeated in the terminal summary.
"""

import math
import time

import mpmath as mp
import numpy as np

from conftest import ACCEPTANCE
from hkdelay.analysis import (
    check_halanay,
    default_lyapunov_weight,
    fit_decay_rate,
    lyapunov_series,
    max_norm_series,
    radius_R,
    steering_containment,
    tau_bound_distributed,
    tau_bound_pointwise,
)
from hkdelay.cli import run_scenario
from hkdelay.config import ScenarioConfig, fig1_config, fig2_config, random_ball
from hkdelay.controllers import (
    DistributedConsensus,
    PointwiseConsensus,
    ZeroControl,
    _held_steer,
    consensus_distributed_control,
    consensus_pointwise_control,
    u_steer,
)
from hkdelay.domain import (
    History,
    HKSystem,
    ModelParams,
    constant_delay,
    cucker_smale,
    hat_kernel,
    linear_ramp,
    sinusoidal_delay,
    uniform_kernel,
)
from hkdelay.engine import IntegratorConfig, ModelKind, Window, integrate

PHI = cucker_smale()


def verdict(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print("\n" + line)
    assert ok, line


def make_system(n, dim=1, gamma=1.0, M=1.0, delay=None, kernel=None):
    p = ModelParams(n, dim, gamma, M, 1.0, 2.0, PHI.lipschitz)
    return HKSystem(p, linear_ramp(), PHI, delay, kernel)


def random_history(rng, n, dim, tau_max, radius):
    """Either a constant state or a 5-knot piecewise-linear curve inside the ball."""
    if rng.random() < 0.5:
        return History.constant(random_ball(rng, n + 1, dim, radius), tau_max)
    times = np.linspace(-tau_max, 0.0, 5)
    vals = np.stack([random_ball(rng, n + 1, dim, radius) for _ in times])
    return History(times, vals)


# ----------------------------------------------------------------------- 1


def test_criterion_01_boundedness_pointwise():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n, dim = int(rng.integers(1, 21)), int(rng.integers(1, 4))
        if rng.random() < 0.5:
            delay = constant_delay(float(rng.uniform(0.05, 2.0)))
        else:
            mean = float(rng.uniform(0.3, 1.5))
            delay = sinusoidal_delay(mean, float(rng.uniform(0.0, 0.9 * mean)), float(rng.uniform(0.2, 3.0)))
        sys_ = make_system(n, dim, float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.1, 5.0)), delay)
        hist = random_history(rng, n, dim, delay.tau_max, float(rng.uniform(0.1, 3.0)))
        traj = integrate(sys_, PointwiseConsensus(), hist, 5.0, IntegratorConfig(0.05))
        R = radius_R(hist)
        worst = max(worst, float(np.max(max_norm_series(traj))) / R)
    elapsed = time.perf_counter() - start
    verdict(1, "pointwise boundedness", worst <= 1 + 1e-6 and elapsed < 60,
            f"max|x|/R = {worst:.9f} over 50 runs, {elapsed:.1f} s")


# ----------------------------------------------------------------------- 2


def test_criterion_02_boundedness_distributed():
    rng = np.random.default_rng(4048)
    start = time.perf_counter()
    worst = 0.0
    kinds = {"uniform": 0, "hat": 0}
    for i in range(50):
        n, dim = int(rng.integers(1, 21)), int(rng.integers(1, 4))
        if i % 2 == 0:
            mean = float(rng.uniform(0.3, 1.2))
            delay = sinusoidal_delay(mean, float(rng.uniform(0.0, 0.5 * mean)), float(rng.uniform(0.2, 3.0)))
            kernel = uniform_kernel(delay.tau_max, delay.tau_min, float(rng.uniform(0.2, 3.0)))
            kinds["uniform"] += 1
            qmin = 3
        else:
            tau = float(rng.uniform(0.2, 1.2))
            delay = constant_delay(tau)
            width = float(rng.uniform(0.1, 0.9)) * tau
            kernel = hat_kernel(float(rng.uniform(width / 2, tau - width / 2)), width, tau, tau)
            kinds["hat"] += 1
            # at least four quadrature intervals across the hat
            qmin = math.ceil(4 * tau / width) + 1
        sys_ = make_system(n, dim, float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.1, 5.0)), delay, kernel)
        hist = random_history(rng, n, dim, delay.tau_max, float(rng.uniform(0.1, 3.0)))
        step = min(0.05, delay.tau_min / 2)
        traj = integrate(sys_, DistributedConsensus(), hist, 3.0, IntegratorConfig(step, quad_points_min=qmin), ModelKind.DISTRIBUTED)
        worst = max(worst, float(np.max(max_norm_series(traj))) / radius_R(hist))
    elapsed = time.perf_counter() - start
    verdict(2, "distributed boundedness", worst <= 1 + 1e-6,
            f"max|x|/R = {worst:.9f}, kernels {kinds}, {elapsed:.1f} s")


# ----------------------------------------------------------------------- 3


def test_criterion_03_admissibility():
    rng = np.random.default_rng(77)
    draws = 1000
    worst = {"consensus_pointwise": 0.0, "consensus_distributed": 0.0, "steer": 0.0, "steer_held": 0.0, "zero": 0.0}
    worst_alpha = 0.0
    for _ in range(draws):
        n, dim = int(rng.integers(1, 21)), int(rng.integers(1, 4))
        M = float(10 ** rng.uniform(-3, 1))
        sys_ = make_system(n, dim, float(10 ** rng.uniform(-1, 1)), M, constant_delay(1.0))
        scale = float(10 ** rng.uniform(-2, 2))
        y = scale * rng.standard_normal((n + 1, dim))
        yd = scale * rng.standard_normal((n + 1, dim))
        u, alpha = consensus_pointwise_control(sys_, y, yd)
        worst["consensus_pointwise"] = max(worst["consensus_pointwise"], np.linalg.norm(u) / M)
        worst_alpha = max(worst_alpha, n * alpha)
        m = int(rng.integers(3, 12))
        ys = scale * rng.standard_normal((m, n + 1, dim))
        w = rng.random(m)
        ud, alphas = consensus_distributed_control(sys_, y, Window(np.linspace(0, 1, m), w, float(w.sum())), ys)
        worst["consensus_distributed"] = max(worst["consensus_distributed"], np.linalg.norm(ud) / M)
        worst_alpha = max(worst_alpha, float(np.max(n * alphas)))
        xi = scale * rng.standard_normal(dim)
        worst["steer"] = max(worst["steer"], np.linalg.norm(u_steer(y[0], xi, M)) / M)
        worst["steer_held"] = max(worst["steer_held"], np.linalg.norm(_held_steer(y[0], xi, M, 0.01)) / M)
        worst["zero"] = max(worst["zero"], np.linalg.norm(ZeroControl().control(None, _Ctx(sys_), None)))
    ok = all(v <= 1.0 for v in worst.values()) and worst_alpha <= 1.0
    detail = ", ".join(f"{k} max|u|/M={v:.6f}" for k, v in worst.items())
    verdict(3, "admissibility", ok, f"{draws} draws per policy; {detail}; max N*alpha={worst_alpha:.6f}")


class _Ctx:
    def __init__(self, system):
        self.system = system


# ----------------------------------------------------------------------- 4


def test_criterion_04_consensus_preset():
    start = time.perf_counter()
    rows, ok = [], True
    for tau in (0.5, 1.0, 10.0, 25.0):
        rep = run_scenario(fig1_config(tau)).report
        good = rep.terminal_d0 < 1e-3 and rep.consensus_reached
        if tau >= 10:
            good = good and rep.oscillating
        ok = ok and good
        rows.append(f"tau={tau:g}: d0_end={rep.terminal_d0:.1e} t_c={rep.consensus_time} osc={rep.oscillating}")
    elapsed = time.perf_counter() - start
    verdict(4, "consensus preset at four delays", ok and elapsed < 120, "; ".join(rows) + f"; {elapsed:.1f} s")


# ----------------------------------------------------------------------- 5


def test_criterion_05_waypoint_preset():
    res = run_scenario(fig2_config())
    traj = res.trajectory
    final = traj.times >= traj.t_end - 10.0 - 1e-9
    dev = float(np.max(np.abs(traj.states[final, 1:, 0] - 4.0)))
    margin = res.report.certificates.halanay_margin
    ok = dev <= 0.05 and res.report.certificates.halanay_ok and abs(margin - 0.2155) <= 1e-4
    verdict(5, "waypoint steering preset", ok,
            f"max|x_i-4| over final 10 = {dev:.2e}, halanay margin = {margin:.6f}, done at t={traj.events[-1][0]:.2f}")


# ----------------------------------------------------------------------- 6


def test_criterion_06_finite_time_steering():
    cfg = ScenarioConfig(
        {
            "params": {"control_bound": 2.0},
            "policy": {"kind": "steer", "target": [4.0]},
            "initial": {"kind": "section6"},
            "delay": {"kind": "constant", "tau": 1.0},
            "t_end": 6.0,
            "step": 0.01,
        }
    )
    traj = run_scenario(cfg).trajectory
    gap = abs(traj.lookup(2.0)[0, 0] - 4.0)
    worst, bound = steering_containment(traj, [4.0])
    ok = gap <= 1e-3 and worst <= bound * (1 + 1e-9)
    verdict(6, "finite-time steering", ok, f"|x0(2)-4| = {gap:.1e}, containment {worst:.6f} <= {bound:.6f}")


# ----------------------------------------------------------------------- 7


def test_criterion_07_halanay_decay():
    rng = np.random.default_rng(9)
    n, T = 12, 40.0
    sys_ = make_system(n, delay=constant_delay(1.0))
    ok_h, margin = check_halanay(sys_.params, PHI)
    followers = rng.uniform(-0.5, 0.5, n)
    followers[0] = 0.5
    hist = History.constant(np.concatenate([[0.0], followers])[:, None], 1.0)
    traj = integrate(sys_, ZeroControl(), hist, T, IntegratorConfig(0.01))
    spread = max_norm_series(traj, traj.states[0, 0])
    fwd = traj.times >= 0
    invariant = float(np.max(spread[fwd])) <= 0.5 + 1e-12
    half = traj.times >= T / 2
    rate = fit_decay_rate(traj.times[half], spread[half])
    leader_fixed = bool(np.all(traj.states[:, 0] == 0.0))
    ok = ok_h and invariant and leader_fixed and rate >= 0.05
    verdict(7, "Halanay decay", ok,
            f"margin={margin:.4f}, max spread={np.max(spread[fwd]):.4f} <= 0.5, fitted rate={rate:.4f}")


# ----------------------------------------------------------------------- 8


def test_criterion_08_certificate_formulas():
    mp.mp.dps = 50
    L = 0.85865
    p = ModelParams(50, 1, 1.0, 1.0, 1.0, 2.0, L)
    g, R, Lm, B = mp.mpf(1), mp.mpf(1), mp.mpf("0.85865"), mp.mpf(1)
    f = (1 + (2 * R) ** 2) ** mp.mpf("-1.5")
    rg = g * Lm * R + g + 1
    oracle_p = mp.log(1 + g * f / (g * (1 + 2 * g) * f + 4 * (1 + g) * rg))
    oracle_d = mp.log(1 + g * f / (4 * rg * B * (1 + g) + g * f * B * (1 + 2 * g)))
    got_p = tau_bound_pointwise(p, PHI, 1.0)
    got_d = tau_bound_distributed(p, PHI, 1.0, 1.0)
    err_p = abs(got_p - float(oracle_p)) / float(oracle_p)
    err_d = abs(got_d - float(oracle_d)) / float(oracle_d)
    verdict(8, "certificate formulas", err_p <= 1e-6 and err_d <= 1e-6,
            f"pointwise {got_p:.10e} (rel err {err_p:.1e}), distributed {got_d:.10e} (rel err {err_d:.1e}) "
            f"vs 50-digit evaluation {mp.nstr(oracle_p, 12)}")


# ----------------------------------------------------------------------- 9


def test_criterion_09_lyapunov_monotonicity():
    tau = 0.003
    x = np.array([0.0, 1.0, -0.6, 0.3, -0.9, 0.5])[:, None]
    hist = History.constant(x, tau)
    out = []
    # pointwise functional
    sys_p = make_system(5, delay=constant_delay(tau))
    bound_p = tau_bound_pointwise(sys_p.params, PHI, radius_R(hist))
    w = default_lyapunov_weight(sys_p.params, PHI, radius_R(hist), tau)
    traj = integrate(sys_p, PointwiseConsensus(), hist, 5.0, IntegratorConfig(0.001))
    s = lyapunov_series(traj, w, None, tau)
    rise_p = float(np.max(np.diff(s[~np.isnan(s)])))
    out.append(f"pointwise: tau={tau} < {bound_p:.4g}, weight={w:.4g}, max rise={rise_p:.1e}")
    # distributed functional, unit kernel on [0, tau]
    k = uniform_kernel(tau, tau)
    sys_d = make_system(5, delay=constant_delay(tau), kernel=k)
    bound_d = tau_bound_distributed(sys_d.params, PHI, radius_R(hist), k)
    mu = default_lyapunov_weight(sys_d.params, PHI, radius_R(hist), tau, k.b_total)
    traj = integrate(sys_d, DistributedConsensus(), hist, 5.0, IntegratorConfig(0.001), ModelKind.DISTRIBUTED)
    s = lyapunov_series(traj, mu, k, tau)
    rise_d = float(np.max(np.diff(s[~np.isnan(s)])))
    out.append(f"distributed: tau={tau} < {bound_d:.4g}, weight={mu:.4g}, max rise={rise_d:.1e}")
    ok = tau < bound_p and tau < bound_d and rise_p <= 1e-6 and rise_d <= 1e-6
    verdict(9, "Lyapunov monotonicity", ok, "; ".join(out))


# ---------------------------------------------------------------------- 10


def test_criterion_10_dirac_limit():
    rng = np.random.default_rng(5)
    n = 10
    x = np.concatenate([[0.0], rng.uniform(-1, 1, n)])[:, None]
    hist = History.constant(x, 1.1)
    cfg = IntegratorConfig(0.01)
    ref = integrate(make_system(n, delay=constant_delay(1.0)), PointwiseConsensus(), hist, 15.0, cfg)
    dists = []
    for width in (0.2, 0.1, 0.05):
        sys_ = make_system(n, delay=constant_delay(1.1), kernel=hat_kernel(1.0, width, 1.1, 1.1))
        traj = integrate(sys_, DistributedConsensus(), hist, 15.0, cfg, ModelKind.DISTRIBUTED)
        dists.append(float(np.max(np.abs(traj.states[traj.forward()] - ref.states[ref.forward()]))))
    ok = dists[0] > dists[1] > dists[2]
    verdict(10, "Dirac-limit equivalence", ok, "sup distances " + ", ".join(f"{d:.2e}" for d in dists))


# ---------------------------------------------------------------------- 11


def test_criterion_11_self_convergence():
    times = np.linspace(-1.0, 0.0, 26)
    rng = np.random.default_rng(1)
    base = rng.uniform(-0.3, 0.3, (4, 1))
    freq = rng.uniform(0.5, 1.5, (4, 1))
    hist = History(times, base + 0.2 * np.sin(freq * times[:, None, None]))
    sys_ = make_system(3, delay=constant_delay(1.0))
    h = 0.04
    run = lambda step: integrate(sys_, ZeroControl(), hist, 4.0, IntegratorConfig(step)).states[-1]
    ref = run(h / 8)
    errs = [float(np.max(np.abs(run(h / 2**k) - ref))) for k in range(3)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    verdict(11, "integrator self-convergence", all(r >= 3.5 for r in ratios),
            "errors " + ", ".join(f"{e:.2e}" for e in errs) + "; ratios " + ", ".join(f"{r:.1f}" for r in ratios))


# ---------------------------------------------------------------------- 12


def test_criterion_12_translation_equivariance():
    a = run_scenario(fig2_config()).trajectory
    b = run_scenario(fig2_config(shift=10.0)).trajectory
    ds = float(np.max(np.abs(b.states - a.states - 10.0)))
    du = float(np.max(np.abs(b.controls - a.controls)))
    dd = float(np.max(np.abs(b.derivs - a.derivs)))
    ok = a.times.shape == b.times.shape and max(ds, du, dd) <= 1e-9 and a.events == b.events
    verdict(12, "translation equivariance", ok, f"state shift error {ds:.1e}, control diff {du:.1e}, slope diff {dd:.1e}")
