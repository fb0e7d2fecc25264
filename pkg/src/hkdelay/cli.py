"""Scenario runner, sweeps, certificate report and the command line.

Subcommands::

    hkdelay simulate <config> [--out DIR] [--strict]
    hkdelay sweep <config> --axis NAME --values V1,V2,... [--out DIR] [--workers N] [--strict]
    hkdelay certify <config> [--strict]
    hkdelay preset {fig1,fig2} [--tau V] [--out DIR] [--strict]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certificate violation (with ``--strict``).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import RunReport, analyze, certify
from .config import PRESETS, ScenarioConfig
from .domain import Trajectory
from .engine import integrate
from .errors import CertificateViolationError, ConfigError, HKDelayError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CERTIFICATE = 0, 2, 3, 4

SWEEP_AXES = {
    "tau": "delay.tau",
    "gamma": "params.gamma",
    "control_bound": "params.control_bound",
    "M": "params.control_bound",
    "step": "step",
    "kernel_mass": None,
    "B": None,
}


@dataclass
class RunResult:
    config: ScenarioConfig
    trajectory: Trajectory
    report: RunReport


# ------------------------------------------------------------------ running


def run_scenario(cfg: ScenarioConfig, out: Optional[Path] = None, name: str = "run") -> RunResult:
    """Integrate and analyze one scenario; write ``<name>.csv`` and
    ``<name>.json`` under ``out`` when given."""
    sc = cfg.build()
    traj = integrate(sc.system, sc.policy, sc.history, sc.t_end, sc.integrator, sc.model)
    report = analyze(traj, sc.system, sc.history, sc.model, sc.lyapunov_weight)
    result = RunResult(cfg, traj, report)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(traj, out / f"{name}.csv")
        write_report(result, out / f"{name}.json")
    return result


def csv_header(n_agents: int, dim: int) -> list:
    def cols(base):
        return [base] if dim == 1 else [f"{base}_{k}" for k in range(dim)]

    head = ["t"] + cols("u")
    for i in range(n_agents + 1):
        head += cols(f"x_{i}")
    return head


def write_csv(traj: Trajectory, path):
    """Forward part of ``traj`` as CSV with 15 significant digits."""
    sl = traj.forward()
    t = traj.times[sl]
    n, d = traj.n_agents, traj.dim
    table = np.column_stack([t, traj.controls[sl].reshape(len(t), d), traj.states[sl].reshape(len(t), -1)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(csv_header(n, d)) + "\n")
        np.savetxt(fh, table, fmt="%.15g", delimiter=",", newline="\n")


def read_csv(path):
    """``(header, table)`` of a CSV written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def report_dict(result: RunResult) -> dict:
    cfg = result.config
    summary = result.report.summary()
    summary["complies"] = result.report.certificates.complies(cfg.model)
    return _jsonable({"config": cfg.to_dict(), "report": summary})


def write_report(result: RunResult, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ sweeps


def sweep_config(base: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"expected one of {sorted(SWEEP_AXES)}, got {axis!r}")
    value = float(value)
    path = SWEEP_AXES[axis]
    if axis == "tau":
        return base.with_value("delay", {"kind": "constant", "tau": value})
    if path is not None:
        return base.with_value(path, value)
    # kernel mass: rescale the kernel height / table
    kernel = base.data.get("kernel")
    if base.data["model"] != "distributed" or kernel is None:
        raise ConfigError("axis", "kernel mass sweeps need a distributed model")
    sc = base.build()
    factor = value / sc.system.kernel.b_total
    kernel = dict(kernel)
    if kernel["kind"] == "uniform":
        kernel["height"] = float(kernel.get("height", 1.0)) * factor
    elif kernel["kind"] == "table":
        kernel["values"] = [float(v) * factor for v in kernel["values"]]
    else:
        raise ConfigError("kernel.kind", "hat kernels have unit mass; use a uniform or table kernel")
    return base.with_value("kernel", kernel)


@dataclass
class SweepTable:
    axis: str
    values: list
    results: list
    convergence_ratios: Optional[list] = None

    def rows(self) -> list:
        out = []
        for v, r in zip(self.values, self.results):
            rep, c = r.report, r.report.certificates
            out.append(
                {
                    "value": v,
                    "consensus_time": rep.consensus_time,
                    "terminal_d0": rep.terminal_d0,
                    "fitted_rate": rep.fitted_rate,
                    "oscillating": rep.oscillating,
                    "max_control_norm": rep.max_control_norm,
                    "tau_bound_pointwise": c.tau_bound_pointwise,
                    "tau_bound_distributed": c.tau_bound_distributed,
                    "complies": c.complies(r.config.model),
                }
            )
        return out


def self_convergence_ratios(trajs: Sequence[Trajectory]) -> list:
    """Ratios of successive terminal-state differences for a halving step sequence."""
    ends = [t.states[-1] for t in trajs]
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(ends, ends[1:])]
    return [a / b if b > 0 else math.inf for a, b in zip(diffs, diffs[1:])]


def run_sweep(
    base: ScenarioConfig, axis: str, values: Sequence[float], workers: Optional[int] = None, out=None
) -> SweepTable:
    """One run per value, executed on a thread pool; results keep input order."""
    cfgs = [sweep_config(base, axis, v) for v in values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_scenario, cfgs))
    table = SweepTable(axis, [float(v) for v in values], results)
    if axis == "step" and len(results) >= 3:
        table.convergence_ratios = self_convergence_ratios([r.trajectory for r in results])
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for i, r in enumerate(results):
            write_csv(r.trajectory, out / f"{axis}_{i}.csv")
            write_report(r, out / f"{axis}_{i}.json")
        with open(out / "sweep.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(
                _jsonable({"axis": axis, "rows": table.rows(), "convergence_ratios": table.convergence_ratios}),
                fh,
                indent=2,
            )
            fh.write("\n")
    return table


# ------------------------------------------------------------ certificates


def emit_certificates(cfg: ScenarioConfig) -> dict:
    """Certificate values for ``cfg`` without simulating."""
    sc = cfg.build()
    certs = certify(sc.system, sc.history, sc.model)
    data = certs.as_dict()
    data["model"] = sc.model.value
    data["complies"] = certs.complies(sc.model)
    return _jsonable(data)


def format_certificates(data: dict) -> str:
    return "\n".join(f"{k:28s} {v}" for k, v in sorted(data.items()))


# --------------------------------------------------------------------- CLI


def _parse_values(text: str) -> list:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError("values", f"expected a comma-separated list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hkdelay", description="Delayed leader-follower opinion dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("config")
    p.add_argument("--out", default="out")
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("sweep", help="run a one-parameter sweep")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("certify", help="evaluate delay certificates without simulating")
    p.add_argument("config")
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("preset", help="run a built-in scenario")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out", default="out")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--write-config", default=None, help="also save the preset as YAML")
    return parser


def _print_summary(label: str, result: RunResult):
    rep = result.report
    ct = "-" if rep.consensus_time is None else f"{rep.consensus_time:.4g}"
    rate = "-" if rep.fitted_rate is None else f"{rep.fitted_rate:.4g}"
    print(
        f"{label}: consensus={'yes' if rep.consensus_reached else 'no'} t_c={ct} "
        f"d0_end={rep.terminal_d0:.3e} rate={rate} oscillating={rep.oscillating} "
        f"complies={rep.certificates.complies(result.config.model)}"
    )


def _main(args) -> int:
    if args.command == "certify":
        cfg = ScenarioConfig.load(args.config)
        data = emit_certificates(cfg)
        print(format_certificates(data))
        return EXIT_CERTIFICATE if args.strict and not data["complies"] else EXIT_OK

    if args.command == "sweep":
        cfg = ScenarioConfig.load(args.config)
        table = run_sweep(cfg, args.axis, _parse_values(args.values), args.workers, args.out)
        for v, r in zip(table.values, table.results):
            _print_summary(f"{args.axis}={v:g}", r)
        if table.convergence_ratios is not None:
            print("self-convergence ratios: " + ", ".join(f"{q:.4g}" for q in table.convergence_ratios))
        ok = all(r.report.certificates.complies(r.config.model) for r in table.results)
        return EXIT_CERTIFICATE if args.strict and not ok else EXIT_OK

    if args.command == "preset":
        cfg = PRESETS[args.name](args.tau)
        name = f"{args.name}_tau{args.tau:g}"
        if args.write_config:
            cfg.dump(args.write_config)
    else:
        cfg = ScenarioConfig.load(args.config)
        name = Path(args.config).stem
    result = run_scenario(cfg, args.out, name)
    _print_summary(name, result)
    print(f"wrote {Path(args.out) / (name + '.csv')} and {Path(args.out) / (name + '.json')}")
    complies = result.report.certificates.complies(cfg.model)
    return EXIT_CERTIFICATE if args.strict and not complies else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _main(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateViolationError as exc:
        print(f"certificate violation: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except (NumericalError, HKDelayError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
