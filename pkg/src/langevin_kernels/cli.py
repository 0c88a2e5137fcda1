"""Command-line front end.

    langevin-kernels <command> --config scenario.cfg --out results/ [--seed N] [--threads N] [--order N]

Commands: density, parametrix, spde, mc-check, bounds, control, flow-check.

A scenario file holds flat ``key = value`` lines with dotted keys; ``#``
starts a comment. Unknown keys are rejected. Exit status is 0 when every
gated check passes, 1 when one fails, 2 for configuration errors and 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brownian import BrownianPath
from .coefficients import KolmogorovCoefficients, SpdeCoefficients, builtin_family
from .errors import ConfigError, LangevinKernelError
from .gaussian_kernels import LangevinParams
from .geometry import PhasePoint
from .parametrix_solver import ParametrixConfig, fundamental_solution_batch
from .spde_assembler import AssembledKernel, ClosedFormKernel, spde_residual, wentzell_transform
from .verification import (
    Check,
    ParametrixKernel,
    SandwichGrid,
    flow_bound_check,
    mc_conditional_check,
    minimal_energy_control,
    sandwich_estimate,
)

__all__ = ["Scenario", "parse_config", "load_scenario", "run_scenario", "emit_summary", "main", "COMMANDS"]

COMMANDS = ("density", "parametrix", "spde", "mc-check", "bounds", "control", "flow-check")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (converter, default)
SCHEMA = {
    "scenario.name": (str, "scenario"),
    "family.name": (str, None),
    "time.tau": (float, 0.0),
    "time.end": (float, 1.0),
    "time.eval": (_floats, None),
    "path.seed": (int, 0),
    "path.dt": (float, 1e-3),
    "pole.x": (float, 0.0),
    "pole.v": (float, 0.0),
    "target.x": (float, 1.0),
    "target.v": (float, 0.0),
    "grid.x_min": (float, -1.0),
    "grid.x_max": (float, 1.0),
    "grid.nx": (int, 21),
    "grid.v_min": (float, -1.0),
    "grid.v_max": (float, 1.0),
    "grid.nv": (int, 21),
    "parametrix.order": (int, 2),
    "parametrix.time_nodes": (int, 8),
    "parametrix.space_order": (int, 8),
    "parametrix.alpha": (float, None),
    "parametrix.time_rule": (str, "one-sided"),
    "mc.paths": (int, 100_000),
    "mc.t": (float, None),
    "flow.paths": (int, 200),
    "flow.extent": (float, 10.0),
    "flow.n": (int, 21),
    "bounds.nx": (int, 9),
    "bounds.nv": (int, 9),
    "bounds.nt": (int, 5),
    "bounds.radius": (float, 3.0),
    "bounds.refine": (_bool, False),
    "spde.residual": (_bool, False),
    "spde.residual_tol": (float, 0.1),
}


@dataclass(frozen=True)
class Scenario:
    """Validated scenario; ``values`` holds every schema key, family parameters apart."""

    values: dict
    family_params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def name(self) -> str:
        return self.values["scenario.name"]

    @property
    def pole(self) -> PhasePoint:
        return PhasePoint(self["pole.x"], self["pole.v"])

    def eval_times(self) -> tuple[float, ...]:
        return self["time.eval"] or (self["time.end"],)

    def coefficients(self):
        name = self["family.name"]
        if name is None:
            raise ConfigError("missing family.name", key="family.name")
        try:
            return builtin_family(name, self.family_params)
        except ConfigError as exc:
            key = exc.key if exc.key in (None, "family") else f"family.{exc.key}"
            raise ConfigError(str(exc), key=key or "family.name") from None

    def parametrix_config(self, threads: int = 1) -> ParametrixConfig:
        try:
            return ParametrixConfig(
                series_order=self["parametrix.order"],
                time_quad_nodes=self["parametrix.time_nodes"],
                space_quad_order=self["parametrix.space_order"],
                alpha=self["parametrix.alpha"],
                time_rule=self["parametrix.time_rule"],
                threads=threads,
            )
        except LangevinKernelError as exc:
            raise ConfigError(str(exc), key="parametrix") from None

    def path(self) -> BrownianPath:
        return BrownianPath.sample(self["path.seed"], self["time.end"], self["path.dt"], t0=self["time.tau"])

    def grid(self):
        xs = np.linspace(self["grid.x_min"], self["grid.x_max"], self["grid.nx"])
        vs = np.linspace(self["grid.v_min"], self["grid.v_max"], self["grid.nv"])
        return xs, vs


def parse_config(text: str) -> dict:
    """Flat ``key = value`` pairs; raises ConfigError naming the bad key or line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", key=line)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key", key="")
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key=key)
        out[key] = value
    return out


def _coerce_family_value(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def build_scenario(raw: dict, overrides: dict | None = None) -> Scenario:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    fam = {}
    for key, text in raw.items():
        if key.startswith("family.") and key != "family.name":
            fam[key[len("family."):]] = _coerce_family_value(text)
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key=key)
        conv = SCHEMA[key][0]
        try:
            values[key] = conv(text)
        except ValueError:
            raise ConfigError(f"bad value {text!r} for key {key!r}", key=key) from None
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    sc = Scenario(values, fam)
    _validate(sc)
    return sc


def _validate(sc: Scenario) -> None:
    if not sc["time.tau"] < sc["time.end"]:
        raise ConfigError("time.tau must precede time.end", key="time.end")
    if not sc["path.dt"] > 0:
        raise ConfigError("path.dt must be positive", key="path.dt")
    n = (sc["time.end"] - sc["time.tau"]) / sc["path.dt"]
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigError("path.dt must divide time.end - time.tau", key="path.dt")
    for key in ("grid.nx", "grid.nv", "bounds.nx", "bounds.nv", "bounds.nt", "flow.n"):
        if sc[key] < 1:
            raise ConfigError(f"{key} must be at least 1", key=key)
    for t in sc.eval_times():
        if not sc["time.tau"] < t <= sc["time.end"]:
            raise ConfigError("time.eval entries must lie in (time.tau, time.end]", key="time.eval")
    if sc["parametrix.order"] < 0:
        raise ConfigError("parametrix.order must be non-negative", key="parametrix.order")


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", key="--config") from None
    return build_scenario(parse_config(text), overrides)


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([r if isinstance(r, str) else _fmt(r) for r in row])


def _checks_of(report):
    if isinstance(report, Check):
        return [report]
    if hasattr(report, "checks"):
        return list(report.checks())
    return [c for c in report]


def emit_summary(reports, header: str | None = None) -> str:
    """One line per check: name, value, threshold, PASS/FAIL. Empty reports are skipped."""
    lines = [header] if header else []
    for rep in reports:
        for ch in _checks_of(rep):
            lines.append(f"{ch.name}: value={ch.value:.10g} threshold={ch.threshold:.10g} "
                         f"{'PASS' if ch.passed else 'FAIL'}")
    return "\n".join(lines)


def _kernel_rows(t, s, x, v, zeta, out):
    val, dv, dvv = (np.asarray(o, dtype=float).ravel() for o in out)
    return [(ti, s, xi, vi, zeta.x, zeta.v, a, b, c) for ti, xi, vi, a, b, c in
            zip(t.ravel(), x.ravel(), v.ravel(), val, dv, dvv)]


KERNEL_HEADER = ["t", "s", "x", "v", "xi", "eta", "value", "dv", "dvv"]


def _eval_grid(sc: Scenario):
    xs, vs = sc.grid()
    T, X, V = np.meshgrid(np.array(sc.eval_times()), xs, vs, indexing="ij")
    return T, X, V


def _finite_check(name, arr):
    bad = int(np.count_nonzero(~np.isfinite(arr)))
    return Check(name, float(bad), 0.0, bad == 0)


def _require(c, kind, sc):
    if not isinstance(c, kind):
        what = "stochastic" if kind is SpdeCoefficients else "Kolmogorov"
        raise ConfigError(f"family {sc['family.name']!r} is not a {what} family for this command",
                          key="family.name")
    return c


def _params_of(c: SpdeCoefficients, sc: Scenario) -> LangevinParams:
    if c.name != "constant":
        raise ConfigError("this command needs the constant family", key="family.name")
    try:
        return LangevinParams(c.params["a"], c.params["sigma"])
    except LangevinKernelError as exc:
        raise ConfigError(str(exc), key="family.sigma") from None


# ---------------------------------------------------------------- commands


def _cmd_density(sc, out, threads):
    c = _require(sc.coefficients(), SpdeCoefficients, sc)
    params = _params_of(c, sc)
    k = ClosedFormKernel(params, sc.path(), sc["time.tau"], sc.pole)
    T, X, V = _eval_grid(sc)
    res = k(T, X, V)
    _write_csv(out / "density.csv", KERNEL_HEADER, _kernel_rows(T, sc["time.tau"], X, V, sc.pole, res))
    return {"points": T.size}, [_finite_check("density non-finite values", res[0])]


def _cmd_parametrix(sc, out, threads):
    c = _require(sc.coefficients(), KolmogorovCoefficients, sc)
    cfg = sc.parametrix_config(threads)
    T, X, V = _eval_grid(sc)
    res = fundamental_solution_batch(c, cfg, T, X, V, sc["time.tau"], sc.pole.x, sc.pole.v)
    _write_csv(out / "parametrix.csv", KERNEL_HEADER, _kernel_rows(T, sc["time.tau"], X, V, sc.pole, res))
    return {"points": T.size, "order": cfg.series_order}, [_finite_check("parametrix non-finite values", res[0])]


def _cmd_spde(sc, out, threads):
    c = _require(sc.coefficients(), SpdeCoefficients, sc)
    cfg = sc.parametrix_config(threads)
    w = sc.path()
    tau = sc["time.tau"]
    problem = wentzell_transform(c, w, tau)
    k = AssembledKernel(problem, cfg, sc.pole)
    T, X, V = _eval_grid(sc)
    res = k(T, X, V)
    _write_csv(out / "spde.csv", KERNEL_HEADER, _kernel_rows(T, tau, X, V, sc.pole, res))
    info = {"points": T.size, "order": cfg.series_order}
    checks = [_finite_check("spde non-finite values", res[0])]
    if sc["spde.residual"]:
        t_end = sc["time.end"]
        t0 = tau + w.dt * max(1, int(round(0.5 * (t_end - tau) / w.dt)))
        centre = PhasePoint(0.5 * (sc["grid.x_min"] + sc["grid.x_max"]), 0.5 * (sc["grid.v_min"] + sc["grid.v_max"]))
        rep = spde_residual(c, w, tau, k, t0, t_end, centre, sc.pole)
        info["residual"] = rep.residual
        info["residual_relative"] = rep.relative
        tol = sc["spde.residual_tol"]
        checks.append(Check("spde residual relative", rep.relative, tol, rep.relative <= tol))
    return info, checks


def _cmd_mc(sc, out, threads):
    c = _require(sc.coefficients(), SpdeCoefficients, sc)
    params = _params_of(c, sc)
    w = sc.path()
    t = sc["mc.t"] if sc["mc.t"] is not None else sc["time.end"] - sc["time.tau"]
    rep = mc_conditional_check(params, w, sc.pole, t, sc["mc.paths"], seed=sc["path.seed"])
    rows = [
        ("mean_x", rep.mean[0], rep.mean_ref[0], rep.stderr[0]),
        ("mean_v", rep.mean[1], rep.mean_ref[1], rep.stderr[1]),
        ("cov_xx", rep.cov.a11, rep.cov_ref.a11, math.nan),
        ("cov_xv", rep.cov.a12, rep.cov_ref.a12, math.nan),
        ("cov_vv", rep.cov.a22, rep.cov_ref.a22, math.nan),
    ]
    rows += [(f"phi_{k}", m, r, se) for k, (m, r, se) in
             enumerate(zip(rep.test_values, rep.test_refs, rep.test_stderr))]
    _write_csv(out / "mc-check.csv", ["quantity", "value", "reference", "stderr"], rows)
    return {"paths": rep.n_paths, "frobenius_rel": rep.frobenius_rel}, rep.checks()


def _cmd_bounds(sc, out, threads):
    c = _require(sc.coefficients(), KolmogorovCoefficients, sc)
    cfg = sc.parametrix_config(threads)
    tau, end = sc["time.tau"], sc["time.end"]
    nt = sc["bounds.nt"]
    times = tuple(np.linspace(tau + (end - tau) / nt, end, nt))
    grid = SandwichGrid(tau, sc.pole, times, sc["bounds.nx"], sc["bounds.nv"], sc["bounds.radius"])
    kernel = ParametrixKernel(c, cfg)
    rep = sandwich_estimate(kernel, c, grid)
    info = {"mu": rep.mu, "mu_upper": rep.mu_upper, "mu_lower": rep.mu_lower, "grid_size": rep.grid_size,
            "saturated": rep.saturated}
    checks = list(rep.checks())
    if sc["bounds.refine"]:
        fine = sandwich_estimate(kernel, c, grid.refined())
        change = abs(fine.mu / rep.mu - 1.0) if math.isfinite(fine.mu) else math.inf
        info["mu_refined"] = fine.mu
        info["refined_grid_size"] = fine.grid_size
        checks += fine.checks()
        checks.append(Check("sandwich mu change under refinement", change, 0.1, change <= 0.1))
    _write_csv(out / "bounds.csv", ["quantity", "value"],
               [(k, float(v)) for k, v in info.items()])
    return info, checks


def _cmd_control(sc, out, threads):
    c = _require(sc.coefficients(), KolmogorovCoefficients, sc)
    target = PhasePoint(sc["target.x"], sc["target.v"])
    rep = minimal_energy_control(c, sc["time.tau"], sc.pole, sc["time.end"], target)
    _write_csv(out / "control.csv", ["t", "control"], zip(rep.times, rep.control))
    info = {"energy": rep.energy, "linear_energy": rep.linear_energy, "endpoint_gap": rep.endpoint_gap,
            "newton_steps": rep.iterations}
    return info, rep.checks()


def _cmd_flow(sc, out, threads):
    c = _require(sc.coefficients(), SpdeCoefficients, sc)
    g = np.linspace(-sc["flow.extent"], sc["flow.extent"], sc["flow.n"])
    try:
        rep = flow_bound_check(c, sc["flow.paths"], g, g, sc["time.end"], sc["path.dt"], seed=sc["path.seed"],
                               tau=sc["time.tau"])
    except LangevinKernelError as exc:
        if c.eps is None:
            raise ConfigError(str(exc), key="family.eps") from None
        raise
    _write_csv(out / "flow-check.csv", ["path", "m"], ((str(i), m) for i, m in enumerate(rep.per_path_m)))
    info = {"m": rep.m, "m_value": rep.m_value, "m_dv": rep.m_dv, "m_dx": rep.m_dx, "m_second": rep.m_second,
            "dv_min": rep.dv_min, "dv_max": rep.dv_max, "eps": rep.eps}
    return info, rep.checks()


_DISPATCH = {
    "density": _cmd_density,
    "parametrix": _cmd_parametrix,
    "spde": _cmd_spde,
    "mc-check": _cmd_mc,
    "bounds": _cmd_bounds,
    "control": _cmd_control,
    "flow-check": _cmd_flow,
}


def run_scenario(command: str, config, out_dir, seed: int | None = None, threads: int = 1,
                 order: int | None = None, stream=None) -> int:
    """Run one command; returns the process exit status."""
    stream = stream or sys.stdout
    try:
        sc = load_scenario(config, {"path.seed": seed, "parametrix.order": order})
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with np.errstate(over="ignore", under="ignore"):
            info, checks = _DISPATCH[command](sc, out, threads)
    except ConfigError as exc:
        print(f"error: configuration key {exc.key!r}: {exc}", file=sys.stderr)
        return 2
    except (LangevinKernelError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure in {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    report = [f"scenario = {sc.name}", f"command = {command}"]
    report += [f"{k} = {_fmt(v) if isinstance(v, float) else v}" for k, v in info.items()]
    report += [f"check.{ch.name} = {_fmt(ch.value)} {'PASS' if ch.passed else 'FAIL'}" for ch in checks]
    (out / "report.txt").write_text("\n".join(report) + "\n")
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    summary = emit_summary([checks], header=f"# {sc.name} / {command} / {stamp}")
    (out / "summary.txt").write_text(summary + "\n")
    print(summary, file=stream)
    return 0 if all(ch.passed for ch in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="langevin-kernels", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="scenario file with key = value lines")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override path.seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for compiled quadrature")
    p.add_argument("--order", type=int, default=None, help="override parametrix.order")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    return run_scenario(args.command, args.config, args.out, args.seed, args.threads, args.order)


if __name__ == "__main__":
    sys.exit(main())
