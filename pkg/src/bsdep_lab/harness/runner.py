"""Experiment orchestration and reproducible outputs.

Files written to the output directory:

``config.resolved.json``
    the config with defaults filled in (its hash identifies the run)
``solution.csv``
    ``path,node,time,Y,Z1..Zd,U1..Um``; ``Z`` and ``U`` are blank at the last node
``solution_2.csv``
    the second solution of a compare run, same layout
``weights.csv``
    ``path,weight`` (oracle runs)
``fn_values.csv``
    ``t,y,Z1..,U1..,f,f_<n>..`` at the sampled points (validate runs with ``fn_properties``)
``increments.csv``, ``jumps.csv``
    the raw noise (simulate runs)
``summary.json``
    numbers behind every check
``manifest.json``
    config hash, seed, versions, wall-clock, file digests and verdicts; written last, atomically
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..generator import (Box, check_fn_properties, validate_declared, validate_growth_H1, validate_jump_monotone_A3,
                         validate_lipschitz_A2, validate_weak_monotone_H2)
from ..girsanov import linear_representation
from ..noise import MarkSpace, PathEnsemble, compensated_integral_ensemble, sample_ensemble, write_ensemble_csv
from ..solver import (BSDEPSolution, backward_residual, compare_solutions, minimal_solution, picard_solve,
                      pooled_se, solve_backward, solve_infinite_horizon)
from .config import ExperimentConfig

__all__ = ["Check", "RunManifest", "RunError", "run_experiment", "write_solution_csv"]


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        return f"CHECK {self.name} {'PASS' if self.passed else 'FAIL'} {_num(self.value)} {_num(self.tolerance)}"

    def to_json(self) -> dict:
        return {"name": self.name, "verdict": "PASS" if self.passed else "FAIL",
                "value": _jsonable(self.value), "tolerance": _jsonable(self.tolerance)}


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    seed: int
    versions: dict
    wall_clock: float
    outputs: list
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_status(self) -> int:
        return 0 if self.passed else 1

    def to_json(self) -> dict:
        return {"kind": self.kind, "config_hash": self.config_hash, "seed": self.seed, "versions": self.versions,
                "wall_clock_seconds": self.wall_clock, "outputs": self.outputs,
                "checks": [c.to_json() for c in self.checks], "status": "PASS" if self.passed else "FAIL"}


def _num(x: float) -> str:
    return repr(float(x))


def _jsonable(x):
    """Replace non-finite floats and numpy scalars so the output is strict JSON."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_solution_csv(sol: BSDEPSolution, path: Path, max_paths: int | None = None) -> None:
    M, N1 = sol.y.shape
    d, m = sol.z.shape[-1], sol.u.shape[-1]
    M = M if max_paths is None else min(M, max_paths)
    nodes = [repr(t) for t in sol.grid.nodes.tolist()]
    header = ["path", "node", "time", "Y"] + [f"Z{j + 1}" for j in range(d)] + [f"U{i + 1}" for i in range(m)]
    blank = "," * (d + m)
    lines = [",".join(header)]
    for p in range(M):
        ys = list(map(repr, sol.y[p].tolist()))
        rest = [",".join(map(repr, row)) for row in np.concatenate([sol.z[p], sol.u[p]], axis=1).tolist()]
        for k in range(N1 - 1):
            lines.append(f"{p},{k},{nodes[k]},{ys[k]},{rest[k]}")
        lines.append(f"{p},{N1 - 1},{nodes[-1]},{ys[-1]}{blank}")
    path.write_text("\n".join(lines) + "\n")


class _Outputs:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.created = not directory.exists()
        directory.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        for tmp in self.dir.glob(".manifest.*.tmp"):
            tmp.unlink(missing_ok=True)
        if self.created and not any(self.dir.iterdir()):
            self.dir.rmdir()

    def digests(self) -> list[dict]:
        return [{"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()} for p in self.files if p.exists()]


def _ensemble(cfg: ExperimentConfig, grid=None) -> PathEnsemble:
    grid = grid or cfg.problem.grid
    marks = cfg.problem.marks if cfg.problem is not None else _marks(cfg)
    return sample_ensemble(grid, marks, cfg.dim, cfg.paths, cfg.seed)


def _marks(cfg: ExperimentConfig) -> MarkSpace:
    return MarkSpace.from_pairs((m["mark"], m["intensity"]) for m in cfg.raw["problem"]["marks"])


def _y0_check(cfg: ExperimentConfig, y0: float, se: float, name: str = "y0_target") -> list[Check]:
    target = cfg.check("expect_y0")
    if target is None:
        return []
    tol = cfg.check("rel_tol") * abs(target) + cfg.check("n_se") * se + cfg.check("abs_tol", 0.0)
    return [Check(name, abs(y0 - target) <= tol, abs(y0 - target), tol)]


def _terminal_check(cfg: ExperimentConfig, sol: BSDEPSolution, ens: PathEnsemble) -> Check:
    err = float(np.max(np.abs(sol.y[:, -1] - cfg.problem.terminal(ens))))
    return Check("terminal_exact", err == 0.0, err, 0.0)


def _solution_summary(sol: BSDEPSolution) -> dict:
    diag = sol.diagnostics
    out = {"y0": sol.y0, "y0_se": sol.y0_se, "scheme": diag.get("scheme"), "basis": diag.get("basis"),
           "norms": diag.get("norms"), "max_condition_number": max(diag.get("condition_numbers", [1.0]))}
    if "residual" in diag:
        out["residual"] = diag["residual"]
    return out


def _z_check(cfg: ExperimentConfig, sol: BSDEPSolution) -> list[Check]:
    target = cfg.check("expect_z")
    if target is None:
        return []
    z_mean, z_se = sol.diagnostics["z_mean"], sol.diagnostics["z_se"]
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(z_se > 0, np.abs(z_mean - target) / z_se, np.where(z_mean == target, 0.0, np.inf))
    worst = float(score.max())
    n_se = cfg.check("n_se")
    return [Check("z_target", worst <= n_se, worst, n_se)]


def _run_solve(cfg, out):
    ens = _ensemble(cfg)
    sol = solve_backward(cfg.problem, ens, cfg.basis, cfg.raw["solver"].get("implicit_iterations", 0))
    checks = [_terminal_check(cfg, sol, ens)] + _y0_check(cfg, sol.y0, sol.y0_se) + _z_check(cfg, sol)
    return checks, {"solution": _solution_summary(sol)}, {"solution.csv": sol}


def _run_picard(cfg, out):
    ens = _ensemble(cfg)
    pc = cfg.raw["solver"].get("picard", {})
    tol = pc.get("tol", 1e-8)
    sol = picard_solve(cfg.problem, ens, cfg.basis, pc.get("max_iter", 50), tol)
    ref = solve_backward(cfg.problem, ens, cfg.basis)
    info = sol.diagnostics["picard"]
    band = cfg.check("n_se") * pooled_se(sol, ref) + tol
    last = info["distances"][-1] if info["distances"] else math.inf
    checks = [
        Check("picard_converged", info["converged"], last, tol),
        Check("picard_vs_backward", abs(sol.y0 - ref.y0) <= band, abs(sol.y0 - ref.y0), band),
        _terminal_check(cfg, sol, ens),
    ] + _y0_check(cfg, sol.y0, sol.y0_se)
    summary = {"picard": info, "solution": _solution_summary(sol), "backward_y0": ref.y0}
    return checks, summary, {"solution.csv": sol}


def _run_minimal(cfg, out):
    ens = _ensemble(cfg)
    solver = cfg.raw["solver"]
    rep = minimal_solution(cfg.problem, ens, cfg.basis, solver.get("n_list", [1, 2, 4, 8]),
                           n_se=cfg.check("n_se"), **solver.get("infconv", {}))
    drops = [m["n"] for m in rep.monotone if not m["y0_ok"]]
    worst = max([a - b for a, b in zip(rep.y0, rep.y0[1:])], default=0.0)
    band = max([m["band"] for m in rep.monotone], default=0.0)
    checks = [Check("y0_monotone_in_n", not drops, worst, band)]
    for n, y0, se in zip(rep.n_list, rep.y0, rep.y0_se):
        checks += _y0_check(cfg, y0, se, f"y0_target_n{n:g}")
    summary = {"minimal": rep.to_json(), "solution": _solution_summary(rep.minimal)}
    cand = cfg.extra.get("candidate")
    if cand is not None:
        nodes = ens.grid.nodes
        y = np.broadcast_to(cand(nodes, np.zeros(nodes.size), np.zeros((nodes.size, ens.brownian_dim)),
                                 np.zeros((nodes.size, ens.mark_space.size))), (ens.n_paths, nodes.size))
        other = BSDEPSolution.from_arrays(ens, y)
        res = backward_residual(other, cfg.problem.base_spec, n_se=cfg.check("n_se"))
        cmp = compare_solutions(rep.minimal, other, cfg.check("n_se") * pooled_se(rep.minimal, other))
        checks += [Check("candidate_residual", res.passed, abs(res.mean), res.tolerance),
                   Check("minimal_below_candidate", cmp.passed, cmp.fraction, 0.0)]
        summary["candidate"] = {"residual": res.to_json(), "comparison": cmp.to_json()}
    return checks, summary, {"solution.csv": rep.minimal}


def _run_compare(cfg, out):
    ens = _ensemble(cfg)
    s1 = solve_backward(cfg.problem, ens, cfg.basis)
    s2 = solve_backward(cfg.extra["problem2"], ens, cfg.basis)
    cc = cfg.raw.get("compare", {})
    slack = cc["slack"] if "slack" in cc else cc.get("slack_se", 5.0) * pooled_se(s1, s2)
    rep = compare_solutions(s1, s2, slack)
    if cc.get("expect", "PASS") == "PASS":
        check = Check("comparison", rep.passed, rep.fraction, 0.0)
    else:
        # swapped data: the interior nodes must be almost all violations
        thr = cc.get("min_fraction", 0.99)
        check = Check("comparison_negative_control", rep.interior_fraction >= thr, rep.interior_fraction, thr)
    summary = {"comparison": rep.to_json(), "solution": _solution_summary(s1), "solution_2": _solution_summary(s2)}
    return [check], summary, {"solution.csv": s1, "solution_2.csv": s2}


def _run_oracle(cfg, out):
    ens = _ensemble(cfg)
    sol = solve_backward(cfg.problem, ens, cfg.basis)
    orc = linear_representation(cfg.extra["linear"], ens)
    band = cfg.check("n_se") * math.hypot(sol.y0_se, orc.se) + cfg.check("abs_tol", 0.0)
    diff = abs(sol.y0 - orc.y)
    wr = orc.weights
    unit = cfg.check("n_se") * wr.se
    checks = [Check("oracle_agreement", diff <= band, diff, band), _terminal_check(cfg, sol, ens),
              Check("weights_unit_mean", abs(wr.mean - 1.0) <= unit, abs(wr.mean - 1.0), unit)]
    checks += _y0_check(cfg, orc.y, orc.se, "oracle_target")
    summary = {"solver": _solution_summary(sol), "oracle": orc.to_json(), "difference": diff}
    w = orc.weights.weights
    lines = ["path,weight"] + [f"{i},{v!r}" for i, v in enumerate(w.tolist())]
    out.path("weights.csv").write_text("\n".join(lines) + "\n")
    return checks, summary, {"solution.csv": sol}


def _run_validate(cfg, out):
    spec = cfg.problem.base_spec
    vc = cfg.raw.get("validate", {})
    budget = vc.get("sample_budget", 4096)
    box = Box(**{k: tuple(v) for k, v in vc.get("box", {}).items()})
    seed = vc.get("seed", cfg.seed)
    reports = []
    checks = []
    summary = {}
    for name in vc.get("checks", ["declared"]):
        if name == "fn_properties":
            fn_checks, summary["fn_properties"] = _fn_properties(cfg, spec, budget, box, seed, out)
            checks += fn_checks
        elif name == "declared":
            reports += validate_declared(spec, budget, box, seed)
        else:
            fn = {"A2": validate_lipschitz_A2, "A3": validate_jump_monotone_A3,
                  "H1": validate_growth_H1, "H2": validate_weak_monotone_H2}[name]
            reports.append(fn(spec, sample_budget=budget, box=box, seed=seed))
    checks = [Check(f"validate_{r.check}", r.passed, r.worst, 0.0) for r in reports] + checks
    summary["reports"] = [r.to_json() for r in reports]
    return checks, summary, {}


def _fn_properties(cfg, spec, budget, box, seed, out):
    vc = cfg.raw.get("validate", {})
    n_list = cfg.raw["solver"].get("n_list", [1, 2, 4, 8])
    L = vc.get("lipschitz_const")
    if L is None:
        # in the metric |dy| + |dz| + |du|_lambda the declared constants combine by max
        tt = np.linspace(*box.t, 101)
        L = max(float(np.max(c(tt))) for c in (spec.coeffs.gamma, spec.coeffs.rho, spec.coeffs.sigma)) or None
    grid_tol, slope_tol = vc.get("grid_tol", 1e-3), vc.get("slope_tol", 1e-2)
    rep = check_fn_properties(spec, n_list, budget, box, seed, grid_tol=grid_tol, slope_tol=slope_tol,
                              lipschitz_const=L, **cfg.raw["solver"].get("infconv", {}))
    items = rep.items
    slopes = {float(n): v for n, v in items["lipschitz"]["max_slope"].items()}
    specs = {
        "growth": (items["growth"].get("worst_excess"), 1e-9),
        "below_f": (items["below_f"]["worst_excess"], 0.0),
        "monotone_in_n": (items["monotone_in_n"]["worst_drop"], 0.0),
        "convergence": (rep.gaps[n_list[-1]], grid_tol),
        "lipschitz": (max(v / n for n, v in slopes.items()), 1.0 + slope_tol),
    }
    checks = [Check(f"fn_{k}", items[k]["verdict"] == "PASS", v, tol)
              for k, (v, tol) in specs.items() if items[k]["verdict"] != "SKIPPED"]
    d, m = spec.brownian_dim, spec.m
    header = ["t", "y"] + [f"Z{j + 1}" for j in range(d)] + [f"U{i + 1}" for i in range(m)] + ["f"]
    header += [f"f_{n:g}" for n in n_list]
    cols = np.column_stack([rep.points, rep.f_values] + [rep.values[n] for n in n_list])
    lines = [",".join(header)] + [",".join(map(repr, row)) for row in cols.tolist()]
    out.path("fn_values.csv").write_text("\n".join(lines) + "\n")
    summary = rep.to_json()
    summary["lipschitz_const"] = L
    return checks, summary


def _run_infinite(cfg, out):
    def factory(grid):
        return sample_ensemble(grid, cfg.problem.marks, cfg.dim, cfg.paths, cfg.seed)

    tol = cfg.check("infinite_tol", 1e-3)
    rep = solve_infinite_horizon(cfg.problem, factory, cfg.basis, tol=tol,
                                 steps_per_unit=cfg.extra["steps_per_unit"], n_se=cfg.check("n_se"))
    last = rep.differences[-1] if rep.differences[-1] is not None else math.inf
    checks = [Check("truncation_converged", rep.converged, last, tol)]
    checks += _y0_check(cfg, *rep.y0_at(cfg.extra["target_horizon"]))
    return checks, {"truncation": rep.to_json()}, {"solution.csv": rep.solutions[-1]}


def _run_simulate(cfg, out):
    grid = cfg.extra["grid"]
    ens = sample_ensemble(grid, _marks(cfg), cfg.dim, cfg.paths, cfg.seed)
    write_ensemble_csv(ens, out.dir)
    out.files += [out.dir / "increments.csv", out.dir / "jumps.csv"]
    n_se = cfg.check("n_se")
    wt = ens.W[:, -1, :]
    se = wt.std(axis=0) / math.sqrt(ens.n_paths)
    worst = float(np.max(np.abs(wt.mean(axis=0)) / np.where(se > 0, se, np.inf)))
    checks = [Check("brownian_mean", worst <= n_se, worst, n_se)]
    summary = {"paths": ens.n_paths, "scheme": ens.scheme, "jumps": int(ens.jump_time.size)}
    if ens.mark_space.size:
        comp = compensated_integral_ensemble(ens, lambda s, e: 1.0)
        z = abs(comp.mean()) / (comp.std() / math.sqrt(comp.size))
        checks.append(Check("compensated_mean", z <= n_se, float(z), n_se))
    return checks, summary, {}


_HANDLERS: dict[str, Callable] = {
    "solve": _run_solve, "picard": _run_picard, "minimal": _run_minimal, "compare": _run_compare,
    "oracle": _run_oracle, "validate": _run_validate, "infinite": _run_infinite, "simulate": _run_simulate,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, echo: Callable[[str], None] | None = print) -> RunManifest:
    """Run ``cfg``, write every output and return the manifest; verdict lines go to ``echo``."""
    start = time.perf_counter()
    out = _Outputs(Path(out_dir if out_dir is not None else cfg.output_dir))
    try:
        out.json("config.resolved.json", cfg.raw)
        checks, summary, solutions = _HANDLERS[cfg.kind](cfg, out)
        max_paths = cfg.raw.get("output", {}).get("max_paths")
        for name, sol in solutions.items():
            write_solution_csv(sol, out.path(name), max_paths)
        summary["checks"] = [c.to_json() for c in checks]
        out.json("summary.json", summary)
    except Exception as exc:
        out.cleanup()
        raise RunError(f"{cfg.kind} run failed in {_origin(exc)}: {type(exc).__name__}: {exc}") from exc
    manifest = RunManifest(
        kind=cfg.kind,
        config_hash=cfg.config_hash,
        seed=cfg.seed,
        versions={"bsdep_lab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        wall_clock=time.perf_counter() - start,
        outputs=out.digests(),
        checks=checks,
    )
    tmp = out.dir / f".manifest.{os.getpid()}.tmp"
    tmp.write_text(json.dumps(_jsonable(manifest.to_json()), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out.dir / "manifest.json")
    if echo is not None:
        for c in checks:
            echo(c.line())
    return manifest


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the exception came through."""
    tb, name = exc.__traceback__, "harness"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("bsdep_lab."):
            name = mod.split(".")[1]
        tb = tb.tb_next
    return name

