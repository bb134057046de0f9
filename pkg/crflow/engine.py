"""
crflow engine.

- run: one flow from a RunConfig; writes timeseries/supplementary CSVs,
  initial and final snapshots, density previews and summary.json
- sweep: independent reruns over an amplitude grid, locating the largest
  amplitude whose run still converges
- oracle: integrator against the closed-form flat-torus solution

Every command keeps a `logs` list of one-line stage messages, persisted with
its JSON output.
"""

from __future__ import annotations

import concurrent.futures
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .analysis import (
    BLOWUP,
    CONVERGED,
    SUPPLEMENTARY_COLUMNS,
    TIMEOUT,
    TIMESERIES_COLUMNS,
    ControlParams,
    Trajectory,
    classify_termination,
    comparison_bounds,
    convention_ledger,
    dissipation_residual,
    report_row,
    supplementary_row,
    threshold_constants,
    total_energies,
)
from .config import RunConfig, control_params
from .figures import save_density_preview
from .flow import run_flow
from .initial import make_initial_map
from .io import save_csv, save_json, write_snapshot
from .operators import MapField, energy_densities
from .oracle import oracle_comparison

EXIT_CODES = {CONVERGED: 0, TIMEOUT: 2, BLOWUP: 3}
EXIT_ERROR = 1

SWEEP_COLUMNS = [
    "lambda", "E_b_initial", "sup_e_initial", "termination", "final_sup_tau",
    "max_vertical_control_ratio", "lemma_bound_holds", "ut_tail_decreasing",
    "rho", "T0", "C2_used", "steps", "t_final",
]


def _trajectory(config: RunConfig):
    grid = config.build_grid()
    h = make_initial_map(grid, config.target, config.initial)
    params = control_params(config, h)
    traj = run_flow(h, config.flow, params)
    return grid, h, params, traj


def _initial_stats(h: MapField) -> Dict[str, float]:
    E, E_b, E_0 = total_energies(h)
    _, _, e = energy_densities(h)
    return {"E": E, "E_b": E_b, "E_0": E_0, "sup_e": e.sup()}


def run(config: RunConfig, out_dir: Optional[str | Path] = None) -> Dict[str, Any]:
    t0 = time.time()
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    logs: List[str] = []
    logs.append(f"crflow run started: m={config.m} N={config.N} target={config.target.kind}({config.target.n})")
    logs.append(f"Output dir: {out_dir}")

    grid = config.build_grid()
    if not grid.within_theorem_hypothesis:
        logs.append("m=1 is outside the m>=2 hypothesis of the small-energy existence result.")
    h = make_initial_map(grid, config.target, config.initial)
    stats = _initial_stats(h)
    logs.append(f"Initial map '{config.initial.family}' (lambda={config.initial.lam}): "
                f"E_b(h)={stats['E_b']:.6g}, sup e(h)={stats['sup_e']:.6g}.")

    params = control_params(config, h)
    thresholds = threshold_constants(params)
    logs.append(f"Control: D={params.D:.6g} C1={params.C1} C2={params.C2} s={params.s:.6g} "
                f"(s_max={thresholds['s_max']:.6g}, x0={thresholds['x0']:.6g}).")

    traj = run_flow(h, config.flow, params)
    logs.append(f"dt={traj.dt:.6g} ({config.flow.scheme}), {traj.reports[-1].step} steps to t={traj.reports[-1].t:.6g}.")
    logs.append(f"Termination: {traj.reason}.")

    annotations = classify_termination(traj, params)
    ledger = convention_ledger(params, grid)

    out_ts = out_dir / "timeseries.csv"
    save_csv(out_ts, [report_row(r) for r in traj.reports], TIMESERIES_COLUMNS, comments=ledger)
    out_sup = out_dir / "supplementary.csv"
    save_csv(out_sup, [supplementary_row(r) for r in traj.reports], SUPPLEMENTARY_COLUMNS, comments=ledger)

    write_snapshot(out_dir / "initial.snap", grid, h.values, 0.0)
    write_snapshot(out_dir / "final.snap", grid, traj.final.values, traj.reports[-1].t)

    previews: List[str] = []
    if config.preview:
        _, _, e_init = energy_densities(h)
        _, _, e_final = energy_densities(traj.final)
        vmax = max(e_init.sup(), e_final.sup())
        previews.append(str(save_density_preview(grid, e_init.values, out_dir / "initial_density.png", vmax)))
        previews.append(str(save_density_preview(grid, e_final.values, out_dir / "final_density.png", vmax)))
        logs.append(f"Saved {len(previews)} density previews.")

    elapsed = time.time() - t0
    logs.append(f"Run finished in {elapsed:.2f} s.")

    summary = {
        "config": config.to_dict(),
        "termination": traj.reason,
        "exit_code": EXIT_CODES[traj.reason],
        "initial": stats,
        "final": {"E": traj.reports[-1].E, "E_b": traj.reports[-1].E_b, "sup_e": traj.reports[-1].sup_e,
                  "sup_tau": traj.reports[-1].sup_tau},
        "dt": traj.dt,
        "rho_max": traj.rho_max,
        "max_dissipation_residual": (dissipation_residual(traj.reports, stats["E_b"])
                                     if len(traj.reports) > 1 else 0.0),
        "annotations": annotations,
        "control": control_summary(params),
        "conventions": ledger,
        "previews": previews,
        "logs": logs,
    }
    out_json = out_dir / "summary.json"
    save_json(out_json, summary)
    summary.update({
        "output_json": str(out_json),
        "output_timeseries": str(out_ts),
        "output_supplementary": str(out_sup),
    })
    return summary


# -----
# Sweep
# -----

def _max_ratio(traj: Trajectory) -> Optional[float]:
    values = [r.vertical_control_ratio for r in traj.reports if r.vertical_control_ratio is not None]
    return max(values) if values else None


def sweep_row(config: RunConfig, lam: float) -> Dict[str, Any]:
    """Independent rerun at amplitude lam (no warm start)."""
    cfg = config.with_lambda(lam)
    _, h, params, traj = _trajectory(cfg)
    stats = _initial_stats(h)
    notes = classify_termination(traj, params)
    T0, _ = comparison_bounds(params, 0.0)
    return {
        "lambda": lam,
        "E_b_initial": stats["E_b"],
        "sup_e_initial": stats["sup_e"],
        "termination": traj.reason,
        "final_sup_tau": traj.reports[-1].sup_tau,
        "max_vertical_control_ratio": _max_ratio(traj),
        "lemma_bound_holds": notes["lemma_bound_holds"],
        "ut_tail_decreasing": notes["ut_tail_decreasing"],
        "rho": notes["rho"],
        "T0": T0,
        "C2_used": params.C2,
        "steps": traj.reports[-1].step,
        "t_final": traj.reports[-1].t,
    }


def locate_threshold(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """Largest converged amplitude, smallest non-converged one and the converged prefix."""
    converged = [r["lambda"] for r in rows if r["termination"] == CONVERGED]
    failed = [r["lambda"] for r in rows if r["termination"] != CONVERGED]
    prefix = None
    for r in rows:
        if r["termination"] != CONVERGED:
            break
        prefix = r
    monotone = not failed or not converged or max(converged) < min(failed)
    return {
        "largest_converged_lambda": max(converged) if converged else None,
        "smallest_nonconverged_lambda": min(failed) if failed else None,
        "lambda_star": prefix["lambda"] if prefix else None,
        "E_b_at_lambda_star": prefix["E_b_initial"] if prefix else None,
        "classes_monotone": monotone,
        "prefix_lemma_bound_holds": all(r["lemma_bound_holds"] for r in rows
                                        if prefix and r["lambda"] <= prefix["lambda"]),
    }


def sweep(config: RunConfig,
          lambdas: Sequence[float],
          out_dir: Optional[str | Path] = None,
          workers: int = 1,
          ) -> Dict[str, Any]:
    t0 = time.time()
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("lambda grid is empty")
    if any(b < a for a, b in zip(lambdas[:-1], lambdas[1:])):
        raise ValueError("lambda grid must be nondecreasing")
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    logs: List[str] = []
    logs.append(f"crflow sweep started: {len(lambdas)} amplitudes, family={config.initial.family}, workers={workers}")

    if workers <= 1 or len(lambdas) == 1:
        rows = [sweep_row(config, lam) for lam in lambdas]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(sweep_row, config, lam) for lam in lambdas]
            rows = [f.result() for f in futures]
    for r in rows:
        logs.append(f"lambda={r['lambda']:.6g}: {r['termination']} (E_b(h)={r['E_b_initial']:.6g})")

    threshold = locate_threshold(rows)
    logs.append(f"lambda*={threshold['lambda_star']} (largest converged {threshold['largest_converged_lambda']}, "
                f"smallest non-converged {threshold['smallest_nonconverged_lambda']}).")

    out_csv = out_dir / "sweep.csv"
    save_csv(out_csv, rows, SWEEP_COLUMNS)
    elapsed = time.time() - t0
    logs.append(f"Sweep finished in {elapsed:.2f} s.")
    out_json = out_dir / "sweep_summary.json"
    result = {"config": config.to_dict(), "rows": rows, "threshold": threshold, "logs": logs}
    save_json(out_json, result)
    result.update({"output_csv": str(out_csv), "output_json": str(out_json)})
    return result


# ------
# Oracle
# ------

def oracle(config: RunConfig, t: float, refine: bool = False) -> Dict[str, Any]:
    logs: List[str] = []
    rows = [oracle_comparison(config, t)]
    logs.append(f"N={rows[0]['N']}: sup error {rows[0]['sup_error']:.3e} at t={rows[0]['t']:.6g}")
    result: Dict[str, Any] = {"rows": rows, "logs": logs}
    if refine:
        rows.append(oracle_comparison(config, t, N=2 * config.N))
        ratio = rows[0]["sup_error"] / rows[1]["sup_error"] if rows[1]["sup_error"] > 0 else None
        result["refinement_ratio"] = ratio
        logs.append(f"N={rows[1]['N']}: sup error {rows[1]['sup_error']:.3e} (ratio {ratio})")
    return result


def control_summary(params: ControlParams) -> Dict[str, Any]:
    T0, _ = comparison_bounds(params, 0.0)
    return {"D": params.D, "C1": params.C1, "C2": params.C2, "s": params.s, "T0": T0,
            **threshold_constants(params)}
