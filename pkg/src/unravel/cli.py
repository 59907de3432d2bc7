"""Command-line front end.

Four subcommands, all driven by a JSON model spec (``--spec``) or a built-in
preset (``--preset damping`` / ``--preset rabi``):

* ``master``       deterministic master-equation series (populations, S_vN, S_A)
* ``ensemble``     Monte Carlo series for the configured unraveling
* ``compare``      both unravelings vs the master solution, with the
                   second-moment residual and Wiener-vs-Poisson discrepancy
                   tables; nonzero exit iff a report threshold is violated
* ``functionals``  per-trajectory S(t), f_t and entropy-correction series
                   for a designated seed

Series are CSV (comma separated, one row per grid point, ``#`` header
comments naming columns and units, floats at 17 significant digits so they
re-parse exactly); summaries are JSON; each command also renders a PNG
figure next to its delimited output unless ``--no-plots``. Outputs are
byte-identical across reruns and worker counts (``UNRAVEL_THREADS``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import plots
from .core import projector_of
from .ensemble import (
    ComparisonReport,
    EnsembleConfig,
    EnsembleStats,
    run_ensemble,
    second_moment_report,
)
from .errors import ModelValidationError
from .functionals import (
    POISSON,
    entropy_correction_series,
    f_series,
    trajectory_entropy_series,
)
from .master import integrate_master
from .modelspec import PRESETS, parse_model, parse_model_data, preset_spec
from .poisson import pdp_trajectory
from .wiener import gp_trajectory


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x) + 0.0, ".17g")  # +0.0 folds -0.0 into 0


def write_csv(path: Path, columns: Sequence[Tuple[str, np.ndarray]], units: str) -> Path:
    """Comma-separated series with '#' comment lines naming columns and units."""
    names = [name for name, _ in columns]
    arrays = [np.asarray(arr) for _, arr in columns]
    rows = arrays[0].shape[0]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# columns: " + ",".join(names) + "\n")
        fh.write("# units: " + units + "\n")
        for r in range(rows):
            fh.write(",".join(_fmt(a[r]) for a in arrays) + "\n")
    return path


def read_csv(path) -> Dict[str, np.ndarray]:
    """Re-parse a series written by write_csv (exact 17-digit round trip)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        names = header.removeprefix("# columns: ").split(",")
        data = np.loadtxt(fh, comments="#", delimiter=",", ndmin=2)
    return {name: data[:, k] for k, name in enumerate(names)}


def write_json(path: Path, payload: dict) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _pop_names(dim: int) -> List[str]:
    return ["rho_gg", "rho_ee"] if dim == 2 else [f"rho_{i}{i}" for i in range(dim)]


def _pair_columns(prefix: str, mat: np.ndarray) -> List[Tuple[str, np.ndarray]]:
    """(T, n, n) array to flat per-pair columns prefix_ik."""
    n = mat.shape[1]
    return [(f"{prefix}_{i}{k}", mat[:, i, k]) for i in range(n) for k in range(n)]


def _comparison_columns(rep: ComparisonReport) -> List[Tuple[str, np.ndarray]]:
    cols: List[Tuple[str, np.ndarray]] = [("t", rep.grid.times())]
    cols.append(("trace_distance", rep.trace_distance))
    for i in range(rep.p_resid_abs.shape[1]):
        cols.append((f"p_resid_abs_{i}", rep.p_resid_abs[:, i]))
        cols.append((f"p_resid_se_units_{i}", rep.p_resid_ratio[:, i]))
    cols.append(("jensen_gap", rep.jensen_gap))
    cols.append(("jensen_se", rep.jensen_se))
    cols.append(("s_a_master", rep.s_a_master))
    cols.append(("s_a_ensemble", rep.s_a_ensemble))
    return cols


def cmd_master(config: EnsembleConfig, out: Path, render: bool) -> int:
    sol = integrate_master(config.model, projector_of(config.psi0), config.grid)
    times = config.grid.times()
    pops = sol.populations()
    s_vn = sol.von_neumann_entropy_series()
    s_a = sol.measurement_entropy_series(config.meas)
    cols = [("t", times)]
    cols += [(name, pops[:, i]) for i, name in enumerate(_pop_names(config.model.dim))]
    cols += [("S_vN", s_vn), ("S_A", s_a)]
    write_csv(out / "master_series.csv", cols, "t: time; populations: dimensionless; entropies: nats")
    if render:
        plots.master_figure(times, pops, s_vn, s_a, out / "master.png")
    return 0


def _stats_columns(stats: EnsembleStats) -> List[Tuple[str, np.ndarray]]:
    cols: List[Tuple[str, np.ndarray]] = [("t", stats.grid.times())]
    n = stats.mean_p.shape[1]
    for i in range(n):
        cols.append((f"mean_p_{i}", stats.mean_p[:, i]))
        cols.append((f"se_p_{i}", stats.se_p[:, i]))
    cols += _pair_columns("mean_pp", stats.mean_pp)
    cols += _pair_columns("se_pp", stats.se_pp)
    cols += [
        ("mean_S", stats.mean_entropy),
        ("se_S", stats.se_entropy),
        ("S_A_ensemble", stats.s_a_ensemble),
        ("mean_f", stats.mean_f),
        ("se_f", stats.se_f),
        ("f_count", stats.f_count.astype(int)),
        ("boundary_flags", stats.boundary_flags),
    ]
    d = stats.mean_projector.shape[1]
    for i in range(d):
        for j in range(d):
            cols.append((f"proj_re_{i}{j}", stats.mean_projector[:, i, j].real))
            cols.append((f"proj_im_{i}{j}", stats.mean_projector[:, i, j].imag))
            cols.append((f"proj_se_{i}{j}", stats.se_projector[:, i, j]))
    return cols


def _jump_summary(stats: EnsembleStats) -> dict:
    return {
        "jump_counts": [int(c) for c in stats.jump_counts],
        "jump_count_mean": [float(x) for x in np.atleast_1d(stats.jump_count_mean)],
        "jump_count_se": [float(x) for x in np.atleast_1d(stats.jump_count_se)],
        "first_jump_mean": float(stats.first_jump_mean),
        "first_jump_se": float(stats.first_jump_se),
        "first_jump_count": stats.first_jump_count,
    }


def cmd_ensemble(config: EnsembleConfig, out: Path, render: bool) -> int:
    stats = run_ensemble(config)
    write_csv(
        out / "ensemble_series.csv",
        _stats_columns(stats),
        "t: time; probabilities/projector: dimensionless; entropies: nats; f: nats/time; counts: trajectories",
    )
    write_json(
        out / "ensemble_summary.json",
        {
            "unraveling": stats.unraveling,
            "n_traj": stats.n_traj,
            "seed": stats.master_seed,
            "boundary_flag_total": stats.boundary_flag_total,
            **_jump_summary(stats),
        },
    )
    if render:
        plots.ensemble_figure(stats, out / "ensemble.png")
    return 0


def cmd_compare(config: EnsembleConfig, out: Path, render: bool) -> int:
    master = integrate_master(config.model, projector_of(config.psi0), config.grid)
    stats_w = run_ensemble(dataclasses.replace(config, unraveling="wiener"))
    stats_p = run_ensemble(
        dataclasses.replace(config, unraveling=POISSON, master_seed=config.master_seed + 1)
    )
    smd = second_moment_report(stats_w, stats_p, master, config.meas)
    rep = {"wiener": smd.wiener, "poisson": smd.poisson}
    for tag, r in rep.items():
        write_csv(
            out / f"compare_{tag}_series.csv",
            _comparison_columns(r),
            "t: time; trace_distance/residuals: dimensionless; entropies: nats",
        )
        write_csv(
            out / f"compare_smd_{tag}.csv",
            [("t", r.smd_times)]
            + _pair_columns("fd", r.smd_fd_mean)
            + _pair_columns("drift", r.smd_drift_mean)
            + _pair_columns("resid_abs", r.smd_resid_abs)
            + _pair_columns("resid_se_units", r.smd_resid_ratio),
            "t: time; fd/drift/residual: 1/time on the decimated interior grid",
        )
    write_csv(
        out / "compare_cross.csv",
        [("t", smd.dec_times)]
        + _pair_columns("pp_wiener", smd.pp_wiener)
        + _pair_columns("pp_poisson", smd.pp_poisson)
        + _pair_columns("cross_abs", smd.cross_abs)
        + _pair_columns("cross_se_units", smd.cross_ratio),
        "t: time; second moments dimensionless; discrepancy in pooled SE units",
    )
    violations = smd.wiener.violations() + smd.poisson.violations() + smd.violations()
    write_json(
        out / "compare_summary.json",
        {
            "n_traj": config.n_traj,
            "seeds": {"wiener": stats_w.master_seed, "poisson": stats_p.master_seed},
            "max_trace_distance": {
                tag: float(r.trace_distance.max()) for tag, r in rep.items()
            },
            "trace_budget": smd.wiener.trace_budget(),
            "max_p_resid_se_units": {
                tag: float(r.p_resid_ratio.max()) for tag, r in rep.items()
            },
            "min_jensen_gap": {tag: float(r.jensen_gap.min()) for tag, r in rep.items()},
            "max_smd_resid_se_units": {
                tag: float(r.smd_resid_ratio.max()) if r.smd_resid_ratio.size else 0.0
                for tag, r in rep.items()
            },
            "max_cross_se_units": float(smd.cross_ratio.max()),
            "boundary_flags": {tag: r.boundary_flag_total for tag, r in rep.items()},
            "violations": violations,
            "passed": not violations,
        },
    )
    if render:
        plots.compare_figure(smd.wiener, smd.poisson, smd, out / "compare.png")
    if violations:
        print("compare: threshold violations:", file=sys.stderr)
        for v in violations:
            print(f"  - {v}", file=sys.stderr)
        return 1
    return 0


def cmd_functionals(config: EnsembleConfig, out: Path, render: bool) -> int:
    seed = config.master_seed
    if config.unraveling == POISSON:
        record = pdp_trajectory(config.model, config.psi0, config.grid, seed)
    else:
        record = gp_trajectory(config.model, config.psi0, config.grid, seed)
    times = config.grid.times()
    p = np.clip(
        np.einsum(
            "ti,nij,tj->tn", record.states.conj(), config.meas.effect_stack, record.states
        ).real,
        0.0,
        1.0,
    )
    s = trajectory_entropy_series(record, config.meas)
    f, f_flag = f_series(config.model, record.states, config.meas)
    corr, corr_flag = entropy_correction_series(
        config.model, record.states, config.meas, config.unraveling
    )
    cols: List[Tuple[str, np.ndarray]] = [("t", times)]
    cols += [(f"p_{i}", p[:, i]) for i in range(p.shape[1])]
    cols += [
        ("S", s),
        ("f", f),
        ("f_flag", f_flag.astype(int)),
        ("entropy_correction", corr),
        ("correction_flag", corr_flag.astype(int)),
    ]
    write_csv(
        out / "functionals_series.csv",
        cols,
        "t: time; p: dimensionless; S: nats; f/correction: nats/time; flags: divergent point",
    )
    write_json(
        out / "functionals_summary.json",
        {
            "seed": seed,
            "unraveling": config.unraveling,
            "n_jumps": len(record.jump_times),
            "jump_times": [[float(t), int(c)] for t, c in record.jump_times],
            "divergent_points": int(f_flag.sum()),
        },
    )
    if render:
        plots.functionals_figure(times, p, s, f, corr, out / "functionals.png")
    return 0


_COMMANDS = {
    "master": cmd_master,
    "ensemble": cmd_ensemble,
    "compare": cmd_compare,
    "functionals": cmd_functionals,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unravel",
        description="Integrate a GKSL master equation and its Wiener/Poisson "
        "unravelings; compare second moments and entropies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("master", "deterministic master-equation series"),
        ("ensemble", "Monte Carlo trajectory ensemble series"),
        ("compare", "both unravelings vs the master solution (CI gate)"),
        ("functionals", "per-trajectory entropy and correction series"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", type=Path, help="JSON model spec file")
        p.add_argument("--preset", choices=PRESETS, help="built-in model preset")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override ensemble.seed")
        p.add_argument("--n-traj", type=int, help="override ensemble.n_traj")
        p.add_argument(
            "--unraveling", choices=("wiener", "poisson"), help="override ensemble.unraveling"
        )
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    return parser


def _load_config(args) -> EnsembleConfig:
    if (args.spec is None) == (args.preset is None):
        raise ModelValidationError("exactly one of --spec or --preset is required")
    if args.preset:
        config = parse_model_data(preset_spec(args.preset), source=f"preset:{args.preset}")
    else:
        config = parse_model(args.spec)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.n_traj is not None:
        overrides["n_traj"] = args.n_traj
    if args.unraveling is not None:
        overrides["unraveling"] = args.unraveling
    return dataclasses.replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
    except ModelValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](config, args.out, not args.no_plots)
    except ModelValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures: report, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
