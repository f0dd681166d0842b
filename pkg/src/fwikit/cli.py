"""Command line entry point: ``fwikit <command> [options]``.

Commands
--------
specimen        rasterize a specimen and save the speed map
forward         simulate the observed dataset of a specimen
invert          run an inversion and write report.json, iterations.csv, models
gradient-check  compare the adjoint gradient with finite differences
misfit-scan     L2 and W2 misfit of a pulse against shifted copies

Errors are printed to stderr as one JSON object and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _kernels
from .experiments import (
    ExperimentConfig,
    experiment_setup,
    misfit_shift_scan,
    run_forward_experiment,
    run_gradient_check,
    run_inversion_experiment,
)
from .grid import Field2D, save_field
from .forward import simulate_shots
from .signals import RickerParams

GRADIENT_TOLERANCE = {"l2": 1e-2, "w2": 3e-2}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--specimen", help="camembert, acrylic_sdh2, steel_square, steel_hole, steel_sdh2, acrylic_star (or I..VI)")
    common.add_argument("--scale", type=float, help="desk-scale factor s in (0, 1]")
    common.add_argument("--misfit", choices=("l2", "w2"))
    common.add_argument("--workers", type=int, help="threads for the compiled kernels")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", type=Path)
    common.add_argument("--max-iterations", type=int)
    common.add_argument("--model-snapshot-every", type=int, help="save the model every K iterations")
    common.add_argument("--snapshot-every", type=int, default=0, help="save wavefields every K steps (forward)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fwikit", description="2-D acoustic full waveform inversion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("specimen", parents=[common], help="rasterize a specimen")
    sub.add_parser("forward", parents=[common], help="simulate observed data")
    sub.add_parser("invert", parents=[common], help="run an inversion")
    gc = sub.add_parser("gradient-check", parents=[common], help="adjoint vs finite-difference gradient")
    gc.add_argument("--directions", type=int, default=3)
    ms = sub.add_parser("misfit-scan", parents=[common], help="misfit against time shift")
    ms.add_argument("--f0", type=float, default=1.0e6)
    ms.add_argument("--bandwidth", type=float, default=0.9)
    ms.add_argument("--max-shift", type=float, default=3e-6)
    ms.add_argument("--step", type=float, default=25e-9)
    return parser


def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {}
    for name in ("specimen", "scale", "misfit", "workers", "seed", "model_snapshot_every"):
        val = getattr(args, name, None)
        if val is not None:
            over[name] = val
    if args.output_dir is not None:
        over["output_dir"] = str(args.output_dir)
    if args.max_iterations is not None:
        over["optimizer"] = replace(cfg.optimizer, max_iterations=args.max_iterations)
    if over:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **over, "optimizer": over.get("optimizer", cfg.optimizer)})
    return cfg


def _out(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_specimen(cfg, args):
    setup = experiment_setup(cfg)
    meta, _ = save_field(setup.truth, _out(cfg) / f"specimen_{cfg.specimen}")
    vals = setup.truth.values
    return {"specimen": cfg.specimen, "grid": [setup.sim.grid.nx, setup.sim.grid.ny], "path": str(meta),
            "speeds": sorted(float(v) for v in np.unique(vals))}


def cmd_forward(cfg, args):
    if args.snapshot_every:
        setup = experiment_setup(cfg)
        snap_dir = _out(cfg) / "wavefields"

        def keep(k, u):
            for b in range(u.shape[0]):
                save_field(Field2D(setup.sim.grid, np.array(u[b])), snap_dir / f"shot{b:02d}_step{k:05d}")

        simulate_shots(setup.sim, setup.truth, setup.injections(), setup.receivers,
                       snapshot_every=args.snapshot_every, snapshot_callback=keep)
    ds = run_forward_experiment(cfg)
    return {"dataset": str(_out(cfg) / "observed.json"), "shape": list(ds.shape), "dt": ds.config.time.dt}


def cmd_invert(cfg, args):
    report = run_inversion_experiment(cfg)
    report.pop("result")
    report["report"] = str(_out(cfg) / "report.json")
    return report


def cmd_gradient_check(cfg, args):
    rows = run_gradient_check(cfg.misfit, args.directions, cfg.seed, cfg.w2)
    tol = GRADIENT_TOLERANCE[cfg.misfit]
    path = _out(cfg) / f"gradient_check_{cfg.misfit}.csv"
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("direction", "analytic", "finite_difference", "rel_error"))
        for k, r in enumerate(rows):
            wr.writerow([k, repr(r["adjoint"]), repr(r["fd"]), repr(r["rel_error"])])
    worst = max(r["rel_error"] for r in rows)
    return {"misfit": cfg.misfit, "csv": str(path), "max_rel_error": worst, "tolerance": tol,
            "status": "pass" if worst <= tol else "fail"}


def cmd_misfit_scan(cfg, args):
    path = _out(cfg) / "misfit_scan.csv"
    rows = misfit_shift_scan(RickerParams(args.f0, args.bandwidth), args.max_shift, args.step, w2=cfg.w2, path=path)
    return {"csv": str(path), "n_shifts": int(rows.shape[0])}


COMMANDS = {
    "specimen": cmd_specimen,
    "forward": cmd_forward,
    "invert": cmd_invert,
    "gradient-check": cmd_gradient_check,
    "misfit-scan": cmd_misfit_scan,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verbose:
            import logging

            logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
        cfg = _experiment(args)
        if cfg.workers:
            _kernels.set_workers(cfg.workers)
        result = COMMANDS[args.command](cfg, args)
        result = {"status": "ok", **result} if "status" not in result else result
        print(json.dumps(result, indent=2, default=str))
        return 0 if result["status"] != "fail" else 1
    except Exception as exc:  # report anything as machine-readable JSON
        print(json.dumps({"status": "error", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
