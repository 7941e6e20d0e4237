#!/usr/bin/env python3
"""Regenerate the participation, noise, rho and Ne sweep tables.

    python3 scripts/reproduce_tables.py --out results/
    python3 scripts/reproduce_tables.py --full-scale --seeds 100 --out results_full/

Set FEDPLT_WORKERS to spread Monte Carlo seeds over processes.
"""

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from fedplt import __version__
from fedplt.core import CostModel, RunConfig
from fedplt.harness import DESK, RunSpec, SweepSpec, desk_problem, emit_table, sweep, tuned_config
from fedplt.solvers import GD

TABLES = ("participation", "noise", "rho", "ne")


def participation_table(p, seeds, master_seed):
    cfg, _ = tuned_config(p, (5,), base=RunConfig(rounds=300))
    return sweep(SweepSpec("participation", [0.4, 0.7, 1.0], RunSpec(p, cfg, "rounds")), seeds, master_seed)


def noise_table(p, seeds, master_seed):
    cfg, _ = tuned_config(p, (5,), base=RunConfig(rounds=200, metric="state_distance"))
    spec = RunSpec(p, cfg, "asymptotic_error")
    return sweep(SweepSpec("tau", [1e-4, 1e-2, 1.0], spec), seeds, master_seed)


def rho_table(p, seeds, master_seed):
    # gamma follows rho (rate-optimal step), Ne held at 5
    spec = RunSpec(p, RunConfig(rho=1.0, solver=GD(), epochs=5, rounds=150), "time")
    return sweep(SweepSpec("rho", [0.1, 1.0, 10.0], spec), seeds, master_seed)


def ne_table(p, seeds, master_seed, t_C=10.0):
    spec = RunSpec(p, RunConfig(rho=1.0, solver=GD(), rounds=200, cost_model=CostModel(1.0, t_C)), "time")
    return sweep(SweepSpec("ne", [1, 2, 5, 8, 10, 20], spec), seeds, master_seed)


BUILDERS = dict(participation=participation_table, noise=noise_table, rho=rho_table, ne=ne_table)


def main():
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--tables", default=",".join(TABLES))
    ap.add_argument("--seeds", type=int, default=DESK["seeds"])
    ap.add_argument("--master-seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--full-scale", action="store_true")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    a = ap.parse_args()

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    p = desk_problem(a.data_seed, full_scale=a.full_scale)
    written = []
    for name in a.tables.split(","):
        if name not in BUILDERS:
            ap.error(f"unknown table {name!r}; choose from {TABLES}")
        t0 = time.perf_counter()
        rows = BUILDERS[name](p, a.seeds, a.master_seed)
        path = out / f"{name}.{a.format}"
        path.write_text(emit_table(rows, a.format))
        written.append(str(path))
        print(f"{name}: {time.perf_counter() - t0:.1f}s")
        print(emit_table(rows, "csv"))
    manifest = dict(version=__version__, script="reproduce_tables", seeds=a.seeds, master_seed=a.master_seed,
                    data_seed=a.data_seed, full_scale=a.full_scale, N=p.N, n=p.n, outputs=written)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


if __name__ == "__main__":
    main()
