"""Deterministic CSV/JSON persistence for trajectories, reparameterizations and metrics."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import ArcCurve
from .integrate import Trajectory
from .reparam import ReparamResult, TimeMap

FLOAT_FMT = "%.17g"


def mu_label(exponent: float) -> str:
    """Directory name for ``mu = 10**exponent``: the shortest exact exponent string."""
    return f"{float(exponent):.6g}"


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_columns(path: Path, header: Sequence[str], columns: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(columns, dtype=float), delimiter=",", fmt=FLOAT_FMT,
               header=",".join(header), comments="")


def read_columns(path: Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_rows(path: Path, rows: Iterable[Mapping]) -> None:
    """CSV table from dict rows; the column order is the union in first-seen order."""
    rows = list(rows)
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (FLOAT_FMT % v if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------

def save_trajectory(stem: Path, traj: Trajectory, system: str) -> None:
    header = ["t"] + [f"y{i + 1}" for i in range(traj.dim)]
    write_columns(stem.with_suffix(".csv"), header, np.column_stack([traj.times, traj.states]))
    side = {"system": system, "mu": traj.mu}
    side.update({k: traj.meta[k] for k in ("solver", "rtol", "atol") if k in traj.meta})
    write_json(stem.with_suffix(".json"), side)


def load_trajectory(stem: Path) -> tuple[Trajectory, dict]:
    _, data = read_columns(stem.with_suffix(".csv"))
    side = read_json(stem.with_suffix(".json"))
    return Trajectory(data[:, 0], data[:, 1:], side["mu"], dict(side)), side


def save_result(stem: Path, res: ReparamResult, extra: Mapping | None = None) -> None:
    header = ["tau", "t"] + [f"y{i + 1}" for i in range(res.dim)]
    write_columns(stem.with_suffix(".csv"), header,
                  np.column_stack([res.tau_grid, res.t_of_tau, res.y_of_tau]))
    d = res.diagnostics
    side = {
        "method": res.method,
        "mu": res.mu,
        "tau_f": res.tau_f,
        "objective": d.get("objective"),
        "iterations": d.get("iterations"),
        "max_accel": d.get("max_accel"),
    }
    if "objective_trace" in d:
        side["objective_trace"] = d["objective_trace"]
    if d.get("uniform_input"):
        side["warning"] = "input grid is uniform; the solver-directed map is linear"
    if extra:
        side.update(extra)
    write_json(stem.with_suffix(".json"), side)


def load_result(stem: Path) -> ReparamResult:
    _, data = read_columns(stem.with_suffix(".csv"))
    side = read_json(stem.with_suffix(".json"))
    tau, t, y = data[:, 0], data[:, 1], data[:, 2:]
    return ReparamResult(side["method"], tau, y, TimeMap(tau, t), side, side.get("mu"))


def save_arc(path: Path, arc: ArcCurve) -> None:
    """Debug dump of an arc-length curve: ``s,kappa,t,phi1..phi{d+1}``."""
    n_phi = arc.phi_of_s.shape[1]
    header = ["s", "kappa", "t"] + [f"phi{i + 1}" for i in range(n_phi)]
    write_columns(Path(path), header, np.column_stack([arc.s_grid, arc.kappa, arc.t_of_s, arc.phi_of_s]))
