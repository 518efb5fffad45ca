"""Command-line front end: ``retime {generate,reparam,train,eval,compare,plot}``.

Artifacts live under ``<out>/<system>/<mu exponent>/``; trained models under
``<out>/<system>/models/``. Exit codes: 0 success, 1 runtime failure, 2 usage
or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import systems
from .errors import RetimeError
from .geometry import resample_uniform
from .integrate import SolverConfig, Trajectory, integrate_implicit_adaptive
from .io import load_result, load_trajectory, mu_label, read_json, save_result, save_trajectory, write_json, write_rows
from .reparam import DEFAULT_N_TAU, DEFAULT_TAU_F, METHODS, reparameterize

log = logging.getLogger("retime")

COMMANDS = ("generate", "reparam", "train", "eval", "compare", "plot")
DESK_DEPTH = 3
DESK_PARAMS = 500


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    system: str = "sls"
    mu: str = "all"
    rtol: float = 1e-6
    atol: float = 1e-8
    tau_f: float = DEFAULT_TAU_F
    n_tau: int = DEFAULT_N_TAU
    method: tuple[str, ...] = METHODS
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    # surrogate overrides
    epochs: Optional[int] = None
    pretrain_iters: Optional[int] = None
    lr: Optional[float] = None
    lhs: int = 0
    # command specific
    pred: Optional[str] = None
    kind: tuple[str, ...] = ()
    uniform: int = 0

    def validate(self) -> "RunConfig":
        if self.system not in systems.available():
            raise UsageError(f"unknown system {self.system!r}; available: {', '.join(systems.available())}")
        if not self.tau_f > 0:
            raise UsageError("--tau-f must be positive")
        if self.n_tau < 8:
            raise UsageError("--n-tau must be >= 8")
        if self.rtol <= 0 or self.atol <= 0:
            raise UsageError("tolerances must be positive")
        bad = [m for m in self.method if m not in METHODS]
        if bad:
            raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
        if self.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        for e in mu_selection(self):
            if not math.isfinite(e):
                raise UsageError("mu exponents must be finite")
        return self

    @property
    def root(self) -> Path:
        return Path(self.out) / self.system


def mu_selection(cfg: RunConfig) -> list[float]:
    """Exponents selected by ``--mu``: ``train``, ``test``, ``all`` or a comma list."""
    sysm = systems.get_system(cfg.system)
    sel = cfg.mu.strip()
    if sel == "train":
        return list(sysm.training_exponents)
    if sel == "test":
        return list(sysm.test_exponents)
    if sel == "all":
        return sorted(set(sysm.training_exponents) | set(sysm.test_exponents))
    try:
        return [float(x) for x in sel.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --mu value {cfg.mu!r}") from None


def split_of(system: str, exponent: float) -> str:
    sysm = systems.get_system(system)
    if exponent in sysm.training_exponents:
        return "on"
    if exponent in sysm.test_exponents:
        return "off"
    return "custom"


def case_dir(cfg: RunConfig, exponent: float) -> Path:
    return cfg.root / mu_label(exponent)


# ---------------------------------------------------------------------------
# fan-out

def _fan_out(fn: Callable, tasks: Sequence, jobs: int) -> list:
    """Run ``fn`` over ``tasks``; results come back in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks)), mp_context=ctx) as pool:
        return list(pool.map(fn, tasks))


def _report(results) -> int:
    failed = [r for r in results if r is not None]
    for msg in failed:
        log.error(msg)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# generate

def _generate_one(task) -> Optional[str]:
    cfg, e = task
    sysm = systems.get_system(cfg.system)
    try:
        traj = integrate_implicit_adaptive(sysm, 10.0 ** e, SolverConfig(rtol=cfg.rtol, atol=cfg.atol))
    except RetimeError as exc:
        return f"{cfg.system} mu=10^{mu_label(e)}: {type(exc).__name__}: {exc}"
    if cfg.uniform:
        t, y = resample_uniform(traj.times, traj.states, cfg.uniform)
        traj = Trajectory(t, y, traj.mu, {**traj.meta, "solver": "trbdf2+uniform"})
    save_trajectory(case_dir(cfg, e) / "trajectory", traj, cfg.system)
    return None


def cmd_generate(cfg: RunConfig) -> int:
    tasks = [(cfg, e) for e in mu_selection(cfg)]
    return _report(_fan_out(_generate_one, tasks, cfg.jobs))


# ---------------------------------------------------------------------------
# reparam

def _reparam_one(task) -> Optional[str]:
    cfg, e, method = task
    where = f"{cfg.system} mu=10^{mu_label(e)} {method}"
    stem = case_dir(cfg, e) / "trajectory"
    if not stem.with_suffix(".csv").exists():
        return f"{where}: missing trajectory {stem.with_suffix('.csv')}"
    traj, _ = load_trajectory(stem)
    try:
        res = reparameterize(method, traj, cfg.tau_f, cfg.n_tau)
    except RetimeError as exc:
        return f"{where}: {type(exc).__name__}: {exc}"
    if res.diagnostics.get("uniform_input"):
        log.warning("%s: input grid is uniform; the solver-directed map degenerates to linear t(tau)", where)
    save_result(case_dir(cfg, e) / method, res)
    return None


def cmd_reparam(cfg: RunConfig) -> int:
    tasks = [(cfg, e, m) for e in mu_selection(cfg) for m in cfg.method]
    return _report(_fan_out(_reparam_one, tasks, cfg.jobs))


# ---------------------------------------------------------------------------
# train

def _desk_spec(n_state: int):
    from .surrogate import MlpSpec, solve_width

    width = solve_width(DESK_PARAMS, DESK_DEPTH, n_state + 2, n_state)
    return MlpSpec(n_state, 1, (width,) * DESK_DEPTH)


def _train_config(cfg: RunConfig):
    from .surrogate import TrainConfig

    kw = {"seed": cfg.seed}
    for k in ("epochs", "pretrain_iters", "lr"):
        if getattr(cfg, k) is not None:
            kw[k] = getattr(cfg, k)
    return TrainConfig(**kw)


def _load_results(cfg: RunConfig, method: str, exps) -> list:
    out = []
    for e in exps:
        stem = case_dir(cfg, e) / method
        if not stem.with_suffix(".csv").exists():
            raise FileNotFoundError(f"missing reparameterization {stem.with_suffix('.csv')}")
        out.append(load_result(stem))
    return out


def _train_one(task):
    """Train one (method, configuration) pair; returns (score, message)."""
    import torch

    from .metrics import msie
    from .surrogate import TrainingSet, predict, save_checkpoint, save_history, train

    torch.set_num_threads(1)
    cfg, method, tcfg, spec, tag = task
    models = cfg.root / "models"
    try:
        results = _load_results(cfg, method, mu_selection(cfg))
    except FileNotFoundError as exc:
        return math.inf, f"{method}: {exc}"
    data = TrainingSet.from_results(results)
    try:
        run = train(data, tcfg, spec)
    except RetimeError as exc:
        return math.inf, f"{method} {tag}: {type(exc).__name__}: {exc}"
    save_checkpoint(models / f"{method}{tag}.json", run.model, tcfg)
    save_history(models / f"{method}{tag}_loss.csv", run.history)
    # selection score: mean on-reference MSIE in physical time
    scores = []
    for r in results:
        try:
            p = predict(run.model, r)
            scores.append(msie(p.t_of_tau, p.y_of_tau, r.t_of_tau, r.y_of_tau).state)
        except RetimeError:
            scores.append(math.inf)
    return float(np.mean(scores)), None


def cmd_train(cfg: RunConfig) -> int:
    from .surrogate import sample_configs

    sysm = systems.get_system(cfg.system)
    if cfg.lhs:
        sampled = sample_configs(cfg.lhs, cfg.seed, n_state=sysm.dim, base=_train_config(cfg))
        variants = [(s.train, s.mlp, f"_cfg{i:03d}") for i, s in enumerate(sampled)]
    else:
        variants = [(_train_config(cfg), _desk_spec(sysm.dim), "")]
    tasks = [(cfg, m, tc, sp, tag) for m in cfg.method for tc, sp, tag in variants]
    outcomes = _fan_out(_train_one, tasks, cfg.jobs)
    errors = [msg for _, msg in outcomes if msg]
    if cfg.lhs:
        rows = []
        for (c, m, tc, sp, tag), (score, _) in zip(tasks, outcomes):
            rows.append({"method": m, "config": tag.lstrip("_"), "hidden": "x".join(map(str, sp.hidden)),
                         "lr": tc.lr, "initial_horizon": tc.initial_horizon,
                         "horizon_interval": tc.horizon_interval, "msie_on": score})
        write_rows(cfg.root / "models" / "selection.csv", rows)
        for m in cfg.method:
            mine = [(score, tag) for (c, mm, tc, sp, tag), (score, _) in zip(tasks, outcomes) if mm == m]
            best_score, best_tag = min(mine)
            if math.isfinite(best_score):
                src = cfg.root / "models" / f"{m}{best_tag}.json"
                (cfg.root / "models" / f"{m}.json").write_bytes(src.read_bytes())
            else:
                errors.append(f"{m}: no configuration produced a finite score")
    return _report([e for e in errors])


# ---------------------------------------------------------------------------
# eval / compare

def _eval_one(task) -> list[dict]:
    from .metrics import MetricReport, msie, stiffness_diag, tau_mse
    from .surrogate import load_checkpoint, predict

    cfg, e, method = task
    sysm = systems.get_system(cfg.system)
    d = case_dir(cfg, e)
    row = {"system": cfg.system, "mu": mu_label(e), "split": split_of(cfg.system, e), "method": method}
    try:
        ref = load_result(d / method)
        if cfg.pred:
            pred = load_result(Path(cfg.pred) / cfg.system / mu_label(e) / method)
        else:
            model = load_checkpoint(cfg.root / "models" / f"{method}.json")
            pred = predict(model, ref)
    except (FileNotFoundError, RetimeError) as exc:
        row["status"] = f"{type(exc).__name__}: {exc}"
        return [row]
    report = MetricReport(labels=row)
    report.stiffness = stiffness_diag(ref, sysm)
    if np.all(np.isfinite(pred.y_of_tau)) and np.all(np.isfinite(pred.t_of_tau)):
        report.tau_mse = tau_mse(pred, ref)
        # the reference curve in physical time is the truth, so pred = ref scores zero
        report.msie = msie(pred.t_of_tau, pred.y_of_tau, ref.t_of_tau, ref.y_of_tau)
        row = {**report.flat_row(), "status": "ok"}
    else:
        row = {**report.flat_row(), "status": "nonfinite"}
    write_json(d / f"{method}_metrics.json", report.to_dict())
    return [row]


def cmd_eval(cfg: RunConfig) -> int:
    tasks = [(cfg, e, m) for e in mu_selection(cfg) for m in cfg.method]
    rows = [r for rs in _fan_out(_eval_one, tasks, cfg.jobs) for r in rs]
    write_rows(cfg.root / "eval.csv", rows)
    bad = [f"{r['method']} mu=10^{r['mu']}: {r['status']}" for r in rows if r.get("status") != "ok"]
    return _report(bad)


def cmd_compare(cfg: RunConfig) -> int:
    import csv

    path = cfg.root / "eval.csv"
    if not path.exists():
        log.error("missing %s; run eval first", path)
        return 1
    with path.open() as fh:
        rows = [r for r in csv.DictReader(fh) if r.get("status") == "ok"]
    keys = ("tau_mse_state", "tau_mse_time", "tau_mse_all", "msie_state")
    summary = []
    for split in ("on", "off", "custom"):
        for m in cfg.method:
            sel = [r for r in rows if r["split"] == split and r["method"] == m]
            if not sel:
                continue
            entry = {"split": split, "method": m, "n": len(sel)}
            for k in keys:
                entry[k] = float(np.mean([float(r[k]) for r in sel]))
            summary.append(entry)
    write_rows(cfg.root / "compare.csv", summary)
    write_json(cfg.root / "compare.json", summary)
    return 0


# ---------------------------------------------------------------------------
# plot

def _plot_one(task) -> Optional[str]:
    from .plot import plot_result

    cfg, e, method, kind = task
    stem = case_dir(cfg, e) / method
    if not stem.with_suffix(".csv").exists():
        return f"missing series {stem.with_suffix('.csv')}"
    try:
        plot_result(case_dir(cfg, e) / f"{method}_{kind}", load_result(stem), kind)
    except ValueError as exc:
        return f"{stem.name} {kind}: {exc}"
    return None


def cmd_plot(cfg: RunConfig) -> int:
    from .plot import KINDS

    kinds = cfg.kind or KINDS
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise UsageError(f"unknown plot kind(s) {bad}; choose from {', '.join(KINDS)}")
    tasks = [(cfg, e, m, k) for e in mu_selection(cfg) for m in cfg.method for k in kinds]
    return _report(_fan_out(_plot_one, tasks, cfg.jobs))


HANDLERS = {
    "generate": cmd_generate,
    "reparam": cmd_reparam,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


# ---------------------------------------------------------------------------
# argument handling

def _csv_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="JSON file of defaults; flags override it")
    common.add_argument("--system", default=S)
    common.add_argument("--mu", default=S, help="train | test | all | comma list of log10 exponents")
    common.add_argument("--rtol", type=float, default=S)
    common.add_argument("--atol", type=float, default=S)
    common.add_argument("--tau-f", dest="tau_f", type=float, default=S)
    common.add_argument("--n-tau", dest="n_tau", type=int, default=S)
    common.add_argument("--method", type=_csv_list, default=S, help="comma list of methods")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--jobs", type=int, default=S)
    common.add_argument("--out", default=S, help="output root (default $RETIME_OUT or ./out)")
    common.add_argument("-v", "--verbose", action="store_true", default=S)

    p = argparse.ArgumentParser(prog="retime", description="Time reparameterization toolkit for stiff ODEs.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="integrate reference trajectories")
    g.add_argument("--uniform", type=int, default=S, help="resample onto this many uniform times")
    sub.add_parser("reparam", parents=[common], help="reparameterize trajectories")
    t = sub.add_parser("train", parents=[common], help="train surrogates per method")
    t.add_argument("--epochs", type=int, default=S)
    t.add_argument("--pretrain-iters", dest="pretrain_iters", type=int, default=S)
    t.add_argument("--lr", type=float, default=S)
    t.add_argument("--lhs", type=int, default=S, help="number of Latin-hypercube configurations")
    e = sub.add_parser("eval", parents=[common], help="metric tables")
    e.add_argument("--pred", default=S, help="directory of prediction result files instead of models")
    sub.add_parser("compare", parents=[common], help="per-method summary of eval.csv")
    pl = sub.add_parser("plot", parents=[common], help="SVG plots and series CSV")
    pl.add_argument("--kind", type=_csv_list, default=S)
    return p


def resolve_config(ns: argparse.Namespace, env=os.environ) -> RunConfig:
    """Defaults < ``$RETIME_OUT`` < JSON config < explicit flags."""
    values: dict = {}
    if env.get("RETIME_OUT"):
        values["out"] = env["RETIME_OUT"]
    flags = dict(vars(ns))
    flags.pop("command", None)
    flags.pop("verbose", None)
    cfg_path = flags.pop("config", None)
    if cfg_path:
        try:
            loaded = read_json(Path(cfg_path))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for k in ("method", "kind"):
            if isinstance(loaded.get(k), str):
                loaded[k] = _csv_list(loaded[k])
            elif k in loaded:
                loaded[k] = tuple(loaded[k])
        values.update(loaded)
    values.update(flags)
    try:
        return RunConfig(**values).validate()
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(ns)
        return HANDLERS[ns.command](cfg)
    except UsageError as exc:
        print(f"retime: error: {exc}", file=sys.stderr)
        return 2
    except (RetimeError, OSError, ValueError) as exc:
        print(f"retime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
