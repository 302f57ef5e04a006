"""Batch runs: one temperature, or a continuation sweep, with checkpoints.

Both entry points are step machines.  Each unit of work (one descent
iteration, one gain check, one continuation transition) is followed by an
optional checkpoint, so a run stopped at any boundary resumes bit-exactly in
single-worker mode.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import signal
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .exceptions import ConfigError, NumericalFailure, RunInterrupted
from .greedy import OuterState, outer_step
from .io import (
    FreeEnergyGrid,
    TraceFile,
    atomic_write_text,
    checkpoint_exists,
    evaluate_grid,
    fmt,
    load_checkpoint,
    provenance_lines,
    save_checkpoint,
)
from .kernels import FreeEnergyModel
from .smc import Population, initialize_population
from .systems import LJClusterSystem, SpringExtendedSystem, ToySystem, WCADimerSystem, read_snapshot
from .targets import MalaSettings
from .tempering import SweepState, sweep_step

log = logging.getLogger(__name__)

EXIT_CONVERGED = 0
EXIT_BUDGET = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4
EXIT_INTERRUPTED = 5

OPT_COLUMNS = ["row", "value", "k", "iteration", "grad_norm", "lam", "eta_m", "ess", "log_z", "bridge_steps"]
SMC_COLUMNS = ["row", "step", "gamma", "ess", "resampled", "acc_q", "acc_z", "dt_q", "dt_z", "log_z_inc"]
CHECKPOINT = "checkpoint"


def build_system(cfg: RunConfig):
    sc = cfg.system
    if sc.kind == "toy":
        return ToySystem(sc.toy.d1, sc.toy.d2)
    if sc.kind == "wca":
        p = sc.wca
        inner = WCADimerSystem(p.n_atoms, p.box, p.epsilon, p.sigma, p.h, p.w, p.r0)
    else:
        p = sc.lj
        inner = LJClusterSystem(p.n_atoms, p.dim, p.epsilon, p.sigma, p.cv, p.q4_cutoff, p.wall_k,
                                p.wall_radius, p.q4_gradient)
    return inner if sc.spring_mu is None else SpringExtendedSystem(inner, sc.spring_mu)


def cv_names(cfg: RunConfig):
    sc = cfg.system
    if sc.kind == "toy":
        return ["z"]
    if sc.kind == "wca":
        return ["r"]
    return ["Q4" if sc.lj.cv == "q4" else "M2", "E"]


def initial_coordinates(cfg: RunConfig, system):
    if cfg.system.snapshot is None:
        return None
    pos, _ = read_snapshot(cfg.system.snapshot)
    q = pos.reshape(-1)
    if q.shape[0] != system.dim_q:
        raise ConfigError("system.snapshot", f"snapshot has {q.shape[0]} coordinates, system needs {system.dim_q}")
    return q


@dataclass
class RunResult:
    status: str
    exit_code: int
    model: FreeEnergyModel
    out_dir: Path
    emitted: list
    state: object = None


def exit_code_for(statuses):
    return EXIT_CONVERGED if all(s == "converged" for s in statuses) else EXIT_BUDGET


class _Run:
    """Shared plumbing: population, MALA settings, traces and checkpoints."""

    def __init__(self, cfg: RunConfig, kind, resume=False, stop_after=None):
        self.cfg = cfg
        self.kind = kind
        self.out = Path(cfg.output.dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.system = build_system(cfg)
        self.domain = cfg.domain.build()
        if self.domain.dim != self.system.dim_z:
            raise ConfigError("domain", f"domain has {self.domain.dim} axes, system has {self.system.dim_z} CVs")
        self.hash = cfg.scientific_hash()
        self.workers = cfg.n_workers
        self.stop_after = stop_after
        self.units = 0
        self.rows = 0
        self.smc_rows = 0
        self.value = cfg.beta
        self.stop_requested = False
        created = None if cfg.reproducible else time.strftime("%Y-%m-%dT%H:%M:%S")
        self.created = created
        head = provenance_lines(self.hash, cfg.seed, {} if created is None else {"created": created})
        self.opt = TraceFile(self.out / "trace.txt", OPT_COLUMNS, ["# optimization trace"] + head)
        self.smc = TraceFile(self.out / "smc.txt", SMC_COLUMNS, ["# SMC bridge diagnostics"] + head)
        self.resumed = resume and checkpoint_exists(self.out / CHECKPOINT)
        if self.resumed:
            self._load()
        else:
            self.pop, self.mala = self._fresh_population()
            self.opt.start()
            self.smc.start()
            self.state = None

    # -- population and checkpoints --------------------------------------

    def _fresh_population(self):
        cfg = self.cfg
        model = FreeEnergyModel.empty(cfg.domain.anchor_point(), cfg.beta)
        q0 = initial_coordinates(cfg, self.system)
        log.info("initializing %d particles", cfg.smc.n)
        return initialize_population(self.system, self.domain, model, cfg.beta, cfg.smc.n, cfg.seed, cfg.mala,
                                     cfg.smc.n_equil, q0, self.workers)

    def _load(self):
        arrays, meta = load_checkpoint(self.out / CHECKPOINT)
        if meta["config_hash"] != self.hash or meta["seed"] != self.cfg.seed or meta["kind"] != self.kind:
            raise ConfigError("resume", "checkpoint was written by a different configuration or seed")
        self.pop = Population.from_arrays(arrays)
        m = meta["mala"]
        self.mala = MalaSettings(m["dt_q"], m["dt_z"], m["n_steps"], tuple(m["target_acc"]))
        self.units, self.rows, self.smc_rows = meta["units"], meta["rows"], meta["smc_rows"]
        self.value = meta["value"]
        self.meta_state = meta["state"]
        self.opt.resume(meta["trace_sizes"][0])
        self.smc.resume(meta["trace_sizes"][1])

    def checkpoint(self, state_dict):
        meta = {
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "kind": self.kind,
            "units": self.units,
            "rows": self.rows,
            "smc_rows": self.smc_rows,
            "value": self.value,
            "mala": dataclasses.asdict(self.mala),
            "state": state_dict,
            "trace_sizes": [self.opt.size(), self.smc.size()],
        }
        save_checkpoint(self.out / CHECKPOINT, self.pop.to_arrays(), meta)

    def after_unit(self, state_dict_fn, done):
        self.units += 1
        if done or self.units % self.cfg.output.checkpoint_every == 0:
            self.checkpoint(state_dict_fn())
        if not done and (self.stop_requested or (self.stop_after is not None and self.units >= self.stop_after)):
            if self.units % self.cfg.output.checkpoint_every:
                self.checkpoint(state_dict_fn())
            raise RunInterrupted(f"stopped after {self.units} steps; rerun with resume to continue")

    # -- traces ----------------------------------------------------------

    def on_iteration(self, k_fn):
        def cb(rec, res):
            self.rows += 1
            self.opt.write(self.rows, self.value, k_fn(), rec.iteration, rec.grad_norm, rec.lam, rec.eta_m,
                           rec.ess, rec.log_z, rec.bridge_steps)
            for s in res.steps:
                self.smc_rows += 1
                self.smc.write(self.rows, s.step, s.gamma, s.ess, s.resampled, s.acc_q, s.acc_z, s.dt_q, s.dt_z,
                               s.log_z_inc)
            if self.rows % 100 == 0:
                log.info("row %d value %.6g |J| %.4g ess %.1f", self.rows, self.value, rec.grad_norm, rec.ess)
        return cb

    # -- outputs ---------------------------------------------------------

    def write_model(self, model, path):
        model.save(path, self.domain, {"config_hash": self.hash, "seed": self.cfg.seed,
                                       "cv_names": cv_names(self.cfg)})

    def grid(self, model):
        pts = self.cfg.output.points_for(self.domain.dim)
        return evaluate_grid(model, self.domain, pts, cv_names(self.cfg), self.hash, self.cfg.seed)

    def write_kernel_report(self, reports, path):
        d = self.domain.dim
        cols = ["k", "delta", "delta_se"] + [f"center{l}" for l in range(d)] + [f"bandwidth{l}" for l in range(d)]
        cols += ["iterations", "grad_norm"]
        lines = ["# per-kernel report"] + provenance_lines(self.hash, self.cfg.seed) + ["\t".join(cols)]
        for r in reports:
            vals = [r.k, r.delta, r.delta_se] + list(r.center) + list(r.bandwidth) + [r.iterations, r.grad_norm]
            lines.append("\t".join(fmt(v) for v in vals))
        atomic_write_text(path, "\n".join(lines) + "\n")

    def write_summary(self, status, exit_code, model, extra=None):
        summary = {"status": status, "exit_code": exit_code, "n_kernels": model.n_kernels,
                   "iterations": self.rows, "config_hash": self.hash, "seed": self.cfg.seed}
        summary.update(extra or {})
        atomic_write_text(self.out / "summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
        atomic_write_text(self.out / "config.yaml", self.cfg.dumps())

    def close(self):
        self.opt.close()
        self.smc.close()


class _StopOnSignal:
    """Turn SIGINT into a stop request honoured at the next step boundary."""

    def __init__(self, run):
        self.run = run
        self.prev = None

    def __enter__(self):
        if threading.current_thread() is threading.main_thread():
            self.prev = signal.getsignal(signal.SIGINT)

            def handler(signum, frame):
                log.warning("interrupt received; checkpointing at the next step")
                self.run.stop_requested = True

            signal.signal(signal.SIGINT, handler)
        return self

    def __exit__(self, *exc):
        if self.prev is not None:
            signal.signal(signal.SIGINT, self.prev)
        return False


def _drive(run, step, state_dict, done):
    with _StopOnSignal(run):
        while not done():
            step()
            run.after_unit(state_dict, done())


def _numerical_guard(run, fn):
    try:
        return fn()
    except NumericalFailure as exc:
        run.write_summary("numerical_failure", EXIT_NUMERICAL, FreeEnergyModel.empty(
            run.cfg.domain.anchor_point(), run.cfg.beta), {"error": str(exc)})
        raise
    finally:
        run.close()


def run_single_temperature(cfg: RunConfig, resume=False, stop_after=None) -> RunResult:
    """Greedy optimization at ``cfg.beta``; writes model, grid, traces, report and checkpoint."""
    run = _Run(cfg, "single", resume, stop_after)

    def body():
        if run.resumed:
            state = OuterState.from_dict(run.meta_state)
        else:
            state = OuterState(FreeEnergyModel.empty(cfg.domain.anchor_point(), cfg.beta))
        cb = run.on_iteration(lambda: state.model.n_kernels)

        def step():
            run.mala = outer_step(state, run.system, run.domain, run.pop, run.mala, cfg.descent, cfg.greedy,
                                  cfg.descent.max_iter, run.workers, cb)

        _drive(run, step, state.to_dict, lambda: state.done)
        model = state.model
        run.write_model(model, run.out / "model.json")
        run.grid(model).write(run.out / "free_energy.txt", run.created)
        run.write_kernel_report(state.reports, run.out / "kernels.txt")
        code = exit_code_for([state.status])
        run.write_summary(state.status, code, model)
        return RunResult(state.status, code, model, run.out, [(cfg.beta, model)], state)

    return _numerical_guard(run, body)


def run_temper_sweep(cfg: RunConfig, resume=False, stop_after=None) -> RunResult:
    """Cold optimization at the schedule start, then the continuation sweep.

    Emits one model and grid per emitted parameter value (the start included),
    the parameter sequence, the per-value report and the traces.
    """
    if cfg.temper is None:
        raise ConfigError("temper", "a sweep needs a temper section")
    sched = cfg.temper
    run = _Run(cfg, "sweep", resume, stop_after)

    def body():
        holder = {}
        if run.resumed and run.meta_state["stage"] == "sweep":
            holder["sweep"] = SweepState.from_dict(run.meta_state["sweep"])
            holder["cold"] = OuterState.from_dict(run.meta_state["cold"])
        elif run.resumed:
            holder["cold"] = OuterState.from_dict(run.meta_state["cold"])
        else:
            holder["cold"] = OuterState(FreeEnergyModel.empty(cfg.domain.anchor_point(), cfg.beta))
            run.value = sched.start

        def current():
            return holder["sweep"].outer if "sweep" in holder else holder["cold"]

        def state_dict():
            d = {"stage": "sweep" if "sweep" in holder else "cold", "cold": holder["cold"].to_dict()}
            if "sweep" in holder:
                d["sweep"] = holder["sweep"].to_dict()
            return d

        cb = run.on_iteration(lambda: current().model.n_kernels)

        def step():
            if "sweep" not in holder:
                cold = holder["cold"]
                run.mala = outer_step(cold, run.system, run.domain, run.pop, run.mala, cfg.descent, cfg.greedy,
                                      cfg.descent.max_iter, run.workers, cb)
                if cold.done:
                    sw = SweepState(sched.start, OuterState(cold.model, phase="done", status=cold.status))
                    sw.emitted.append((sched.start, cold.model))
                    holder["sweep"] = sw
                return
            sw = holder["sweep"]
            run.mala = sweep_step(sw, run.system, run.domain, run.pop, run.mala, sched, cfg.descent, cfg.greedy,
                                  run.workers, cb)
            run.value = sw.value

        _drive(run, step, state_dict, lambda: "sweep" in holder and holder["sweep"].done)
        sw, cold = holder["sweep"], holder["cold"]
        (run.out / "models").mkdir(exist_ok=True)
        (run.out / "grids").mkdir(exist_ok=True)
        for i, (value, model) in enumerate(sw.emitted):
            run.write_model(model, run.out / "models" / f"model_{i:03d}.json")
            run.grid(model).write(run.out / "grids" / f"grid_{i:03d}.txt", run.created)
        seq = ["# continuation sequence (" + sched.kind + ")"] + provenance_lines(run.hash, cfg.seed)
        seq += ["index\tvalue"] + [f"{i}\t{fmt(v)}" for i, (v, _) in enumerate(sw.emitted)]
        atomic_write_text(run.out / "sequence.txt", "\n".join(seq) + "\n")
        rows = ["# sweep report"] + provenance_lines(run.hash, cfg.seed)
        rows.append("\t".join(["value", "k", "pruned", "iterations", "delta", "status"]))
        for r in sw.rows:
            rows.append("\t".join([fmt(r.value), fmt(r.k), fmt(r.pruned), fmt(r.iterations), fmt(r.delta), r.status]))
        atomic_write_text(run.out / "sweep.txt", "\n".join(rows) + "\n")
        run.write_kernel_report(cold.reports, run.out / "kernels.txt")
        model = sw.model
        run.write_model(model, run.out / "model.json")
        run.grid(model).write(run.out / "free_energy.txt", run.created)
        statuses = [cold.status] + [r.status for r in sw.rows]
        code = exit_code_for(statuses)
        status = "converged" if code == EXIT_CONVERGED else "budget"
        run.write_summary(status, code, model, {"emitted": len(sw.emitted), "cold_iterations": cold.iterations,
                                                "transitions": sw.transitions})
        return RunResult(status, code, model, run.out, sw.emitted, sw)

    return _numerical_guard(run, body)


def grid_from_model(model_path, points=None, names=None):
    """Evaluate a saved model on a grid over the domain stored alongside it."""
    model, domain = FreeEnergyModel.load(model_path)
    if domain is None:
        raise ConfigError("model", f"{model_path} carries no domain")
    meta = json.loads(Path(model_path).read_text())
    pts = points if points is not None else (201 if domain.dim <= 2 else 41)
    names = names or meta.get("cv_names")
    return evaluate_grid(model, domain, pts, names, meta.get("config_hash", ""), meta.get("seed", 0))


__all__ = [
    "EXIT_CONVERGED",
    "EXIT_BUDGET",
    "EXIT_NUMERICAL",
    "EXIT_CONFIG",
    "EXIT_INTERRUPTED",
    "RunResult",
    "build_system",
    "cv_names",
    "run_single_temperature",
    "run_temper_sweep",
    "grid_from_model",
    "FreeEnergyGrid",
]
