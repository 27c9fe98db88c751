"""Command-line runner: ``qgibbs verify|anneal|pimc|schedule|decompose``.

Exit codes: 0 success, 1 a verify check failed, 2 configuration or parameter
error, 3 numerical failure, 4 capacity exceeded, 5 output I/O failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .anneal import (EQA, POLY, QA, SA, IntegratorConfig, TRACE_COLUMNS, commutator_residual,
                     make_eqa_schedule, make_poly_schedule, make_sa_schedule, propagate,
                     reintegrate_schedule)
from .classical import (KRONECKER, MULTILINEAR, DiagonalObservable, brute_thermal,
                        flip_identity_residual, gibbs_vector)
from .config import ExperimentConfig, load_config
from .errors import CapacityError, ConfigError, ContractError, DomainError, NumericalError
from .operators import DiagonalOperator, ising_decompose
from .pimc import OBSERVABLES, PIMCParams, PIMCRun
from .quantum_map import (QuantumMap, compute_map_params, field_scale, gap_bound_sa,
                          ising_closed_form_check, recover_markov_matrix)
from .spectral import ground_expectation, ground_space_overlap, verify_gibbs_ground
from .operators import StateVector

SCHEMA_TAG = "qgibbs-report/1"
COMMANDS = ("verify", "anneal", "pimc", "schedule", "decompose")
PRECISION_ENV = "QGIBBS_PRECISION"

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CAPACITY, EXIT_IO = 0, 1, 2, 3, 4, 5


class OutputError(Exception):
    pass


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


@dataclass
class Check:
    name: str
    passed: bool
    measured: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "status": "pass" if self.passed else "fail",
                "measured": _plain(self.measured)}


class Emitter:
    """Writes files into one output directory and records their hashes."""

    def __init__(self, out_dir: str, formats: Sequence[str], precision: int):
        self.out_dir = out_dir
        self.formats = tuple(formats)
        self.precision = precision
        self.manifest: Dict[str, str] = {}
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {out_dir}: {exc.strerror}") from None

    def fmt(self, x: Any) -> str:
        if isinstance(x, str):
            return x
        if isinstance(x, (bool, np.bool_)):
            return "true" if x else "false"
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        return f"{float(x):.{self.precision}g}"

    def write_text(self, name: str, text: str, track: bool = True) -> None:
        path = os.path.join(self.out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc.strerror}") from None
        if track:
            self.manifest[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    def csv(self, name: str, columns: Sequence[str], rows) -> None:
        if "csv" not in self.formats:
            return
        lines = [",".join(columns)]
        lines += [",".join(self.fmt(v) for v in row) for row in rows]
        self.write_text(name, "\n".join(lines) + "\n")

    def json(self, name: str, obj: Any, force: bool = False) -> None:
        if "json" not in self.formats and not force:
            return
        self.write_text(name, json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


@dataclass
class RunReport:
    command: str
    config: ExperimentConfig
    checks: List[Check] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    status: str = "complete"

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self, manifest: Dict[str, str]) -> Dict[str, Any]:
        return {"schema": SCHEMA_TAG, "version": __version__, "command": self.command,
                "seed": self.config.seed, "status": self.status, "config": self.config.echo(),
                "checks": [c.as_dict() for c in self.checks],
                "all_passed": self.all_passed, "summary": _plain(self.summary),
                "manifest": dict(sorted(manifest.items()))}


# ---------------------------------------------------------------------------
# subcommands


def _verify(cfg: ExperimentConfig, out: Emitter, args) -> RunReport:
    model, point = cfg.model(), cfg.require_point()
    rep = RunReport("verify", cfg)
    flip = flip_identity_residual(model)
    rep.checks.append(Check("flip_identity", flip <= 1e-12, {"residual": flip}))
    params = compute_map_params(model, point)
    rep.summary.update({"p": params.p, "chi": params.chi, "beta": point.beta,
                        "p_method": params.method, "n_sites": model.n_sites, "dim": model.dim})

    if model.n_levels == 2 and model.energy_kind == MULTILINEAR:
        g = verify_gibbs_ground(model, point)
        rep.checks.append(Check("gibbs_ground_state", g.passed, {
            "ground_energy": g.ground_energy, "overlap": g.overlap_with_gibbs,
            "min_entry": g.positivity_min_entry, "degenerate": g.degenerate}))
        bound = gap_bound_sa(model.n_sites, point.beta, params.p).value
        rep.checks.append(Check("gap_bound", g.gap >= bound, {"gap": g.gap, "bound": bound}))
        rep.summary["gap"] = g.gap
        rep.summary["gap_bound"] = bound

        rows = []
        observables = [("energy", DiagonalObservable("energy")),
                       ("magnetization", DiagonalObservable("magnetization"))]
        observables += [(f"pair_{i}_{j}", DiagonalObservable.pair(i, j))
                        for i in range(model.n_sites) for j in range(i + 1, model.n_sites)]
        worst = 0.0
        state = StateVector(g.state)
        for name, obs in observables:
            ground = ground_expectation(state, obs, model)
            _, exact = brute_thermal(model, point, obs)
            worst = max(worst, abs(ground - exact))
            rows.append((name, ground, exact, abs(ground - exact)))
        out.csv("observables.csv", ("observable", "ground_state", "brute_force", "abs_diff"), rows)
        rep.checks.append(Check("thermal_observables", worst <= 1e-9, {"max_abs_diff": worst}))

        if model.dim <= 4096:
            c = commutator_residual(model, point)
            rep.checks.append(Check("commutator_identity", c.residual <= 1e-9, {"residual": c.residual}))
            rep.checks.append(Check("per_state_rate_identity", c.per_state_max_deviation <= c.per_state_tolerance,
                                    {"max_deviation": c.per_state_max_deviation, "tolerance": c.per_state_tolerance}))
            rep.checks.append(Check("matrix_element_bound", c.max_bound_ratio <= 1.0 + 1e-12,
                                    {"max_ratio": c.max_bound_ratio}))
        _, mk = recover_markov_matrix(model, point)
        rep.checks.append(Check("markov_recovery", mk.passed, {
            "max_row_sum_deviation": mk.max_row_sum_deviation, "min_offdiagonal": mk.min_offdiagonal,
            "min_diagonal": mk.min_diagonal,
            "diagonal_sign": "non-negative" if mk.min_diagonal >= 0 else "negative entries",
            "detailed_balance_residual": mk.detailed_balance_residual}))
    else:
        qmap = QuantumMap(model)
        psi = gibbs_vector(model, point, normalized=True).real
        gs = ground_space_overlap(qmap.eqa(point.beta, params.chi), psi)
        ok = abs(gs.ground_energy) <= 1e-9 and gs.overlap >= 1.0 - 1e-9
        rep.checks.append(Check("gibbs_ground_space", ok, {
            "ground_energy": gs.ground_energy, "overlap": gs.overlap,
            "multiplicity": gs.multiplicity, "gap_above": gs.gap_above}))
    return rep


def _schedule_from(cfg: ExperimentConfig, need_point_for_eqa: bool = True):
    model = cfg.model()
    a = cfg["anneal"]
    fam = a["family"]
    n, eps = model.n_sites, a["epsilon"]
    point = None
    if fam in (SA, POLY):
        if a["T_final"] is None:
            raise ConfigError(f"anneal.T_final: required for family {fam}")
        p = a["p"] if a["p"] is not None else field_scale(model)[0]
        if fam == SA:
            sched = make_sa_schedule(p, n, eps, a["T_final"], a["T_max_cap"])
        else:
            sched = make_poly_schedule(a["q"], n, eps, a["T_final"], p, a["T_max_cap"])
    else:
        if a["gamma_0"] is None:
            raise ConfigError(f"anneal.gamma_0: required for family {fam}")
        gamma_final = a["gamma_final"]
        if fam == EQA:
            point = cfg.require_point()
            if gamma_final is None:
                gamma_final = compute_map_params(model, point).chi
        elif gamma_final is None:
            raise ConfigError("anneal.gamma_final: required for family QA")
        c = a["c"] if a["c"] is not None else a["gamma_0"]
        sched = make_eqa_schedule(n, c, eps, a["gamma_0"], gamma_final, refined=a["refined"],
                                  matrix_element_bound=a["matrix_element_bound"], family=fam)
    if a["compression"] != 1.0:
        sched = sched.compressed(a["compression"])
    return model, fam, sched, point


def _anneal(cfg: ExperimentConfig, out: Emitter, args) -> RunReport:
    model, fam, sched, point = _schedule_from(cfg)
    a = cfg["anneal"]
    trace = propagate(model, fam, sched, IntegratorConfig(tol=a["tol"], n_samples=a["n_samples"]), point)
    out.csv("trace.csv", TRACE_COLUMNS, trace.samples.tolist())
    rep = RunReport("anneal", cfg)
    max_monitor = float(np.nanmax(trace.column("monitor")))
    rep.checks.append(Check("monitor_within_epsilon", max_monitor <= sched.epsilon * (1 + 1e-6),
                            {"max_monitor": max_monitor, "epsilon": sched.epsilon}))
    rep.checks.append(Check("norm_preserved", trace.max_norm_drift <= 1e-6,
                            {"max_norm_drift": trace.max_norm_drift}))
    rep.summary.update({"schedule": sched.as_dict(), "final_fidelity": trace.final_fidelity,
                        "steps": trace.steps, "rejected_steps": trace.rejected})
    return rep


def _schedule(cfg: ExperimentConfig, out: Emitter, args) -> RunReport:
    _, fam, sched, _ = _schedule_from(cfg)
    s = cfg["schedule"]
    times = np.linspace(0.0, sched.total_time, s["n_points"])
    times = np.unique(np.concatenate([times, np.asarray(s["extra_times"], dtype=float)]))
    lam = np.array([float(sched.control(t)) for t in times])
    rate = np.array([float(sched.rate(t)) for t in times])
    bound = np.array([sched.gap_bound(x) for x in lam])
    ode = reintegrate_schedule(sched, times)
    rel = np.abs(ode - lam) / np.abs(lam)
    out.csv("schedule.csv", ("t", "lambda", "rate", "gap_bound", "reintegrated", "rel_diff"),
            zip(times, lam, rate, bound, ode, rel))
    rep = RunReport("schedule", cfg)
    rep.checks.append(Check("closed_form_matches_ode", float(rel.max()) <= 1e-6,
                            {"max_rel_diff": float(rel.max())}))
    rep.summary["schedule"] = sched.as_dict()
    return rep


def _pimc(cfg: ExperimentConfig, out: Emitter, args) -> RunReport:
    model, point = cfg.model(), cfg.require_point()
    pc = cfg["pimc"]
    params = PIMCParams(n_slices=pc["slices"], beta_tilde=pc["beta_tilde"], sweeps=pc["sweeps"],
                        burn_in=pc["burn_in"], seed=cfg.seed,
                        field_includes_chi=pc["field_includes_chi"], n_chains=pc["chains"],
                        time_per_sweep=pc["time_per_sweep"], order=pc["order"])
    schedule = None
    if pc["mode"] == "annealed":
        a = cfg["anneal"]
        if a["gamma_0"] is None:
            raise ConfigError("anneal.gamma_0: required for pimc mode 'annealed'")
        chi = compute_map_params(model, point).chi
        c = a["c"] if a["c"] is not None else a["gamma_0"]
        schedule = make_eqa_schedule(model.n_sites, c, a["epsilon"], a["gamma_0"], chi,
                                     refined=a["refined"], matrix_element_bound=a["matrix_element_bound"])
    run = PIMCRun(model, point, params, schedule)
    if args.resume:
        try:
            with open(args.resume, encoding="utf-8") as fh:
                run.restore(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read checkpoint {args.resume}: {exc.strerror}") from None
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid checkpoint {args.resume}: {exc}") from None
    every = pc["checkpoint_every"]
    total = params.burn_in + params.sweeps
    stop = total if args.stop_after is None else min(total, args.stop_after)
    while min(c.sweep for c in run.chains) < stop:
        cur = min(c.sweep for c in run.chains)
        step = stop - cur if not every else min(every - cur % every, stop - cur)
        run.advance(step, workers=pc["workers"])
        if every and not run.done:
            out.write_text("checkpoint.json", run.checkpoint(), track=False)
    rep = RunReport("pimc", cfg)
    if not run.done:
        out.write_text("checkpoint.json", run.checkpoint(), track=False)
        rep.status = "interrupted"
        rep.summary["sweeps_done"] = min(c.sweep for c in run.chains)
        return rep

    res = run.result()
    out.csv("pimc_stats.csv", ("observable", "mean", "stderr", "naive_stderr", "tau_int", "count"),
            [(k, s.mean, s.stderr, s.naive_stderr, s.tau_int, s.count) for k, s in res.stats.items()])
    rows = []
    for ci, cs in enumerate(res.chain_stats):
        for k in OBSERVABLES:
            for lvl, se in enumerate(cs[k].binning):
                rows.append((k, ci, lvl, 2 ** lvl, se))
    out.csv("pimc_binning.csv", ("observable", "chain", "level", "bin_size", "stderr"), rows)
    rep.summary.update(res.summary())
    acc = res.acceptance
    rep.checks.append(Check("acceptance_in_unit_interval", 0.0 < acc < 1.0, {"acceptance": acc}))
    if model.dim <= 2 ** 20 and res.couplings.bonds:
        b = res.couplings.bonds
        exact = float(np.mean([brute_thermal(model, point, DiagonalObservable.pair(i, j))[1]
                               for i, j, _ in b]))
        s = res.stats["nn_corr"]
        z = abs(s.mean - exact) / s.stderr if s.stderr > 0 else math.inf
        rep.checks.append(Check("nn_corr_within_3_stderr", z <= 3.0,
                                {"estimate": s.mean, "stderr": s.stderr, "exact": exact, "z": z}))
    if res.low_beta_tilde:
        rep.summary["warning"] = "beta_tilde < 10: ground-state projection may be incomplete"
    return rep


def _decompose(cfg: ExperimentConfig, out: Emitter, args) -> RunReport:
    model, point = cfg.model(), cfg.require_point()
    if model.n_levels != 2 or model.energy_kind != MULTILINEAR:
        raise ContractError("decompose handles spin-1/2 multilinear models only")
    qmap = QuantumMap(model)
    table = qmap.boltzmann_field(point.beta)
    poly = ising_decompose(DiagonalOperator(table), model.n_sites)
    rows = []
    for mask in np.flatnonzero(np.abs(poly.coefficients) > poly.cutoff):
        sites = [b for b in range(model.n_sites) if mask >> b & 1]
        rows.append((" ".join(map(str, sites)), len(sites), poly.coefficients[mask]))
    rows.sort(key=lambda r: (r[1], [int(x) for x in r[0].split()]))
    out.csv("decompose.csv", ("sites", "order", "coefficient"), rows)
    recon = float(np.max(np.abs(poly.recompose().entries - table)))
    rep = RunReport("decompose", cfg)
    scale = max(1.0, float(np.max(np.abs(table))))
    rep.checks.append(Check("recomposition", recon <= 1e-12 * scale, {"max_abs_diff": recon}))
    m = cfg["model"]
    if m["topology"] == "ring" and model.n_sites >= 4 and m["field"] == 0.0:
        cf = ising_closed_form_check(point.beta, m["J"], model.n_sites)
        rep.checks.append(Check("ising_closed_form", cf.passed, {"max_deviation": cf.max_deviation,
                                                                 "x": cf.x, "y": cf.y}))
    rep.summary.update({"chi": qmap.chi(point.beta), "constant": poly.constant,
                        "n_terms": len(rows),
                        "max_order": max((r[1] for r in rows), default=0)})
    return rep


HANDLERS = {"verify": _verify, "anneal": _anneal, "pimc": _pimc, "schedule": _schedule,
            "decompose": _decompose}


def run_experiment(cfg: ExperimentConfig, command: str, out_dir: str, args=None) -> RunReport:
    if command not in HANDLERS:
        raise ConfigError(f"unknown subcommand {command!r}")
    if args is None:
        args = argparse.Namespace(resume=None, stop_after=None)
    precision = cfg["output"]["precision"]
    env = os.environ.get(PRECISION_ENV)
    if env:
        try:
            precision = int(env)
        except ValueError:
            raise ConfigError(f"{PRECISION_ENV} must be an integer, got {env!r}") from None
        if not 1 <= precision <= 17:
            raise ConfigError(f"{PRECISION_ENV} must be in 1..17")
    out = Emitter(out_dir, cfg["output"]["formats"], precision)
    out.write_text("config.toml", cfg.echo())
    rep = HANDLERS[command](cfg, out, args)
    if rep.status == "complete":
        out.json("summary.json", rep.summary)
    out.write_text("report.json", json.dumps(rep.as_dict(out.manifest), indent=2, sort_keys=True,
                                             allow_nan=False) + "\n", track=False)
    return rep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgibbs", description="Gibbs-state quantum annealing toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="TOML experiment file")
    ap.add_argument("--out", required=True, help="output directory (created if absent)")
    ap.add_argument("--seed", type=int, default=None, help="override run.seed (unsigned 64-bit)")
    ap.add_argument("--resume", default=None, help="pimc: continue from a checkpoint file")
    ap.add_argument("--stop-after", type=int, default=None,
                    help="pimc: stop after this many sweeps per chain and write a checkpoint")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        rep = run_experiment(cfg, args.command, args.out, args)
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"qgibbs: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"qgibbs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CapacityError as exc:
        print(f"qgibbs: capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except OutputError as exc:
        print(f"qgibbs: {exc}", file=sys.stderr)
        return EXIT_IO
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}")
    if args.command == "verify" and not rep.all_passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
