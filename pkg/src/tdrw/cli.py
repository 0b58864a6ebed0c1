"""Command-line runner: ``tdrw {env,simulate,kernel,analyze,run,reproduce}``.

A run is described by one JSON document validated against
``config.schema.json``.  Every run writes ``manifest.json`` (resolved config,
package versions, seeds) next to its artifacts.  Exit codes: 0 success,
1 failed reproduction, 2 invalid input, 3 inconclusive analysis verdict.
Errors are also printed as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import platform
import sys
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis as an
from . import experiments
from .environments import (
    HalfspaceParams,
    PoissonShiftParams,
    ZigzagParams,
    constant_env,
    halfspace_csrw,
    halfspace_discrete,
    poisson_shift_1d,
    poisson_times,
    random_cycle_env,
    zigzag_1d,
)
from .graph import DomainError, Environment, ball, geometry_from_descriptor, verify_ellipticity, volume
from .kernel import PropagationConfig, kernel
from .rng import child_seed
from .walkers import (
    classify_states,
    excursions,
    return_counts,
    simulate_batch,
    trajectory_stats,
)

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_INCONCLUSIVE = 0, 1, 2, 3
SUBCOMMANDS = ("env", "simulate", "kernel", "analyze", "run")
STAGE_HELP = {
    "env": "build the environment and write its descriptor",
    "simulate": "sample trajectories",
    "kernel": "propagate the exact kernel over a box",
    "analyze": "run the requested analyses (simulating or propagating as needed)",
    "run": "every stage the config implies",
}


class ConfigError(Exception):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def _schema() -> dict:
    return json.loads(resources.files("tdrw").joinpath("config.schema.json").read_text())


def _fill_defaults(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("dynamics", "discrete")
    cfg.setdefault("t0", 0)
    cfg.setdefault("batch", 1)
    cfg.setdefault("seed", 0)
    cfg.setdefault("save_trajectories", True)
    cfg.setdefault("analysis", [])
    cfg.setdefault("analysis_options", {})
    cfg["environment"].setdefault("params", {})
    if "kernel" in cfg:
        k = cfg["kernel"]
        k.setdefault("radius", 200)
        k.setdefault("tolerance", 1e-12)
        k.setdefault("snapshot_times", [])
        k.setdefault("min_mass", 0)
    return cfg


def load_config(path, seed=None, threads=None, out=None) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw, seed=seed, threads=threads, out=out)


def validate_config(raw: dict, seed=None, threads=None, out=None) -> dict:
    """Schema check, flag overrides, defaults, then a trial environment build."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        field = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{field}: {err.message}", field)
    cfg = _fill_defaults(raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if threads is not None:
        cfg["threads"] = int(threads)
    if out is not None:
        cfg["output"] = str(out)
    env = build_environment(cfg)
    dim = env.dim
    cfg.setdefault("start", [0] * dim)
    if len(cfg["start"]) != dim:
        raise ConfigError(f"start: expected {dim} coordinates", "start")
    if not env.geometry.contains(np.reshape(cfg["start"], (dim, 1))).all():
        raise ConfigError("start: vertex outside the geometry", "start")
    if cfg["dynamics"] == "discrete" and not (env.discrete or env.schedule.static):
        raise ConfigError("dynamics: this environment has no integer clock", "dynamics")
    if cfg["dynamics"] == "discrete" and "horizon" in cfg:
        raise ConfigError("horizon: discrete walks take steps", "horizon")
    if cfg["dynamics"] != "discrete" and "steps" in cfg:
        raise ConfigError("steps: continuous walks take a horizon", "steps")
    return cfg


def build_environment(cfg: dict) -> Environment:
    env_cfg = cfg["environment"]
    preset, p = env_cfg["preset"], dict(env_cfg.get("params", {}))
    try:
        if preset == "zigzag1d":
            if "gamma" in p or "gamma_prime" in p:
                return zigzag_1d(ZigzagParams.from_laziness(p["eps"], p.get("gamma", 0.0), p.get("gamma_prime", 0.0)))
            return zigzag_1d(ZigzagParams(p["eps"], p.get("b", 0.0), p.get("b_prime", 0.0)))
        if preset == "halfspace-dt":
            if "gamma" in p or "gamma_prime" in p:
                hp = HalfspaceParams.from_laziness(p["eps"], p.get("gamma", 0.0), p.get("gamma_prime", 0.0))
            else:
                hp = HalfspaceParams(p["eps"], p.get("b", 0.0), p.get("b_prime", 0.0),
                                     p.get("f", 0.0), p.get("f_prime", 0.0))
            return halfspace_discrete(hp)
        if preset in ("poisson1d", "halfspace-csrw"):
            bp = _breakpoints(p, cfg["seed"])
            if preset == "poisson1d":
                return poisson_shift_1d(PoissonShiftParams(p["eps"], p["c"], bp))
            return halfspace_csrw(HalfspaceParams(p["eps"], breakpoints=bp))
        if preset == "constant":
            geom = geometry_from_descriptor(env_cfg.get("geometry", {"name": "line"}))
            return constant_env(geom, p.get("weight", 1.0), p.get("loop", 0.0))
        if preset == "random-cycle":
            return random_cycle_env(p["n"], p["segments"], p["horizon"], cfg["seed"], p.get("c1", 0.5))
    except DomainError as exc:
        raise ConfigError(f"environment.params: {exc}", "environment.params") from exc
    raise ConfigError(f"environment.preset: unknown preset {preset!r}", "environment.preset")


def _breakpoints(p: dict, seed) -> tuple:
    if "breakpoints" in p and "random_breakpoints" in p:
        raise ConfigError("environment.params: give breakpoints or random_breakpoints, not both",
                          "environment.params")
    if "breakpoints" in p:
        return tuple(p["breakpoints"])
    if "random_breakpoints" in p:
        return tuple(poisson_times(p["c"] - 1, p["random_breakpoints"]["horizon"], seed))
    raise ConfigError("environment.params: breakpoints or random_breakpoints required",
                      "environment.params")


# ---------------------------------------------------------------------------
# Stages


class Run:
    def __init__(self, cfg: dict, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.get("output", "tdrw-out"))
        self.env = build_environment(cfg)
        self.artifacts: list[str] = []
        self.verdicts: dict[str, str] = {}
        self.trajs = None
        self.snaps = None
        threads = cfg.get("threads")
        if threads is None and os.environ.get("TDRW_THREADS"):
            threads = int(os.environ["TDRW_THREADS"])
        self.threads = threads or (os.cpu_count() or 1)

    def write_json(self, name, obj):
        with open(self.out / name, "w") as fh:
            json.dump(an._jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.artifacts.append(name)

    def stage_env(self):
        self.write_json("environment.json", self.env.descriptor())

    def _length(self):
        c = self.cfg
        if c["dynamics"] == "discrete":
            if "steps" not in c:
                raise ConfigError("steps: required for discrete simulation", "steps")
            return {"steps": c["steps"]}
        if "horizon" not in c:
            raise ConfigError("horizon: required for continuous simulation", "horizon")
        return {"horizon": c["horizon"]}

    def stage_simulate(self):
        c = self.cfg
        self.trajs = simulate_batch(c["dynamics"], self.env, c["start"], c["batch"], c["seed"],
                                    t0=c["t0"], n_jobs=self.threads, **self._length())
        if c["save_trajectories"]:
            width = max(4, len(str(c["batch"] - 1)))
            for i, tr in enumerate(self.trajs):
                name = f"trajectory_{i:0{width}d}.csv"
                tr.to_csv(self.out / name)
                self.artifacts.append(name)
        st = trajectory_stats(self.trajs)
        self.write_json("stats.json", {"n": st.n, "speed": st.speed, "speed_se": st.speed_se,
                                       "mean_returns": st.mean_returns, "max_excursion": st.max_excursion})

    def stage_kernel(self):
        k = self.cfg["kernel"]
        pc = PropagationConfig(k["radius"], k["tolerance"], tuple(k["snapshot_times"]))
        self.snaps = kernel(self.cfg["dynamics"], self.env, self.cfg["start"], k["T"], pc, t0=self.cfg["t0"])
        rows = []
        for s in self.snaps:
            name = f"kernel_t{_fmt_time(s.time)}.csv"
            s.to_csv(self.out / name, min_mass=k["min_mass"])
            self.artifacts.append(name)
            rows.append(s.summary())
        self.write_json("kernel_summary.json", rows)

    def need_trajs(self):
        if self.trajs is None:
            self.stage_simulate()
        return self.trajs

    def need_snaps(self, what):
        if self.snaps is None:
            if "kernel" not in self.cfg:
                raise ConfigError(f"analysis: {what} needs a kernel block", "kernel")
            self.stage_kernel()
        return self.snaps

    def stage_analyze(self):
        opts = self.cfg["analysis_options"]
        for item in self.cfg["analysis"]:
            getattr(self, f"_an_{item}")(opts)

    # individual analyses

    def _an_speed(self, opts):
        trajs = self.need_trajs()
        st = trajectory_stats(trajs)
        p = self.env.params
        preset = self.env.preset
        axis = 2 if self.env.dim == 3 else 0
        report = {"estimate": st.speed[axis], "se": st.speed_se[axis], "axis": axis,
                  "source": "monte-carlo", "n": st.n}
        formula = None
        if preset == "zigzag1d":
            formula = an.ballistic_speed_1d(p["eps"], p["b"] / (p["b"] + 2), p["b_prime"] / (p["b_prime"] + 2))
        elif preset == "poisson1d":
            formula = an.csrw_speed_sign(p["eps"], p["c"])
        elif preset == "halfspace-dt":
            formula = an.halfspace_speed(p["eps"], p["b"], p["b_prime"])
            report["note"] = "formula is the drift away from the floor; the estimate includes floor time"
        elif preset == "halfspace-csrw":
            formula = an.halfspace_csrw_speed(p["eps"], self.cfg["environment"]["params"]["c"])
            report["note"] = "formula is per state change"
        if formula is not None:
            report["formula"] = formula.beta
            report["formula_report"] = formula.to_dict()
        self.write_json("speed.json", report)

    def _an_states(self, opts):
        tr = self.need_trajs()[0]
        trace = classify_states(self.env, tr)
        n = len(trace.labels)
        self.write_json("states.json", {
            "states": trace.states, "counts": trace.counts,
            "occupation": {s: trace.counts[s] / n for s in trace.states},
            "transition_counts": trace.transition_counts(),
            "state_changes": len(trace.change_times),
        })

    def _horizons(self, opts):
        if "return_horizons" in opts:
            return sorted(opts["return_horizons"])
        L = self.cfg.get("steps", self.cfg.get("horizon"))
        return [L / 10, L]

    def _an_returns(self, opts):
        hs = self._horizons(opts)
        counts = [return_counts(tr, [self.cfg["t0"] + h for h in hs]) for tr in self.need_trajs()]
        self.write_json("returns.json", {"horizons": hs, "counts": counts})

    def _an_recurrence(self, opts):
        out = {}
        if "steps" in self.cfg or "horizon" in self.cfg:
            hs = self._horizons(opts)
            counts = [return_counts(tr, [self.cfg["t0"] + h for h in hs]) for tr in self.need_trajs()]
            out["trajectories"] = an.recurrence_diagnostic(counts, hs).to_dict()
        if "kernel" in self.cfg:
            snaps = self.need_snaps("recurrence")
            series = [(s.time - self.cfg["t0"], s.at(self.cfg["start"])) for s in snaps]
            try:
                out["series"] = an.recurrence_diagnostic(series=series).to_dict()
            except an.InsufficientDataError as exc:
                out["series"] = {"error": str(exc)}
        self.write_json("recurrence.json", out)

    def _an_tail(self, opts):
        if self.env.dim != 3:
            raise ConfigError("analysis: tail fits need a half-space environment", "analysis")
        d = np.concatenate([excursions(tr).durations for tr in self.need_trajs()])
        rep = an.geometric_tail_fit(d)
        self.verdicts["tail"] = rep.verdict
        self.write_json("tail.json", rep.to_dict())

    def _an_gaussian(self, opts):
        snaps = [s for s in self.need_snaps("gaussian") if s.time > self.cfg["t0"]]
        x0 = self.cfg["start"]
        series = [(s.time - self.cfg["t0"], s.at(x0), s.error_bound) for s in snaps]
        geom = self.env.geometry
        upper, lower = an.gaussian_bound_report(series, snaps, lambda r: volume(geom, x0, r))
        self.verdicts["gaussian-upper"] = upper.verdict
        self.verdicts["gaussian-lower"] = lower.verdict
        self.write_json("gaussian.json", {"upper": upper.to_dict(), "lower": lower.to_dict()})

    def _an_poincare(self, opts):
        rows = []
        for t in opts.get("poincare_times", [0]):
            for r in opts.get("poincare_radii", [4, 8]):
                rows.append(an.poincare_constant(self.env, t, self.cfg["start"], r).to_dict())
        self.write_json("poincare.json", rows)

    def _an_doubling(self, opts):
        rep = an.volume_doubling_constant(self.env.geometry, self.cfg["start"], opts.get("doubling_rmax", 16))
        self.write_json("doubling.json", rep.to_dict())

    def _an_ellipticity(self, opts):
        r = opts.get("ellipticity_radius", 10)
        bp = self.env.schedule.breakpoints
        if bp is None:
            times = [0, 1]
        elif bp:
            times = list(bp[:100])
        else:
            times = [0]
        rep = verify_ellipticity(self.env, times, ball(self.env, self.cfg["start"], r))
        fr = an.ellipticity_report(rep)
        self.verdicts["ellipticity"] = fr.verdict
        self.write_json("ellipticity.json", fr.to_dict())

    def manifest(self):
        c = self.cfg
        seeds = {"master": c["seed"], "walk_streams": f"child_seed({c['seed']}, i) for i < {c['batch']}",
                 "first_walk_seed": list(child_seed(c["seed"], 0)), "environment_stream": c["seed"]}
        doc = {
            "command": self.command,
            "config": c,
            "environment": self.env.descriptor(),
            "seeds": seeds,
            "threads": self.threads,
            "versions": _versions(),
            "artifacts": sorted(self.artifacts),
            "verdicts": self.verdicts,
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(an._jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t)).replace(".", "p")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("tdrw", "numpy", "scipy", "joblib", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def execute(command: str, cfg: dict) -> int:
    run = Run(cfg, command)
    run.out.mkdir(parents=True, exist_ok=True)
    run.stage_env()
    if command in ("simulate", "run") and ("steps" in cfg or "horizon" in cfg):
        run.stage_simulate()
    elif command == "simulate":
        run._length()
    if command in ("kernel", "run") and "kernel" in cfg:
        run.stage_kernel()
    elif command == "kernel":
        raise ConfigError("kernel: block required for the kernel subcommand", "kernel")
    if command in ("analyze", "run"):
        run.stage_analyze()
    run.manifest()
    if any(v == an.INCONCLUSIVE for v in run.verdicts.values()):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _reproduce(args) -> int:
    if args.claim not in experiments.REPRODUCIBLE:
        _error("unknown-id", f"unknown claim {args.claim!r}", known=sorted(experiments.REPRODUCIBLE))
        return EXIT_INVALID
    threads = args.threads or (int(os.environ["TDRW_THREADS"]) if os.environ.get("TDRW_THREADS") else None)
    results = experiments.reproduce(args.claim, seed=args.seed, n_jobs=threads)
    for r in results:
        print(r.line())
    failed = [r.key for r in results if not r.passed]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"claim": args.claim, "seed": args.seed, "versions": _versions(),
               "results": [r.to_dict() for r in results]}
        with open(out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if failed:
        _error("reproduce-failed", f"criteria failed: {', '.join(failed)}", failed=failed)
        return EXIT_FAIL
    print(f"{args.claim}: pass")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tdrw", description="Random walks among time-dependent conductances.",
        epilog="exit codes: 0 ok, 1 failed reproduction, 2 invalid input, 3 inconclusive verdict",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=STAGE_HELP[name])
        sp.add_argument("config_path", nargs="?", help="config file (same as --config)")
        sp.add_argument("--config", dest="config", help="JSON config path")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--threads", type=int, help="worker count (fallback: TDRW_THREADS)")
        sp.add_argument("--out", help="output directory (overrides config 'output')")
    rp = sub.add_parser("reproduce", help="run a canned experiment and print verdicts")
    rp.add_argument("claim", help=", ".join(experiments.REPRODUCIBLE))
    rp.add_argument("--seed", type=int)
    rp.add_argument("--threads", type=int)
    rp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "reproduce":
        return _reproduce(args)
    path = args.config or args.config_path
    if not path:
        _error("validation", "a config file is required (--config PATH)", field="config")
        return EXIT_INVALID
    try:
        cfg = load_config(path, seed=args.seed, threads=args.threads, out=args.out)
        return execute(args.command, cfg)
    except ConfigError as exc:
        _error("validation", str(exc), field=exc.field)
        return EXIT_INVALID
    except (DomainError, an.InsufficientDataError) as exc:
        _error("domain", str(exc))
        return EXIT_INVALID
    except an.ResourceError as exc:
        _error("resource", str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
