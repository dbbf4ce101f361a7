"""Command line front end: configuration files, presets, sweeps and exports.

Configuration files are YAML mappings.  Every section is optional when a
preset supplies it; explicit keys override the preset.  Schema::

    N: 50                          # number of oscillators
    seed: 12345                    # required when anything is random
    coupling:                      # one of
      kind: homogeneous            #   eps
      eps: 0.0175
      # kind: random-uniform       #   eps_min, eps_max (drawn per run)
      # kind: meta                 #   sizes (list), eps
    rise:
      family: Ub                   # Ub | LIF | LIF-CB | QIF | QIF-CB | identity
      b: -3                        # Ub: b; LIF: E_eq, g_l; *-CB: + E_syn; QIF: alpha, beta
    reset:
      kind: linear                 # linear: c | table: zeta, values
      c: 0.5
    initial:
      kind: perturbed-sync         # perturbed-sync: magnitude | uniform-random | explicit: phases
      magnitude: 1.0e-3
    duration:
      events: 40000                # spike budget (avalanches)
      stop_when_periodic: true
    sweep:
      c: {start: 0.0, stop: 1.0, num: 21}   # or an explicit list
      runs: 50
    output:
      snapshot_every: 0            # write every k-th section snapshot to the event log

Seeds of individual runs are ``SeedSequence(seed, spawn_key=(point, run))``;
the first draw of that generator builds a random coupling matrix (if any), the
next draws the initial phases.  Results therefore do not depend on the
number of workers.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import analysis, engine
from .core import CouplingMatrix, DomainError, linear_reset, table_reset
from .rise_functions import (ClassificationConflict, classify, identity, make_LIF,
                             make_LIF_CB, make_QIF, make_QIF_CB, make_Ub)

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

PRESETS = {
    # U_b sequential desynchronization, 50 runs per point instead of 500
    "fig3": {
        "N": 50, "seed": 20100301,
        "coupling": {"kind": "homogeneous", "eps": 0.0175},
        "rise": {"family": "Ub", "b": -3.0},
        "reset": {"kind": "linear", "c": 0.5},
        "initial": {"kind": "perturbed-sync", "magnitude": 1e-3},
        "duration": {"events": 40000, "stop_when_periodic": True},
        "sweep": {"c": {"start": 0.0, "stop": 1.0, "num": 21}, "runs": 50},
    },
    # convex LIF-CB, N = 100 (E_eq and E_syn in the convex order)
    "fig6": {
        "N": 100, "seed": 20100306,
        "coupling": {"kind": "homogeneous", "eps": 0.005},
        "rise": {"family": "LIF-CB", "E_eq": 3.0, "E_syn": 1.1},
        "reset": {"kind": "linear", "c": 0.18},
        "initial": {"kind": "perturbed-sync", "magnitude": 1e-3},
        "duration": {"events": 100000, "stop_when_periodic": True},
        "sweep": {"c": {"start": 0.0, "stop": 0.6, "num": 13}, "runs": 10},
    },
    # inhomogeneous coupling drawn per run from [0.009, 0.011]
    "fig7": {
        "N": 50, "seed": 20100307,
        "coupling": {"kind": "random-uniform", "eps_min": 0.009, "eps_max": 0.011},
        "rise": {"family": "LIF-CB", "E_eq": 3.0, "E_syn": 1.1},
        "reset": {"kind": "linear", "c": 0.19},
        "initial": {"kind": "perturbed-sync", "magnitude": 1e-3},
        "duration": {"events": 60000, "stop_when_periodic": True},
        "sweep": {"c": {"start": 0.0, "stop": 0.6, "num": 13}, "runs": 10},
    },
    # sigmoidal QIF-CB
    "fig8": {
        "N": 100, "seed": 20100308,
        "coupling": {"kind": "homogeneous", "eps": 0.002},
        "rise": {"family": "QIF-CB", "alpha": 1.0, "beta": -1.0, "E_syn": 2.0},
        "reset": {"kind": "linear", "c": 0.46},
        "initial": {"kind": "perturbed-sync", "magnitude": 1e-3},
        "duration": {"events": 100000, "stop_when_periodic": True},
        "sweep": {"c": {"start": 0.3, "stop": 0.7, "num": 9}, "runs": 10},
    },
}

_SCHEMA = {
    "N": int, "seed": int,
    "coupling": {"kind", "eps", "eps_min", "eps_max", "sizes"},
    "rise": {"family", "b", "E_eq", "g_l", "E_syn", "alpha", "beta"},
    "reset": {"kind", "c", "zeta", "values"},
    "initial": {"kind", "magnitude", "phases"},
    "duration": {"events", "stop_when_periodic"},
    "sweep": {"c", "runs"},
    "output": {"snapshot_every"},
}

_RISE_KEYS = {
    "Ub": {"b"}, "LIF": {"E_eq", "g_l"}, "LIF-CB": {"E_eq", "E_syn", "g_l"},
    "QIF": {"alpha", "beta"}, "QIF-CB": {"alpha", "beta", "E_syn"}, "identity": set(),
}


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @property
    def n(self) -> int:
        return self.raw["N"]

    @property
    def seed(self) -> int | None:
        return self.raw.get("seed")

    def with_c(self, c: float) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["reset"] = {"kind": "linear", "c": float(c)}
        return ExperimentConfig(raw)

    def rise(self):
        return build_rise(self.raw["rise"])

    def reset(self):
        return build_reset(self.raw["reset"])

    def c_grid(self) -> list[float]:
        section = self.raw.get("sweep", {}).get("c")
        if section is None:
            raise ConfigError("sweep.c: missing")
        if isinstance(section, dict):
            return np.linspace(section["start"], section["stop"], int(section["num"])).tolist()
        return [float(x) for x in section]

    @property
    def runs(self) -> int:
        return int(self.raw.get("sweep", {}).get("runs", 1))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        replace = isinstance(v, dict) and ("kind" in v or "family" in v)
        if isinstance(v, dict) and isinstance(out.get(k), dict) and not replace:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_rise(section: dict):
    fam = section.get("family")
    if fam not in _RISE_KEYS:
        raise ConfigError(f"rise.family: unknown family {fam!r}")
    extra = set(section) - {"family"} - _RISE_KEYS[fam]
    if extra:
        raise ConfigError(f"rise.{sorted(extra)[0]}: not a parameter of {fam}")
    try:
        if fam == "Ub":
            return make_Ub(section["b"])
        if fam == "LIF":
            return make_LIF(section["E_eq"], section.get("g_l", 1.0))
        if fam == "LIF-CB":
            return make_LIF_CB(section["E_eq"], section["E_syn"], section.get("g_l", 1.0))
        if fam == "QIF":
            return make_QIF(section["alpha"], section["beta"])
        if fam == "QIF-CB":
            return make_QIF_CB(section["alpha"], section["beta"], section["E_syn"])
        return identity()
    except KeyError as exc:
        raise ConfigError(f"rise.{exc.args[0]}: missing") from None
    except ValueError as exc:
        raise ConfigError(f"rise: {exc}") from None


def build_reset(section: dict):
    kind = section.get("kind", "linear")
    try:
        if kind == "linear":
            return linear_reset(section["c"])
        if kind == "table":
            return table_reset(section["zeta"], section["values"])
    except KeyError as exc:
        raise ConfigError(f"reset.{exc.args[0]}: missing") from None
    except ValueError as exc:
        raise ConfigError(f"reset: {exc}") from None
    raise ConfigError(f"reset.kind: unknown kind {kind!r}")


def build_coupling(section: dict, n: int, rng: np.random.Generator | None):
    kind = section.get("kind")
    try:
        if kind == "homogeneous":
            return CouplingMatrix.homogeneous(n, section["eps"])
        if kind == "meta":
            sizes = section["sizes"]
            if sum(sizes) != n:
                raise ConfigError(f"coupling.sizes: sum {sum(sizes)} differs from N={n}")
            return CouplingMatrix.meta(sizes, section["eps"])
        if kind == "random-uniform":
            if rng is None:
                raise ConfigError("seed: required for random-uniform coupling")
            return CouplingMatrix.random_uniform(n, section["eps_min"], section["eps_max"], rng)
    except KeyError as exc:
        raise ConfigError(f"coupling.{exc.args[0]}: missing") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"coupling: {exc}") from None
    raise ConfigError(f"coupling.kind: unknown kind {kind!r}")


def validate(raw: dict) -> ExperimentConfig:
    """Check keys and types; raises :class:`ConfigError` with a field path."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: configuration must be a mapping")
    for key, val in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{key}: unknown key")
        allowed = _SCHEMA[key]
        if isinstance(allowed, set):
            if not isinstance(val, dict):
                raise ConfigError(f"{key}: expected a mapping")
            for sub in val:
                if sub not in allowed:
                    raise ConfigError(f"{key}.{sub}: unknown key")
        elif not isinstance(val, allowed) or isinstance(val, bool):
            raise ConfigError(f"{key}: expected {allowed.__name__}")
    for req in ("N", "coupling", "rise", "reset"):
        if req not in raw:
            raise ConfigError(f"{req}: missing")
    if raw["N"] < 1:
        raise ConfigError("N: must be positive")
    cfg = ExperimentConfig(raw)
    init = raw.get("initial", {"kind": "perturbed-sync"})
    if init.get("kind", "perturbed-sync") not in ("perturbed-sync", "uniform-random", "explicit"):
        raise ConfigError(f"initial.kind: unknown kind {init.get('kind')!r}")
    randomized = (init.get("kind", "perturbed-sync") != "explicit"
                  or raw["coupling"].get("kind") == "random-uniform")
    if randomized and "seed" not in raw:
        raise ConfigError("seed: required for randomized initial conditions or coupling")
    if init.get("kind") == "explicit" and len(init.get("phases", [])) != raw["N"]:
        raise ConfigError("initial.phases: need exactly N phases")
    # construct once so that domain errors surface at load time
    cfg.rise()
    cfg.reset()
    if raw["coupling"].get("kind") != "random-uniform":
        build_coupling(raw["coupling"], raw["N"], None)
    else:
        section = raw["coupling"]
        for k in ("eps_min", "eps_max"):
            if k not in section:
                raise ConfigError(f"coupling.{k}: missing")
        if (raw["N"] - 1) * section["eps_max"] >= 1:
            raise ConfigError("coupling.eps_max: (N-1)*eps_max must stay below 1")
    if "sweep" in raw:
        cfg.c_grid()
    return cfg


def load_config(path: str | None, preset: str | None = None,
                seed: int | None = None) -> ExperimentConfig:
    raw: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"--preset: unknown preset {preset!r}")
        raw = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"<file>: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("<root>: configuration must be a mapping")
        raw = _merge(raw, user)
    if seed is not None:
        raw["seed"] = int(seed)
    return validate(raw)


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------

def child_rng(seed: int, point: int, run: int) -> np.random.Generator:
    """Generator of run ``run`` at grid point ``point``; pure function of its inputs."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point, run)))


def initial_phases(cfg: ExperimentConfig, rng: np.random.Generator | None) -> np.ndarray:
    init = cfg.raw.get("initial", {"kind": "perturbed-sync"})
    kind = init.get("kind", "perturbed-sync")
    n = cfg.n
    if kind == "explicit":
        return np.asarray(init["phases"], dtype=float)
    if kind == "uniform-random":
        return rng.uniform(0.0, 1.0, n)
    mag = float(init.get("magnitude", 1e-3))
    return np.clip(1.0 - rng.uniform(0.0, mag, n), 0.0, 1.0)


@dataclass(frozen=True)
class RunResult:
    point: int
    run: int
    c: float | None
    partition: engine.ClusterPartition | None
    events: int
    error: str = ""
    log: engine.EventLog | None = None


def run_single(cfg: ExperimentConfig, point: int = 0, run: int = 0,
               keep_log: bool = False) -> RunResult:
    """One simulation; deterministic given the config seed and indices."""
    rng = child_rng(cfg.seed, point, run) if cfg.seed is not None else None
    dur = cfg.raw.get("duration", {})
    n_events = int(dur.get("events", 20000))
    c = cfg.raw["reset"].get("c")
    try:
        coupling = build_coupling(cfg.raw["coupling"], cfg.n, rng)
        p0 = initial_phases(cfg, rng)
        log = engine.simulate(p0, coupling, cfg.reset(), cfg.rise(), n_events=n_events,
                              max_snapshots=max(20 * cfg.n + 10, 64),
                              stop_when_periodic=bool(dur.get("stop_when_periodic", True)))
        part = engine.detect_clusters(log)
    except (engine.LivelockError, engine.AvalancheError, DomainError) as exc:
        return RunResult(point, run, c, None, 0, f"{type(exc).__name__}: {exc}")
    return RunResult(point, run, c, part, len(log), "", log if keep_log else None)


def _run_point(args):
    cfg, point, run = args
    return run_single(cfg, point, run)


def run_sweep(cfg: ExperimentConfig, workers: int = 1, rows_out=None) -> list[RunResult]:
    """All runs of the reset-strength grid, ordered by ``(point, run)``.

    ``rows_out`` (a callable) receives each result as soon as all earlier
    ones are done, which lets callers write rows incrementally.
    """
    tasks = [(cfg.with_c(c), i, r) for i, c in enumerate(cfg.c_grid())
             for r in range(cfg.runs)]
    results = []
    if workers <= 1:
        it = map(_run_point, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        it = pool.map(_run_point, tasks, chunksize=max(1, len(tasks) // (8 * workers)))
    try:
        for res in it:
            results.append(res)
            if rows_out is not None:
                rows_out(res)
    finally:
        if pool is not None:
            pool.shutdown()
    return results


RUN_FIELDS = ["point", "c", "run", "max_size", "sizes", "periodic", "period",
              "period_spikes", "events", "error"]
SUMMARY_FIELDS = ["point", "c", "runs", "failed", "periodic_runs", "min_max_size",
                  "max_max_size", "mean_max_size"]


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def run_row(res: RunResult) -> dict:
    p = res.partition
    return {
        "point": res.point, "c": _fmt(res.c), "run": res.run,
        "max_size": "" if p is None else p.max_size,
        "sizes": "" if p is None else " ".join(str(s) for s in p.sizes),
        "periodic": "" if p is None else int(p.periodic),
        "period": "" if p is None else _fmt(p.period),
        "period_spikes": "" if p is None or p.period_spikes is None else p.period_spikes,
        "events": res.events, "error": res.error,
    }


def summarize(results: list[RunResult]) -> list[dict]:
    rows = []
    points = sorted({r.point for r in results})
    for pt in points:
        rs = [r for r in results if r.point == pt]
        ok = [r for r in rs if r.partition is not None]
        mx = [r.partition.max_size for r in ok]
        rows.append({
            "point": pt, "c": _fmt(rs[0].c), "runs": len(rs), "failed": len(rs) - len(ok),
            "periodic_runs": sum(r.partition.periodic for r in ok),
            "min_max_size": min(mx) if mx else "", "max_max_size": max(mx) if mx else "",
            "mean_max_size": _fmt(np.mean(mx)) if mx else "",
        })
    return rows


def run_theory(cfg: ExperimentConfig) -> dict:
    """Bifurcation curve (``U_b``) and reset-strength bounds per cluster size.

    Returns a mapping of output file name to text.
    """
    U = cfg.rise()
    n = cfg.n
    section = cfg.raw["coupling"]
    eps = section.get("eps")
    if eps is None:
        eps = 0.5 * (section["eps_min"] + section["eps_max"])
    out = {}
    if U.family == "Ub" and U.params["b"] < 0 and n >= 2:
        out["bifurcation.csv"] = analysis.bifurcation_curve(n, eps, U.params["b"]).to_table()
    try:
        rep = classify(U)
    except ClassificationConflict as exc:
        out["bounds.csv"] = f"# bounds unavailable: {exc}\n"
        return out
    kind = "icpd" if rep.icpd else "dcpd" if rep.dcpd else None
    if kind is None:
        lines = ["# bounds unavailable: rise function is neither icpd nor dcpd",
                 "a1,c_unstable_sufficient"]
        # the instability proposition still gives the synchronous-state threshold
        for a1 in range(2, n + 1):
            lines.append(f"{a1},{_fmt(_instability_threshold(a1, n, eps, U))}")
        out["bounds.csv"] = "\n".join(lines) + "\n"
        return out
    lines = [f"# kind={kind}", "a1,c_stable,c_unstable,c_unstable_sufficient"]
    for a1 in range(2, n + 1):
        lo, hi = analysis.reset_strength_bounds(a1, n, eps, U, kind)
        inst = _instability_threshold(a1, n, eps, U)
        lines.append(f"{a1},{_fmt(lo)},{_fmt(hi)},{_fmt(inst)}")
    out["bounds.csv"] = "\n".join(lines) + "\n"
    return out


def _instability_threshold(a1, n, eps, U, num=200):
    """Smallest linear-reset ``c`` certified unstable by the instability test."""
    if not analysis.cluster_instability(a1, n, eps, linear_reset(1.0), U, num):
        return None
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if analysis.cluster_instability(a1, n, eps, linear_reset(mid), U, num):
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _cmd_simulate(cfg, args, out: Path) -> int:
    res = run_single(cfg, keep_log=True)
    if res.error:
        print(res.error, file=sys.stderr)
        _write_csv(out / "summary.csv", RUN_FIELDS, [run_row(res)])
        return EXIT_NONCONVERGENCE
    every = int(cfg.raw.get("output", {}).get("snapshot_every", 0))
    with open(out / "events.jsonl", "w") as fh:
        res.log.write(fh, snapshot_every=every)
    _write_csv(out / "summary.csv", RUN_FIELDS, [run_row(res)])
    p = res.partition
    print(f"events={res.events} periodic={p.periodic} max_cluster={p.max_size} "
          f"sizes={list(p.sizes)}")
    return EXIT_OK


def _cmd_sweep(cfg, args, out: Path) -> int:
    with open(out / "sweep_runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RUN_FIELDS, lineterminator="\n")
        w.writeheader()

        def emit(res):
            w.writerow(run_row(res))
            fh.flush()

        results = run_sweep(cfg, workers=args.workers, rows_out=emit)
    summary = summarize(results)
    _write_csv(out / "sweep_summary.csv", SUMMARY_FIELDS, summary)
    for row in summary:
        print(f"c={float(row['c']):.4f} max cluster {row['min_max_size']}..{row['max_max_size']}"
              f" periodic {row['periodic_runs']}/{row['runs']}")
    return EXIT_OK


def _cmd_theory(cfg, args, out: Path) -> int:
    files = run_theory(cfg)
    for name, text in files.items():
        (out / name).write_text(text)
        print(f"wrote {out / name}")
    return EXIT_OK


def _cmd_classify(cfg, args, out: Path) -> int:
    rep = classify(cfg.rise())
    doc = {k: v for k, v in rep.__dict__.items() if k != "table"}
    doc["table"] = rep.table
    doc["rise"] = cfg.raw["rise"]
    text = json.dumps(doc, indent=2, default=float)
    (out / "shape.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="partialreset",
                                 description="Pulse-coupled oscillators with partial reset.")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("simulate", "sweep", "theory", "classify"):
        p = sub.add_parser(verb)
        p.add_argument("config", nargs="?", help="YAML configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--workers", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is None and args.preset is None:
        print("config error: give a configuration file or --preset", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.preset, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmd = {"simulate": _cmd_simulate, "sweep": _cmd_sweep, "theory": _cmd_theory,
           "classify": _cmd_classify}[args.verb]
    try:
        return cmd(cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (analysis.NonConvergenceError, ClassificationConflict) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
