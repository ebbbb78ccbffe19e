"""Configuration-driven experiment runner.

Usage: ``splitflow <subcommand> --config <path> [--seed N] [--out DIR]``.
Every run writes ``run.json`` (config echo, version, seed, wall time) and
one or more CSV files into the output directory. Exit codes: 0 success,
1 a ``validate`` check failed, 2 invalid configuration, 3 numeric overflow.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__, analysis, euler, lorenz96
from .core import NumericOverflowError, RegionSpec, estimate_entrance_probability, run_chain, substream

SUBCOMMANDS = ("simulate", "drift", "entrance", "thermalize", "return-time", "triad-portrait", "validate")

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_mode = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
_vector = {"type": "array", "items": _number, "minItems": 1}
_triad = {
    "type": "object",
    "additionalProperties": False,
    "required": ["j", "k", "l"],
    "properties": {"j": _mode, "k": _mode, "l": _mode},
}


def _block(required, **props):
    return {"type": "object", "additionalProperties": False, "required": list(required), "properties": props}


SYSTEM_SCHEMA = {
    "type": "object",
    "minProperties": 1,
    "maxProperties": 1,
    "additionalProperties": False,
    "properties": {
        "lorenz96": _block(
            ["d", "beta", "h"],
            d={"type": "integer", "minimum": 4},
            beta={"oneOf": [_number, _vector]},
            h=_pos,
        ),
        "euler": _block(
            ["N", "damping", "forcing", "h"],
            N={"type": "integer", "minimum": 4},
            damping={"type": "array", "items": _block(["mode", "rate"], mode=_mode, rate=_pos)},
            forcing={
                "type": "array",
                "items": {
                    "type": "array",
                    "items": _block(
                        ["mode", "part", "value"], mode=_mode, part={"enum": ["a", "b"]}, value=_number
                    ),
                },
            },
            h=_pos,
        ),
    },
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "minProperties": 1,
    "maxProperties": 1,
    "additionalProperties": False,
    "properties": {
        "simulate": _block(["steps"], steps={"type": "integer", "minimum": 0}, x0=_vector, radius=_pos),
        "drift": _block(["radii", "n_steps"], radii=_vector, n_steps=_count),
        "entrance": _block(["eta"], eta=_pos, radii=_vector, x0=_vector),
        "thermalize": _block(
            ["triad", "eta", "deltas"],
            triad=_triad,
            eta=_pos,
            deltas=_vector,
            zeta=_pos,
            xi=_pos,
            y0=_number,
            branch={"enum": ["A1", "A2"]},
        ),
        "return-time": _block(
            ["max_steps"],
            max_steps=_count,
            x0=_vector,
            radius=_pos,
            R={"oneOf": [_pos, {"const": "fitted"}]},
            block=_count,
            drift_radii=_vector,
            drift_trials=_count,
        ),
        "triad-portrait": _block(
            ["triad", "initial", "t_max", "samples"],
            triad=_triad,
            initial={"type": "array", "items": {"type": "array", "items": _number, "minItems": 3, "maxItems": 3}},
            t_max=_pos,
            samples={"type": "integer", "minimum": 2},
        ),
        "validate": _block([], states=_count, t=_pos),
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "experiment", "seed"],
    "properties": {
        "system": SYSTEM_SCHEMA,
        "experiment": EXPERIMENT_SCHEMA,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "trials": _count,
        "output": {"type": "string"},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message lists every problem found."""


def _locate(text: str, path) -> int | None:
    """Line of the last key of ``path`` in the JSON text, found by scanning key tokens in order."""
    pos, line = 0, None
    for part in path:
        if not isinstance(part, str):
            continue
        hit = text.find(json.dumps(part), pos)
        if hit < 0:
            return line
        pos = hit + 1
        line = text.count("\n", 0, hit) + 1
    return line


def parse_config(text: str, subcommand: str | None = None) -> dict:
    """Parse and schema-check a config, raising ``ConfigError`` with line/field diagnostics."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"line {err.lineno} column {err.colno}: {err.msg}") from None
    problems = []
    for err in sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(map(str, e.path))):
        field = ".".join(str(p) for p in err.path) or "<root>"
        line = _locate(text, err.path)
        where = f"line {line}, " if line else ""
        problems.append(f"{where}field {field}: {err.message}")
    if not problems and subcommand is not None and subcommand not in cfg["experiment"]:
        have = next(iter(cfg["experiment"]))
        problems.append(
            f"line {_locate(text, ['experiment'])}, field experiment: "
            f"subcommand {subcommand!r} needs an experiment block {subcommand!r}, found {have!r}"
        )
    if problems:
        raise ConfigError("\n".join(problems))
    return cfg


def source_version() -> str:
    """Package version tagged with a hash of the module sources."""
    digest = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return f"{__version__}+src.{digest.hexdigest()[:12]}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ----------------------------------------------------------------- systems


def build_system(cfg: dict):
    """Return ``(kind, system, splitting, h, lyapunov, preferred field index)``."""
    (kind, spec), = cfg["system"].items()
    if kind == "lorenz96":
        sys_ = lorenz96.Lorenz96System(spec["d"], spec["beta"])
        s = lorenz96.splitting(sys_)
        return kind, sys_, s, spec["h"], lorenz96.lyapunov_H, s.index("star")
    damping = {tuple(e["mode"]): e["rate"] for e in spec["damping"]}
    forcing = [{(tuple(e["mode"]), e["part"]): e["value"] for e in entries} for entries in spec["forcing"]]
    sys_ = euler.EulerSystem.from_sparse(spec["N"], damping, forcing)
    s = euler.splitting(sys_)
    return kind, sys_, s, spec["h"], euler.lyapunov_H, s.index("damp")


def _region(kind, sys_, eta) -> RegionSpec:
    if kind == "lorenz96":
        return lorenz96.dissipative_region(eta)
    return euler.dissipative_region(sys_, eta)


def _start(exp: dict, dim: int, seed: int, key: int) -> np.ndarray:
    if "x0" in exp:
        x = np.asarray(exp["x0"], dtype=float)
        if x.size != dim:
            raise ConfigError(f"field x0: expected {dim} entries, got {x.size}")
        return x
    return analysis.random_sphere_point(substream(seed, key), dim, exp.get("radius", 100.0) - 1.0)


# ----------------------------------------------------------------- experiments


def run_simulate(cfg, seed, out):
    exp = cfg["experiment"]["simulate"]
    kind, sys_, s, h, H, _ = build_system(cfg)
    x0 = _start(exp, s.dim, seed, 2**32)
    try:
        traj = run_chain(s, x0, exp["steps"], substream(seed, 0), h)
    except NumericOverflowError as err:
        err.trajectory = 0
        raise
    header = ["step", "H"] + [f"x{i}" for i in range(1, s.dim + 1)]
    write_csv(out / "trajectory.csv", header, ([n, H(x), *x] for n, x in enumerate(traj.states)))
    return {"steps": exp["steps"]}


def _drift_reports(model, dim, radii, n_steps, trials, seed):
    reports = []
    for i, radius in enumerate(radii):
        x = np.zeros(dim) if radius <= 1.0 else analysis.random_sphere_point(substream(seed, 2**32, i), dim, radius - 1.0)
        reports.append(analysis.estimate_drift(model, x, n_steps, trials, seed + i))
    return reports


def run_drift(cfg, seed, out):
    exp = cfg["experiment"]["drift"]
    kind, sys_, s, h, H, _ = build_system(cfg)
    model = analysis.ChainModel(s, h, H)
    reports = _drift_reports(model, s.dim, exp["radii"], exp["n_steps"], cfg.get("trials", 1000), seed)
    write_csv(
        out / "drift.csv",
        ["H_x", "mean", "ci", "ratio", "trials", "overflows"],
        ([r.H_x, r.mean, r.halfwidth, r.mean / r.H_x, r.trials, r.overflows] for r in reports),
    )
    fit = analysis.fit_drift(reports)
    return {"alpha": fit.alpha, "f": fit.f, "alpha_upper95": fit.alpha_upper}


def run_entrance(cfg, seed, out):
    exp = cfg["experiment"]["entrance"]
    kind, sys_, s, h, H, ell = build_system(cfg)
    trials = cfg.get("trials", 1000)
    if kind == "euler" and "x0" not in exp:
        sc = analysis.entrance_scaling(sys_, exp.get("radii", [1e3, 1e4, 1e5]), exp["eta"], trials, seed, h)
        write_csv(
            out / "entrance.csv",
            ["H", "estimate", "ci", "estimate_times_logH"],
            zip(sc.radii, sc.estimates, sc.halfwidths, sc.scaled),
        )
        return {"band_ratio": sc.band_ratio}
    x0 = _start(exp, s.dim, seed, 2**32)
    est = estimate_entrance_probability(s, x0, _region(kind, sys_, exp["eta"]), ell, trials, seed, h)
    write_csv(out / "entrance.csv", ["H", "estimate", "ci", "trials"], [[H(x0), est.estimate, est.halfwidth, trials]])
    return {}


def run_thermalize(cfg, seed, out):
    exp = cfg["experiment"]["thermalize"]
    _, _, _, h, _, _ = build_system(cfg)
    key = tuple(tuple(exp["triad"][n]) for n in "jkl")
    zeta = exp.get("zeta", 0.1)
    family = analysis.near_separatrix_state(key, zeta, exp.get("y0", 0.0), branch=exp.get("branch", "A1"))
    sc = analysis.thermalization_scan(
        key, family, exp["eta"], exp["deltas"], cfg.get("trials", 100_000), seed, h, exp.get("xi", 0.5), zeta
    )
    write_csv(
        out / "thermalize.csv",
        ["delta", "estimate", "ci", "estimate_times_logdelta"],
        zip(sc.deltas, sc.estimates, sc.halfwidths, sc.scaled),
    )
    return {"fitted_c": sc.fitted_c, "band_ratio": sc.band_ratio}


def run_return_time(cfg, seed, out):
    exp = cfg["experiment"]["return-time"]
    kind, sys_, s, h, H, _ = build_system(cfg)
    block = exp.get("block", 1)
    model = analysis.ChainModel(s, h, H, block)
    x0 = _start(exp, s.dim, seed, 2**32)
    R = exp.get("R", "fitted")
    info = {}
    rates = None
    if R == "fitted":
        radii = exp.get("drift_radii", [1, 2, 5, 10, 30, 100, 1e3, 1e4, 1e5])
        reports = _drift_reports(model, s.dim, radii, block, exp.get("drift_trials", 4000), seed + 10**6)
        sub = analysis.fitted_sublevel(reports)
        R, rates = sub.R, sub.rates
        info.update(alpha=sub.alpha, f=sub.f)
    sample = analysis.return_time_samples(model, x0, R, exp["max_steps"], cfg.get("trials", 1000), seed)
    top = int(sample.quantile(0.99))
    n = np.arange(top + 1)
    surv = sample.survival(n)
    bound = analysis.tail_bound(sample.H_x, rates, n) if rates is not None else np.full(n.size, math.nan)
    write_csv(out / "return_time.csv", ["n", "survival", "bound"], zip(n, surv, bound))
    write_csv(out / "return_samples.csv", ["trial", "T_R", "censored"], zip(range(sample.times.size), sample.times, sample.censored))
    info.update(R=R, censored_fraction=sample.censored_fraction)
    return info


def emit_portrait(key, initial, t_max: float, samples: int):
    """Rows (orbit, t, x, y, z, E, Ens) of exact-flow trajectories of a single triad."""
    j, k, l = key
    g = euler.geometry(tuple(j), tuple(k), tuple(l))
    t = np.linspace(0.0, t_max, samples)
    uj, uk, ul = 1.0 / euler.norm2(j), 1.0 / euler.norm2(k), 1.0 / euler.norm2(l)
    rows = []
    for orbit, (x0, y0, z0) in enumerate(initial):
        if g.swapped:
            ys, xs, zs, _ = euler.spinning_top(g, y0, x0, z0, t)
        else:
            xs, ys, zs, _ = euler.spinning_top(g, x0, y0, z0, t)
        xs, ys, zs = (np.broadcast_to(v, t.shape) for v in (xs, ys, zs))
        for i in range(t.size):
            x, y, z = xs[i], ys[i], zs[i]
            rows.append((orbit, t[i], x, y, z, uj * x * x + uk * y * y + ul * z * z, x * x + y * y + z * z))
    return rows


def run_portrait(cfg, seed, out):
    exp = cfg["experiment"]["triad-portrait"]
    key = tuple(tuple(exp["triad"][n]) for n in "jkl")
    rows = emit_portrait(key, exp["initial"], exp["t_max"], exp["samples"])
    write_csv(out / "portrait.csv", ["orbit", "t", "x", "y", "z", "E", "Ens"], rows)
    return {"orbits": len(exp["initial"])}


def run_validate(cfg, seed, out):
    """Splitting-sum and conservation self-checks on random states."""
    exp = cfg["experiment"]["validate"]
    kind, sys_, s, h, H, _ = build_system(cfg)
    rng = substream(seed, 0)
    n_states, t = exp.get("states", 20), exp.get("t", 1.0)
    rows = []
    drift = (lambda x: lorenz96.full_drift(sys_, x)) if kind == "lorenz96" else (lambda x: euler.full_rhs(sys_, x))
    worst_sum = 0.0
    for _ in range(n_states):
        x = rng.standard_normal(s.dim)
        ref = drift(x)
        worst_sum = max(worst_sum, float(np.linalg.norm(s.evaluate(x) - ref) / np.linalg.norm(ref)))
    rows.append(("splitting_sum", worst_sum, 1e-12))
    worst_h = worst_pair = 0.0
    for f in s.fields:
        if f.growth(1.0) != 0.0 or f.label in ("star", "damp"):
            continue
        for _ in range(max(1, n_states // 10)):
            x = rng.standard_normal(s.dim)
            y = f.flow(x, t)
            worst_h = max(worst_h, abs(H(y) - H(x)) / H(x))
            if kind == "euler":
                e0, n0 = euler.conserved_pair(*f.xyz(x), f.key)
                e1, n1 = euler.conserved_pair(*f.xyz(y), f.key)
                worst_pair = max(worst_pair, abs(e1 - e0) / max(e0, 1e-300), abs(n1 - n0) / max(n0, 1e-300))
    rows.append(("lyapunov_conservation", worst_h, 1e-10))
    if kind == "euler":
        rows.append(("triad_energy_enstrophy", worst_pair, 1e-10))
    write_csv(out / "validate.csv", ["check", "value", "tolerance", "pass"], [(*r, r[1] < r[2]) for r in rows])
    return {"passed": all(r[1] < r[2] for r in rows)}


RUNNERS = {
    "simulate": run_simulate,
    "drift": run_drift,
    "entrance": run_entrance,
    "thermalize": run_thermalize,
    "return-time": run_return_time,
    "triad-portrait": run_portrait,
    "validate": run_validate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="splitflow", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args(argv)

    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as err:
        print(f"splitflow: cannot read config: {err}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, args.subcommand)
    except ConfigError as err:
        print(f"splitflow: invalid config {args.config}:\n{err}", file=sys.stderr)
        return 2
    seed = cfg["seed"] if args.seed is None else args.seed
    if not 0 <= seed < 2**64:
        print("splitflow: invalid seed: must be a 64-bit unsigned integer", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.get("output", "."))
    out.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    try:
        result = RUNNERS[args.subcommand](cfg, seed, out)
    except ConfigError as err:
        print(f"splitflow: invalid config {args.config}:\n{err}", file=sys.stderr)
        return 2
    except (analysis.AssumptionError, ValueError) as err:
        print(f"splitflow: invalid config {args.config}:\n{err}", file=sys.stderr)
        return 2
    except NumericOverflowError as err:
        print(f"splitflow: numeric overflow: {err} (trajectory id {err.trajectory})", file=sys.stderr)
        return 3
    manifest = {
        "subcommand": args.subcommand,
        "config": copy.deepcopy(cfg),
        "version": source_version(),
        "seed": seed,
        "wall_time_s": time.perf_counter() - started,
        "result": result,
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    if args.subcommand == "validate" and not result["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
