"""Command-line front end.

    wegner2p validate --config cfg.json
    wegner2p run --config cfg.json [--set wegner.trials=2000] [--seed 3] [--out DIR]
    wegner2p sweep --config cfg.json --set 'wegner.epsilons=[0.02,0.01]'

Exit codes: 0 success, 1 missing/unreadable config, 2 invalid config,
3 too many solver failures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments as ex
from .geometry import (
    Cube,
    TwoParticleBox,
    classify_separation,
    is_sufficiently_distant,
    separation_margin,
)
from .operator import HamiltonianSpec, InteractionSpec, assemble, build_grid
from .random_field import AmplitudeEnsemble, BumpProfile, sample_amplitudes, verify_covering
from .spectral import SolverError, lowest_eigenvalues

log = logging.getLogger("wegner2p")

KINDS = ["spectrum", "wegner-one", "wegner-two", "dm-check", "concentration", "separation", "covering"]

_num = {"type": "number"}
_point = {"type": "array", "items": _num, "minItems": 1}

_box = {
    "type": "object",
    "additionalProperties": False,
    "required": ["center1", "center2", "half_width1", "half_width2"],
    "properties": {
        "center1": _point, "center2": _point,
        "half_width1": {"type": "number", "exclusiveMinimum": 0},
        "half_width2": {"type": "number", "exclusiveMinimum": 0},
        "dimension": {"type": "integer", "minimum": 1},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": KINDS},
        "master_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "description": {"type": "string"},
        "box": _box,
        "box_prime": _box,
        "cube": {
            "type": "object", "additionalProperties": False, "required": ["center", "half_width"],
            "properties": {"center": _point, "half_width": {"type": "number", "exclusiveMinimum": 0}},
        },
        "operator": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "spacing": {"type": "number", "exclusiveMinimum": 0},
                "masses": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1, "maxItems": 2},
                "interaction": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["zero", "square_well", "smoothed_core"]},
                        "strength": _num,
                        "range": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "field": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "profile": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["indicator", "tent", "smooth_compact"]},
                        "range": {"type": "number", "exclusiveMinimum": 0},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "ensemble": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["iid_uniform", "iid_bounded_density", "markov_clipped"]},
                        "bound": {"type": "number", "minimum": 0},
                        "signed": {"type": "boolean"},
                        "shape": {"type": "number", "minimum": 1},
                        "coupling": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "tilt": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    },
                },
            },
        },
        "spectrum": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "trial": {"type": "integer", "minimum": 0},
            },
        },
        "wegner": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "energy": {"oneOf": [_num, {"enum": ["median_ground_state"]}]},
                "interval": {"oneOf": [
                    {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                    {"enum": ["central_half"]},
                ]},
                "epsilon": _num,
                "epsilons": {"type": "array", "items": _num, "minItems": 1},
                "trials": {"type": "integer", "minimum": 1},
                "pilot_trials": {"type": "integer", "minimum": 10},
                "exponent": {"type": ["number", "null"]},
                "constant": {"type": ["number", "null"]},
                "distance_factor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "dm": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "t": {"type": "number"},
                "subset": {"enum": ["full", "projection1", "projection2"]},
                "realizations": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 1},
            },
        },
        "concentration": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "phi": {"enum": list(ex.PHI_KINDS)},
                "n": {"type": "integer", "minimum": 1},
                "density_bound": {"type": "number", "exclusiveMinimum": 0},
                "a": _num,
                "epsilon": {"type": "number", "minimum": 0},
                "trials": {"type": "integer", "minimum": 0},
            },
        },
        "separation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "R": {"type": "number", "minimum": 0},
                "factor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "covering": {
            "type": "object", "additionalProperties": False,
            "properties": {"grid_step": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}

NEEDS = {
    "spectrum": [],
    "wegner-one": ["box", "wegner"],
    "wegner-two": ["box", "box_prime", "wegner"],
    "dm-check": ["box"],
    "concentration": ["concentration"],
    "separation": ["box", "box_prime"],
    "covering": [],
}


class ConfigError(ValueError):
    def __init__(self, issues):
        super().__init__("; ".join(issues))
        self.issues = list(issues)


# -- config handling -------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not of the form key=value"])
        key, value = item.split("=", 1)
        node = cfg
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {key!r} descends into a non-object"])
        node[parts[-1]] = _parse_value(value)
    return cfg


def schema_issues(cfg: dict) -> list[str]:
    validator = jsonschema.Draft7Validator(SCHEMA)
    issues = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        issues.append(f"{where}: {err.message}")
    return issues


def config_hash(cfg: dict) -> str:
    core = {k: v for k, v in cfg.items() if k not in ("output_dir", "threads")}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _box_from(obj) -> TwoParticleBox:
    return TwoParticleBox.from_json(obj)


def _geometry(cfg: dict):
    if "box" in cfg:
        return _box_from(cfg["box"])
    if "cube" in cfg:
        return Cube(tuple(cfg["cube"]["center"]), cfg["cube"]["half_width"])
    raise ConfigError(["either 'box' or 'cube' is required"])


def build_spec(cfg: dict, box=None) -> HamiltonianSpec:
    box = box if box is not None else _geometry(cfg)
    op = cfg.get("operator", {})
    fld = cfg.get("field", {})
    particles = 2 if isinstance(box, TwoParticleBox) else 1
    masses = tuple(op.get("masses", [1.0] * particles))
    if len(masses) != particles:
        raise ConfigError([f"operator.masses needs {particles} entries"])
    return HamiltonianSpec(
        box=box,
        spacing=op.get("spacing", 0.25),
        profile=BumpProfile(**fld.get("profile", {})),
        ensemble=AmplitudeEnsemble(**fld.get("ensemble", {})),
        interaction=InteractionSpec(**op.get("interaction", {})),
        masses=masses,
    )


def _cross_issues(cfg: dict) -> list[str]:
    kind = cfg["experiment"]
    issues = [f"section '{s}' is required for experiment {kind}" for s in NEEDS[kind] if s not in cfg]
    if issues:
        return issues
    if kind in ("spectrum", "wegner-one", "wegner-two", "dm-check", "covering") and not (
            "box" in cfg or "cube" in cfg):
        return [f"experiment {kind} needs a 'box' or 'cube' section"]
    try:
        spec = build_spec(cfg) if kind != "concentration" else None
        if spec is not None and kind != "separation":
            build_grid(spec.box, spec.spacing)
    except (ValueError, TypeError) as exc:
        return [str(exc)]

    w = cfg.get("wegner", {})
    if kind in ("wegner-one", "wegner-two"):
        eps = list(w.get("epsilons", [])) + ([w["epsilon"]] if "epsilon" in w else [])
        if not eps:
            issues.append("wegner.epsilon or wegner.epsilons is required")
        for e in eps:
            if not 0 < e < 1:
                issues.append(f"epsilon {e} violates the hypothesis epsilon in (0, 1)")
        if "epsilons" in w and all(0 < e < 1 for e in w["epsilons"]):
            try:
                ex._check_dyadic(w["epsilons"])
            except ValueError as exc:
                issues.append(str(exc))
        if kind == "wegner-one" and "energy" not in w:
            issues.append("wegner.energy is required")
        if kind == "wegner-two" and "interval" not in w:
            issues.append("wegner.interval is required")
    if kind in ("wegner-one", "wegner-two", "dm-check"):
        boxes = [spec.box] + ([_box_from(cfg["box_prime"])] if kind == "wegner-two" else [])
        for b in boxes:
            for c in ((b.factor1, b.factor2) if isinstance(b, TwoParticleBox) else (b,)):
                rep = verify_covering(spec.profile, c)
                if not rep.covering_holds:
                    issues.append(f"bump profile fails the covering check on {c.bounds()} "
                                  f"(min sum {rep.min_sum:.3g})")
    if kind == "dm-check" and cfg.get("dm", {}).get("t", 0.5) < 0:
        issues.append("dm.t must be nonnegative")
    if kind == "concentration":
        c = cfg["concentration"]
        e = c.get("epsilon", 0.1)
        if not 0 <= e < 1:
            issues.append(f"epsilon {e} outside [0, 1)")
    if kind in ("wegner-two", "separation"):
        other = _box_from(cfg["box_prime"])
        if other.dimension != spec.box.dimension:
            issues.append("box and box_prime differ in dimension")
            return issues
        sep = cfg.get("separation", {})
        R = sep.get("R", spec.profile.range)
        factor = w.get("distance_factor", sep.get("factor", 8.0))
        if not is_sufficiently_distant(spec.box, other, R, factor):
            dist, threshold = separation_margin(spec.box, other, R, factor)
            issues.append(
                f"boxes are not sufficiently distant: centre distance {dist:g} <= {threshold:g}")
    return issues


def validate_config(cfg: dict) -> list[str]:
    issues = schema_issues(cfg)
    if issues:
        return issues
    return _cross_issues(cfg)


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open() as fh:
        return json.load(fh)


# -- output ----------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else (str(f) if math.isinf(f) else f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in _clean(r).items()})


class Outputs:
    def __init__(self, out_dir: Path, cfg: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.stem = f"{cfg['experiment']}_seed{cfg.get('master_seed', 0)}_{config_hash(cfg)}"
        self.written: list[Path] = []

    def path(self, suffix: str) -> Path:
        p = self.dir / f"{self.stem}{suffix}"
        self.written.append(p)
        return p


# -- experiment runners ----------------------------------------------------

def _seed(cfg) -> int:
    return int(cfg.get("master_seed", 0))


def _run_spectrum(cfg, out: Outputs) -> int:
    spec = build_spec(cfg)
    s = cfg.get("spectrum", {})
    r = sample_amplitudes(spec.ensemble, spec.required_sites(), _seed(cfg), s.get("trial", 0))
    op = assemble(spec, r)
    k = min(s.get("k", 10), op.n)
    try:
        spectrum = lowest_eigenvalues(op, k, s.get("tol", 1e-10))
        status = 0
    except SolverError as exc:
        spectrum, status = exc.partial, 3
    spectrum.to_csv(out.path(".csv"))
    _write_json(out.path(".json"), {
        "experiment": "spectrum", "config_hash": config_hash(cfg), "nodes": op.n,
        "k": k, "converged": spectrum.all_converged,
        "eigenvalues": spectrum.eigenvalues.tolist(),
    })
    return status


def _resolve_energy(cfg, spec, threads):
    w = cfg["wegner"]
    pilot = None
    needs_pilot = w.get("energy") == "median_ground_state" or w.get("interval") == "central_half"
    if needs_pilot:
        pilot = ex.ground_state_sample(spec, w.get("pilot_trials", 1000), _seed(cfg), threads)
    energy = w.get("energy")
    if energy == "median_ground_state":
        energy = float(np.median(pilot))
    interval = w.get("interval")
    if interval == "central_half":
        interval = [float(np.percentile(pilot, 25)), float(np.percentile(pilot, 75))]
    info = {}
    if pilot is not None:
        info = {"pilot_trials": len(pilot), "pilot_median": float(np.median(pilot)),
                "pilot_quartiles": [float(np.percentile(pilot, 25)), float(np.percentile(pilot, 75))]}
    return energy, interval, info


def _run_wegner(cfg, out: Outputs, threads: int, sweep: bool) -> int:
    w = cfg["wegner"]
    spec = build_spec(cfg)
    energy, interval, info = _resolve_energy(cfg, spec, threads)
    epsilons = w.get("epsilons") if (sweep or "epsilon" not in w) else [w["epsilon"]]
    if sweep and not epsilons:
        raise ConfigError(["sweep needs wegner.epsilons"])
    trials = w.get("trials", 1000)
    if cfg["experiment"] == "wegner-one":
        base = ex.WegnerOneConfig(spec, energy, max(epsilons), trials, _seed(cfg),
                                  exponent=w.get("exponent"), constant=w.get("constant"),
                                  threads=threads)
    else:
        spec_p = build_spec(cfg, _box_from(cfg["box_prime"]))
        base = ex.WegnerTwoConfig(spec, spec_p, tuple(interval), max(epsilons), trials, _seed(cfg),
                                  constant=w.get("constant"), threads=threads,
                                  distance_factor=w.get("distance_factor", 8.0))
    if len(epsilons) == 1:
        est = (ex.one_volume_probability(base) if cfg["experiment"] == "wegner-one"
               else ex.two_volume_probability(base))
        rows, summary = [est], {"slope": None, "note": "single epsilon: no fit"}
    else:
        res = ex.epsilon_sweep(base, epsilons)
        rows = res.rows
        summary = {"slope": res.slope, "implied_C": res.implied_constant,
                   "fitted_C": res.fitted_constant, "ratios": res.ratios,
                   "dominance": res.dominance, "note": res.note}
    table = [r.row() for r in rows]
    _write_csv(out.path(".csv"), table)
    with out.path("_plot.dat").open("w") as fh:
        for r in rows:
            fh.write(f"{r.epsilon!r} {r.estimate!r}\n")
    valid = all(r.valid for r in rows)
    _write_json(out.path(".json"), {
        "experiment": cfg["experiment"], "config_hash": config_hash(cfg),
        "master_seed": _seed(cfg), "energy": energy, "interval": interval,
        "trials": trials, "excluded": rows[0].excluded, "valid": valid,
        **info, **summary, "rows": table,
    })
    return 0 if valid else 3


def _run_dm(cfg, out: Outputs, threads: int) -> int:
    spec = build_spec(cfg)
    d = cfg.get("dm", {})
    t, subset, k = d.get("t", 0.5), d.get("subset", "full"), d.get("k", 10)
    sites = spec.required_sites()

    def one(trial):
        r = sample_amplitudes(spec.ensemble, sites, _seed(cfg), trial)
        try:
            rep = ex.dm_shift_check(spec, r, subset, t, k)
        except SolverError:
            return None
        return {"trial": trial, "subset": subset, "subset_size": rep.subset_size, "t": t,
                "min_delta": rep.min_delta, "max_delta": rep.max_delta}

    rows = ex.map_trials(one, range(d.get("realizations", 10)), threads)
    good = [r for r in rows if r is not None]
    if good:
        _write_csv(out.path(".csv"), good)
    _write_json(out.path(".json"), {
        "experiment": "dm-check", "config_hash": config_hash(cfg), "t": t, "subset": subset,
        "realizations": len(rows), "excluded": len(rows) - len(good),
        "min_delta": min((r["min_delta"] for r in good), default=None),
        "max_delta": max((r["max_delta"] for r in good), default=None),
    })
    return 0 if len(good) >= (1 - ex.MAX_EXCLUDED_FRACTION) * len(rows) else 3


def _run_concentration(cfg, out: Outputs) -> int:
    c = cfg["concentration"]
    rep = ex.concentration_check(c.get("phi", "max"), c.get("n", 2), c.get("density_bound", 1.0),
                                 c.get("a", 0.5), c.get("epsilon", 0.1), c.get("trials", 100_000),
                                 _seed(cfg))
    row = {"phi": rep.phi, "n": rep.n, "density_bound": rep.density_bound, "a": rep.a,
           "epsilon": rep.epsilon, "exact": rep.exact, "empirical": rep.empirical,
           "ci_low": rep.ci[0] if rep.ci else None, "ci_high": rep.ci[1] if rep.ci else None,
           "bound": rep.bound, "trials": rep.trials}
    _write_csv(out.path(".csv"), [row])
    _write_json(out.path(".json"), {"experiment": "concentration", "config_hash": config_hash(cfg), **row})
    return 0


def _run_separation(cfg, out: Outputs) -> int:
    box, other = _box_from(cfg["box"]), _box_from(cfg["box_prime"])
    sep = cfg.get("separation", {})
    R = sep.get("R", cfg.get("field", {}).get("profile", {}).get("range", 1.0))
    factor = sep.get("factor", 8.0)
    verdict = classify_separation(box, other, R, factor)
    dist, threshold = separation_margin(box, other, R, factor)
    _write_json(out.path(".json"), {
        **verdict.to_json(), "distance": dist, "threshold": threshold, "R": R,
        "box": box.to_json(), "box_prime": other.to_json(),
    })
    return 0


def _run_covering(cfg, out: Outputs) -> int:
    spec = build_spec(cfg)
    step = cfg.get("covering", {}).get("grid_step", 0.1)
    cubes = (spec.box.factor1, spec.box.factor2) if isinstance(spec.box, TwoParticleBox) else (spec.box,)
    reports = []
    for c in cubes:
        rep = verify_covering(spec.profile, c, step)
        reports.append({"cube": c.to_json(), "min_sum": rep.min_sum, "max_sum": rep.max_sum,
                        "covering_holds": rep.covering_holds, "certified": rep.certified,
                        "samples": rep.samples})
    _write_json(out.path(".json"), {"experiment": "covering", "profile": spec.profile.to_json(),
                                    "reports": reports})
    return 0


def run_config(cfg: dict, out_dir, threads: int = 1, sweep: bool = False) -> tuple[int, list[Path]]:
    issues = validate_config(cfg)
    if issues:
        raise ConfigError(issues)
    out = Outputs(out_dir, cfg)
    kind = cfg["experiment"]
    if kind == "spectrum":
        status = _run_spectrum(cfg, out)
    elif kind in ("wegner-one", "wegner-two"):
        status = _run_wegner(cfg, out, threads, sweep)
    elif sweep:
        raise ConfigError([f"sweep is only defined for wegner experiments, not {kind}"])
    elif kind == "dm-check":
        status = _run_dm(cfg, out, threads)
    elif kind == "concentration":
        status = _run_concentration(cfg, out)
    elif kind == "separation":
        status = _run_separation(cfg, out)
    else:
        status = _run_covering(cfg, out)
    return status, out.written


# -- entry point -----------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wegner2p", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "validate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                       help="override a config entry, e.g. wegner.trials=500 (repeatable)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--trials", type=int, help="number of Monte Carlo trials")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _effective_config(args) -> dict:
    cfg = apply_overrides(load_config(args.config), args.overrides)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.trials is not None:
        section = {"dm-check": ("dm", "realizations"),
                   "concentration": ("concentration", "trials")}.get(cfg.get("experiment"),
                                                                     ("wegner", "trials"))
        cfg.setdefault(section[0], {})[section[1]] = args.trials
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _effective_config(args)
    except (FileNotFoundError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(json.dumps({"issues": exc.issues}, indent=2))
        return 2

    if args.command == "validate":
        issues = validate_config(cfg)
        print(json.dumps({"issues": issues}, indent=2))
        return 0 if not issues else 2

    threads = args.threads or cfg.get("threads", 1)
    out_dir = args.out or cfg.get("output_dir", "results")
    try:
        status, files = run_config(cfg, out_dir, threads, sweep=args.command == "sweep")
    except ConfigError as exc:
        print(json.dumps({"issues": exc.issues}, indent=2))
        return 2
    for f in files:
        print(f)
    if status == 3:
        print("error: solver failures exceeded the exclusion budget", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
