"""Command-line entry point ``uscx``.

Every command reads an optional JSON config (``--config``), lets flags
override it, writes its artifacts to ``--out`` and finishes with a
``manifest.json`` describing inputs, seed and version. Artifacts are
byte-for-byte reproducible from (config, seed, version); the wall time
goes to a separate ``timing.json`` so that it does not break this.

Exit codes: 0 success, 2 invalid input, 3 failed statistical check,
4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import gallery as _gallery
from . import gev as _gev
from . import maxstable as _ms
from . import transform as _tr
from .grid import CompactProbe, Domain, GridField, field_from_csv, field_to_csv, hypo_converges
from .scenario import ScenarioError

EXIT_OK, EXIT_INVALID, EXIT_STAT, EXIT_INTERNAL = 0, 2, 3, 4
MANIFEST = "manifest.json"
Z_THRESHOLD = 3.0
DEFAULT_DOMAIN = {"bounds": [[0.0, 1.0]], "resolution": [21]}


class ConfigError(ValueError):
    pass


# -- helpers ---------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(obj):
    """Replace infinities by "+inf"/"-inf" so that the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def _write(out: Path, name: str, text: str) -> str:
    path = out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return name


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest: {MANIFEST}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return repr(v)
    return v


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _seed(args, cfg, required=True):
    if args.seed is not None:
        seed = args.seed
    elif "seed" in cfg:
        seed = cfg["seed"]
    elif os.environ.get("USCX_SEED"):
        seed = os.environ["USCX_SEED"]
    elif required:
        raise ConfigError("an explicit seed is required (--seed, config or USCX_SEED)")
    else:
        return None
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def _n(args, cfg, default=None, minimum=1):
    n = args.n if args.n is not None else cfg.get("n_samples", default)
    if n is None:
        return None
    n = int(n)
    if n < minimum:
        raise ConfigError(f"n_samples must be at least {minimum}")
    return n


def _domain(cfg) -> Domain:
    return Domain.from_dict(cfg.get("domain", DEFAULT_DOMAIN))


def _model(args, cfg, domain):
    spec = cfg.get("model")
    if args.model:
        spec = {"family": args.model, **({} if not isinstance(spec, dict) else
                                         {k: v for k, v in spec.items() if k != "family"})}
    if spec is None:
        raise ConfigError("a spectral model is required (--model or config 'model')")
    if isinstance(spec, str):
        spec = {"family": spec}
    if getattr(args, "radius", None) is not None:
        spec["r"] = args.radius
    if getattr(args, "height", None) is not None:
        spec["h"] = args.height
    return _ms.model_from_dict(spec, domain)


def _probes(args, cfg, domain):
    if getattr(args, "probe_level", None) is not None:
        return [CompactProbe([(domain.bounds, level)]) for level in args.probe_level]
    if "probes" not in cfg:
        raise ConfigError("probes are required (--probe-level or config 'probes')")
    probes = [CompactProbe.from_dict(p) for p in cfg["probes"]]
    for p in probes:
        p.validate(domain)
    return probes


def _sampler(cfg, model, domain):
    budget = int(cfg.get("atom_budget", _ms.ATOM_BUDGET))
    if budget < 1:
        raise ConfigError("atom_budget must be positive")
    return _ms.MaxStableSampler(model, domain, budget)


def _z_threshold(cfg):
    z = float(cfg.get("z_threshold", Z_THRESHOLD))
    if not z > 0:
        raise ConfigError("z_threshold must be positive")
    return z


class Run:
    def __init__(self, command, args, cfg):
        self.command = command
        self.out = Path(args.out)
        self.format = args.format or cfg.get("format", "json")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        self.threads = max(1, int(args.threads or cfg.get("threads", 1)))
        self.cfg = cfg
        self.files = []
        self.manifest = {"command": command, "version": __version__, "inputs": cfg}
        self.t0 = time.perf_counter()

    def write(self, name, text):
        self.files.append(_write(self.out, name, text))

    def finish(self, **fields):
        self.manifest.update(fields)
        self.manifest["files"] = sorted(self.files)
        _write(self.out, MANIFEST, dumps(self.manifest))
        _write(self.out, "timing.json",
               dumps({"wall_time_seconds": time.perf_counter() - self.t0, "manifest": MANIFEST}))


# -- commands --------------------------------------------------------------------

def cmd_simulate(args, cfg):
    run = Run("simulate", args, cfg)
    domain = _domain(cfg)
    model = _model(args, cfg, domain)
    seed = _seed(args, cfg)
    n = _n(args, cfg, default=1)
    sampler = _sampler(cfg, model, domain)
    fields, atoms = _ms.simulate_batch(sampler, n, seed, run.threads)
    width = max(6, len(str(n - 1)))
    results = []
    for i, row in enumerate(fields):
        f = GridField(domain, row.reshape(domain.shape))
        name = f"fields/sample_{i:0{width}d}.csv"
        if run.format == "csv":
            run.write(name, field_to_csv(f, f"manifest: {MANIFEST}; seed {seed + i}"))
        results.append({"sample": i, "seed": seed + i, "atoms": int(atoms[i]),
                        **({"file": name} if run.format == "csv" else {"values": row.tolist()})})
    if run.format == "json":
        run.write("fields.json", dumps({"manifest": MANIFEST, "domain": domain.to_dict(),
                                        "samples": results}))
        results = [{k: v for k, v in r.items() if k != "values"} for r in results]
    run.finish(model=model.to_dict(), domain=domain.to_dict(), seed=seed, n_samples=n,
               atoms_mean=float(atoms.mean()), results=results)
    return EXIT_OK


def cmd_capacity(args, cfg):
    run = Run("capacity", args, cfg)
    domain = _domain(cfg)
    model = _model(args, cfg, domain)
    probes = _probes(args, cfg, domain)
    n = _n(args, cfg, minimum=100)
    seed = _seed(args, cfg, required=n is not None)
    results, atoms_mean, failed = [], None, False
    z_thr = _z_threshold(cfg)
    sampler = _sampler(cfg, model, domain) if n else None
    for k, probe in enumerate(probes):
        miss = _ms.capacity_closed_form(model, probe)
        rec = {"probe": probe.to_dict(), "closed_form_miss": miss, "closed_form_hit": 1.0 - miss}
        if n:
            hit, hw, atoms_mean = _ms.capacity_empirical(sampler, probe, n, seed, run.threads)
            p = 1.0 - miss
            se = math.sqrt(max(p * (1 - p), 0.0) / n)
            z = (hit - p) / se if se > 0 else (0.0 if hit == p else math.inf)
            rec.update(empirical_hit=hit, halfwidth=hw, z_score=z)
            failed |= abs(z) >= z_thr
        results.append(rec)
    if run.format == "csv":
        rows = [(k, ";".join(str(p["level"]) for p in r["probe"]["parts"]), r["closed_form_miss"],
                 r["closed_form_hit"], r.get("empirical_hit", ""), r.get("halfwidth", ""),
                 r.get("z_score", "")) for k, r in enumerate(results)]
        run.write("capacity.csv", _csv_text(["probe", "levels", "closed_form_miss", "closed_form_hit",
                                             "empirical_hit", "halfwidth", "z_score"], rows))
    else:
        run.write("capacity.json", dumps({"manifest": MANIFEST, "results": results}))
    run.finish(model=model.to_dict(), domain=domain.to_dict(), seed=seed, n_samples=n,
               atoms_mean=atoms_mean, results=results)
    return EXIT_STAT if failed else EXIT_OK


def cmd_maxstab(args, cfg):
    run = Run("maxstab-check", args, cfg)
    domain = _domain(cfg)
    model = _model(args, cfg, domain)
    probes = _probes(args, cfg, domain)
    n_samples = _n(args, cfg, minimum=100)
    if n_samples is None:
        raise ConfigError("n_samples is required")
    seed = _seed(args, cfg)
    norm_n = int(args.norming_n if args.norming_n is not None else cfg.get("n", 2))
    sampler = _sampler(cfg, model, domain)
    z_thr = _z_threshold(cfg)
    if "theta" in cfg:
        theta = _gev.ThetaField.from_dict(cfg["theta"])
        rep = _ms.destandardized_max_stability(sampler, theta, norm_n, probes, n_samples, seed,
                                               run.threads, z_thr)
    else:
        rep = _ms.check_simple_max_stability(sampler, norm_n, probes, n_samples, seed, run.threads,
                                             z_thr)
    if run.format == "csv":
        keys = [k for k in rep["results"][0] if k != "probe"]
        run.write("maxstab.csv", _csv_text(["probe"] + keys,
                                           [[i] + [r[k] for k in keys] for i, r in enumerate(rep["results"])]))
    else:
        run.write("maxstab.json", dumps({"manifest": MANIFEST, **rep}))
    run.finish(model=model.to_dict(), domain=domain.to_dict(), seed=seed, n_samples=n_samples,
               atoms_mean=rep["atoms_mean"], results=rep["results"], passed=rep["passed"])
    return EXIT_OK if rep["passed"] else EXIT_STAT


def _family(spec) -> _tr.MarginalFamily:
    if spec is None:
        raise ConfigError("a marginal family is required (config 'family')")
    return _tr.family_from_dict(spec)


def cmd_sklar(args, cfg):
    run = Run("sklar", args, cfg)
    domain = _domain(cfg)
    direction = args.direction or cfg.get("direction", "forward")
    src = args.input or cfg.get("input")
    if not src:
        raise ConfigError("an input field CSV is required (--input or config 'input')")
    try:
        field = field_from_csv(Path(src).read_text(), domain)
    except OSError as exc:
        raise ConfigError(f"cannot read input field: {exc}") from None
    if direction == "forward":
        out = _tr.sklar_forward(_family(cfg.get("family")), field)
    elif direction == "backward":
        out = _tr.sklar_backward(_family(cfg.get("family")), field)
    elif direction in ("standardize", "destandardize"):
        if "theta" not in cfg:
            raise ConfigError("GEV standardization needs config 'theta'")
        theta = _gev.ThetaField.from_dict(cfg["theta"])
        fn = _tr.gev_standardize if direction == "standardize" else _tr.gev_destandardize
        out = fn(theta, field)
    else:
        raise ConfigError(f"unknown direction {direction!r}")
    if run.format == "csv":
        run.write("field.csv", field_to_csv(out, f"manifest: {MANIFEST}; sklar {direction}"))
    else:
        run.write("field.json", dumps({"manifest": MANIFEST, "domain": domain.to_dict(),
                                       "values": out.values.reshape(-1).tolist()}))
    run.finish(domain=domain.to_dict(), seed=None, n_samples=None, direction=direction,
               results=[{"file": run.files[-1]}])
    return EXIT_OK


def cmd_gallery(args, cfg):
    run = Run("gallery", args, cfg)
    entry = args.entry or cfg.get("entry")
    if entry is None:
        raise ConfigError("--entry is required")
    _gallery.get_entry(entry)
    n = _n(args, cfg, default=100000, minimum=100)
    seed = _seed(args, cfg)
    rec = _gallery.gallery_record(entry, n, seed)
    if run.format == "csv":
        keys = sorted(rec)
        run.write("gallery.csv", _csv_text(keys, [[rec[k] for k in keys]]))
    else:
        run.write("gallery.json", dumps({"manifest": MANIFEST, **rec}))
    run.finish(model=entry, domain=None, seed=seed, n_samples=n, atoms_mean=None, results=[rec])
    return EXIT_OK


def cmd_gevfit(args, cfg):
    run = Run("gevfit", args, cfg)
    g = lambda k, default=None: getattr(args, k) if getattr(args, k) is not None else cfg.get(k, default)
    q, q1, q2 = g("q"), g("q1"), g("q2")
    if None in (q, q1, q2):
        raise ConfigError("--q, --q1 and --q2 are required")
    p1, p2 = g("p1", 0.25), g("p2", 0.75)
    theta = _gev.params_from_quantiles(float(q), float(q1), float(q2), float(p1), float(p2))
    rec = {"gamma": theta.gamma, "mu": theta.mu, "sigma": theta.sigma,
           "inputs": {"q": q, "p1": p1, "q1": q1, "p2": p2, "q2": q2}}
    if run.format == "csv":
        run.write("gevfit.csv", _csv_text(["gamma", "mu", "sigma"], [[theta.gamma, theta.mu, theta.sigma]]))
    else:
        run.write("gevfit.json", dumps({"manifest": MANIFEST, **rec}))
    run.finish(domain=None, seed=None, n_samples=None, results=[rec])
    return EXIT_OK


def cmd_hypoconv(args, cfg):
    run = Run("hypoconv", args, cfg)
    domain = _domain(cfg)
    seq_paths = cfg.get("sequence") or []
    limit_path = cfg.get("limit")
    if len(seq_paths) < 3 or not limit_path:
        raise ConfigError("config needs 'sequence' (at least 3 CSV paths) and 'limit'")
    try:
        seq = [field_from_csv(Path(p).read_text(), domain) for p in seq_paths]
        limit = field_from_csv(Path(limit_path).read_text(), domain)
    except OSError as exc:
        raise ConfigError(f"cannot read field: {exc}") from None
    radius = int(cfg.get("neighborhood_radius", 2))
    slack = float(cfg.get("slack", 1e-9))
    verdict = hypo_converges(seq, limit, radius, slack)
    rec = {"verdict": verdict, "neighborhood_radius": radius, "slack": slack, "length": len(seq)}
    if run.format == "csv":
        run.write("hypoconv.csv", _csv_text(["verdict", "neighborhood_radius", "slack", "length"],
                                            [[verdict, radius, slack, len(seq)]]))
    else:
        run.write("hypoconv.json", dumps({"manifest": MANIFEST, **rec}))
    run.finish(domain=domain.to_dict(), seed=None, n_samples=None, results=[rec])
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "capacity": cmd_capacity, "maxstab-check": cmd_maxstab,
            "sklar": cmd_sklar, "gallery": cmd_gallery, "gevfit": cmd_gevfit, "hypoconv": cmd_hypoconv}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="base seed (fallback: USCX_SEED)")
    common.add_argument("--n", type=int, help="number of samples")
    common.add_argument("--out", default="uscx_out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes for sampling")
    common.add_argument("--format", choices=("csv", "json"), help="result format")
    parser = argparse.ArgumentParser(prog="uscx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"uscx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "capacity", "maxstab-check"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--model", choices=("constant_one", "storm", "staircase"))
        p.add_argument("--radius", type=float, help="storm plateau half-width r")
        p.add_argument("--height", type=float, help="storm height h")
        if name != "simulate":
            p.add_argument("--probe-level", type=float, action="append",
                           help="probe the whole domain at this level (repeatable)")
        if name == "maxstab-check":
            p.add_argument("--norming-n", type=int, help="number of maxima n")
    p = sub.add_parser("sklar", parents=[common])
    p.add_argument("--direction", choices=("forward", "backward", "standardize", "destandardize"))
    p.add_argument("--input", help="input field CSV")
    p = sub.add_parser("gallery", parents=[common])
    p.add_argument("--entry", choices=_gallery.ENTRY_IDS)
    p = sub.add_parser("gevfit", parents=[common])
    for k in ("q", "p1", "q1", "p2", "q2"):
        p.add_argument(f"--{k}", type=float)
    sub.add_parser("hypoconv", parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ScenarioError, ValueError, KeyError, TypeError) as exc:
        print(f"uscx {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except _ms.StoppingRuleStarved as exc:
        print(f"uscx {args.command}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"uscx {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
