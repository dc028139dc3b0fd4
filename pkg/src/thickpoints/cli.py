"""Command-line frontend for the verification battery.

Exit codes: 0 success, 1 runtime failure or failed verdict, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, experiments as ex
from .harness import write_table_csv

MANIFEST_SCHEMA = "manifest-v1"

logger = logging.getLogger("thickpoints")


class UsageError(Exception):
    pass


# Option value parsers; each also converts config-file strings.


def _point(text):
    parts = [float(v) for v in str(text).split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}")
    return complex(parts[0], parts[1])


def _int_list(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}")


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _thickness(text):
    a = float(text)
    if not 0.0 < a < 2.0:
        raise argparse.ArgumentTypeError("a must lie in (0, 2)")
    return a


def _scale(text):
    n = int(text)
    if n < 8:
        raise argparse.ArgumentTypeError("N must be >= 8")
    return n


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _scales(text):
    vals = _int_list(text)
    if any(n < 8 for n in vals):
        raise argparse.ArgumentTypeError("N must be >= 8")
    return vals


# name: (type, default, help); default None with required=True in COMMANDS means mandatory.
OPTIONS = {
    "domain": (str, "disc", "domain: disc, disc:cx,cy,r or mobius:alpha,beta,gamma,delta"),
    "N": (_scale, 64, "lattice scale"),
    "N_list": (_scales, "64,128,256", "comma-separated lattice scales"),
    "a": (_thickness, 0.5, "thickness parameter in (0, 2)"),
    "samples": (_positive, 1000, "number of replications"),
    "x": (_point, "0,0", "point 'x,y'"),
    "x0": (_point, "0,0", "start point 'x,y'"),
    "y": (_point, "0.5,0", "second point 'x,y' for the off-diagonal check"),
    "exit": (_point, None, "condition on exiting at boundary point 'x,y'"),
    "center": (_point, "0,0", "centre of the test disc A"),
    "radius": (float, 0.5, "radius of the test disc A"),
    "rel_tol": (float, 0.15, "relative tolerance on the first-moment limit"),
    "exact": (_bool, False, "also compute the exact finite-N mean (slow)"),
    "diag_tol": (float, 0.05, "tolerance on the diagonal Green asymptotic"),
    "off_tol": (float, 0.02, "tolerance on the off-diagonal Green asymptotic"),
    "triples": (_positive, 50, "number of random site triples"),
    "tol": (float, 1e-8, "absolute tolerance"),
    "R": (_positive, 16, "contour radius"),
    "count_truncated": (_bool, True, "count the excursion still open at domain exit"),
    "mean_tol": (float, 0.05, "relative tolerance on the mean local time per excursion"),
    "half_width": (float, 0.25, "half-width of the strip subdomain"),
    "probes": (_positive, 10, "number of probe sites"),
    "coeffs": (_float_list, "1,2.718281828459045", "simplex coefficients"),
    "check": (int, 0, "number of random coefficient sets to compare with brute-force quadrature"),
    "p": (_positive, 3, "strip scale exponent (half-width 2^-p)"),
    "r_max": (_positive, 2, "largest subset size kept in the density"),
    "grid": (_positive, 32, "grid points per axis"),
    "path_dump": (str, None, "write the sampled path in binary varint-delta format"),
    "profile": (str, "quick", "battery profile: quick or full"),
}

COMMANDS = {
    "green-check": (["domain", "N_list", "x", "y", "diag_tol", "off_tol"], {"N_list"},
                    "Green function asymptotics on and off the diagonal"),
    "hitting-check": (["domain", "N", "triples", "tol"], set(),
                      "two-site hitting formula against a direct solve"),
    "local-time-law": (["domain", "N", "samples", "x"], set(),
                       "exponential law of the local time at the start and exit-arc independence"),
    "first-moment": (["domain", "N", "a", "samples", "x0", "exit", "center", "radius", "rel_tol",
                      "exact"], set(), "Monte-Carlo first moment against its continuum limit"),
    "markov-check": (["domain", "N", "a", "samples", "x0", "half_width"], set(),
                     "exact split of thick points at the first strip exit"),
    "split-uniformity": (["domain", "N_list", "a", "samples", "x0", "half_width"], set(),
                         "uniformity of the thickness share across scales"),
    "excursion-law": (["domain", "N", "R", "samples", "x", "count_truncated", "mean_tol"], set(),
                      "geometric excursion counts and local time per excursion"),
    "thick-scaling": (["domain", "N_list", "a", "samples", "x0"], set(),
                      "normalised thick-point count across scales"),
    "conditioned-check": (["domain", "N", "samples", "x0", "exit", "probes"], set(),
                          "Doob-transformed walk: exit site and mean local times"),
    "simplex-eval": (["a", "coeffs", "check"], set(), "simplex product integral"),
    "martingale-approx": (["domain", "N", "p", "r_max", "a", "x0", "exit", "grid", "path_dump"], set(),
                          "strip-conditioned density on a grid for one conditioned path"),
    "battery": (["profile"], set(), "run every experiment"),
}

# Per-command overrides of the shared defaults.
COMMAND_DEFAULTS = {
    "first-moment": {"N": 256, "samples": 20000},
    "local-time-law": {"samples": 10000},
    "excursion-law": {"N": 256, "samples": 100000},
    "hitting-check": {"N": 128},
    "markov-check": {"samples": 100},
    "split-uniformity": {"samples": 2000},
    "thick-scaling": {"samples": 10000},
    "conditioned-check": {"samples": 10000, "exit": "1,0"},
    "simplex-eval": {"a": 1.0},
    "martingale-approx": {"exit": "1,0"},
}

# Battery profiles: command -> parameter overrides.
BATTERY = {
    "quick": {
        "simplex-eval": {"a": 1.0, "check": 10},
        "green-check": {"N_list": "32,64,128"},
        "hitting-check": {"N": 32, "triples": 10},
        "local-time-law": {"N": 32, "samples": 2000},
        "excursion-law": {"N": 64, "R": 4, "samples": 2000},
        "first-moment": {"N": 32, "samples": 500},
        "thick-scaling": {"N_list": "16,32,64", "samples": 300},
        "markov-check": {"N": 32, "samples": 50},
        "split-uniformity": {"N_list": "16,32", "samples": 200},
        "conditioned-check": {"N": 32, "samples": 500},
        "martingale-approx": {"N": 32, "p": 2, "grid": 8},
    },
    "full": {
        "simplex-eval": {"a": 1.0, "check": 100},
        "green-check": {"N_list": "128,256,512,1024"},
        "hitting-check": {},
        "local-time-law": {"N": 128},
        "excursion-law": {},
        "first-moment": {},
        "thick-scaling": {},
        "markov-check": {"samples": 10000},
        "split-uniformity": {},
        "conditioned-check": {"N": 64},
        "martingale-approx": {},
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thickpoints", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (opts, _, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        shared = p.add_argument_group("shared options")
        shared.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        shared.add_argument("--config", default=None, help="flat 'key = value' file")
        shared.add_argument("--out-dir", default=None, help="output directory (default: out)")
        shared.add_argument("--workers", type=_positive, default=None,
                            help="worker threads (default: $THICKPOINTS_WORKERS or 1)")
        shared.add_argument("--json", default=None, help="also write the JSON report here")
        shared.add_argument("-q", "--quiet", action="store_true")
        for key in opts:
            typ, _, h = OPTIONS[key]
            flag = "--N" if key == "N_list" else "--" + key.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, dest=key, type=_bool, nargs="?", const=True, default=None, help=h)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None, help=h)
    return parser


SHARED_KEYS = {"seed": int, "out_dir": str, "workers": _positive}


def read_config(path, allowed) -> dict:
    """Parse a flat ``key = value`` file; unknown keys are usage errors."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        if key == "N" and "N_list" in allowed:
            key = "N_list"
        if key not in allowed and key not in SHARED_KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _convert(key, value):
    typ = SHARED_KEYS[key] if key in SHARED_KEYS else OPTIONS[key][0]
    if value is None or not isinstance(value, str):
        return value
    try:
        return typ(value)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"bad value for {key}: {exc}")


def resolve(command, args_dict, config=None, overrides=None) -> dict:
    """Merge defaults, battery overrides, config file and flags, in increasing priority."""
    opts, required, _ = COMMANDS[command]
    merged = {}
    for key in opts:
        merged[key] = OPTIONS[key][1]
    merged.update(COMMAND_DEFAULTS.get(command, {}))
    merged.update(overrides or {})
    merged.update(config or {})
    for key in opts:
        if args_dict.get(key) is not None:
            merged[key] = args_dict[key]
    for key in ("seed", "out_dir", "workers"):
        if args_dict.get(key) is not None:
            merged[key] = args_dict[key]
    merged.setdefault("seed", 0)
    merged.setdefault("out_dir", "out")
    merged.setdefault("workers", None)
    for key in required:
        if (config or {}).get(key) is None and args_dict.get(key) is None and \
                (overrides or {}).get(key) is None:
            raise UsageError(f"{command}: missing required option --{key.split('_')[0]}")
    return {k: _convert(k, v) for k, v in merged.items()}


def run_experiment(command, cfg) -> ex.ExperimentResult:
    w, s = cfg.get("workers"), cfg["seed"]
    if command == "green-check":
        return ex.green_check(cfg["domain"], cfg["x"], cfg["N_list"], cfg["y"], cfg["diag_tol"],
                              cfg["off_tol"])
    if command == "hitting-check":
        return ex.hitting_check(cfg["N"], cfg["triples"], s, cfg["tol"], cfg["domain"])
    if command == "local-time-law":
        return ex.local_time_law(cfg["N"], cfg["samples"], s, cfg["x"], workers=w, domain=cfg["domain"])
    if command == "first-moment":
        return ex.first_moment(cfg["domain"], cfg["x0"], cfg["a"], cfg["N"], cfg["samples"], s,
                               cfg["center"], cfg["radius"], cfg["exit"], cfg["rel_tol"],
                               cfg["exact"], w)
    if command == "markov-check":
        return ex.markov_check(cfg["N"], cfg["a"], cfg["samples"], s, cfg["half_width"], w,
                               cfg["domain"], cfg["x0"])
    if command == "split-uniformity":
        return ex.split_uniformity(cfg["N_list"], cfg["a"], cfg["samples"], s, cfg["half_width"], w,
                                   cfg["domain"], cfg["x0"])
    if command == "excursion-law":
        return ex.excursion_law(cfg["N"], cfg["R"], cfg["samples"], s, cfg["x"], workers=w,
                                count_truncated=cfg["count_truncated"], mean_tol=cfg["mean_tol"],
                                domain=cfg["domain"])
    if command == "thick-scaling":
        return ex.thick_scaling(cfg["N_list"], cfg["a"], cfg["samples"], s, w, cfg["domain"], cfg["x0"])
    if command == "conditioned-check":
        return ex.conditioned_check(cfg["N"], cfg["samples"], s, cfg["x0"], cfg["exit"], cfg["probes"],
                                    w, cfg["domain"])
    if command == "simplex-eval":
        return ex.simplex_eval(cfg["a"], cfg["coeffs"], cfg["check"], s)
    if command == "martingale-approx":
        return ex.martingale_approx(cfg["N"], cfg["p"], cfg["r_max"], cfg["a"], s, cfg["grid"],
                                    cfg["x0"], cfg["exit"], cfg["domain"], cfg.get("path_dump"))
    raise UsageError(f"unknown command {command}")


def _jsonable(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (list, tuple)):
        return [_jsonable(u) for u in v]
    return v


def _dump_json(obj, path):
    path = Path(path)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    return path


def emit(result: ex.ExperimentResult, cfg, out_dir: Path, extra_json=None) -> list[Path]:
    """Write the JSON report and one CSV per table; returns the written paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = result.name.replace("-", "_")
    doc = result.to_json()
    doc["config"] = {k: _jsonable(v) for k, v in sorted(cfg.items())
                     if k not in ("out_dir", "workers", "path_dump")}
    files = [_dump_json(doc, out_dir / f"{stem}.json")]
    for name, (header, rows) in result.tables.items():
        path = out_dir / f"{stem}_{name}.csv"
        write_table_csv(path, header, rows)
        files.append(path)
    if extra_json:
        files.append(_dump_json(doc, extra_json))
    return files


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command, cfg, entries, started, timing) -> Path:
    """Manifest with digests of every emitted file; written after all of them."""
    outputs = []
    for exp, paths in entries:
        for p in paths:
            p = Path(p)
            try:
                rel = str(p.relative_to(out_dir))
            except ValueError:
                rel = str(p)
            outputs.append({"experiment": exp, "path": rel, "sha256": _sha256(p)})
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "command": command,
        "config": {k: _jsonable(v) for k, v in sorted(cfg.items())},
        "master_seed": cfg.get("seed", 0),
        "outputs": outputs,
        "timing": {"started": started, "wall_seconds": timing},
    }
    return _dump_json(manifest, out_dir / "manifest.json")


def _report(result, quiet):
    if quiet:
        return
    print(f"[{result.name}]")
    for line in result.lines:
        print("  " + line)
    for c in result.checks:
        mark = "PASS" if c.passed else ("FLAG" if c.kind == ex.INFORMATIONAL else "FAIL")
        print(f"  {mark} {c.label} ({c.kind}): {c.detail}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    command = args.command
    argd = vars(args)
    try:
        config = read_config(args.config, set(COMMANDS[command][0])) if args.config else {}
        cfg = resolve(command, argd, config)
    except UsageError as exc:
        print(f"thickpoints: error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(cfg["out_dir"])
    try:
        if command == "battery":
            profile = cfg["profile"]
            if profile not in BATTERY:
                print(f"thickpoints: error: unknown profile {profile!r}", file=sys.stderr)
                return 2
            entries, timing, ok = [], {}, True
            shared = {k: v for k, v in config.items() if k in SHARED_KEYS}
            for name, over in BATTERY[profile].items():
                sub_cfg = resolve(name, {"seed": cfg["seed"], "workers": cfg["workers"]},
                                  shared, {k: str(v) for k, v in over.items()})
                t0 = time.perf_counter()
                res = run_experiment(name, sub_cfg)
                timing[name] = time.perf_counter() - t0
                _report(res, args.quiet)
                entries.append((name, emit(res, sub_cfg, out_dir / name)))
                ok &= res.ok
            write_manifest(out_dir, command, cfg, entries, started, timing)
            return 0 if ok else 1
        t0 = time.perf_counter()
        res = run_experiment(command, cfg)
        elapsed = time.perf_counter() - t0
        _report(res, args.quiet)
        files = emit(res, cfg, out_dir, args.json)
        write_manifest(out_dir, command, cfg, [(command, files)], started, {command: elapsed})
        return 0 if res.ok else 1
    except UsageError as exc:
        print(f"thickpoints: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"thickpoints: {command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
