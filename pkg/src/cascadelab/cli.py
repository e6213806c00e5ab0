"""Reproducible experiment driver.

Subcommands: construct, simulate, audit, estimate-k, extract, efficiency,
constants.  Every artifact embeds the resolved configuration, the seed, the
package version and a sha256 checksum of its primary payload; timestamps live
in the metadata block only, so identical (subcommand, config, seed) runs
reproduce byte-identical payloads regardless of worker count.

Config resolution: built-in defaults < --config JSON file < explicit flags.
Environment: CASCADELAB_OUT_DIR prefixes relative output paths,
CASCADELAB_WORKERS is accepted and recorded (results never depend on it).

Exit codes: 0 success, 2 configuration error, 3 numeric/model error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .beliefs import (
    BeliefPair,
    InformativeParams,
    construct_informative_pair,
    is_informative,
)
from .dynamics import enumerate_tree, martingale_check, paths_to_csv, simulate
from .efficiency import (
    efficiency_estimate,
    exact_expected_tau,
    expected_tau_bound,
    tail_fit,
)
from .errors import ConfigError, ModelError
from .extraction import ExtractionRule, distance_jump_check, extract, verify_extracted_activity
from .martingale import (
    ActivitySpec,
    classical_inequality_audit,
    uniform_bound_constants,
    uniform_k_estimate,
    weak_activity_check,
)

_SAMPLING_COMMANDS = {"simulate", "audit", "estimate-k", "efficiency"}


def _canonical(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _checksum(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _out_path(name: str) -> Path:
    p = Path(name)
    base = os.environ.get("CASCADELAB_OUT_DIR")
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-cascadelab-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_artifact(path_name: str, payload: dict, config: dict, seed=None) -> str:
    body = _canonical(payload)
    csum = _checksum(body)
    doc = {
        "payload": payload,
        "meta": {
            "config": config,
            "seed": seed,
            "version": __version__,
            "checksum": csum,
            "workers": os.environ.get("CASCADELAB_WORKERS"),
            "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        },
    }
    _atomic_write(_out_path(path_name), (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode())
    return csum


def write_csv_artifact(path_name: str, csv_text: str, config: dict, seed=None) -> str:
    data = csv_text.encode()
    csum = _checksum(data)
    meta = {
        "config": config,
        "seed": seed,
        "version": __version__,
        "checksum": csum,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    head = "".join(f"# {line}\n" for line in json.dumps(meta, sort_keys=True).splitlines())
    _atomic_write(_out_path(path_name), head.encode() + data)
    return csum


def load_pair(path: str) -> BeliefPair:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read pair file {path}: {exc}") from exc
    if "payload" in doc:
        doc = doc["payload"]
    return BeliefPair.from_json_dict(doc)


def _pair_params(pair: BeliefPair, args) -> InformativeParams:
    psi = args.psi if args.psi is not None else pair.construction.get("psi")
    nu = args.nu if args.nu is not None else pair.construction.get("nu")
    if psi is None or nu is None:
        raise ConfigError("psi/nu not given and absent from the pair file")
    return InformativeParams(psi=float(psi), nu=float(nu))


# --------------------------------------------------------------------------
# Subcommand implementations
# --------------------------------------------------------------------------

def _cmd_construct(args, config) -> int:
    params = InformativeParams(psi=args.psi, nu=args.nu)
    pair = construct_informative_pair(params, args.truncation, variant=args.variant)
    payload = pair.to_json_dict()
    csum = write_json_artifact(args.out, payload, config)
    print(f"construct: wrote {args.out} ({csum})")
    return 0


def _cmd_simulate(args, config) -> int:
    pair = load_pair(args.pair)
    paths = [
        simulate(pair, args.state, args.horizon, seed=args.seed * 1_048_576 + i)
        for i in range(args.paths)
    ]
    if args.format == "csv":
        csum = write_csv_artifact(args.out, paths_to_csv(paths), config, args.seed)
    else:
        payload = {"paths": [p.to_json_dict(i) for i, p in enumerate(paths)]}
        csum = write_json_artifact(args.out, payload, config, args.seed)
    print(f"simulate: wrote {args.out} ({csum})")
    return 0


def _cmd_audit(args, config) -> int:
    pair = load_pair(args.pair)
    params = _pair_params(pair, args)
    tree = enumerate_tree(pair, args.depth)
    spec = ActivitySpec(psi=params.psi, nu=params.nu, action_count=2)
    rule = ExtractionRule(psi=params.psi, nu=params.nu, action_count=2)
    weak = weak_activity_check(tree, spec)
    mart = martingale_check(tree)
    dj = distance_jump_check(tree, pair, psi=params.psi, nu=params.nu)
    ineq = classical_inequality_audit(pair, args.horizon, args.paths, args.seed)
    extr = verify_extracted_activity(extract(tree, pair, rule))
    payload = {
        "weak_activity": weak.to_json_dict(),
        "martingale": {
            "max_violation": mart.max_violation,
            "max_abs_gap_rel": mart.max_abs_gap_rel,
            "is_supermartingale": mart.is_supermartingale,
            "is_martingale": mart.is_martingale,
        },
        "distance_jump": dj.to_json_dict(),
        "classical_inequalities": ineq.to_json_dict(),
        "extracted_activity": extr.to_json_dict(),
        "all_pass": bool(
            weak.passed and mart.is_supermartingale and dj.passed
            and ineq.passed and extr.passed
        ),
    }
    csum = write_json_artifact(args.out, payload, config, args.seed)
    print(f"audit: all_pass={payload['all_pass']} wrote {args.out} ({csum})")
    return 0


def _cmd_estimate_k(args, config) -> int:
    pairs = [load_pair(p) for p in args.pair]
    report = uniform_k_estimate(
        pairs, args.epsilon, args.L, args.horizon, args.paths, args.seed
    )
    csum = write_json_artifact(args.out, report.to_json_dict(), config, args.seed)
    if args.csv:
        write_csv_artifact(args.csv, report.to_csv(), config, args.seed)
    print(f"estimate-k: max_K_hat={report.max_K_hat} wrote {args.out} ({csum})")
    return 0


def _cmd_extract(args, config) -> int:
    pair = load_pair(args.pair)
    params = _pair_params(pair, args)
    rule = ExtractionRule(psi=params.psi, nu=params.nu, action_count=args.actions)
    tree = enumerate_tree(pair, args.depth)
    result = extract(tree, pair, rule)
    activity = verify_extracted_activity(result)
    payload = {
        "rule": {"psi": rule.psi, "nu": rule.nu, "action_count": rule.action_count},
        "depth": args.depth,
        "processes": [p.to_json_dict() for p in result.processes],
        "activity": activity.to_json_dict(),
    }
    csum = write_json_artifact(args.out, payload, config)
    print(f"extract: activity_pass={activity.passed} wrote {args.out} ({csum})")
    return 0


def _cmd_efficiency(args, config) -> int:
    pair = load_pair(args.pair)
    params = _pair_params(pair, args)
    est = efficiency_estimate(pair, args.horizon, args.paths, args.seed)
    fit = tail_fit(pair, args.tail_horizon, args.tail_paths, args.seed + 1)
    bound = expected_tau_bound(params.psi, params.nu)
    payload = {
        "estimates": est.to_json_dict(),
        "tail_fit": fit.to_json_dict(),
        "analytic_tau_bound": {
            "value": bound.value,
            "split": bound.split,
            "psi": bound.psi,
            "nu": bound.nu,
        },
        "exact_tau": exact_expected_tau(pair),
    }
    csum = write_json_artifact(args.out, payload, config, args.seed)
    if args.csv:
        write_csv_artifact(args.csv, fit.wrong_prob_csv(args.tail_paths), config, args.seed)
    print(f"efficiency: wrote {args.out} ({csum})")
    return 0


def _cmd_constants(args, config) -> int:
    bc = uniform_bound_constants(args.epsilon, args.psi, args.l0, args.L, j_rule=args.j_rule)
    payload = bc.to_json_dict()
    print("quantity value")
    for key in ("c_lower", "c_upper", "I", "N", "J", "K_estimate"):
        print(f"{key} {payload[key]}")
    if args.out:
        csum = write_json_artifact(args.out, payload, config)
        print(f"constants: wrote {args.out} ({csum})")
    return 0


# --------------------------------------------------------------------------
# Argument plumbing
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="cascadelab", description=__doc__)
    top.add_argument("--config", help="JSON file with default values for the subcommand")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", help="build an informative pair and write it as JSON")
    p.add_argument("--psi", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--truncation", type=int, default=1000)
    p.add_argument("--variant", type=int, default=0)
    p.add_argument("--out", default="pair.json")

    p = sub.add_parser("simulate", help="sample public-ratio paths to CSV/JSON")
    p.add_argument("--pair", required=True)
    p.add_argument("--state", choices=("H", "L"), default="H")
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--paths", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default="paths.csv")

    p = sub.add_parser("audit", help="exact tree checks plus Monte Carlo inequality audit")
    p.add_argument("--pair", required=True)
    p.add_argument("--psi", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="audit.json")

    p = sub.add_parser("estimate-k", help="empirical uniform convergence time per pair")
    p.add_argument("--pair", action="append", required=True,
                   help="pair JSON file; repeat for a family")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--L", type=float, default=0.5)
    p.add_argument("--horizon", type=int, default=2000)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="uniform_k.json")
    p.add_argument("--csv", default=None)

    p = sub.add_parser("extract", help="faster-process extraction report on an exact tree")
    p.add_argument("--pair", required=True)
    p.add_argument("--psi", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--out", default="extract.json")

    p = sub.add_parser("efficiency", help="stopping-time estimates, tail fit, analytic bound")
    p.add_argument("--pair", required=True)
    p.add_argument("--psi", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--horizon", type=int, default=5000)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--tail-horizon", type=int, default=64)
    p.add_argument("--tail-paths", type=int, default=200_000)
    p.add_argument("--tail-tmin", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="efficiency.json")
    p.add_argument("--csv", default=None)

    p = sub.add_parser("constants", help="judicious-constants table for the uniform bound")
    p.add_argument("--epsilon", type=float, required=False)
    p.add_argument("--psi", type=float)
    p.add_argument("--l0", type=float, default=1.0)
    p.add_argument("--L", type=float, default=0.5)
    p.add_argument("--j-rule", choices=("main", "footnote"), default="main")
    p.add_argument("--out", default=None)

    return top


_HANDLERS = {
    "construct": _cmd_construct,
    "simulate": _cmd_simulate,
    "audit": _cmd_audit,
    "estimate-k": _cmd_estimate_k,
    "extract": _cmd_extract,
    "efficiency": _cmd_efficiency,
    "constants": _cmd_constants,
}

_REQUIRED = {
    "construct": ("psi", "nu"),
    "constants": ("epsilon", "psi"),
}


def _apply_config(args: argparse.Namespace) -> dict:
    """Fill unset flags from the --config file; flags win. Returns the
    fully resolved configuration dict that gets embedded in artifacts."""
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        section = file_cfg.get(args.command, file_cfg)
        for key, val in section.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and getattr(args, attr) in (None, ()):
                setattr(args, attr, val)
    for key in _REQUIRED.get(args.command, ()):
        if getattr(args, key, None) is None:
            raise ConfigError(f"missing required option --{key} for {args.command}")
    if args.command in _SAMPLING_COMMANDS and getattr(args, "seed", None) is None:
        raise ConfigError(f"--seed is mandatory for {args.command}")
    resolved = {
        k: v
        for k, v in vars(args).items()
        if k not in ("config", "command") and not k.startswith("_") and v is not None
    }
    resolved["command"] = args.command
    return resolved


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _apply_config(args)
        return _HANDLERS[args.command](args, config)
    except ConfigError as exc:
        json.dump({"error": exc.code, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except ModelError as exc:
        json.dump({"error": exc.code, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
