"""Command-line front end.

Exit codes: 0 success, 1 negative verdict (resonant vector, failed bound),
2 invalid input, 3 resonance, 4 degenerate Hessian, 5 no convergence.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import series as sr
from .arithmetic import ResourceError, best_constant, measure_estimate
from .kam import (NonDegeneracyError, SingularHamiltonian, TorusHamiltonian, kam_run, kam_singular_run)
from .newton import NonConvergenceError, ResonanceError, ScaleSchedule, diagonalize_kolmogorov, offdiag
from .operators import certify_bound, derivation_operator, identity_operator

GOLDEN = (1 + math.sqrt(5)) / 2
CSV_HEADER = "# kamkit-csv v1"

EXIT_OK, EXIT_VERDICT, EXIT_INVALID, EXIT_RESONANCE, EXIT_DEGENERATE, EXIT_DIVERGED = range(6)


class ConfigError(ValueError):
    pass


def _example_torus() -> dict:
    half = [{"fourier": [s, 0], "momentum": m, "tdeg": 1, "re": 0.5, "im": 0.0}
            for s in (1, -1) for m in ([0, 0], [1, 0])]
    return {"kind": "torus", "dim": 2, "alpha": [1.0, GOLDEN], "beta": [[2.0, 0.0], [0.0, 2.0]],
            "trunc": [12, 4, 4], "remainder": half}


def _example_singular() -> dict:
    return {"kind": "singular", "dim": 1, "omega": [1.0], "trunc": [8, 8, 0],
            "remainder": [{"fourier": [3], "momentum": [0], "tdeg": 0, "re": 1.0, "im": 0.0}]}


DEFAULTS = {
    "diophantine": {"alpha": [1.0, GOLDEN], "nu": 0.5, "Ncut": 100},
    "measure": {"nu": 1.0, "C": [1e-3], "N": 1.0, "samples": 100000, "Ncut": 50},
    "certify": {"operator": "qdq", "index": 0, "coeff": 1.0, "dim": 2, "trunc": [6, 3, 2], "k": 1,
                "declared": None, "trials": 200},
    "diagonalize": {"matrix": None, "size": 5, "eps": 1e-3, "tol": 1e-12, "maxiter": 30},
    "kam": {"hamiltonian": _example_torus(), "input": None, "t_value_scale": 1e-4, "s0": 0.5, "l": 4.0,
            "tol": 1e-10, "maxiter": 10, "nu": 0.5, "q": 1.9},
    "kam-singular": {"hamiltonian": _example_singular(), "input": None, "s0": 0.02, "l": 4.0, "tol": 1e-10,
                     "maxiter": 10, "divisor_floor": 1e-8, "q": 1.9},
}


# ---------------------------------------------------------------------------
# config

def load_config(command: str, path: str | None, seed: int | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    cfg["seed"] = 0
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def _real_vector(x, name) -> np.ndarray:
    if not isinstance(x, list) or not x or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in x):
        raise ConfigError(f"{name} must be a non-empty list of numbers")
    arr = np.array(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return arr


def _positive(cfg, key, integer=False):
    v = cfg[key]
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok or not v > 0 or not math.isfinite(v):
        raise ConfigError(f"{key} must be a positive {'integer' if integer else 'number'}")
    return v


def _hamiltonian_dict(cfg) -> dict:
    if cfg.get("input"):
        try:
            return json.loads(Path(cfg["input"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read hamiltonian {cfg['input']}: {exc}") from exc
    return cfg["hamiltonian"]


# ---------------------------------------------------------------------------
# output

def _write_json(out: Path, name: str, obj) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_text(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


# ---------------------------------------------------------------------------
# commands

def cmd_diophantine(cfg, out: Path) -> int:
    alpha = _real_vector(cfg["alpha"], "alpha")
    nu = _positive(cfg, "nu")
    Ncut = _positive(cfg, "Ncut", integer=True)
    if not np.any(alpha != 0):
        raise ConfigError("alpha must be nonzero")
    try:
        cert = best_constant(alpha, nu, Ncut)
    except ResourceError as exc:
        raise ConfigError(f"{exc}; largest admissible Ncut is {exc.radius}") from exc
    _write_json(out, "certificate.json", cert.as_dict())
    print(f"C = {cert.C!r} at j = {cert.worst_j}")
    return EXIT_OK if cert.C > 0 else EXIT_VERDICT


def cmd_measure(cfg, out: Path) -> int:
    Cs = cfg["C"] if isinstance(cfg["C"], list) else [cfg["C"]]
    Cs = _real_vector(Cs, "C")
    if np.any(Cs < 0):
        raise ConfigError("C values must be non-negative")
    nu = _positive(cfg, "nu")
    N = _positive(cfg, "N")
    samples = _positive(cfg, "samples", integer=True)
    Ncut = _positive(cfg, "Ncut", integer=True)
    lines = [f"{CSV_HEADER} measure nu={nu!r} N={N!r} samples={samples} Ncut={Ncut} seed={cfg['seed']}",
             "C,empirical_fraction,paper_bound,sigma"]
    for C in Cs:
        frac, bound, sigma = measure_estimate(nu, float(C), N, samples, Ncut, cfg["seed"])
        lines.append(f"{float(C)!r},{frac!r},{bound!r},{sigma!r}")
    _write_text(out, "measure.csv", "\n".join(lines) + "\n")
    return EXIT_OK


_OPERATORS = {"identity", "qdq", "dp"}


def cmd_certify(cfg, out: Path) -> int:
    name = cfg["operator"]
    if name not in _OPERATORS:
        raise ConfigError(f"operator must be one of {sorted(_OPERATORS)}")
    dim = _positive(cfg, "dim", integer=True)
    trunc = tuple(cfg["trunc"])
    if len(trunc) != 3 or not all(isinstance(v, int) and v >= 0 for v in trunc):
        raise ConfigError("trunc must be three non-negative integers")
    i = cfg["index"]
    if not isinstance(i, int) or not 0 <= i < dim:
        raise ConfigError("index out of range")
    if name == "identity":
        u = identity_operator(dim, sr.Mode.TORUS, trunc)
    else:
        u = derivation_operator("q" if name == "qdq" else "p", i, float(cfg["coeff"]), dim, sr.Mode.TORUS, trunc)
    k = cfg["k"]
    if k not in (0, 1):
        raise ConfigError("k must be 0 or 1")
    cert = certify_bound(u, k, trials=_positive(cfg, "trials", integer=True), seed=cfg["seed"],
                         declared=cfg["declared"])
    _write_json(out, "certificate.json", cert.as_dict())
    print(f"C_emp = {cert.C_emp!r} declared = {cert.declared!r} verdict = {cert.verdict}")
    return EXIT_OK if cert.verdict else EXIT_VERDICT


def cmd_diagonalize(cfg, out: Path) -> int:
    if cfg["matrix"] is not None:
        try:
            A = np.array(cfg["matrix"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"matrix: {exc}") from exc
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
            raise ConfigError("matrix must be square and finite")
    else:
        n = _positive(cfg, "size", integer=True)
        rng = np.random.default_rng(cfg["seed"])
        A = np.diag(np.arange(1.0, n + 1)) + float(cfg["eps"]) * offdiag(rng.standard_normal((n, n)))
    res = diagonalize_kolmogorov(A, tol=_positive(cfg, "tol"), maxiter=_positive(cfg, "maxiter", integer=True))
    _write_text(out, "report.csv", res.report.to_csv())
    _write_json(out, "result.json", {"eigenvalues": np.diag(res.D).real.tolist(), "g": res.g.real.tolist(),
                                     "report": res.report.as_dict()})
    print(f"{res.report.steps} iterations, order {res.report.order:.3f}")
    return EXIT_OK


def _schedule(cfg) -> ScaleSchedule:
    try:
        return ScaleSchedule(s0=float(cfg["s0"]), l=float(cfg["l"]))
    except (sr.DomainError, ValueError, TypeError) as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def cmd_kam(cfg, out: Path) -> int:
    d = _hamiltonian_dict(cfg)
    try:
        H = TorusHamiltonian.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"hamiltonian: {exc}") from exc
    res = kam_run(H, t_value_scale=_positive(cfg, "t_value_scale"), schedule=_schedule(cfg),
                  tol=_positive(cfg, "tol"), maxiter=_positive(cfg, "maxiter", integer=True),
                  nu=_positive(cfg, "nu"), q=float(cfg["q"]))
    _write_text(out, "report.csv", res.report.to_csv())
    _write_json(out, "result.json", {"hamiltonian": H.as_dict(), "result": res.as_dict()})
    print(f"{res.report.steps} iterations, residual {res.residual_norm:.3e}")
    return EXIT_OK


def cmd_kam_singular(cfg, out: Path) -> int:
    d = _hamiltonian_dict(cfg)
    try:
        H = SingularHamiltonian.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"hamiltonian: {exc}") from exc
    res = kam_singular_run(H, schedule=_schedule(cfg), tol=_positive(cfg, "tol"),
                           maxiter=_positive(cfg, "maxiter", integer=True),
                           divisor_floor=float(cfg["divisor_floor"]), q=float(cfg["q"]))
    _write_text(out, "report.csv", res.report.to_csv())
    _write_json(out, "result.json", {"hamiltonian": H.as_dict(), "result": res.as_dict()})
    print(f"{res.report.steps} iterations, residual {res.residual_norm:.3e}")
    return EXIT_OK


COMMANDS = {"diophantine": cmd_diophantine, "measure": cmd_measure, "certify": cmd_certify,
            "diagonalize": cmd_diagonalize, "kam": cmd_kam, "kam-singular": cmd_kam_singular}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kamkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file overriding the defaults")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        cfg = load_config(args.command, args.config, args.seed)
        if args.print_config:
            print(json.dumps(cfg, sort_keys=True, indent=2))
            return EXIT_OK
        return COMMANDS[args.command](cfg, Path(args.out))
    except ResonanceError as exc:
        print(f"resonance: {exc}", file=sys.stderr)
        return EXIT_RESONANCE
    except NonDegeneracyError as exc:
        print(f"non-degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, sr.DomainError, ValueError, TypeError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
