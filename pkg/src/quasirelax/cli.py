"""Command-line entry point: strict config parsing and result emission.

Every run writes ``result.json`` (machine summary, deterministic: no
wall-clock or RNG content), one or more CSV tables, an ``effective-config.cfg``
echo of the fully defaulted configuration, and a human-readable
``report.txt``. Exit codes: 0 success, 2 precondition or predicate failure
(witness lands in result.json), 1 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import envelope as envelope_mod
from . import gamma as gamma_mod
from . import integrand as integrand_mod
from . import oracle as oracle_mod
from . import reduction as reduction_mod
from .errors import InvalidArgumentError, PreconditionError, QuasirelaxError
from .matspace import MatBox

INF = math.inf

COMMANDS = ("envelope", "reduce", "membrane", "gamma-probe", "check", "oracle-fixtures")

_INTEGRAND_KEYS = {"family", "expr", "dims", "p", "a", "b", "c0", "delta", "hint"}

_PARAM_KEYS = {
    "envelope": {"half_width", "resolution", "directions", "tol", "max_iter", "mesh_k",
                 "z_restarts", "z_iters", "query", "write_grid"},
    "reduce": {"query", "width_factor", "levels", "coarse_n"},
    "membrane": {"query", "half_width", "resolution", "directions", "tol", "max_iter",
                 "mesh_k", "z_restarts", "z_iters"},
    "check": {"samples", "half_width", "resolution", "growth_alpha", "growth_delta"},
    "gamma-probe": {"xi", "n", "q", "epsilons", "kappa", "keep", "passes",
                    "mem_half_width", "mem_resolution", "mem_tol"},
    "oracle-fixtures": set(),
}

_DEFAULTS = {
    "envelope": {"half_width": "2", "resolution": "17", "directions": "12", "tol": "1e-4",
                 "max_iter": "400", "mesh_k": "4", "z_restarts": "20", "z_iters": "60",
                 "write_grid": "false"},
    "reduce": {"width_factor": "4", "levels": "3", "coarse_n": "9"},
    "membrane": {"half_width": "1.5", "resolution": "5", "directions": "12", "tol": "1e-3",
                 "max_iter": "200", "mesh_k": "2", "z_restarts": "6", "z_iters": "40"},
    "check": {"samples": "4096", "half_width": "2", "resolution": "5",
              "growth_alpha": "", "growth_delta": ""},
    "gamma-probe": {"n": "16", "q": "4", "epsilons": "0.2 0.1 0.05 0.025 0.0125 0.00625",
                    "kappa": "0", "keep": "3", "passes": "40",
                    "mem_half_width": "1.5", "mem_resolution": "5", "mem_tol": "1e-3"},
    "oracle-fixtures": {},
}


def _parse_matrix(text: str, m: int, n: int) -> np.ndarray:
    vals = [float(x) for x in text.replace(",", " ").split()]
    if len(vals) != m * n:
        raise InvalidArgumentError(f"expected {m * n} entries for a {m}x{n} matrix, got {len(vals)}")
    return np.asarray(vals).reshape(m, n)


def _parse_matrices(text: str, m: int, n: int) -> list[np.ndarray]:
    return [_parse_matrix(part, m, n) for part in text.split(";") if part.strip()]


def _build_integrand(section: dict):
    unknown = set(section) - _INTEGRAND_KEYS
    if unknown:
        raise InvalidArgumentError(f"unknown integrand keys: {sorted(unknown)}")
    dims = section.get("dims", "2x2")
    try:
        m, n = (int(x) for x in dims.lower().split("x"))
    except ValueError as exc:
        raise InvalidArgumentError(f"bad dims {dims!r}, expected like 3x3") from exc
    p = float(section.get("p", "2"))
    if "expr" in section:
        return integrand_mod.from_expression(section["expr"].strip('"'), m, n, p,
                                             hint=section.get("hint"))
    family = section.get("family")
    if family is None:
        raise InvalidArgumentError("integrand section needs either family or expr")
    family = family.strip().lower()
    if family == "quad":
        a = _parse_matrix(section["a"], m, n) if "a" in section else None
        return integrand_mod.quad(m, n, p, a, float(section.get("c0", "0")))
    if family == "double_well":
        a = _parse_matrix(section["a"], m, n) if "a" in section else None
        b = _parse_matrix(section["b"], m, n) if "b" in section else None
        return integrand_mod.double_well(m, n, p, a, b)
    if family == "kohn_strang":
        return integrand_mod.kohn_strang(m, n)
    if family == "neohookean_sdc":
        return integrand_mod.neohookean_sdc(m, p)
    if family == "wdc_capped":
        return integrand_mod.wdc_capped(float(section["delta"]), m, p)
    raise InvalidArgumentError(f"unknown family {family!r}")


def _load_config(path: str, command: str, overrides: list[str]):
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise PreconditionError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(cfg_path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise PreconditionError(f"config parse error: {exc}") from exc

    known_sections = {"integrand", "params", "output"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise InvalidArgumentError(f"unknown config sections: {sorted(unknown)}")

    integrand_sec = dict(parser["integrand"]) if parser.has_section("integrand") else {}
    params = dict(_DEFAULTS[command])
    params.update(dict(parser["params"]) if parser.has_section("params") else {})
    output = dict(parser["output"]) if parser.has_section("output") else {}

    for item in overrides:
        if "=" not in item:
            raise InvalidArgumentError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if "." in key:
            sec, key2 = key.split(".", 1)
            if sec == "integrand":
                integrand_sec[key2] = value
            elif sec == "params":
                params[key2] = value
            elif sec == "output":
                output[key2] = value
            else:
                raise InvalidArgumentError(f"unknown override section {sec!r}")
        else:
            params[key] = value

    allowed = _PARAM_KEYS[command]
    bad = {k for k in params if k not in allowed}
    if bad:
        raise InvalidArgumentError(
            f"unknown parameter keys for {command}: {sorted(bad)} (allowed: {sorted(allowed)})"
        )
    return integrand_sec, params, output


def _enc(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _run_envelope(w, params, threads: int):
    if "query" not in params or not params["query"].strip():
        raise PreconditionError("envelope needs at least one query matrix")
    box = MatBox(np.zeros((w.m, w.n)), float(params["half_width"]), int(params["resolution"]))
    ep = envelope_mod.EnvelopeParams(
        box=box,
        direction_budget=int(params["directions"]),
        tol=float(params["tol"]),
        max_iter=int(params["max_iter"]),
        mesh_k=int(params["mesh_k"]),
        z_restarts=int(params["z_restarts"]),
        z_iters=int(params["z_iters"]),
    )
    shared: dict = {}
    queries = _parse_matrices(params["query"], w.m, w.n)
    # first call fills the shared grid cache; the rest only read it, so the
    # per-query work parallelizes without changing any value
    reports = [envelope_mod.qw_bracket(w, queries[0], ep, _shared=shared)]
    rest = queries[1:]
    if rest:
        workers = threads if threads > 0 else None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports += list(pool.map(
                lambda q: envelope_mod.qw_bracket(w, q, ep, _shared=shared), rest
            ))
    data = {"queries": [r.to_dict() for r in reports]}
    csv_rows = [
        ["query", "lower", "upper", "raw", "lamination", "z_estimate", "convex_lower", "width"]
    ]
    for r in reports:
        csv_rows.append(
            [" ".join(repr(float(x)) for x in np.asarray(r.query_point).ravel()),
             _enc(r.lower), _enc(r.upper), _enc(r.methods["raw"]),
             _enc(r.methods["lamination"]), _enc(r.methods["z_estimate"]),
             _enc(r.methods["convex_lower"]), _enc(r.width())]
        )
    files = {"brackets.csv": csv_rows}
    if params["write_grid"].lower() in ("1", "true", "yes"):
        files["envelope_grid"] = ("gridfn", shared["envelope"])
    lines = [f"envelope bracket at {r.query_point.ravel().tolist()}: "
             f"[{r.lower}, {r.upper}] (raw {r.methods['raw']})" for r in reports]
    return data, files, lines, 0


def _run_reduce(w, params):
    if "query" not in params or not params["query"].strip():
        raise PreconditionError("reduce needs at least one 3x2 query matrix")
    search = reduction_mod.ZetaSearch(
        width_factor=float(params["width_factor"]),
        levels=int(params["levels"]),
        coarse_n=int(params["coarse_n"]),
    )
    rows = [["xi", "value", "zeta"]]
    values = []
    for xi in _parse_matrices(params["query"], 3, 2):
        val, zeta = reduction_mod.reduce_w0_full(w, xi, search)
        values.append({
            "xi": xi.ravel().tolist(),
            "value": _enc(val),
            "zeta": None if zeta is None else zeta.tolist(),
        })
        rows.append([" ".join(repr(float(x)) for x in xi.ravel()), _enc(val),
                     "" if zeta is None else " ".join(repr(float(z)) for z in zeta)])
    lines = [f"reduce_w0 at {v['xi']}: {v['value']}" for v in values]
    return {"values": values}, {"reduce.csv": rows}, lines, 0


def _run_membrane(w, params):
    if "query" not in params or not params["query"].strip():
        raise PreconditionError("membrane needs at least one 3x2 query matrix")
    mp = reduction_mod.MembraneParams(
        half_width=float(params["half_width"]),
        resolution=int(params["resolution"]),
        direction_budget=int(params["directions"]),
        tol=float(params["tol"]),
        max_iter=int(params["max_iter"]),
        mesh_k=int(params["mesh_k"]),
        z_restarts=int(params["z_restarts"]),
        z_iters=int(params["z_iters"]),
    )
    reports = [reduction_mod.membrane_energy(w, xi, mp)
               for xi in _parse_matrices(params["query"], 3, 2)]
    rows = [["xi", "lower", "upper", "w0", "width"]]
    for r in reports:
        rows.append([" ".join(repr(float(x)) for x in r.query_point.ravel()),
                     _enc(r.lower), _enc(r.upper), _enc(r.methods["raw"]), _enc(r.width())])
    lines = [f"membrane bracket at {r.query_point.ravel().tolist()}: [{r.lower}, {r.upper}]"
             for r in reports]
    return {"queries": [r.to_dict() for r in reports]}, {"membrane.csv": rows}, lines, 0


def _run_check(w, params):
    box = MatBox(np.zeros((w.m, w.n)), float(params["half_width"]), int(params["resolution"]))
    samples = int(params["samples"])
    reports = [integrand_mod.check_coercivity(w, box, samples)]
    classify = integrand_mod.classify_constraint(w, box, samples)
    reports.append(classify)
    if params["growth_alpha"].strip():
        alpha = float(params["growth_alpha"])
        if (w.m, w.n) == (3, 2):
            reports.append(integrand_mod.check_growth_P(w, alpha, w.p, box, samples))
        else:
            reports.append(integrand_mod.check_growth_D(w, alpha, w.p, box, samples))
    if params["growth_delta"].strip():
        reports.append(integrand_mod.check_growth_D2(w, float(params["growth_delta"]),
                                                     w.p, box, samples))
    rows = [["predicate", "verdict", "details", "constants"]]
    for r in reports:
        rows.append([r.predicate_id, r.verdict, r.details,
                     " ".join(f"{k}={_enc(v)}" for k, v in sorted(r.constants.items()))])
    data = {
        "reports": [r.to_dict() for r in reports],
        "constraint_class": classify.details if classify.holds else None,
    }
    failed = any(not r.holds and r.verdict == integrand_mod.FAILS for r in reports)
    lines = [f"{r.predicate_id}: {r.verdict} {r.details}".strip() for r in reports]
    return data, {"checks.csv": rows}, lines, 2 if failed else 0


def _run_gamma(w, params):
    if "xi" not in params or not params["xi"].strip():
        raise PreconditionError("gamma-probe needs the planar gradient xi (3x2)")
    xi = _parse_matrix(params["xi"], 3, 2)
    cfg = gamma_mod.ThinFilmConfig(
        n=int(params["n"]),
        q=int(params["q"]),
        epsilons=tuple(float(x) for x in params["epsilons"].replace(",", " ").split()),
    )
    mp = reduction_mod.MembraneParams(
        half_width=float(params["mem_half_width"]),
        resolution=int(params["mem_resolution"]),
        tol=float(params["mem_tol"]),
    )
    gp = gamma_mod.GammaParams(
        kappa=int(params["kappa"]),
        keep=int(params["keep"]),
        passes=int(params["passes"]),
        membrane=mp,
    )
    psi = gamma_mod.affine_planar_field(xi, cfg.n)
    result = gamma_mod.gamma_probe(w, psi, cfg, gp)
    rows = [["epsilon", "best_energy", "target", "gap"]]
    for e, b, g in zip(result.epsilons, result.best_energies, result.gaps):
        rows.append([repr(e), _enc(b), _enc(result.target), _enc(g)])
    lines = [f"eps={e}: best={b} target={result.target} gap={g}"
             for e, b, g in zip(result.epsilons, result.best_energies, result.gaps)]
    return {"probe": result.to_dict()}, {"probe.csv": rows}, lines, 0


def _run_fixtures(params):
    records = oracle_mod.generate_fixtures()
    rows = [["operation", "value"]] + [[r["operation"], r["value"]] for r in records]
    lines = [f"{r['operation']}: {r['value']}" for r in records]
    return {"fixtures": records}, {"fixtures.csv": rows, "fixtures.json": ("json", records)}, lines, 0


def _emit(outdir: Path, command: str, integrand_sec, params, data, files, lines, status, error):
    outdir.mkdir(parents=True, exist_ok=True)
    result = {
        "command": command,
        "status": status,
        "error": error,
        "data": data,
    }
    (outdir / "result.json").write_text(
        json.dumps(result, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8"
    )
    for name, payload in (files or {}).items():
        if isinstance(payload, tuple) and payload[0] == "gridfn":
            envelope_mod.gridfn_to_csv(payload[1], outdir / "envelope_grid.csv")
        elif isinstance(payload, tuple) and payload[0] == "json":
            (outdir / name).write_text(
                json.dumps(payload[1], indent=2, sort_keys=True, allow_nan=False) + "\n",
                encoding="utf-8",
            )
        else:
            text = "\n".join(",".join(str(c) for c in row) for row in payload)
            (outdir / name).write_text(text + "\n", encoding="utf-8")
    echo = configparser.ConfigParser(interpolation=None)
    if integrand_sec:
        echo["integrand"] = {k: str(v) for k, v in integrand_sec.items()}
    echo["params"] = {k: str(v) for k, v in params.items()}
    with (outdir / "effective-config.cfg").open("w", encoding="utf-8") as fh:
        echo.write(fh)
    (outdir / "report.txt").write_text(
        "\n".join([f"command: {command}", f"status: {status}"] + (lines or [])) + "\n",
        encoding="utf-8",
    )


def run(command: str, config_path: str, overrides: list[str] | None = None,
        out_dir: str | None = None, threads: int = 0) -> int:
    """Execute one command; returns the process exit code."""
    overrides = overrides or []
    integrand_sec, params, output = {}, dict(_DEFAULTS.get(command, {})), {}
    data: dict = {}
    files: dict = {}
    lines: list[str] = []
    status, error, code = "ok", None, 0
    try:
        if command not in COMMANDS:
            raise InvalidArgumentError(f"unknown command {command!r}; known: {COMMANDS}")
        integrand_sec, params, output = _load_config(config_path, command, overrides)
        w = None
        if command != "oracle-fixtures":
            if not integrand_sec:
                raise PreconditionError("config is missing the [integrand] section")
            w = _build_integrand(integrand_sec)
        if command == "envelope":
            data, files, lines, code = _run_envelope(w, params, threads)
        elif command == "reduce":
            data, files, lines, code = _run_reduce(w, params)
        elif command == "membrane":
            data, files, lines, code = _run_membrane(w, params)
        elif command == "check":
            data, files, lines, code = _run_check(w, params)
        elif command == "gamma-probe":
            data, files, lines, code = _run_gamma(w, params)
        else:
            data, files, lines, code = _run_fixtures(params)
        if code == 2:
            status = "predicate-failed"
    except (InvalidArgumentError, PreconditionError) as exc:
        status = "precondition-failed"
        witness = getattr(exc, "witness", None)
        error = {"kind": exc.kind, "message": str(exc),
                 "witness": None if witness is None else np.asarray(witness).ravel().tolist()}
        code = 2
    except QuasirelaxError as exc:
        status = "error"
        error = {"kind": exc.kind, "message": str(exc), "witness": None}
        code = 1
    except Exception as exc:  # pragma: no cover - defensive
        status = "error"
        error = {"kind": "internal-error", "message": f"{type(exc).__name__}: {exc}",
                 "witness": None}
        code = 1
    outdir = Path(out_dir or output.get("dir", "quasirelax-out"))
    _emit(outdir, command, integrand_sec, params, data, files, lines, status, error)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="quasirelax",
        description="Quasiconvex envelope brackets, membrane reduction, and thin-film probes",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to the INI-style run configuration")
    ap.add_argument("--override", action="append", default=[], metavar="K=V",
                    help="override a params key (or integrand.K / output.K); repeatable")
    ap.add_argument("--threads", type=int, default=0,
                    help="cap worker threads (0 = machine parallelism)")
    ap.add_argument("--out", default=None, help="output directory (default from config)")
    args = ap.parse_args(argv)
    return run(args.command, args.config, args.override, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
