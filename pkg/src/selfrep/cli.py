"""Command-line front end.

Each subcommand takes a JSON config (``--config``) and flag overrides; flags
win.  Every key is validated before any simulation starts and unknown keys
are rejected.  A run writes ``config.json`` (the resolved config),
``report.json`` (deterministic), ``meta.json`` (timestamp and backend) and CSV
files with raw samples into the output directory.

Exit codes: 0 pass, 1 statistical failure, 2 configuration error, 3 numerical
failure (a run that could not complete, or too many discarded replicas).
"""
import argparse
import datetime
import json
import math
import os
import sys

import numpy as np

from . import __version__
from ._accel import backend
from .flow import GridExhausted, NotConverged

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


# ---------------------------------------------------------------------------
# parameter schema

def _float(key, v):
    if isinstance(v, bool):
        raise ConfigError(key, "expected a number")
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {v!r}") from None
    if not math.isfinite(f):
        raise ConfigError(key, "must be finite")
    return f


def _int(key, v):
    if isinstance(v, bool):
        raise ConfigError(key, "expected an integer")
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected an integer, got {v!r}") from None
    if not f.is_integer():
        raise ConfigError(key, f"expected an integer, got {v!r}")
    return int(f)


def _list(conv):
    def parse(key, v):
        if isinstance(v, str):
            v = [s for s in v.split(",") if s.strip()]
        if not isinstance(v, (list, tuple)) or not v:
            raise ConfigError(key, "expected a non-empty list")
        return [conv(key, x) for x in v]
    return parse


def _bool(key, v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("1", "true", "yes", "0", "false", "no"):
        return v.lower() in ("1", "true", "yes")
    raise ConfigError(key, f"expected a boolean, got {v!r}")


def _profile(key, v):
    """``{"kind": "constant", "value", "left", "right", "spacing"}`` or
    ``{"kind": "table", "x_left", "spacing", "values"}`` (values of lam0)."""
    from .diffusion import OccupationProfile
    if isinstance(v, str):
        try:
            v = json.loads(v)
        except json.JSONDecodeError as e:
            raise ConfigError(key, f"invalid JSON: {e}") from None
    if not isinstance(v, dict):
        raise ConfigError(key, "expected an object")
    kind = v.get("kind", "constant")
    allowed = {"constant": {"kind", "value", "left", "right", "spacing"},
               "table": {"kind", "x_left", "spacing", "values"}}
    if kind not in allowed:
        raise ConfigError(key, f"unknown profile kind {kind!r}")
    extra = set(v) - allowed[kind]
    if extra:
        raise ConfigError(f"{key}.{sorted(extra)[0]}", "unknown key")
    try:
        if kind == "constant":
            return OccupationProfile.constant(_float(f"{key}.value", v.get("value", 1.0)),
                                              _float(f"{key}.left", v.get("left", -4.0)),
                                              _float(f"{key}.right", v.get("right", 4.0)),
                                              _float(f"{key}.spacing", v.get("spacing", 0.01)))
        for k in ("x_left", "spacing", "values"):
            if k not in v:
                raise ConfigError(f"{key}.{k}", "missing required key")
        vals = np.array(_list(_float)(f"{key}.values", v["values"]))
        if np.any(vals < 0):
            raise ConfigError(f"{key}.values", "values must be >= 0")
        return OccupationProfile.from_roots(_float(f"{key}.x_left", v["x_left"]),
                                            _float(f"{key}.spacing", v["spacing"]), np.sqrt(vals))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(key, str(e)) from None


def _choice(*opts):
    def parse(key, v):
        if v not in opts:
            raise ConfigError(key, f"must be one of {list(opts)}")
        return v
    return parse


REQUIRED = object()

_COMMON = {"seed": (_int, REQUIRED), "threads": (_int, None)}
_FLOW = {"u_horizon": (_float, 20.0), "du": (_float, 1e-4), "y_spacing": (_float, 0.01)}
_DEFAULT_PROFILE = {"kind": "constant", "value": 1.0, "left": -4.0, "right": 4.0, "spacing": 0.01}

SCHEMAS = {
    "simulate-flow": {**_COMMON, **_FLOW, "half_width": (_float, 6.0), "rec_stride": (_int, 100),
                      "dump_flow": (_bool, False)},
    "simulate-diffusion": {**_COMMON, **_FLOW, "profile": (_profile, _DEFAULT_PROFILE),
                           "x0": (_float, 0.0), "eps": (_float, 0.0),
                           "t_query": (_list(_float), [0.1]), "rec_stride": (_int, 1)},
    "simulate-discrete": {**_COMMON, "profile": (_profile, _DEFAULT_PROFILE),
                          "level": (_int, 6), "eps": (_float, 0.1),
                          "rule": (_choice("last", "first"), "last"),
                          "stop_on_boundary": (_bool, False)},
    "verify-rk": {**_COMMON, "a": (_float, 1.0), "level": (_int, 6),
                  "sites": (_list(_float), [0.25, 0.5, 1.0]), "replicas": (_int, 10_000),
                  "alpha": (_float, 0.01)},
    "verify-inversion": {**_COMMON, "a": (_float, 1.0), "level": (_int, 6),
                         "replicas": (_int, 5000), "alpha": (_float, 0.01),
                         "u_horizon": (_float, 20.0), "du": (_float, 1e-4),
                         "unreversed": (_bool, True)},
    "converge": {**_COMMON, "profile": (_profile, _DEFAULT_PROFILE), "x0": (_float, 0.0),
                 "eps": (_float, 0.1), "levels": (_list(_int), [3, 5, 7]),
                 "replicas": (_int, 4000), "t_fixed": (_float, 0.2), "alpha": (_float, 0.01),
                 "u_horizon": (_float, 20.0), "du": (_float, 1e-4)},
    "cross-rep": {**_COMMON, "a": (_float, 1.0), "level": (_int, 6),
                  "target": (_profile, {"kind": "constant", "value": 1.0, "left": -40.0,
                                        "right": 40.0, "spacing": 0.01}),
                  "replicas": (_int, 5000), "t_fixed": (_float, 0.1), "alpha": (_float, 0.01),
                  "u_horizon": (_float, 20.0), "du": (_float, 1e-4)},
    "selftest": {"seed": (_int, 0)},
}

_POSITIVE = {"du", "y_spacing", "u_horizon", "half_width", "rec_stride", "replicas",
             "t_fixed", "a"}


def resolve_config(command, file_cfg, overrides):
    """Merge file config and flag overrides, validate and fill defaults."""
    schema = SCHEMAS[command]
    merged = dict(file_cfg or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    for key in merged:
        if key not in schema:
            raise ConfigError(key, "unknown key")
    out, raw = {}, {}
    for key, (conv, default) in schema.items():
        if key in merged:
            val = merged[key]
        elif default is REQUIRED:
            raise ConfigError(key, "missing required key")
        else:
            val = default
        out[key] = conv(key, val) if val is not None else None
        if conv is _profile:
            raw[key] = json.loads(val) if isinstance(val, str) else val
        else:
            raw[key] = out[key]
    for key in _POSITIVE & out.keys():
        if out[key] is not None and not out[key] > 0:
            raise ConfigError(key, "must be positive")
    if "alpha" in out and not 0 < out["alpha"] < 1:
        raise ConfigError("alpha", "must lie in (0, 1)")
    if "eps" in out and out["eps"] < 0:
        raise ConfigError("eps", "must be >= 0")
    if command in ("simulate-discrete", "converge") and not out["eps"] > 0:
        raise ConfigError("eps", "must be positive")
    if out.get("seed") is not None and out["seed"] < 0:
        raise ConfigError("seed", "must be >= 0")
    if out.get("threads") is not None and out["threads"] < 1:
        raise ConfigError("threads", "must be >= 1")
    for key in ("level",):
        if key in out and not 0 <= out[key] <= 20:
            raise ConfigError(key, "must lie in 0..20")
    if "levels" in out and (sorted(set(out["levels"])) != out["levels"]
                            or not 0 <= out["levels"][0] <= out["levels"][-1] <= 20):
        raise ConfigError("levels", "must be distinct increasing integers in 0..20")
    if "replicas" in out and out["replicas"] < 50:
        raise ConfigError("replicas", "need at least 50")
    raw.pop("threads", None)  # does not affect results
    return out, raw


# ---------------------------------------------------------------------------
# output

def _dump_json(obj):
    from .stats import _jsonable
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


class RunDir:
    def __init__(self, path):
        self.path = path
        os.makedirs(path, exist_ok=True)

    def write(self, name, text):
        with open(os.path.join(self.path, name), "w", newline="\n") as fh:
            fh.write(text)

    def open(self, name):
        return open(os.path.join(self.path, name), "w", newline="\n")


def _write_samples(run, samples):
    for name, arr in samples.items():
        a = np.atleast_2d(np.asarray(arr, dtype=float).T).T
        safe = "".join(c if c.isalnum() else "_" for c in name)
        with run.open(f"samples_{safe}.csv") as fh:
            fh.write(",".join(f"c{j}" for j in range(a.shape[1])) + "\n")
            for row in a:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _finish_experiment(run, exp, print_fn):
    run.write("report.json", _dump_json(exp.to_dict()))
    _write_samples(run, exp.samples)
    for r in exp.reports:
        print_fn(r.line())
    for k, v in exp.extra_checks.items():
        print_fn(f"{'PASS' if v else 'FAIL'} {k}")
    if "discard_rate_ok" in exp.extra_checks and not exp.extra_checks["discard_rate_ok"]:
        return EXIT_NUMERIC
    return EXIT_OK if exp.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# commands

def _cmd_simulate_flow(cfg, run, out):
    from .flow import STATUS_OK, evolve_flow, flow_local_times, flow_trace, sample_driver
    h = cfg["y_spacing"]
    m = int(round(2 * cfg["half_width"] / h)) + 1
    y = -cfg["half_width"] + h * np.arange(m)
    n = int(round(cfg["u_horizon"] / cfg["du"]))
    driver = sample_driver(cfg["du"], n, cfg["seed"])
    tr = flow_trace(n, cfg["du"], y, increments=np.diff(driver.values),
                    rec_stride=cfg["rec_stride"])
    if cfg["dump_flow"]:
        # full matrices: one row per recorded step, one column per line
        fl = evolve_flow(driver, y, snapshot_every=cfg["rec_stride"])
        lt = flow_local_times(fl).values
        for name, mat in (("flow_psi.csv", fl.psi), ("flow_local_time.csv", lt)):
            with run.open(name) as fh:
                fh.write("u," + ",".join(repr(v) for v in y.tolist()) + "\n")
                for u, row in zip(fl.u.tolist(), mat.tolist()):
                    fh.write(repr(u) + "," + ",".join(repr(v) for v in row) + "\n")
    report = {"status": int(tr.status), "u_end": tr.k_end * tr.du, "xi_end": tr.xi_end,
              "xi_min": tr.xi_min, "xi_max": tr.xi_max, "t_total": tr.t_total}
    run.write("report.json", _dump_json(report))
    with run.open("trace.csv") as fh:
        fh.write("u,xi,local_time\n")
        for u, xi, lt in zip(tr.rec_u.tolist(), tr.rec_xi.tolist(), tr.rec_local_time.tolist()):
            fh.write(f"{u!r},{xi!r},{lt!r}\n")
    with run.open("final_flow.csv") as fh:
        fh.write("y,psi\n")
        for a, b in zip(tr.y.tolist(), tr.final_psi.tolist()):
            fh.write(f"{a!r},{b!r}\n")
    out(f"status={report['status']} xi_end={tr.xi_end:.6g}")
    return EXIT_OK if tr.status == STATUS_OK else EXIT_NUMERIC


def _cmd_simulate_diffusion(cfg, run, out):
    from .diffusion import build_diffusion
    tr = build_diffusion(cfg["profile"], cfg["x0"], cfg["u_horizon"], cfg["du"], cfg["seed"],
                         y_spacing=cfg["y_spacing"], eps=cfg["eps"], t_query=cfg["t_query"],
                         rec_stride=cfg["rec_stride"])
    rep = tr.summary()
    rep["query"] = {"t": list(cfg["t_query"]), "x": tr.query_x}
    run.write("report.json", _dump_json(rep))
    with run.open("trajectory.csv") as fh:
        tr.to_csv(fh)
    out(f"T={tr.T_total:.6g} x_end={tr.x_end:.6g} converged={tr.converged}")
    return EXIT_OK if tr.converged and not tr.boundary_hit else EXIT_NUMERIC


def _cmd_simulate_discrete(cfg, run, out):
    from .discrete import run_lattice_selfrep
    log = run_lattice_selfrep(cfg["level"], cfg["profile"], cfg["eps"], cfg["seed"],
                              rule=cfg["rule"], stop_on_boundary=cfg["stop_on_boundary"])
    rep = log.summary()
    rep["exhaustion_time"] = log.exhaustion_time(cfg["eps"], cfg["rule"])
    run.write("report.json", _dump_json(rep))
    with run.open("events.csv") as fh:
        log.to_csv(fh)
    out(f"events={rep.get('n_events')} exhaustion_time={rep['exhaustion_time']:.6g}")
    return EXIT_NUMERIC if log.warnings else EXIT_OK


def _cmd_verify_rk(cfg, run, out):
    from .experiments import verify_ray_knight
    exp = verify_ray_knight(cfg["a"], cfg["level"], tuple(cfg["sites"]), cfg["replicas"],
                            cfg["seed"], cfg["alpha"], cfg["threads"])
    return _finish_experiment(run, exp, out)


def _cmd_verify_inversion(cfg, run, out):
    from .experiments import verify_inversion
    exp = verify_inversion(cfg["a"], cfg["level"], cfg["replicas"], cfg["seed"], cfg["alpha"],
                           cfg["u_horizon"], cfg["du"], cfg["threads"], cfg["unreversed"])
    return _finish_experiment(run, exp, out)


def _cmd_converge(cfg, run, out):
    from .experiments import convergence_study
    exp = convergence_study(cfg["profile"], cfg["x0"], cfg["eps"], tuple(cfg["levels"]),
                            cfg["replicas"], cfg["seed"], cfg["t_fixed"], cfg["alpha"],
                            cfg["u_horizon"], cfg["du"], cfg["threads"])
    return _finish_experiment(run, exp, out)


def _cmd_cross_rep(cfg, run, out):
    from .experiments import verify_cross_representation
    exp = verify_cross_representation(cfg["a"], cfg["target"], cfg["level"], cfg["replicas"],
                                      cfg["seed"], cfg["t_fixed"], cfg["alpha"],
                                      cfg["u_horizon"], cfg["du"], cfg["threads"])
    return _finish_experiment(run, exp, out)


def _cmd_selftest(cfg, run, out):
    from .selftest import run_selftest
    results = run_selftest(cfg["seed"])
    run.write("report.json", _dump_json(results))
    for name, ok in results.items():
        out(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(results.values()) else EXIT_FAIL


COMMANDS = {
    "simulate-flow": _cmd_simulate_flow,
    "simulate-diffusion": _cmd_simulate_diffusion,
    "simulate-discrete": _cmd_simulate_discrete,
    "verify-rk": _cmd_verify_rk,
    "verify-inversion": _cmd_verify_inversion,
    "converge": _cmd_converge,
    "cross-rep": _cmd_cross_rep,
    "selftest": _cmd_selftest,
}


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


def build_parser():
    p = _Parser(prog="selfrep", description="Self-repelling diffusion simulations and checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory (default: $SELFREP_OUTDIR or ./selfrep-out/<command>)")
        for key in schema:
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    return p


def run(argv=None, stdout=None):
    stdout = stdout or sys.stdout

    def out(line):
        print(line, file=stdout, flush=True)

    try:
        args = build_parser().parse_args(argv)
        file_cfg = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    file_cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError("config", str(e)) from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config", "top level must be an object")
        overrides = {k: getattr(args, k) for k in SCHEMAS[args.command]}
        cfg, raw = resolve_config(args.command, file_cfg, overrides)
        if cfg.get("threads") is None and "threads" in cfg:
            env = os.environ.get("SELFREP_THREADS")
            cfg["threads"] = _int("SELFREP_THREADS", env) if env else None
        outdir = args.out or os.environ.get("SELFREP_OUTDIR") or os.path.join("selfrep-out", args.command)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    rd = RunDir(outdir)
    rd.write("config.json", _dump_json({"command": args.command, **raw}))
    rd.write("meta.json", _dump_json({
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "backend": backend(), "version": __version__}))
    try:
        return COMMANDS[args.command](cfg, rd, out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (GridExhausted, NotConverged, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
