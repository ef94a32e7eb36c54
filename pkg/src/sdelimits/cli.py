"""Config-driven experiment runner.

Exit codes: 0 all invariant checks passed, 1 an invariant check failed,
2 config/schema error, 3 assumption verifier failed in strict mode.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import numpy as np
import yaml

from . import __version__
from .coupling import build_diffusion_split, estimate_contraction, simulate_coupled
from .errors import ConfigError, SdeLimitsError
from .integrate import TimeGrid
from .limits import (
    InvariantConfig,
    clt_experiment,
    estimate_corrector,
    estimate_invariant_measure,
    estimate_phi_and_sigma_star,
    get_observable,
    lln_rate_experiment,
)
from .model import BUILTINS, _jsonable, get_builtin, list_builtins, verify_model
from .testfn import build_section2_f, build_section3_f, compute_lp_star, profile_from_model
from .transform import apply_transform, build_transform, certify_transformed_assumptions

log = logging.getLogger("sdelimits")

EXPERIMENTS = ("verify", "contraction", "testfn", "transform", "lln", "clt", "full")
REGIMES = ("holder_dissipative", "monotone_lyapunov", "piecewise")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_params = {"type": "object"}

SCHEMA: dict = {
    "type": "object",
    "required": ["model", "experiment", "grid", "ensemble"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "properties": {"name": {"type": "string", "enum": sorted(BUILTINS)},
                           "params": _params},
        },
        "regime": {"type": "string", "enum": list(REGIMES)},
        "experiment": {"type": "string", "enum": list(EXPERIMENTS)},
        "grid": {"type": "object", "required": ["dt", "horizon"], "additionalProperties": False,
                 "properties": {"dt": _pos, "horizon": _pos}},
        "ensemble": {"type": "object", "required": ["nPaths", "seed"],
                     "additionalProperties": False,
                     "properties": {"nPaths": _posint,
                                    "seed": {"type": "integer", "minimum": 0}}},
        "observable": {"type": "object", "required": ["name"], "additionalProperties": False,
                       "properties": {"name": {"type": "string"}, "params": _params}},
        "output": {"type": "string"},
        "x0": _num,
        "verify": {"type": "object", "additionalProperties": False,
                   "properties": {"nRandom": _posint, "radius": _pos}},
        "coupling": {"type": "object", "additionalProperties": False,
                     "properties": {"y0": _num, "yHat0": _num,
                                    "cost": {"type": "string", "enum": ["W1", "quasi"]},
                                    "p": _num, "theta": _num, "recordEvery": _posint,
                                    "transformed": {"type": "boolean"}}},
        "testfn": {"type": "object", "additionalProperties": False,
                   "properties": {"nGrid": _posint, "p": _num, "theta": _num, "rMax": _pos}},
        "transform": {"type": "object", "additionalProperties": False,
                      "properties": {"delta": _pos}},
        "invariant": {"type": "object", "additionalProperties": False,
                      "properties": {"nPaths": _posint, "horizon": _pos, "thin": _pos}},
        "lln": {"type": "object", "additionalProperties": False,
                "properties": {"tPoints": {"type": "array", "items": _pos, "minItems": 5},
                               "nPaths": _posint, "maxSlope": _num}},
        "corrector": {"type": "object", "additionalProperties": False,
                      "properties": {"points": {"type": "array", "items": _num, "minItems": 2},
                                     "nPaths": _posint, "horizon": _pos}},
        "clt": {"type": "object", "additionalProperties": False,
                "properties": {"tPoints": {"type": "array", "items": _pos, "minItems": 2},
                               "nPaths": {"type": "integer", "minimum": 1000},
                               "nInner": _posint, "maxDistance": _pos}},
    },
    "allOf": [
        {"if": {"properties": {"experiment": {"enum": ["lln", "clt", "full"]}}},
         "then": {"required": ["observable"]}},
    ],
}


class SchemaError(ConfigError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class StrictVerifierError(SdeLimitsError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as e:
        raise SchemaError("<file>", str(e)) from e
    except yaml.YAMLError as e:
        raise SchemaError("<document>", f"not valid YAML: {e}") from e
    validate_config(cfg)
    return cfg


def validate_config(cfg) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        p = "/".join(str(s) for s in e.absolute_path) or "<root>"
        raise SchemaError(p, e.message)
    entry = BUILTINS[cfg["model"]["name"]]
    reg = cfg.get("regime")
    if reg is not None and reg not in entry.regimes:
        raise SchemaError("regime", f"{reg!r} is not supported by model "
                                    f"{entry.name!r} (supports {list(entry.regimes)})")


def _seed(root: int, stage: int) -> int:
    return int(np.random.SeedSequence([root, stage]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class Runner:
    cfg: dict
    out: Path
    strict: bool = True
    threads: int = 1
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def __post_init__(self):
        c = self.cfg
        self.model = get_builtin(c["model"]["name"], c.get("regime"), **c["model"].get("params", {}))
        self.dt = float(c["grid"]["dt"])
        self.horizon = float(c["grid"]["horizon"])
        self.n_paths = int(c["ensemble"]["nPaths"])
        self.seed = int(c["ensemble"]["seed"])
        self.x0 = float(c.get("x0", 0.0))
        self._tm = None

    # ---- helpers
    def _check(self, name: str, ok: bool) -> None:
        self.checks[name] = bool(ok)

    def _artifact(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def transformed(self):
        if self._tm is None:
            if self.model.regime != "piecewise":
                raise ConfigError("transform requires a piecewise model")
            d = self.cfg.get("transform", {}).get("delta")
            self._tm = apply_transform(self.model, build_transform(self.model, d))
        return self._tm

    # ---- stages
    def verify(self) -> None:
        v = self.cfg.get("verify", {})
        from .model import default_sampler
        s = default_sampler(self.model, seed=_seed(self.seed, 1), n_random=v.get("nRandom", 2000),
                            radius=v.get("radius", 10.0))
        reps = verify_model(self.model, s)
        self.results["verify"] = [r.to_dict() for r in reps]
        bad = [r for r in reps if not r.passed]
        self._check("verify.allPassed", not bad)
        if bad:
            msg = "; ".join(f"{r.assumption_id} failed at witness {r.to_dict()['witness']} "
                            f"(violation {r.worst_violation:.3g})" for r in bad)
            if self.strict:
                raise StrictVerifierError(msg)
            log.warning(msg)

    def contraction(self):
        c = self.cfg.get("coupling", {})
        model = self.transformed() if c.get("transformed", False) else self.model
        y0, yh0 = float(c.get("y0", 2.0)), float(c.get("yHat0", -2.0))
        if model is self._tm and self._tm is not None:
            y0, yh0 = float(self._tm.G(np.array(y0))), float(self._tm.G(np.array(yh0)))
        grid = TimeGrid.from_horizon(self.horizon, self.dt)
        rec = int(c.get("recordEvery", max(1, grid.n_steps // 100)))
        pairs = simulate_coupled(model, build_diffusion_split(model), y0, yh0, grid,
                                 self.n_paths, _seed(self.seed, 2), record_every=rec,
                                 threads=self.threads)
        cost = "W1" if c.get("cost", "W1") == "W1" else ("quasi", c.get("p", 2), c.get("theta", 1))
        est = estimate_contraction(pairs, cost)
        res = est.to_dict()
        res["gluedFraction"] = pairs.glued_fraction()
        self.results["contraction"] = res
        ok = est.fitted_rate is not None and est.fitted_rate > 0
        self._check("contraction.positiveRate", ok or est.fully_coupled)
        with open(self._artifact("contraction.csv"), "w") as fh:
            fh.write("t,meanDistance,se,inFit\n")
            for t, m, s, k in zip(est.time_points, est.mean_distance, est.se, est.fit_mask):
                fh.write(f"{t!r},{m!r},{s!r},{int(k)}\n")
        pairs.to_csv(self._artifact("coupled_pairs.csv"))
        return est

    def testfn(self) -> None:
        t = self.cfg.get("testfn", {})
        n = int(t.get("nGrid", 2048))
        m = self.model
        if m.regime == "holder_dissipative":
            table = build_section2_f(profile_from_model(m), n_grid=n, r_max=t.get("rMax"))
            res = {"kind": table.kind, "certificates": table.certificates,
                   "boundConstants": table.bound_constants, "params": table.params}
            certs = table.certificates
        elif m.regime == "monotone_lyapunov":
            p, theta = float(t.get("p", 2.0)), float(t.get("theta", 1.0))
            lyap = compute_lp_star(m, p=p, r_max=float(t.get("rMax", 20.0)))
            b = build_section3_f(m.lam, m.K1, m.K2, m.kappa, m.alpha, theta, p, lyap, n_grid=n)
            table = b.f_table
            certs = {**b.f_table.certificates, **{"h." + k: v for k, v in
                                                  b.h_table.certificates.items()}}
            res = {"kind": table.kind, "lyapunov": lyap.__dict__, "constants": b.constants.to_dict(),
                   "certificates": certs}
        else:
            raise ConfigError("testfn needs a holder_dissipative or monotone_lyapunov regime")
        self.results["testfn"] = res
        self._check("testfn.certified", all(bool(v) for v in certs.values()
                                            if isinstance(v, (bool, np.bool_))))
        table.to_csv(self._artifact("testfn.csv"))

    def transform(self) -> None:
        tm = self.transformed()
        reps = certify_transformed_assumptions(tm)
        self.results["transform"] = {**tm.summary(), "verifiers": [r.to_dict() for r in reps]}
        certs = tm.certificates
        flags = [v for v in certs.values() if isinstance(v, (bool, np.bool_))]
        for v in certs.values():
            if isinstance(v, dict):
                flags += [w for w in v.values() if isinstance(w, (bool, np.bool_))]
        self._check("transform.certificates", all(flags))
        self._check("transform.verifiers", all(r.passed for r in reps))
        tm.to_json(self._artifact("transform.json"))

    def _observable(self):
        o = self.cfg["observable"]
        return get_observable(o["name"], **o.get("params", {}))

    def _mu(self, f, rate):
        inv = self.cfg.get("invariant", {})
        ims = estimate_invariant_measure(self.model, InvariantConfig(
            n_paths=int(inv.get("nPaths", 2000)), horizon=float(inv.get("horizon", 200.0)),
            dt=self.dt, thin=float(inv.get("thin", 10.0)), x0=self.x0,
            seed=_seed(self.seed, 3), rate=rate, observables={f.name: f}, threads=self.threads))
        self.results["invariant"] = ims.to_dict()
        self._check("invariant.nonDegenerate", not ims.degenerate)
        ims.to_csv(self._artifact("invariant_points.csv"))
        return ims

    def lln(self, f=None, ims=None) -> None:
        f = f or self._observable()
        if ims is None:
            ims = self._mu(f, None)
        c = self.cfg.get("lln", {})
        tp = c.get("tPoints", [2.0 ** k for k in range(4, 11)])
        rep = lln_rate_experiment(self.model, f, tp, int(c.get("nPaths", 256)), ims.mu_f[f.name],
                                  dt=self.dt, x0=self.x0, seed=_seed(self.seed, 4),
                                  threads=self.threads)
        self.results["lln"] = rep.to_dict()
        if rep.slope is not None:
            self._check("lln.slope", rep.slope <= float(c.get("maxSlope", 0.0)))
        rep.to_csv(self._artifact("lln.csv"))

    def clt(self, f=None, ims=None, est=None) -> None:
        f = f or self._observable()
        if est is None:
            est = self._rate_estimate()
        if ims is None:
            ims = self._mu(f, est.fitted_rate)
        mu = ims.mu_f[f.name]
        cc = self.cfg.get("corrector", {})
        pts = cc.get("points", list(np.arange(-5.0, 5.01, 0.5)))
        cor = estimate_corrector(self.model, f, pts, mu, est, horizon=cc.get("horizon"),
                                 n_paths=int(cc.get("nPaths", 4000)), dt=self.dt,
                                 seed=_seed(self.seed, 5), threads=self.threads)
        cor.to_csv(self._artifact("corrector.csv"))
        c = self.cfg.get("clt", {})
        ss = estimate_phi_and_sigma_star(self.model, f, ims.final_points, cor,
                                         n_inner=int(c.get("nInner", 8)), dt=self.dt,
                                         seed=_seed(self.seed, 6), threads=self.threads)
        self._check("clt.p2Identity", ss.consistent)
        self._check("clt.sigmaNonnegative", ss.sigma_star_sq >= -3 * ss.se)
        rep = clt_experiment(self.model, f, c.get("tPoints", [25.0, 100.0, 400.0]),
                             int(c.get("nPaths", 10000)), ss, mu, dt=self.dt, x0=self.x0,
                             seed=_seed(self.seed, 7), threads=self.threads)
        self.results["corrector"] = cor.to_dict()
        self.results["sigmaStar"] = ss.to_dict()
        self.results["clt"] = rep.to_dict()
        self._check("clt.decreasing", rep.ks_distance[-1] < rep.ks_distance[0])
        if "maxDistance" in c:
            self._check("clt.maxDistance", rep.ks_distance[-1] <= float(c["maxDistance"]))
        rep.to_csv(self._artifact("clt.csv"))
        rep.ecdf_to_csv(self._artifact("clt_ecdf.csv"))

    def _rate_estimate(self):
        if "contractionForCorrector" not in self.results:
            grid = TimeGrid.from_horizon(10.0, self.dt)
            pairs = simulate_coupled(self.model, build_diffusion_split(self.model), 2.0, -2.0,
                                     grid, 1000, _seed(self.seed, 8),
                                     record_every=max(1, grid.n_steps // 100),
                                     threads=self.threads)
            est = estimate_contraction(pairs)
            self.results["contractionForCorrector"] = est.to_dict()
            self._est = est
        return self._est

    def run(self) -> None:
        e = self.cfg["experiment"]
        self.verify()
        if e == "verify":
            return
        if e in ("contraction", "full"):
            self.contraction()
        if e in ("testfn", "full") and self.model.regime != "piecewise":
            self.testfn()
        if e in ("transform", "full") and self.model.regime == "piecewise":
            self.transform()
        elif e == "transform":
            raise ConfigError("transform requires a piecewise model")
        if e in ("lln", "clt", "full"):
            f = self._observable()
            est = self._rate_estimate() if e != "lln" else None
            ims = self._mu(f, None if est is None else est.fitted_rate)
            if e in ("lln", "full"):
                self.lln(f, ims)
            if e in ("clt", "full"):
                self.clt(f, ims, est)


def _sanitize(obj):
    obj = _jsonable(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_sanitize(v) for v in obj]
    return obj


def run(config_path, out: Optional[str] = None, strict: bool = True, threads: int = 1,
        seed: Optional[int] = None) -> tuple[int, dict]:
    """Run one config; returns (exit code, report)."""
    try:
        cfg = load_config(config_path)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2, {"error": str(e), "fieldPath": e.path}
    if seed is not None:
        cfg["ensemble"]["seed"] = int(seed)
    outdir = Path(out or cfg.get("output", "out"))
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    runner = Runner(cfg, outdir, strict, threads)
    code = 0
    error = None
    try:
        runner.run()
    except StrictVerifierError as e:
        code, error = 3, str(e)
        print(f"verifier failed: {e}", file=sys.stderr)
    except ConfigError as e:
        code, error = 2, str(e)
        print(f"config error: {e}", file=sys.stderr)
    if code == 0 and not all(runner.checks.values()):
        code = 1
    report = {
        "softwareVersion": __version__,
        "config": cfg,
        "results": runner.results,
        "checks": runner.checks,
        "artifacts": sorted(runner.artifacts),
        "exitCode": code,
        "error": error,
        "wallClock": time.perf_counter() - t0,
    }
    with open(outdir / "report.json", "w") as fh:
        json.dump(_sanitize(report), fh, indent=2, sort_keys=True)
    return code, report


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="sdelimits", description=__doc__.splitlines()[0])
    ap.add_argument("--lenient", action="store_true", help="verifier failures only warn")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="override ensemble.seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    sub.add_parser("list-builtins", help="print the built-in model catalog")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "list-builtins":
        print(json.dumps(_sanitize(list_builtins()), indent=2))
        return 0
    code, rep = run(args.config, args.out, not args.lenient, args.threads, args.seed)
    print(json.dumps({"exitCode": code, "checks": rep.get("checks", {}),
                      "error": rep.get("error")}, indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
