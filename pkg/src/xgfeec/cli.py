"""Command line front end for the studies in xgfeec.harness.

    xgfeec converge --k 2 --degree 0 --levels 2 3 4 5 --out conv.csv
    xgfeec rholimit --k 1 --regime 1 --format json
    xgfeec infsup --k 1 --rho 1 0.1 0.01 --divisions 2 4 8 --assert

A config file holds ``key = value`` lines named like the long flags
(``levels = 2 3 4``); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import harness
from .diff_forms import FormSpaceSpec

EXIT_OK, EXIT_ERROR, EXIT_ASSERT = 0, 1, 2

# Thresholds used by --assert.
RATE_SLACK = 0.2
LOWEST_ORDER_RATE = 0.85
RHO_SLOPE = (0.4, 0.75)
INFSUP_RATIO = 0.5
ROUNDTRIP_TOL = 1e-8
SCHUR_TOL = 1e-10
AVERAGING_VARIATION = 2.0

_DEFAULTS = {
    "k": 1, "degree": 0, "family": "trimmed", "regime": "1", "rho": None, "levels": [2, 3, 4, 5],
    "method": "xg7", "divisions": None, "out": None, "format": "csv", "assert": False,
    "infsup": False, "cases": 100, "seed": 0,
}
_LISTS = {"rho": float, "levels": int, "divisions": int}
_SCALARS = {"k": int, "degree": int, "cases": int, "seed": int}
_FLAGS = {"assert", "infsup"}


def read_config(path) -> dict:
    """Parse a key = value file. Blank lines and # comments are skipped."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def _convert(key, val):
    if key in _LISTS:
        return [_LISTS[key](v) for v in val.replace(",", " ").split()]
    if key in _SCALARS:
        return _SCALARS[key](val)
    if key in _FLAGS:
        return val.lower() in ("1", "true", "yes", "on")
    return val


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xgfeec", description="XG finite element studies for the Hodge Laplacian.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", help="key = value file; command line flags override it")
    common.add_argument("--k", type=int, choices=(0, 1, 2), default=S)
    common.add_argument("--degree", type=int, default=S)
    common.add_argument("--family", choices=("complete", "trimmed"), default=S)
    common.add_argument("--regime", choices=("1", "2", "h1", "h2"), default=S)
    common.add_argument("--rho", type=float, nargs="+", default=S)
    common.add_argument("--levels", type=int, nargs="+", default=S)
    common.add_argument("--divisions", type=int, nargs="+", default=S)
    common.add_argument("--method", choices=harness.METHODS, default=S)
    common.add_argument("--out", default=S, help="output path; stdout if omitted")
    common.add_argument("--format", choices=("csv", "json"), default=S)
    common.add_argument("--assert", dest="assert", action="store_true", default=S,
                        help="exit with status 2 when an acceptance threshold is violated")
    common.add_argument("--infsup", action="store_true", default=S,
                        help="converge: also estimate gamma_h on each level")
    common.add_argument("--cases", type=int, default=S, help="identities: random cases")
    common.add_argument("--seed", type=int, default=S)
    for name, text in (("converge", "error table and rates under refinement"),
                       ("rholimit", "distance to the conforming method as rho shrinks"),
                       ("infsup", "discrete inf-sup constants over divisions x rho"),
                       ("hybridize-check", "condensed versus monolithic solve"),
                       ("identities", "randomized calculus identities and the averaging constant")):
        sub.add_parser(name, parents=[common], help=text)
    return p


def resolve_options(ns: argparse.Namespace) -> dict:
    opts = dict(_DEFAULTS)
    if getattr(ns, "config", None):
        opts.update(read_config(ns.config))
    opts.update({k: v for k, v in vars(ns).items() if k not in ("config", "command")})
    opts["command"] = ns.command
    return opts


def _config(opts, rho_default) -> harness.StudyConfig:
    return harness.StudyConfig(method=opts["method"], k=opts["k"], degree=opts["degree"],
                               family=opts["family"], regime=opts["regime"],
                               rho=opts["rho"] or rho_default, levels=opts["levels"],
                               infsup=opts["infsup"])


def _bad(x) -> bool:
    return x is None or not math.isfinite(x)


def run(opts: dict):
    """Run one subcommand. Returns (report, list of threshold violations)."""
    cmd = opts["command"]
    violations = []
    if cmd == "converge":
        cfg = _config(opts, [1.0])
        rep = harness.convergence_study(cfg)
        t = rep.summary["expected_order"]
        need = LOWEST_ORDER_RATE if t == 1 else t - RATE_SLACK
        for key in ("final_rate_u", "final_rate_sigma"):
            r = rep.summary[key]
            if key == "final_rate_sigma" and _bad(r):
                continue
            if _bad(r) or r < need:
                violations.append(f"{key} = {r} below {need}")
    elif cmd == "rholimit":
        cfg = _config(opts, [1.0, 1 / 4, 1 / 16, 1 / 64])
        div = (opts["divisions"] or [4])[0]
        rep = harness.rho_limit_study(cfg, divisions=div)
        s = rep.summary["slope"]
        if _bad(s) or not RHO_SLOPE[0] <= s <= RHO_SLOPE[1]:
            violations.append(f"slope {s} outside [{RHO_SLOPE[0]}, {RHO_SLOPE[1]}]")
    elif cmd == "infsup":
        cfg = _config(opts, [1.0, 0.1, 0.01])
        rep = harness.infsup_sweep(cfg, divisions=tuple(opts["divisions"] or (2, 4, 8)))
        lo, ratio = rep.summary["min"], rep.summary["ratio"]
        if not lo > 0:
            violations.append(f"min gamma_h = {lo}")
        if _bad(ratio) or ratio < INFSUP_RATIO:
            violations.append(f"min/max = {ratio} below {INFSUP_RATIO}")
    elif cmd == "hybridize-check":
        cfg = _config(opts, [1.0])
        if cfg.k == 0:
            raise ValueError("hybridization needs k >= 1")
        rep = harness.hybridization_check(cfg, divisions=tuple(opts["divisions"] or (2, 4)))
        if not rep.summary["max_roundtrip"] <= ROUNDTRIP_TOL:
            violations.append(f"round trip {rep.summary['max_roundtrip']} above {ROUNDTRIP_TOL}")
        if not rep.summary["max_schur"] <= SCHUR_TOL:
            violations.append(f"Schur mismatch {rep.summary['max_schur']} above {SCHUR_TOL}")
    elif cmd == "identities":
        res = harness.calculus_identities(opts["cases"], opts["seed"])
        rows = [{"check": key, "value": val} for key, val in res.items() if key != "passed"]
        summary = {"identities_passed": res["passed"]}
        if not res["passed"]:
            violations.append("calculus identities failed")
        if opts["k"] < 2:
            # 2-forms have no tangential trace, so the averaging bound is vacuous there
            spec = FormSpaceSpec(opts["k"], max(opts["degree"], 1),
                                 opts["family"] if opts["k"] == 1 else "complete")
            avg = harness.averaging_constants(spec, divisions=tuple(opts["divisions"] or (2, 4, 8, 16)),
                                              seed=opts["seed"])
            rows += [{"check": f"averaging_constant_div{r['divisions']}", "value": r["max_constant"]}
                     for r in avg.rows]
            summary["averaging_variation"] = avg.summary["variation"]
            if not avg.summary["variation"] < AVERAGING_VARIATION:
                violations.append(f"averaging constant varies by {avg.summary['variation']}")
        rep = harness.StudyReport("identities", {"cases": opts["cases"], "seed": opts["seed"]}, rows, summary)
    else:
        raise ValueError(f"unknown command {cmd!r}")
    return rep, violations


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        opts = resolve_options(ns)
        rep, violations = run(opts)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"xgfeec: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = rep.to_json() + "\n" if opts["format"] == "json" else rep.to_csv()
    if opts["out"]:
        Path(opts["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    for v in violations:
        print(f"threshold violated: {v}", file=sys.stderr)
    if opts["assert"] and violations:
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
