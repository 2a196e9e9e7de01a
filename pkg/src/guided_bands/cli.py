"""Command-line front end: ``guided-bands <command> ...``.

Exit codes: 0 ok, 2 validation, 3 I/O, 4 solver failure, 5 unsupported.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .asymptotics import convergence_study, guide_eigenvalue_bounds, profiles
from .cylinder import BOUNDARIES, CylinderWindow, WindowError, guide_laplacian
from .feshbach import PoleError, UnsupportedError, guided_spectrum_exact, q_potential
from .floquet import TOL_FLAT, unperturbed_bands
from .graph_model import (BUILTIN_NAMES, SpecError, builtin_example, dump_spec, load_spec, summary)
from .guided import TOL_ESS, flat_bands, solve

log = logging.getLogger("guided_bands")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_SOLVER, EXIT_UNSUPPORTED = 0, 2, 3, 4, 5
COMMANDS = ("validate", "bands", "feshbach", "flat-bands", "estimates", "asymptotics", "example")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    example: str | None = None
    params: dict = field(default_factory=dict)
    grid: int = 201
    window: int | None = None
    boundary: str = "periodic"
    tol_ess: float = TOL_ESS
    tol_flat: float = TOL_FLAT
    format: str = "json"
    out: str | None = None
    t_list: list = field(default_factory=lambda: [8, 16, 32])
    compare: bool = False

    def check(self):
        if self.grid < 2:
            raise ConfigError("--grid must be at least 2")
        if self.window is not None and self.window < 1:
            raise ConfigError("--window must be positive")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"--boundary must be one of {BOUNDARIES}")
        for name in ("tol_ess", "tol_flat"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"--{name.replace('_', '-')} must lie in (0, 1)")
        if (self.input is None) == (self.example is None):
            raise ConfigError("give exactly one of --input or --example")

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d


# --------------------------------------------------------------------------
# Number formatting
# --------------------------------------------------------------------------

def fmt(x):
    """9 significant digits; non-finite values become None."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        v = float(f"{x:.9g}")
        return 0.0 if v == 0 else v
    if isinstance(x, dict):
        return {k: fmt(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [fmt(v) for v in x]
    if isinstance(x, np.ndarray):
        return [fmt(v) for v in x.tolist()]
    return x


def _cell(x):
    x = fmt(x)
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


# --------------------------------------------------------------------------
# Report sections
# --------------------------------------------------------------------------

def _band_rows(bands):
    return [{"region": getattr(b, "region", "host"), "index": getattr(b, "index", i + 1),
             "lo": b.lo, "hi": b.hi, "flat": b.flat} for i, b in enumerate(bands)]


def _cert_rows(certs):
    return [{"name": c.name, "passed": c.passed, "margin": c.margin, "required": c.required,
             "detail": c.detail} for c in certs]


def _trace_table(trace):
    d = trace.thetas.shape[1]
    cols = [f"theta_{i + 1}" for i in range(d)]
    n_above, n_gap, n_below = (trace.n_bands(r) for r in ("above", "gap", "below"))
    cols += [f"lambda_{j + 1}" for j in range(n_above)]
    cols += [f"gap_{j + 1}" for j in range(n_gap)]
    cols += [f"below_{j + 1}" for j in range(n_below)]
    rows = []
    for pt in trace.points:
        row = list(pt.theta)
        for region, n in (("above", n_above), ("gap", n_gap), ("below", n_below)):
            e = list(pt.region(region))
            row += e + [None] * (n - len(e))
        rows.append(row)
    return {"columns": cols, "rows": rows}


def _load(cfg: RunConfig):
    if cfg.input is not None:
        with open(cfg.input, encoding="utf-8") as fh:
            return load_spec(fh.read())
    return builtin_example(cfg.example, cfg.params)


def _window(cfg, spec, guide):
    return CylinderWindow.build(spec, guide, cfg.window, cfg.boundary)


def cmd_validate(cfg, spec, guide) -> dict:
    return {"summary": summary(spec, guide)}


def cmd_bands(cfg, spec, guide) -> dict:
    host, rho = unperturbed_bands(spec)
    out = {"unperturbed_bands": _band_rows(host), "rho": rho}
    if not guide.nu1:
        out.update(guided_bands=[], flat_bands=[], certificates=[], notes=[], dispersion={"columns": [], "rows": []})
        return out
    spectrum, trace = solve(spec, guide, cfg.grid, _window(cfg, spec, guide), cfg.tol_ess)
    out.update(guided_bands=_band_rows(spectrum.bands),
               flat_bands=[{"value": v, "multiplicity": m} for v, m in spectrum.flat_bands],
               certificates=_cert_rows(spectrum.certificates), notes=spectrum.notes,
               dispersion=_trace_table(trace))
    return out


def cmd_feshbach(cfg, spec, guide) -> dict:
    exact = guided_spectrum_exact(spec, guide, cfg.grid, cfg.tol_flat)
    Q = q_potential(guide)
    top = max([b.hi for b in exact.bands] + [8.0]) + 2.0
    table = []
    for lam in np.linspace(0.0, top, 201):
        try:
            q = Q(lam)
        except PoleError:
            q = None
        table.append([lam, q])
    out = {"guided_bands": _band_rows(exact.bands),
           "flat_bands": [{"value": v, "multiplicity": m} for v, m in exact.flat_bands],
           "poles": list(Q.poles), "zeros": list(Q.zeros()), "notes": exact.notes,
           "q_table": {"columns": ["lambda", "Q"], "rows": table}}
    if cfg.compare:
        swept, _ = solve(spec, guide, cfg.grid, _window(cfg, spec, guide), cfg.tol_ess, certify=False)
        rows = []
        for b in exact.bands:
            m = next((s for s in swept.bands if s.region == b.region and s.index == b.index), None)
            rows.append({"region": b.region, "index": b.index, "exact_lo": b.lo, "exact_hi": b.hi,
                         "sweep_lo": m.lo if m else None, "sweep_hi": m.hi if m else None,
                         "max_abs_diff": max(abs(m.lo - b.lo), abs(m.hi - b.hi)) if m else None})
        out["comparison"] = rows
    return out


def cmd_flat_bands(cfg, spec, guide) -> dict:
    lap = guide_laplacian(guide)
    cert = flat_bands(lap)
    spectrum, _ = solve(spec, guide, cfg.grid, _window(cfg, spec, guide), cfg.tol_ess, certify=False)
    numeric = spectrum.flat_bands
    rows = []
    for fb in cert:
        seen = sum(m for v, m in numeric if abs(v - fb.value) < 1e-6)
        rows.append({"value": fb.value, "multiplicity": fb.multiplicity, "observed_multiplicity": seen})
    return {"flat_bands": rows,
            "numerically_flat": [{"value": v, "multiplicity": m} for v, m in numeric],
            "contact_degree": [float(lap.matrix[lap.vertices.index(c), lap.vertices.index(c)])
                               for c in lap.contacts],
            "notes": spectrum.notes}


def cmd_estimates(cfg, spec, guide) -> dict:
    spectrum, _ = solve(spec, guide, cfg.grid, _window(cfg, spec, guide), cfg.tol_ess)
    bounds = [{"name": b.name, "lhs": b.lhs, "rhs": b.rhs, "margin": b.margin, "passed": b.passed}
              for b in guide_eigenvalue_bounds(guide)]
    lap = guide_laplacian(guide)
    return {"zetas": list(lap.zetas), "summary": summary(spec, guide),
            "guided_bands": _band_rows(spectrum.bands),
            "certificates": _cert_rows(spectrum.certificates), "guide_eigenvalue_bounds": bounds}


def cmd_asymptotics(cfg, spec, guide) -> dict:
    profs, skipped = profiles(spec, guide)
    prof_rows, conv_rows, fits = [], [], []
    for pr in profs:
        prof_rows.append({"j": pr.j, "zeta": pr.zeta, "W_minus": pr.W_minus, "W_plus": pr.W_plus,
                          "W_dot": pr.W_dot, "flat": pr.flat})
        st = convergence_study(spec, guide, pr.j, cfg.t_list, cfg.grid, cfg.window)
        for r in st.rows:
            conv_rows.append({"j": pr.j, "t": r.t,
                              "measured_lo": r.measured[0] if r.measured else None,
                              "measured_hi": r.measured[1] if r.measured else None,
                              "predicted_lo": r.predicted[0], "predicted_hi": r.predicted[1],
                              "residual": r.residual, "width": r.width})
        fits.append({"j": pr.j, "slope": st.slope, "slope_lo": st.slope_lo, "slope_hi": st.slope_hi,
                     "beta_01": st.beta_01, "W_dot_le_2beta_01": st.beta_bound_ok})
    return {"profiles": prof_rows, "skipped_degenerate": skipped, "convergence": conv_rows, "fits": fits}


HANDLERS = {"validate": cmd_validate, "bands": cmd_bands, "feshbach": cmd_feshbach,
            "flat-bands": cmd_flat_bands, "estimates": cmd_estimates, "asymptotics": cmd_asymptotics}


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def render_json(report: dict) -> str:
    return json.dumps(fmt(report), indent=2, sort_keys=False) + "\n"


def render_csv(report: dict) -> str:
    """Header comments echo the config; each list or table becomes a CSV block."""
    buf = io.StringIO()
    buf.write(f"# command={report['command']}\n# version={report['version']}\n")
    for k, v in report["config"].items():
        if k == "command":
            continue
        buf.write(f"# {k}={json.dumps(fmt(v))}\n")
    w = csv.writer(buf, lineterminator="\n")
    for key, value in report.items():
        if key in ("command", "version", "config"):
            continue
        buf.write(f"\n# {key}\n")
        if isinstance(value, dict) and "columns" in value:
            w.writerow(value["columns"])
            for row in value["rows"]:
                w.writerow([_cell(x) for x in row])
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            cols = list(value[0].keys())
            w.writerow(cols)
            for row in value:
                w.writerow([_cell(row.get(c)) for c in cols])
        elif isinstance(value, dict):
            w.writerow(["key", "value"])
            for k, v in value.items():
                w.writerow([k, _cell(v)])
        elif isinstance(value, list):
            w.writerow(["value"])
            for v in value:
                w.writerow([_cell(v)])
        else:
            w.writerow(["value"])
            w.writerow([_cell(value)])
    return buf.getvalue()


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects k=v, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = int(v)
        except ValueError:
            raise ConfigError(f"--param {k} must be an integer") from None
    return out


def _parse_tlist(text) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("--t-list expects comma-separated integers") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guided-bands",
                                description="Guided bands of periodic graph Laplacians with a periodic guide.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="graph document (JSON)")
    src.add_argument("--example", help=f"builtin example: {', '.join(BUILTIN_NAMES)}")
    p.add_argument("--param", action="append", metavar="K=V", help="builtin parameter (repeatable)")
    p.add_argument("--grid", type=int, default=201, help="theta grid points per dimension")
    p.add_argument("--window", type=int, default=None, help="transverse half width W")
    p.add_argument("--boundary", choices=BOUNDARIES, default="periodic")
    p.add_argument("--tol-ess", type=float, default=TOL_ESS)
    p.add_argument("--tol-flat", type=float, default=TOL_FLAT)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--t-list", default="8,16,32", help="multiplicity scales for asymptotics")
    p.add_argument("--compare", action="store_true", help="feshbach: also run the sweep and compare")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(code: int, msg: str) -> int:
    print(f"guided-bands: error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.command, args.input, args.example, _parse_params(args.param), args.grid,
                        args.window, args.boundary, args.tol_ess, args.tol_flat, args.format, args.out,
                        _parse_tlist(args.t_list), args.compare)
        if cfg.command == "example":
            if cfg.example is None:
                raise ConfigError("example needs --example NAME")
        else:
            cfg.check()
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    try:
        spec, guide = _load(cfg)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read {cfg.input}: {exc.strerror or exc}")
    except SpecError as exc:
        return _fail(EXIT_VALIDATION, str(exc))

    if cfg.command == "example":
        text = dump_spec(spec, guide) + "\n"
    else:
        try:
            body = HANDLERS[cfg.command](cfg, spec, guide)
        except UnsupportedError as exc:
            return _fail(EXIT_UNSUPPORTED, str(exc))
        except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            return _fail(EXIT_SOLVER, f"{cfg.command} failed: {exc}")
        except ValueError as exc:  # SpecError, WindowError, bad parameters
            return _fail(EXIT_VALIDATION, str(exc))
        report = {"command": cfg.command, "version": __version__, "config": cfg.echo(), **body}
        text = render_json(report) if cfg.format == "json" else render_csv(report)

    try:
        if cfg.out:
            with open(cfg.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write {cfg.out}: {exc.strerror or exc}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
