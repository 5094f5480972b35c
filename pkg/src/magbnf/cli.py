"""Command-line front end: analyze, bnf, second, verify, report.

Every JSON artifact embeds a run manifest and is validated against the
schema shipped in ``magbnf/schemas``.  Floats are written with 12
significant digits so repeated runs with the same manifest give the same
bytes.  Exit codes: 0 ok, 1 input error, 2 failed assumption, 3 numerical
non-convergence.
"""

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import re
import sys
from importlib import resources
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import __version__
from .errors import AssumptionError, ConfigError, MagBNFError, NonConvergenceError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_HBARS = (0.05, 0.07, 0.1, 0.14, 0.2)


# ---------------------------------------------------------------------------
# manifest and output helpers

def _tidy(obj):
    """JSON-ready copy with fixed-precision floats and plain containers."""
    if isinstance(obj, dict):
        return {str(k): _tidy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tidy(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _tidy(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.12g}")
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch else _dt.datetime.now(_dt.timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def make_manifest(subcommand, params, config_path=None, config_text=None, seed=0):
    digest = None
    if config_text is not None:
        digest = hashlib.sha256(config_text.encode("utf-8")).hexdigest()
    return {
        "tool": "magbnf",
        "version": __version__,
        "subcommand": subcommand,
        "parameters": {k: params[k] for k in sorted(params)},
        "config": {"path": str(config_path) if config_path else None, "sha256": digest},
        "seed": seed,
        "created": _timestamp(),
    }


def load_schema(name):
    text = resources.files("magbnf").joinpath("schemas", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def write_json(path, doc, schema):
    doc = _tidy(doc)
    jsonschema.validate(doc, load_schema(schema))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def resolve_config(path):
    """Path on disk, else a shipped example of the same file name."""
    p = Path(path)
    if p.exists():
        return p, p.read_text(encoding="utf-8")
    shipped = resources.files("magbnf").joinpath("configs", p.name)
    if shipped.is_file():
        return p, shipped.read_text(encoding="utf-8")
    raise ConfigError(f"config file not found: {path}")


def _parse_list(text, cast=float):
    return [cast(x) for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------
# subcommand bodies (plain functions so tests can call them directly)

def well_document(spec):
    from .spectra import assemble_prediction
    from .wellframe import analyze_well, check_well_flags

    well, fr, quad = analyze_well(spec)
    check_well_flags(well)
    pred = assemble_prediction(well, quad)
    doc = {
        "well": {
            "q0": well.q0, "b0": well.b0, "grad_norm": well.grad_norm, "hess_b": well.hess_b,
            "betas": well.betas, "s": well.s, "k": well.k, "r1": well.r1, "r2": well.r2,
            "assumption_flags": well.assumption_flags, "diagnostics": well.diagnostics,
        },
        "frames": {"L0": fr.L0, "M0": quad.M0, "Kt": quad.Kt, "s_jet": quad.s_jet, "schur": quad.schur},
        "prediction": pred.to_json(),
    }
    return doc, pred, (well, fr, quad)


_OSC = re.compile(r"\bz(\d+)(?:_(\d+))?\b")


def symbol_text(text, s):
    """Expand z2, z4, ... (|z_1|^2, |z_1|^4) and zJ_K (|z_J|^K) into x, xi."""
    def sub(m):
        if m.group(2) is None:
            j, p = 1, int(m.group(1))
        else:
            j, p = int(m.group(1)), int(m.group(2))
        if p % 2 or not 1 <= j <= s:
            raise ConfigError(f"cannot read oscillator token {m.group(0)!r}")
        return f"(x{j}^2 + xi{j}^2)^{p // 2}"
    return _OSC.sub(sub, text)


def bnf_document(symbol, r1, s=1, k=0, hbar_order=2, rational=False, levels=3):
    from .bnf import birkhoff, effective_names, effective_symbol
    from .weylalg import E1, GradedSeries

    alg = E1(s, k)
    series = GradedSeries.parse(alg, symbol_text(symbol, s), r1, hbar_order)
    if rational and not series.is_exact():
        raise ConfigError("--rational requested but the symbol has inexact coefficients")
    table = birkhoff(series, r1)
    names = effective_names(alg)
    eff = {}
    for n in range(1, levels + 1):
        eff[str(n)] = effective_symbol(table, (n,) * s).to_string(names)
    doc = {"symbol": symbol, "s": s, "k": k, "normal_form": table.to_json(), "effective_symbols": eff,
           "exact": series.is_exact()}
    return doc, table


def second_document(spec=None, symbol=None, s=1, k=1, r2=None, rational=False, levels=4):
    from .expr import parse_poly
    from .secondform import model_n1, n1_names, reduce_to_oscillator, second_birkhoff, effective_m_symbol
    from .spectra import prediction_from_m1, assemble_prediction

    quad = None
    if spec is not None:
        doc, _, (well, fr, quad) = well_document(spec)
        s, k = well.s, well.k
        if k == 0:
            raise AssumptionError(4, "no field-line directions: the second normal form is empty")
        N1 = model_n1(quad, well.b0, s, k)
        r2 = r2 or min(int(well.r2), 6)
    else:
        N1 = parse_poly(symbol, n1_names(s, k))
        r2 = r2 or 6
    of = reduce_to_oscillator(N1, s, k, r2, 3, quad=None if rational else quad)
    table = second_birkhoff(of, r2=r2)
    out = {"s": s, "k": k, "second_form": table.to_json(), "exact": bool(of.exact)}
    if spec is None:
        pred = prediction_from_m1(effective_m_symbol(table, (1,) * k), s, levels)
    else:
        # c0 on the geometric path needs the full chain; it stays a fit parameter
        pred = assemble_prediction(well, quad, levels=levels)
    out["prediction"] = pred.to_json()
    return out


class _ControlPrediction:
    """Stand-in prediction for fields without a well (e.g. constant field)."""

    def __init__(self, b0):
        self.b0, self.nu0, self.E = b0, 0.0, []

    def to_json(self):
        return {"b0": self.b0, "nu0": self.nu0, "E_ladder": [], "note": "no magnetic well; control run"}


def verify_document(spec, hbars, n, levels=2, tol=1e-8, seed=0, threads=1, box_mode="scaled",
                    refine=True, box_control=True, method="auto"):
    from .maggeom import intensity
    from .numverify import EigTable, fit_powers, localization_widths, run_grid

    analysis = {}
    try:
        _, pred, (well, fr, quad) = well_document(spec)
        scale = (np.asarray(well.q0, dtype=float), float(well.b0))
        analysis["status"] = "ok"
    except AssumptionError as exc:
        well = fr = quad = None
        pred = _ControlPrediction(float(intensity(spec, [float(x) for x in spec.well_guess])))
        scale = (np.asarray([float(x) for x in spec.well_guess]), pred.b0)
        analysis["status"] = f"control run ({exc})"

    if box_mode == "fixed":
        def box_fn(hb):
            return tuple(float(x) for x in spec.box)
    else:
        def box_fn(hb):
            return localization_widths(spec, hb, well, fr, quad)

    table = run_grid(spec, hbars, n, box_fn, levels, tol, seed, threads, method, well_scale=scale)
    if refine:
        coarse = run_grid(spec, hbars, max(16, n // 2), box_fn, levels, tol, seed, threads, method,
                          well_scale=scale)
        table.extend(coarse.rows)
    doc = {"analysis": analysis, "prediction": pred.to_json(), "n": n, "levels": levels,
           "hbar": list(hbars), "box_mode": box_mode, "diagnostics": table.diagnostics}
    if box_control:
        # same spacing as the coarse grid on a doubled box isolates truncation error:
        # m interior points on 2L/(m+1) spacing become 2m+1 on the doubled box
        hb = sorted(hbars)[len(hbars) // 2]
        big = tuple(2 * x for x in box_fn(hb))
        m = max(16, n // 2)
        ctl = run_grid(spec, [hb], 2 * m + 1, lambda _: big, 1, tol, seed, 1, method)
        ref = run_grid(spec, [hb], m, box_fn, 1, tol, seed, 1, method)
        a, b = ref.rows[0].eigenvalue, ctl.rows[0].eigenvalue
        doc["box_control"] = {"hbar": hb, "lambda1": a, "lambda1_doubled_box": b, "difference": b - a}
    try:
        doc["fit"] = fit_powers(table, pred)
    except ValueError as exc:
        doc["fit"] = {"error": str(exc)}
    return doc, table


# ---------------------------------------------------------------------------
# click wiring

def _fail(exc):
    msg = str(exc)
    click.echo(f"error: {msg}", err=True)
    sys.exit(getattr(exc, "exit_code", 1))


def _outdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


@click.group()
@click.version_option(__version__)
def main():
    """Magnetic-well eigenvalue expansions and grid verification."""


_common = [
    click.option("--output-dir", default=".", show_default=True, help="Directory for artifacts."),
    click.option("--seed", default=0, show_default=True, help="RNG seed for iterative solvers."),
    click.option("--threads", default=1, show_default=True, help="Concurrent hbar solves."),
    click.option("--rational", is_flag=True, help="Force exact arithmetic where applicable."),
]


def common(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@main.command()
@click.argument("config")
@common
def analyze(config, output_dir, seed, threads, rational):
    """Well, frames and expansion coefficients for a field config."""
    from .maggeom import parse_field
    try:
        path, text = resolve_config(config)
        spec = parse_field(text)
        doc, pred, _ = well_document(spec)
        out = _outdir(output_dir)
        doc["manifest"] = make_manifest("analyze", {"rational": rational}, path, text, seed)
        write_json(out / "well_report.json", doc, "well_report")
        (out / "ladder.csv").write_text(pred.ladder_csv(), encoding="utf-8")
    except MagBNFError as exc:
        _fail(exc)
    w = doc["well"]
    click.echo(f"b0 = {w['b0']:.10g}  s = {w['s']}  k = {w['k']}  "
               f"mu = {[round(m, 10) for m in doc['prediction']['mus']]}")


@main.command()
@click.option("--symbol", required=True, help='Symbol, e.g. "z2 + 0.01*z4".')
@click.option("--r1", default=8, show_default=True)
@click.option("--s", "s", default=1, show_default=True)
@click.option("--k", "k", default=0, show_default=True)
@click.option("--hbar-order", default=2, show_default=True, help="Truncation in powers of hbar.")
@common
def bnf(symbol, r1, s, k, hbar_order, output_dir, seed, threads, rational):
    """First Birkhoff normal form of an explicit symbol."""
    try:
        doc, table = bnf_document(symbol, r1, s, k, hbar_order, rational)
        params = {"symbol": symbol, "r1": r1, "s": s, "k": k, "hbar_order": hbar_order, "rational": rational}
        doc["manifest"] = make_manifest("bnf", params, seed=seed)
        write_json(_outdir(output_dir) / "normal_form.json", doc, "normal_form")
    except MagBNFError as exc:
        _fail(exc)
    click.echo(f"{len(table.entries)} normal-form entries, residual valuation "
               f"{doc['normal_form']['residual_valuation']}")


@main.command()
@click.argument("config", required=False)
@click.option("--symbol", help="Explicit N1 in y, eta, t, tau, hbar (instead of a config).")
@click.option("--s", "s", default=1, show_default=True)
@click.option("--k", "k", default=1, show_default=True)
@click.option("--r2", default=None, type=int)
@common
def second(config, symbol, s, k, r2, output_dir, seed, threads, rational):
    """Second Birkhoff normal form (field-line oscillators)."""
    from .maggeom import parse_field
    if (config is None) == (symbol is None):
        click.echo("error: give either CONFIG or --symbol", err=True)
        sys.exit(1)
    try:
        path = text = spec = None
        if config:
            path, text = resolve_config(config)
            spec = parse_field(text)
        doc = second_document(spec, symbol, s, k, r2, rational)
        params = {"symbol": symbol, "s": s, "k": k, "r2": r2, "rational": rational}
        doc["manifest"] = make_manifest("second", params, path, text, seed)
        write_json(_outdir(output_dir) / "second_form.json", doc, "second_form")
    except MagBNFError as exc:
        _fail(exc)
    click.echo(f"r2 = {doc['second_form']['r2']}, M1 at 0: {doc['second_form']['M1_series_at_0']}")


@main.command()
@click.argument("config")
@click.option("--hbar", "hbar_text", default=None, help="Comma-separated hbar values.")
@click.option("--n", "n", default=None, type=int, help="Grid points per axis.")
@click.option("--levels", default=None, type=int)
@click.option("--tol", default=1e-8, show_default=True)
@click.option("--box-mode", type=click.Choice(["scaled", "fixed"]), default=None)
@click.option("--refine/--no-refine", default=True, show_default=True, help="Half-resolution Richardson grid.")
@click.option("--box-control/--no-box-control", default=True, show_default=True)
@click.option("--method", type=click.Choice(["auto", "dense", "shift-invert", "lobpcg"]), default="auto")
@click.option("--dump-matrix", is_flag=True, help="Write the first operator in Matrix Market form.")
@common
def verify(config, hbar_text, n, levels, tol, box_mode, refine, box_control, method, dump_matrix,
           output_dir, seed, threads, rational):
    """Grid eigenvalues across hbar and power-law fits."""
    from .maggeom import parse_field
    from .numverify import build_grid_operator
    try:
        path, text = resolve_config(config)
        spec = parse_field(text)
        conf = tomllib.loads(text).get("verify", {})
        hbars = _parse_list(hbar_text) if hbar_text else list(conf.get("hbar", DEFAULT_HBARS))
        n = n or int(conf.get("n", 64 if spec.dimension == 3 else 256))
        levels = levels or int(conf.get("levels", 2))
        box_mode = box_mode or conf.get("box_mode", "scaled")
        doc, table = verify_document(spec, hbars, n, levels, tol, seed, threads, box_mode, refine,
                                     box_control, method)
        out = _outdir(output_dir)
        params = {"hbar": hbars, "n": n, "levels": levels, "tol": tol, "box_mode": box_mode,
                  "refine": refine, "box_control": box_control, "method": method, "threads": threads}
        doc["manifest"] = make_manifest("verify", params, path, text, seed)
        write_json(out / "verify_report.json", doc, "verify_report")
        (out / "eigs.csv").write_text(table.to_csv(), encoding="utf-8")
        if dump_matrix:
            op = build_grid_operator(spec, [float(x) for x in spec.box], min(n, 32), hbars[0])
            op.dump(str(out / "operator.mtx"))
    except MagBNFError as exc:
        _fail(exc)
    fit = doc["fit"]
    sub = fit.get("subleading", {})
    click.echo(f"lambda1 = {fit.get('lambda1')}  subleading slope = {sub.get('slope', sub.get('note'))}")


@main.command()
@click.argument("directory", default=".")
@click.option("--output", default="report", show_default=True, help="Base name of the merged files.")
def report(directory, output):
    """Merge every JSON artifact in DIRECTORY into one document plus a flat CSV."""
    d = Path(directory)
    parts = {}
    for p in sorted(d.glob("*.json")):
        if p.stem == output:
            continue
        parts[p.stem] = json.loads(p.read_text(encoding="utf-8"))
    if not parts:
        click.echo(f"error: no JSON artifacts in {directory}", err=True)
        sys.exit(1)
    doc = {"artifacts": parts, "manifest": make_manifest("report", {"directory": str(d)})}
    write_json(d / f"{output}.json", doc, "report")
    rows = []

    def flatten(prefix, v):
        if isinstance(v, dict):
            for k in sorted(v):
                flatten(f"{prefix}.{k}" if prefix else k, v[k])
        elif isinstance(v, list) and all(not isinstance(x, (dict, list)) for x in v):
            rows.append((prefix, ";".join(str(x) for x in v)))
        elif isinstance(v, list):
            for i, x in enumerate(v):
                flatten(f"{prefix}[{i}]", x)
        else:
            rows.append((prefix, v))

    for name, part in parts.items():
        flatten(name, {k: v for k, v in part.items() if k != "manifest"})
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["key", "value"])
    wr.writerows(rows)
    (d / f"{output}.csv").write_text(buf.getvalue(), encoding="utf-8")
    click.echo(f"merged {len(parts)} artifacts into {output}.json and {output}.csv")


if __name__ == "__main__":
    main()
