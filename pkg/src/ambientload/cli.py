"""Command-line front end: simulate PMU data, estimate, stream.

Exit codes: 0 success, 1 runtime error, 2 validation error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import AmbientLoadError, ParseError, ValidationError
from .estimator import estimate, phasors_to_states, window_sweep
from .experiments import DT, ou_state_series, ten_load_spec
from .gridsim import Event, PhasorWindow, SimConfig, load_case_file, simulate
from .gridsim.pmu import (iter_csv_records, iter_ndjson_records, parse_header,
                          read_pmu_csv, read_sidecar, rows_to_phasors, write_pmu_csv,
                          write_sidecar)
from .noise import NoiseSpec, add_measurement_noise
from .online import convergence_time, stream_estimates

log = logging.getLogger("ambientload")

PRESETS = ("ten_load",)


# ---------------------------------------------------------------- helpers

def _dump(obj, **kw):
    return json.dumps(obj, sort_keys=True, **kw)


def _sha256(data: bytes):
    return hashlib.sha256(data).hexdigest()


def write_run_record(out_dir, command, manifest, seed=None, outputs=()):
    """``run.json``: manifest, its hash, seed, versions and output digests."""
    out_dir = Path(out_dir)
    record = {
        "command": command,
        "manifest": manifest,
        "manifest_sha256": _sha256(_dump(manifest).encode()),
        "seed": seed,
        "versions": {"ambientload": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "outputs": {Path(p).name: _sha256(Path(p).read_bytes()) for p in outputs},
    }
    path = out_dir / "run.json"
    path.write_text(_dump(record, indent=2) + "\n")
    return path


def parse_sweep(text):
    """``"a:b:step"`` -> inclusive list of window lengths in seconds."""
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ValidationError(f"bad sweep {text!r}; expected a:b:step") from exc
    if not (a > 0 and step > 0 and b >= a):
        raise ValidationError(f"bad sweep {text!r}; need 0 < a <= b and step > 0")
    k = int(np.floor((b - a) / step + 1e-9))
    return [a + i * step for i in range(k + 1)]


def parse_alpha(text):
    if text is None or text.strip().lower() in ("1/n", "auto"):
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise ValidationError(f"bad alpha {text!r}") from exc


def preset_window(name, duration, dt, seed, events, sigma_scale=1.0) -> PhasorWindow:
    """Idealized OU load model rendered as phasors at constant real voltages."""
    if name != "ten_load":
        raise ValidationError(f"unknown preset {name!r}; choose from {PRESETS}")
    spec = ten_load_spec()
    spec = spec.replace(sigma_p=spec.sigma_p * sigma_scale, sigma_q=spec.sigma_q * sigma_scale)
    for e in events:
        e.resolve(spec.m)
        if not 0 <= e.t <= duration:
            raise ValidationError(f"event at t={e.t} outside [0, {duration}]")
    series, _ = ou_state_series(spec, duration, dt, seed, events)
    m = spec.m
    V = series.v.astype(complex)
    I = (series.x[:, :m] + 1j * series.x[:, m:]) * V
    ids = tuple(range(1, m + 1))
    return PhasorWindow(dt=dt, voltage=V, current=I, bus_ids=ids, load_buses=ids,
                        truth=spec, states=series.x)


def table_rows(result, truth=None):
    """Rows ``(name, real, estimate, error%)`` in parameter order."""
    rows = []
    for kind, est in (("tau_g", result.tau_g_hat), ("tau_b", result.tau_b_hat)):
        real = None if truth is None else getattr(truth, kind)
        for k, val in enumerate(est):
            if real is None:
                rows.append((f"{kind}{k + 1}", None, float(val), None))
            else:
                rows.append((f"{kind}{k + 1}", float(real[k]), float(val),
                             100.0 * (val - real[k]) / real[k]))
    return rows


def format_table(rows):
    with_truth = rows and rows[0][1] is not None
    if with_truth:
        lines = [f"{'Time constant':<14}{'Real value (s)':>16}{'Estimated value (s)':>22}{'Error':>12}"]
        lines += [f"{n:<14}{r:>16.4f}{e:>22.4f}{err:>11.4f}%" for n, r, e, err in rows]
    else:
        lines = [f"{'Time constant':<14}{'Estimated value (s)':>22}"]
        lines += [f"{n:<14}{e:>22.4f}" for n, _, e, _ in rows]
    return "\n".join(lines)


def _truth_from(path):
    if path is None:
        return None, []
    side = read_sidecar(path)
    return side.get("truth_spec"), [Event(**e) for e in side.get("events", [])]


# ---------------------------------------------------------------- simulate

SIM_KEYS = ("case", "preset", "duration", "dt", "pmu_dt", "seed", "sigma_scale", "event",
            "load_scheme")
SIM_DEFAULTS = {"dt": DT, "seed": 0, "sigma_scale": 1.0, "event": [], "load_scheme": "trapezoidal"}


def _resolve_manifest(args):
    manifest = {}
    if args.manifest:
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.manifest}: line {exc.lineno}: {exc.msg}") from exc
        unknown = set(manifest) - set(SIM_KEYS) - {"out", "events"}
        if unknown:
            raise ValidationError(f"{args.manifest}: unknown keys {sorted(unknown)}")
        if "events" in manifest:
            manifest["event"] = [e if isinstance(e, str) else f"{e['t']}:{e['parameter']}:{e['value']}"
                                 for e in manifest.pop("events")]
    out = {}
    for key in SIM_KEYS:
        val = getattr(args, key)
        if val is None or (key == "event" and not val):
            val = manifest.get(key, SIM_DEFAULTS.get(key))
        out[key] = val
    if args.out is None:
        args.out = manifest.get("out")
    if (out["case"] is None) == (out["preset"] is None):
        raise ValidationError("give exactly one of --case or --preset")
    if out["duration"] is None:
        raise ValidationError("--duration is required")
    if args.out is None:
        raise ValidationError("--out is required")
    return out


def cmd_simulate(args):
    man = _resolve_manifest(args)
    events = [Event.parse(e) for e in man["event"]]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if man["preset"] is not None:
        dt_pmu = man["pmu_dt"] or man["dt"]
        window = preset_window(man["preset"], man["duration"], dt_pmu, man["seed"], events,
                               man["sigma_scale"])
        name = man["preset"]
    else:
        case = load_case_file(man["case"])
        cfg = SimConfig(duration=man["duration"], h=man["dt"], dt_pmu=man["pmu_dt"],
                        seed=man["seed"], sigma_scale=man["sigma_scale"],
                        load_scheme=man["load_scheme"])
        window = simulate(case, cfg, events, record_states=False)
        name = case.name
    csv_path, side_path = out / "pmu.csv", out / "pmu.json"
    write_pmu_csv(window, csv_path)
    write_sidecar(side_path, window, man["seed"], events, name)
    write_run_record(out, "simulate", man, man["seed"], [csv_path, side_path])
    print(f"wrote {window.n} samples to {csv_path}")
    return 0


# ---------------------------------------------------------------- estimate

def cmd_estimate(args):
    truth, _ = _truth_from(args.truth)
    window = read_pmu_csv(args.input)
    series = phasors_to_states(window)
    if args.noise:
        series, _ = add_measurement_noise(series, spec=NoiseSpec.parse(args.noise))
    if args.window is not None:
        n = int(round(args.window / series.dt))
        if n > series.n:
            raise ValidationError(f"--window {args.window} s exceeds the data length")
        series = series.window(0, n)
    result = estimate(series, args.kappa, truth)
    rows = table_rows(result, truth)
    payload = result.to_dict()

    outputs = []
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    sweep = None
    if args.sweep:
        sweep = window_sweep(series, args.kappa, parse_sweep(args.sweep), truth)
        if out:
            outputs.append(_write_sweep(out / "sweep.csv", sweep))
    if out:
        path = out / "estimate.json"
        path.write_text(_dump(payload, indent=2) + "\n")
        outputs.append(path)
        if args.figures:
            outputs += _estimate_figures(out, rows, sweep)
        manifest = {"input": str(args.input), "kappa": args.kappa, "truth": args.truth,
                    "sweep": args.sweep, "noise": args.noise, "window": args.window}
        write_run_record(out, "estimate", manifest,
                         NoiseSpec.parse(args.noise).seed if args.noise else None, outputs)

    if args.format == "json":
        print(_dump(payload, indent=2))
    else:
        print(format_table(rows))
        if result.nonphysical:
            print("nonphysical (A_kk >= 0): " + ", ".join(result.nonphysical))
        if sweep and not out:
            print()
            _write_sweep(sys.stdout, sweep)
    return 0


def _sweep_rows(sweep):
    m = sweep[0][1].m
    header = ["length_s"] + [f"tau_g{k + 1}_hat" for k in range(m)] + \
        [f"tau_b{k + 1}_hat" for k in range(m)]
    has_err = sweep[0][1].errors is not None
    if has_err:
        header += ["frobenius", "frobenius_projected", "median_abs_rel_err", "max_abs_rel_err"]
    rows = []
    for L, res in sweep:
        row = [L] + res.tau_hat.tolist()
        if has_err:
            e = res.errors.to_dict()
            row += [e["frobenius"], e["frobenius_projected"], e["median_abs_rel_err"],
                    e["max_abs_rel_err"]]
        rows.append(row)
    return header, rows


def _write_sweep(dest, sweep):
    header, rows = _sweep_rows(sweep)
    fh = open(dest, "w", newline="") if isinstance(dest, Path) else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[repr(float(v)) for v in r] for r in rows])
    finally:
        if isinstance(dest, Path):
            fh.close()
    return dest


def _estimate_figures(out, rows, sweep):
    from . import plotting

    paths = []
    if rows and rows[0][1] is not None:
        paths.append(plotting.plot_relative_errors([r[0] for r in rows],
                                                   [r[3] / 100 for r in rows],
                                                   out / "errors.png"))
    if sweep and sweep[0][1].errors is not None:
        paths.append(plotting.plot_window_sweep(
            [L for L, _ in sweep], [r.errors.frobenius for _, r in sweep],
            [r.errors.frobenius_projected for _, r in sweep], out / "sweep.png"))
    return paths


# ---------------------------------------------------------------- stream

def _records(source):
    """Yield PMU rows from a CSV path, or from stdin (CSV or NDJSON) for ``-``."""
    if source == "-":
        first = sys.stdin.readline()
        if not first:
            raise ParseError("empty input stream")
        rest = sys.stdin
        if first.lstrip().startswith("{"):
            yield from iter_ndjson_records(_chain(first, rest))
        else:
            yield from iter_csv_records(_chain(first, rest))
        return
    with open(source, newline="") as fh:
        yield from iter_csv_records(fh)


def _chain(first, rest):
    yield first
    yield from rest


def _state_samples(records, dt_holder):
    """``(t, x, |V|)`` per row; the first two rows fix ``dt``."""
    buses = loads = idx = None
    prev_t = None
    for header, row in records:
        if buses is None:
            buses, loads = parse_header(header)
            idx = [buses.index(b) for b in loads]
        V, I = rows_to_phasors(row[None, :], buses, loads)
        Vl = V[0, idx]
        mag = np.abs(Vl)
        if np.any(mag < 1e-6):
            raise ValidationError(f"t={row[0]}: load-bus voltage magnitude is zero")
        y = I[0] / Vl
        t = float(row[0])
        if prev_t is not None and dt_holder.get("dt") is None:
            dt_holder["dt"] = t - prev_t
            if not dt_holder["dt"] > 0:
                raise ValidationError("time stamps must increase")
        prev_t = t
        yield t, np.concatenate([y.real, y.imag]), mag


def cmd_stream(args):
    truth, events = _truth_from(args.truth)
    alpha = parse_alpha(args.alpha)
    dt_holder = {}
    samples = _state_samples(_records(args.input), dt_holder)
    # peek two rows to learn dt before sizing the init window
    head = [s for _, s in zip(range(2), samples)]
    if len(head) < 2:
        raise ValidationError("stream needs at least two samples")
    dt = dt_holder["dt"]
    n_init = int(round(args.init / dt))
    every = max(1, int(round(args.report / dt)))

    out = Path(args.out) if args.out else None
    sink = sys.stdout
    if out:
        out.mkdir(parents=True, exist_ok=True)
        sink = open(out / "stream.ndjson", "w")
    times, reports = [], []
    try:
        for t, res in stream_estimates(_prepend(head, samples),
                                       n_init, args.kappa, dt, alpha, every):
            line = {"t": round(t, 9), "tau_g_hat": res.tau_g_hat.tolist(),
                    "tau_b_hat": res.tau_b_hat.tolist(),
                    "diagnostics": res.to_dict()["diagnostics"],
                    "nonphysical": res.nonphysical}
            sink.write(_dump(line) + "\n")
            times.append(t)
            reports.append(res)
        summary = _stream_summary(times, reports, events, truth, args, alpha, n_init)
        sink.write(_dump({"summary": summary}) + "\n")
    finally:
        if out:
            sink.close()
    if out:
        outputs = [out / "stream.ndjson"]
        if args.figures and reports:
            outputs += _stream_figures(out, times, reports, events, truth, args.band)
        manifest = {"input": str(args.input), "init": args.init, "kappa": args.kappa,
                    "alpha": args.alpha, "report": args.report, "truth": args.truth,
                    "band": args.band}
        write_run_record(out, "stream", manifest, None, outputs)
    return 0


def _prepend(head, rest):
    yield from head
    yield from rest


def _truth_series(truth, events, name):
    """Piecewise-constant true value of ``name`` (e.g. ``tau_g1``)."""
    kind, k = name[:5], int(name[5:]) - 1
    ts, vals = [0.0], [float(getattr(truth, kind)[k])]
    for e in sorted(events, key=lambda e: e.t):
        if e.parameter == name:
            ts.append(e.t)
            vals.append(e.value)
    return ts, vals


def _stream_summary(times, reports, events, truth, args, alpha, n_init):
    summary = {"reports": len(reports), "n_init": n_init, "band": args.band,
               "alpha": alpha if alpha is not None else 1.0 / n_init, "convergence": []}
    if reports:
        summary["final"] = {"t": times[-1], "tau_g_hat": reports[-1].tau_g_hat.tolist(),
                            "tau_b_hat": reports[-1].tau_b_hat.tolist()}
    for e in events:
        if not e.parameter.startswith(("tau_g", "tau_b")) or not reports:
            continue
        kind, k = e.parameter[:5], int(e.parameter[5:]) - 1
        vals = [getattr(r, f"{kind}_hat")[k] for r in reports]
        summary["convergence"].append({
            "parameter": e.parameter, "t_event": e.t, "target": e.value,
            "time_to_band": convergence_time(times, vals, e.value, e.t, args.band)})
    return summary


def _stream_figures(out, times, reports, events, truth, band):
    from . import plotting

    if truth is None:
        return []
    names = sorted({e.parameter for e in events if e.parameter.startswith(("tau_g", "tau_b"))})
    if not names:
        names = ["tau_g1"]
    paths = []
    for name in names:
        kind, k = name[:5], int(name[5:]) - 1
        ts, vals = _truth_series(truth, events, name)
        est = [getattr(r, f"{kind}_hat")[k] for r in reports]
        paths.append(plotting.plot_tracking(times, est, ts, vals, name,
                                            out / f"tracking_{name}.png", band))
    return paths


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="ambientload", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic PMU data")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--case", help="grid case JSON (path or shipped name)")
    src.add_argument("--preset", choices=PRESETS, help="idealized OU load model instead of a grid")
    s.add_argument("--duration", type=float, help="seconds of data")
    s.add_argument("--dt", type=float, help=f"integration step in s (default {DT})")
    s.add_argument("--pmu-dt", dest="pmu_dt", type=float, help="PMU sample period (default --dt)")
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma-scale", dest="sigma_scale", type=float,
                   help="multiply every load noise intensity")
    s.add_argument("--event", action="append", default=[], metavar="T:PARAM:VALUE",
                   help="load parameter step, e.g. 400:tau_g1:0.12 (repeatable)")
    s.add_argument("--load-scheme", dest="load_scheme", choices=["trapezoidal", "euler"])
    s.add_argument("--manifest", help="JSON file supplying any of the options above")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="batch estimate from a PMU CSV")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--kappa", type=int, default=10, help="lag in samples")
    e.add_argument("--truth", help="sidecar JSON with true parameters")
    e.add_argument("--window", type=float, help="use only the leading seconds")
    e.add_argument("--sweep", metavar="A:B:STEP", help="window-length sweep in seconds")
    e.add_argument("--noise", metavar="FRAC:VSIGMA:SEED", help="add measurement noise")
    e.add_argument("--format", choices=["table", "json"], default="table")
    e.add_argument("--out", help="directory for estimate.json, sweep.csv, run.json")
    e.add_argument("--figures", action="store_true", help="also render PNG figures into --out")
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("stream", help="recursive estimation over a PMU stream")
    r.add_argument("--in", dest="input", required=True, help="PMU CSV, or - for stdin")
    r.add_argument("--init", type=float, default=300.0, help="init window in seconds")
    r.add_argument("--kappa", type=int, default=10)
    r.add_argument("--alpha", default="1/n", help="smoothing weight, or 1/n")
    r.add_argument("--report", type=float, default=1.0, help="report period in seconds")
    r.add_argument("--truth", help="sidecar JSON with true parameters and events")
    r.add_argument("--band", type=float, default=0.05, help="relative convergence band")
    r.add_argument("--out", help="directory for stream.ndjson and run.json")
    r.add_argument("--figures", action="store_true", help="also render tracking figures")
    r.set_defaults(func=cmd_stream)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except (AmbientLoadError, OSError, np.linalg.LinAlgError) as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
