"""Command-line entry point.

Exit status: 0 on success, 2 for usage or configuration errors, 3 for
numeric or fit failures. Numbers are written as plain decimals with at most
12 significant digits.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import attack, channel, protocol, timetag
from .qmath import GaussianMode

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def fmt(x) -> str:
    """Plain decimal, at most 12 significant digits; NaN as ``nan``."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if x == 0:
        return "0"
    return np.format_float_positional(x, precision=12, fractional=False, trim="-")


def write_output(path, text: str) -> None:
    """Write ``text`` to ``path`` atomically, or to stdout for None/'-'."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def resolve_seed(seed):
    if seed is not None:
        return int(seed)
    drawn = int(np.random.SeedSequence().entropy % (2**63))
    print(f"seed: {drawn}", file=sys.stderr)
    return drawn


def arange_inclusive(start: float, stop: float, step: float) -> np.ndarray:
    if not (step > 0):
        raise UsageError("step must be positive")
    if not (np.isfinite(start) and np.isfinite(stop)) or stop < start:
        raise UsageError("range stop must not be below start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def derived_seed(seed: int, row: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(row)]).generate_state(1, np.uint64)[0])


# -- qber-scan ------------------------------------------------------------


def cmd_qber_scan(args) -> int:
    mode = GaussianMode(w=args.w, q0=args.q0)
    d_b = arange_inclusive(args.d_b_start, args.d_b_stop, args.d_b_step)
    analytic = channel.qber_analytic_grid(args.d_a, d_b, mode)
    header = ["d_b_mm", "qber_analytic"]
    rows = [[b, q] for b, q in zip(d_b, analytic)]
    if args.monte_carlo is not None:
        if args.monte_carlo < 1:
            raise UsageError("--monte-carlo needs a positive bit count")
        seed = resolve_seed(args.seed)
        header += ["qber_mc", "ci95", "n_sifted"]
        n_rounds = int(2.2 * args.monte_carlo) + 64
        for k, b in enumerate(d_b):
            cfg = protocol.ProtocolConfig(
                n_rounds=n_rounds,
                d_values=(args.d_a,),
                bob_d_values=(float(b),),
                mode=mode,
                seed=derived_seed(seed, k),
            )
            rep = protocol.run_protocol(cfg, workers=args.workers).report
            rows[k] += [rep.qber, rep.ci95, rep.total]
    write_output(args.output, csv_text(header, rows))
    best = int(np.argmin(analytic))
    print(f"argmin d_b_mm={fmt(d_b[best])} qber_analytic={fmt(analytic[best])}", file=sys.stderr)
    return EXIT_OK


# -- renyi ----------------------------------------------------------------


def renyi_rows(gamma0_values, qber_grid):
    rows = []
    for g0 in gamma0_values:
        curves = {kind: attack.renyi_vs_qber_curve(g0, qber_grid, kind) for kind in ("hv", "da", "total")}
        for i, q in enumerate(qber_grid):
            pts = [curves[k][i] for k in ("hv", "da", "total")]
            infeasible = not all(p.feasible for p in pts)
            rows.append([g0, q] + [p.info for p in pts] + [q < attack.SECURITY_THRESHOLD, infeasible])
    return rows


def cmd_renyi(args) -> int:
    for g0 in args.gamma0:
        if not (0.0 <= g0 <= 1.0):
            raise UsageError("gamma0 values must lie in [0, 1]")
    grid = arange_inclusive(args.qber_start, args.qber_stop, args.qber_step)
    if grid[0] < 0:
        raise UsageError("QBER grid must be non-negative")
    header = ["gamma0", "qber", "I_hv_bits", "I_da_bits", "I_total_bits", "below_11pct", "infeasible"]
    write_output(args.output, csv_text(header, renyi_rows(args.gamma0, grid)))
    return EXIT_OK


# -- simulate -------------------------------------------------------------


def _schema():
    return json.loads(resources.files("decoqkd").joinpath("configs/schema.json").read_text())


def bundled_configs() -> list[str]:
    root = resources.files("decoqkd").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and p.name != "schema.json")


def load_config(ref: str) -> dict:
    """Read a config from a path, or from a bundled name such as ``baseline``."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        name = ref[:-5] if ref.endswith(".json") else ref
        if name not in bundled_configs():
            raise UsageError(f"config not found: {ref} (bundled: {', '.join(bundled_configs())})")
        text = resources.files("decoqkd").joinpath(f"configs/{name}.json").read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    errors = sorted(jsonschema.Draft202012Validator(_schema()).iter_errors(data), key=lambda e: [str(x) for x in e.path])
    if errors:
        msgs = "; ".join(f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors)
        raise UsageError(f"invalid config: {msgs}")
    return data


def run_record(cfg: protocol.ProtocolConfig, result: protocol.ProtocolResult) -> dict:
    r = result.rounds
    kept = result.kept
    per_basis = {}
    for b, name in enumerate(protocol.BASES):
        sel = kept[r.alice_basis[kept] == b]
        per_basis[name] = {
            "kept": int(len(sel)),
            "errors": int(np.sum(r.alice_bit[sel] != r.bob_bit[sel])),
        }
    record = {
        "config": cfg.to_dict(),
        "seed": int(cfg.seed),
        "n_rounds": int(len(r)),
        "n_kept": int(len(kept)),
        "alice_key": result.alice_key.to_string(),
        "bob_key": result.bob_key.to_string(),
        "qber_report": result.report.to_dict(),
        "per_basis": per_basis,
        "expected_qber": protocol.expected_qber(cfg),
    }
    if result.eve_key is not None:
        record["eve_key"] = result.eve_key.to_string()
        agreement = result.eve_agreement()
        record["eve_agreement"] = {
            k: {**v, "rate": None if v["n"] == 0 else v["rate"]} for k, v in agreement.items()
        }
    return record


def cmd_simulate(args) -> int:
    data = load_config(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    elif "seed" not in data:
        data["seed"] = resolve_seed(None)
    try:
        cfg = protocol.ProtocolConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    result = protocol.run_protocol(cfg, workers=args.workers)
    write_output(args.output, json_text(run_record(cfg, result)))
    rep = result.report
    print(f"kept={len(result.kept)} qber={fmt(rep.qber)} ci95={fmt(rep.ci95)}", file=sys.stderr)
    return EXIT_OK


# -- timetag --------------------------------------------------------------


def cmd_tt_gen(args) -> int:
    if args.pairs < 0:
        raise UsageError("--pairs must be non-negative")
    if args.jitter < 0 or args.dark_rate < 0:
        raise UsageError("--jitter and --dark-rate must be non-negative")
    seed = resolve_seed(args.seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    bits = rng.integers(0, 2, size=args.pairs, dtype=np.uint8)
    sched = timetag.planted_schedule(bits, spacing=args.spacing)
    alice, bob = timetag.generate_events(
        sched,
        jitter_sigma=args.jitter,
        delay=args.delay,
        dark_rates=(args.dark_rate,) * 4,
        duration=args.duration,
        seed=seed,
    )
    for stream, path in ((alice, args.alice), (bob, args.bob)):
        write_output(path, stream.to_csv_text())
    if args.truth:
        a_bits, b_bits = timetag.schedule_bits(sched)
        truth = {
            "alice_key": "".join(map(str, a_bits)),
            "bob_key": "".join(map(str, b_bits)),
            "delay_ticks": args.delay,
            "lag_sigma_ticks": args.jitter * math.sqrt(2.0),
            "seed": seed,
        }
        write_output(args.truth, json_text(truth))
    return EXIT_OK


def _read_stream(path):
    try:
        return timetag.DetectionStream.read_csv(path)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: malformed event file ({exc})") from exc


def cmd_tt_g2(args) -> int:
    if args.bin_width < 1 or args.range < 0:
        raise UsageError("--bin-width must be >= 1 and --range >= 0")
    hist = timetag.g2_histogram(_read_stream(args.alice), _read_stream(args.bob), args.bin_width, args.range)
    rows = [[int(lag)] + [int(hist.counts[p][k]) for p in timetag.PAIRS] for k, lag in enumerate(hist.lag_lo)]
    write_output(args.output, csv_text(["lag_ticks"] + [f"count_{p}" for p in timetag.PAIRS], rows))
    return EXIT_OK


def cmd_tt_fit(args) -> int:
    try:
        hist = timetag.G2Histogram.read_csv(args.histogram)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {args.histogram}") from exc
    except (ValueError, StopIteration, IndexError) as exc:
        raise UsageError(f"{args.histogram}: malformed histogram ({exc})") from exc
    if args.pair != "all" and args.pair not in timetag.PAIRS:
        raise UsageError(f"--pair must be 'all' or one of {', '.join(timetag.PAIRS)}")
    win = timetag.fit_gaussian_peak(hist, pair=args.pair, min_peak_count=args.min_count)
    out = {
        "tau0_ticks": win.tau0,
        "sigma_ticks": win.sigma,
        "half_width_multiplier": win.half_width_multiplier,
        "amplitude_counts": win.amplitude,
        "background_counts_per_tick": win.background,
        "fit_residual_rms": win.residual,
        "pair": args.pair,
    }
    write_output(args.output, json_text(out))
    return EXIT_OK


def _read_window(path) -> timetag.CoincidenceWindow:
    try:
        data = json.loads(Path(path).read_text())
        return timetag.CoincidenceWindow(
            tau0=float(data["tau0_ticks"]),
            sigma=float(data["sigma_ticks"]),
            half_width_multiplier=float(data.get("half_width_multiplier", 2.0)),
        )
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"{path}: malformed window file ({exc})") from exc


def cmd_tt_sift(args) -> int:
    alice = _read_stream(args.alice)
    bob = _read_stream(args.bob)
    window = _read_window(args.window)
    if args.half_width_multiplier is not None:
        window = timetag.CoincidenceWindow(window.tau0, window.sigma, args.half_width_multiplier)
    matches = timetag.find_coincidences(alice, bob, window)
    transcript = timetag.public_transcript(matches, alice, bob)
    write_output(
        args.transcript,
        csv_text(["index_a", "t_a_ticks", "index_b", "t_b_ticks"], transcript),
    )
    a_bits, b_bits = timetag.assemble_key(matches, alice, bob)
    key = {
        "alice_key": "".join(map(str, a_bits)),
        "bob_key": "".join(map(str, b_bits)),
        "n_coincidences": len(matches),
        "mismatches": int(np.sum(a_bits != b_bits)),
    }
    write_output(args.key_out, json_text(key))
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decoqkd", description="Decoherence-assisted BB84 simulator")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("qber-scan", help="QBER versus Bob's displacement (CSV)")
    q.add_argument("--d-a", type=float, required=True, help="Alice displacement, mm")
    q.add_argument("--d-b-start", type=float, default=0.0, help="mm")
    q.add_argument("--d-b-stop", type=float, default=0.8, help="mm")
    q.add_argument("--d-b-step", type=float, default=0.01, help="mm")
    q.add_argument("--w", type=float, default=0.8, help="beam width, mm")
    q.add_argument("--q0", type=float, default=6.87, help="tilt wavenumber, 1/mm")
    q.add_argument("--monte-carlo", type=int, metavar="N", help="add a Monte Carlo column with ~N sifted bits per row")
    q.add_argument("--seed", type=int)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_qber_scan)

    r = sub.add_parser("renyi", help="Eve's Renyi information versus QBER (CSV)")
    r.add_argument("--gamma0", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    r.add_argument("--qber-start", type=float, default=0.0)
    r.add_argument("--qber-stop", type=float, default=0.5)
    r.add_argument("--qber-step", type=float, default=0.01)
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_renyi)

    s = sub.add_parser("simulate", help="Monte Carlo protocol run (JSON record)")
    s.add_argument("config", help="config path or bundled name (baseline, ideal, attack_s04)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("timetag", help="time-tag pipeline")
    tsub = t.add_subparsers(dest="tt_command", required=True)

    g = tsub.add_parser("gen", help="synthetic click streams with a planted key")
    g.add_argument("--pairs", type=int, default=10_000)
    g.add_argument("--jitter", type=float, default=6.0, help="per-side jitter sigma, ticks")
    g.add_argument("--delay", type=int, default=1234, help="Bob delay, ticks")
    g.add_argument("--dark-rate", type=float, default=0.0, help="dark counts per tick per detector")
    g.add_argument("--spacing", type=int, default=10_000, help="ticks between emissions")
    g.add_argument("--duration", type=int, help="ticks; defaults to just past the last pair")
    g.add_argument("--seed", type=int)
    g.add_argument("--alice", required=True)
    g.add_argument("--bob", required=True)
    g.add_argument("--truth", help="JSON file for the planted keys")
    g.set_defaults(func=cmd_tt_gen)

    h = tsub.add_parser("g2", help="G2 histogram of Bob-minus-Alice lags")
    h.add_argument("--alice", required=True)
    h.add_argument("--bob", required=True)
    h.add_argument("--bin-width", type=int, default=timetag.DEFAULT_BIN_WIDTH, help="ticks")
    h.add_argument("--range", type=int, default=timetag.DEFAULT_RANGE, help="+/- ticks")
    h.add_argument("-o", "--output")
    h.set_defaults(func=cmd_tt_g2)

    f = tsub.add_parser("fit", help="Gaussian fit of the G2 peak")
    f.add_argument("histogram")
    f.add_argument("--pair", default="all")
    f.add_argument("--min-count", type=float, default=timetag.DEFAULT_MIN_PEAK_COUNT)
    f.add_argument("-o", "--output")
    f.set_defaults(func=cmd_tt_fit)

    m = tsub.add_parser("sift", help="match coincidences and assemble keys")
    m.add_argument("--alice", required=True)
    m.add_argument("--bob", required=True)
    m.add_argument("--window", required=True, help="JSON written by 'timetag fit'")
    m.add_argument("--half-width-multiplier", type=float)
    m.add_argument("--transcript", required=True, help="public CSV of indexes and timestamps")
    m.add_argument("--key-out", required=True)
    m.set_defaults(func=cmd_tt_sift)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    prog = f"{parser.prog}: error:"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{prog} {exc}", file=sys.stderr)
        return EXIT_USAGE
    except timetag.FitError as exc:
        print(f"{prog} fit failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"{prog} numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"{prog} {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
