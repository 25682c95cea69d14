"""Command-line surface: simulate, calibrate, detect, benchmark.

Exit codes: 0 success (including a clean no-alarm detect run), 2 usage
error, 3 alarm raised by ``detect``, 4 calibration failure. The
``NETCP_SEED`` environment variable overrides any ``--seed`` flag so one
root seed can drive a whole scripted pipeline.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .calibration import DEFAULT_PERMUTATIONS, calibrate
from .detector import DetectorState
from .evaluation import DEFAULT_T_TRAIN, MetricTable, run_experiment
from .profiles import CalibrationError, CalibrationProfile
from .simulation import generate_stream
from .streamio import (
    StreamFormatError,
    load_scenario,
    parse_header,
    read_stream_file,
    read_truth,
    truth_path,
    write_generated_stream,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ALARM = 3
EXIT_CALIBRATION = 4


def _seed(args) -> int:
    env = os.environ.get("NETCP_SEED")
    return int(env) if env is not None else args.seed


def _cmd_simulate(args) -> int:
    spec = load_scenario(args.spec)
    env = os.environ.get("NETCP_SEED")
    if env is not None:
        spec = dataclasses.replace(spec, seed=int(env))
    elif args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    stream = generate_stream(spec)
    write_generated_stream(stream, args.out, self_loops=spec.self_loops, full=args.full_records)
    print(f"wrote {len(stream.snapshots)} snapshots to {args.out}")
    print(f"truth sidecar: {truth_path(args.out)}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    training, meta = read_stream_file(args.train)
    try:
        profile, report = calibrate(
            training,
            alpha=args.alpha,
            k=args.k,
            rng_seed=_seed(args),
            grid_mode=args.grid_mode,
            workers=args.workers,
        )
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    Path(args.out).write_text(profile.to_json() + "\n")
    print(
        f"profile written to {args.out}: n={profile.n} rho={profile.rho:.4f} "
        f"p={profile.p:.4f} m={profile.m:.4f} r={profile.r} "
        f"c_eps={profile.c_eps:.6g} (crossing rate {report.crossing_rate_at_chosen:.3f})"
    )
    return EXIT_OK


def _load_profile(args) -> CalibrationProfile:
    profile = CalibrationProfile.from_json(Path(args.profile).read_text())
    overrides = {}
    if args.c_eps is not None:
        overrides["c_eps"] = args.c_eps
    if args.c_lambda is not None:
        overrides["c_lambda"] = args.c_lambda
    if args.grid_mode is not None:
        overrides["grid_mode"] = args.grid_mode
    return profile.replace(**overrides) if overrides else profile


def _report_alarm(state: DetectorState, t_max: int, truth) -> int:
    if state.alarm is not None:
        a = state.alarm
        print(f"ALARM t={a.t} s={a.s} stat={a.statistic:.6g} thresh={a.threshold:.6g}")
        if truth is not None and truth.delta is not None:
            if a.t < truth.delta:
                print(f"classification: false alarm (change at delta={truth.delta})")
            else:
                print(f"classification: delay={a.t - truth.delta} (delta={truth.delta})")
        return EXIT_ALARM
    print(f"NO-ALARM t_max={t_max}")
    if truth is not None and truth.delta is not None:
        print(f"classification: censored (change at delta={truth.delta} missed)")
    return EXIT_OK


def _detect_batch(args, profile) -> int:
    snapshots, meta = read_stream_file(args.stream)
    if profile.n != meta.n:
        print(f"profile n={profile.n} does not match stream n={meta.n}", file=sys.stderr)
        return EXIT_USAGE
    truth = read_truth(args.stream) if truth_path(args.stream).exists() else None
    state = DetectorState(profile, max_iters=args.max_iters)
    for snap in snapshots:
        outcome = state.step(snap)
        if outcome.alarm is not None:
            break
    return _report_alarm(state, meta.t_max, truth)


def _detect_follow(args, profile) -> int:
    """Tail the stream file, emitting one status line per completed step."""
    from .streamio import _parse_record_line, parse_records

    path = Path(args.stream)
    state: DetectorState | None = None
    meta = None
    pending: list = []
    done_t = 0
    buffered = ""
    position = 0
    truth = None

    def flush_through(t_ready: int):
        nonlocal pending, done_t, state
        while done_t < t_ready:
            t = done_t + 1
            recs = [r for r in pending if r[0] == t]
            pending = [r for r in pending if r[0] != t]
            snap = parse_records(
                dataclasses.replace(meta, t_max=1),
                [(1, i, j, y, om) for (_, i, j, y, om) in recs],
            )[0]
            snap = dataclasses.replace(snap, t=t)
            outcome = state.step(snap)
            done_t = t
            if outcome.evaluated_pairs:
                s, stat, eps = max(outcome.evaluated_pairs, key=lambda p: p[1] / p[2])
                print(f"t={t} max_stat={stat:.6g} at s={s} thresh={eps:.6g}", flush=True)
            else:
                print(f"t={t} warmup", flush=True)
            if outcome.alarm is not None:
                return True
        return False

    stale_polls = 0
    while True:
        with open(path) as fh:
            fh.seek(position)
            chunk = fh.read()
            position = fh.tell()
        stale_polls = stale_polls + 1 if not chunk else 0
        buffered += chunk
        lines = buffered.split("\n")
        buffered = lines.pop()  # may be a partial line
        for line in lines:
            if not line.strip():
                continue
            if meta is None:
                meta = parse_header(line)
                if profile.n != meta.n:
                    print(
                        f"profile n={profile.n} does not match stream n={meta.n}",
                        file=sys.stderr,
                    )
                    return EXIT_USAGE
                state = DetectorState(profile, max_iters=args.max_iters)
                truth = read_truth(path) if truth_path(path).exists() else None
                continue
            rec = _parse_record_line(line.strip(), 0, meta)
            if rec[0] <= done_t:
                raise StreamFormatError(f"record for finished step t={rec[0]}")
            pending.append(rec)
            if rec[0] > done_t + 1 and flush_through(rec[0] - 1):
                return _report_alarm(state, meta.t_max, truth)
        if meta is not None and not buffered and stale_polls >= 2:
            # no new data for two polls: finish once the declared length is covered
            if max((r[0] for r in pending), default=done_t) >= meta.t_max:
                flush_through(meta.t_max)
                return _report_alarm(state, meta.t_max, truth)
        time.sleep(args.poll_interval)


def _cmd_detect(args) -> int:
    profile = _load_profile(args)
    if args.follow:
        return _detect_follow(args, profile)
    return _detect_batch(args, profile)


def _cmd_benchmark(args) -> int:
    specs = []
    for spec_arg in args.specs:
        p = Path(spec_arg)
        if p.is_dir():
            specs.extend(sorted(p.glob("*.json")))
        else:
            specs.append(p)
    specs = [s for s in specs if not str(s).endswith(".truth.json")]
    if not specs:
        print("no scenario specs found", file=sys.stderr)
        return EXIT_USAGE

    rows = []
    failures = []
    for spec_path in specs:
        base = load_scenario(spec_path)
        for pi in args.pi_list:
            for alpha in args.alpha_list:
                spec = dataclasses.replace(base, pi=pi)
                label = f"{spec_path.stem}"
                print(
                    f"benchmark {label}: pi={pi} alpha={alpha} n_reps={args.n_reps}",
                    file=sys.stderr,
                    flush=True,
                )
                try:
                    row, _ = run_experiment(
                        spec,
                        n_reps=args.n_reps,
                        alpha=alpha,
                        base_seed=_seed(args),
                        t_train=args.t_train,
                        k_permutations=args.k,
                        workers=args.workers,
                        scenario_label=label,
                    )
                    rows.append(row)
                except Exception as exc:  # record the failed cell, keep going
                    failures.append((label, pi, alpha, str(exc)))
                    print(f"  failed: {exc}", file=sys.stderr, flush=True)
    table = MetricTable(rows=rows)
    Path(args.out).write_text(table.to_csv())
    if args.json_out:
        Path(args.json_out).write_text(table.to_json())
    print(f"wrote {len(rows)} rows to {args.out}")
    for label, pi, alpha, msg in failures:
        print(f"failed cell: {label} pi={pi} alpha={alpha}: {msg}", file=sys.stderr)
    return EXIT_OK if rows else EXIT_CALIBRATION


def _alpha(value: str) -> float:
    a = float(value)
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1), got {value}")
    return a


def _float_list(value: str) -> list[float]:
    items = [v for v in value.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    return [float(v) for v in items]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netcp",
        description="Online change-point detection for dynamic networks with missing edges",
    )
    parser.add_argument("--version", action="version", version=f"netcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a stream file from a scenario spec")
    sim.add_argument("spec", help="scenario spec JSON")
    sim.add_argument("out", help="output stream file")
    sim.add_argument("--seed", type=int, default=None, help="override the spec seed")
    sim.add_argument(
        "--full-records", action="store_true",
        help="emit every upper-triangle entry, including unobserved ones",
    )
    sim.set_defaults(func=_cmd_simulate)

    cal = sub.add_parser("calibrate", help="estimate a profile from training data")
    cal.add_argument("train", help="training stream file (change-free)")
    cal.add_argument("out", help="output profile JSON")
    cal.add_argument("--alpha", type=_alpha, required=True)
    cal.add_argument("--k", type=int, default=DEFAULT_PERMUTATIONS,
                     help="number of training permutations")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--grid-mode", choices=("dyadic", "full"), default="dyadic")
    cal.add_argument("--workers", type=int, default=1)
    cal.set_defaults(func=_cmd_calibrate)

    det = sub.add_parser("detect", help="run the detector over a stream file")
    det.add_argument("stream", help="stream file")
    det.add_argument("profile", help="profile JSON from calibrate")
    det.add_argument("--follow", action="store_true",
                     help="poll the file for appended records")
    det.add_argument("--poll-interval", type=float, default=0.2)
    det.add_argument("--c-eps", type=float, default=None, help="override fitted c_eps")
    det.add_argument("--c-lambda", type=float, default=None)
    det.add_argument("--grid-mode", choices=("dyadic", "full"), default=None)
    det.add_argument("--max-iters", type=int, default=500)
    det.set_defaults(func=_cmd_detect)

    ben = sub.add_parser("benchmark", help="delay/false-alarm tables over scenario grids")
    ben.add_argument("specs", nargs="+", help="scenario spec JSON files or directories")
    ben.add_argument("--alpha-list", type=_float_list, required=True)
    ben.add_argument("--pi-list", type=_float_list, required=True)
    ben.add_argument("--n-reps", type=int, default=100)
    ben.add_argument("--out", required=True, help="output CSV path")
    ben.add_argument("--json-out", default=None)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--t-train", type=int, default=DEFAULT_T_TRAIN)
    ben.add_argument("--k", type=int, default=DEFAULT_PERMUTATIONS)
    ben.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ben.set_defaults(func=_cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for alpha in getattr(args, "alpha_list", []) or []:
        if not 0 < alpha < 1:
            parser.error(f"alpha must be in (0, 1), got {alpha}")
    try:
        return args.func(args)
    except (StreamFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
