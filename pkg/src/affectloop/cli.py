"""Command-line surface tying the pipeline together.

Subcommands: simulate (synthetic session files), calibrate (baseline from a
recorded calibration phase), analyze (offline affect trace + correlation
report + plots), loop (closed-loop adaptation run), serve (live TCP
ingestion), replay (stream a session file to a server), and catalog
(validate / recommend).

Exit codes: 0 success, 1 usage, 2 data or validation problem, 3 I/O problem.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

from . import __version__
from .affect import format_affect_state
from .catalog import load_catalog, load_seed_catalog, recommend, validate_catalog
from .control import ControllerConfig
from .errors import AffectLoopError
from .features import eda_decompose, read_baseline, smooth, write_baseline
from .loop import (
    correlate_events,
    run_closed_loop,
    time_in_band,
    write_arousal_columns,
    write_loop_trace,
    write_report,
)
from .pipeline import analyze_recording, calibration_baseline
from .playersim import (
    PhaseConfig,
    build_protocol_schedule,
    default_model,
    generate_session,
    read_model_config,
    read_phase_config,
)
from .server import AffectServer, ServeEngine, replay_session
from .session import UniformSeries, parse_session, write_session

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the documented contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_catalog(path: str | None):
    if path is None:
        return load_seed_catalog()
    return load_catalog(Path(path).read_bytes())


def _controller_from(args) -> ControllerConfig:
    return ControllerConfig(
        band=(args.band[0], args.band[1]),
        dwell_s=args.dwell,
        cooldown_s=args.cooldown,
        eval_period_s=args.eval_period,
    )


def _player_from(args, catalog):
    if args.model_config is not None:
        model = read_model_config(Path(args.model_config).read_bytes(), catalog)
    else:
        model = default_model(catalog)
    return replace(model, seed=args.seed)


def _session_phasic(rec, smooth_window_s: float):
    streams = rec.channel_streams("eda")
    if not streams:
        raise AffectLoopError("session has no eda stream to correlate against")
    s = streams[0]
    rate = next(
        d.rate_hz
        for d in rec.meta.devices
        if d.device_id == s.device_id and d.channel == "eda"
    )
    series = UniformSeries(float(s.t[0]), rate, s.values)
    _, phasic = eda_decompose(smooth(series, smooth_window_s))
    return phasic


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    catalog = _load_catalog(args.catalog)
    if args.phase_config is not None:
        cfg = read_phase_config(Path(args.phase_config).read_bytes())
    else:
        cfg = PhaseConfig()
    overrides = {"seed": args.seed}
    if args.phases is not None:
        overrides["phases"] = tuple(args.phases.split(","))
    if args.calibration_stimuli is not None:
        overrides["calibration_stimuli"] = args.calibration_stimuli
    if args.gaming_duration is not None:
        overrides["gaming_duration_s"] = args.gaming_duration
    if args.event_rate is not None:
        overrides["gaming_event_rate_per_min"] = args.event_rate
    cfg = replace(cfg, **overrides)

    sched = build_protocol_schedule(cfg, catalog)
    model = _player_from(args, catalog)
    rec = generate_session(model, sched)
    Path(args.out).write_bytes(write_session(rec))

    bounds = sched.phase_bounds()
    for name, (lo, hi) in bounds.items():
        n = sum(
            1 for ev in rec.events if ev.kind != "phase_marker" and lo <= ev.t < hi
        )
        print(f"{name}: {n} events, {hi - lo:.1f} s")
    print(f"wrote {args.out} ({sched.duration_s:.1f} s, {len(rec.streams)} streams)")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    rec = parse_session(Path(args.session).read_bytes())
    baseline = calibration_baseline(rec)
    Path(args.out).write_bytes(write_baseline(baseline))
    print(
        f"baseline over {baseline.duration_s:.1f} s: "
        f"hr {baseline.hr_mean:.1f} bpm, scl {baseline.scl_mean:.3f} uS, "
        f"{baseline.scr_rate_per_min:.2f} scr/min"
    )
    return EXIT_OK


def cmd_analyze(args) -> int:
    rec = parse_session(Path(args.session).read_bytes())
    baseline = read_baseline(Path(args.baseline).read_bytes())
    catalog = _load_catalog(args.catalog)
    states = analyze_recording(
        rec,
        baseline,
        catalog,
        eval_period_s=args.eval_period,
        window_s=args.window,
        smooth_window_s=args.smooth_window,
    )
    phasic = _session_phasic(rec, args.smooth_window)
    report = correlate_events(
        rec,
        phasic,
        catalog,
        response_window=(args.response_window[0], args.response_window[1]),
        n_permutations=args.permutations,
        seed=args.seed,
    )

    trace_text = "".join(format_affect_state(st) + "\n" for st in states)
    report_text = write_report(report)
    sys.stdout.write(trace_text)
    sys.stdout.write(report_text)
    if args.trace is not None:
        Path(args.trace).write_text(trace_text)
    if args.report is not None:
        Path(args.report).write_text(report_text)
    if args.plot is not None:
        from .plots import plot_session

        written = plot_session(rec, states, args.plot)
        print(f"wrote {len(written)} plot files to {args.plot}", file=sys.stderr)
    return EXIT_OK


def cmd_loop(args) -> int:
    catalog = _load_catalog(args.catalog)
    model = _player_from(args, catalog)
    trace = run_closed_loop(
        model,
        _controller_from(args),
        catalog,
        duration_s=args.duration,
        seed=args.seed,
    )
    if args.trace is not None:
        Path(args.trace).write_text(write_loop_trace(trace))
    if args.arousal is not None:
        Path(args.arousal).write_text(write_arousal_columns(trace.states))
    t_lo = max(0.0, args.duration - 120.0)
    frac = time_in_band(trace, t_lo=t_lo)
    print(
        f"time in band [{trace.controller.band[0]:g}, {trace.controller.band[1]:g}] "
        f"over final {args.duration - t_lo:.0f} s: {100.0 * frac:.1f}%"
    )
    print(f"{len(trace.states)} states, {len(trace.directives)} directives")
    return EXIT_OK


def cmd_serve(args) -> int:
    baseline = read_baseline(Path(args.baseline).read_bytes())
    catalog = _load_catalog(args.catalog)
    controller = _controller_from(args) if args.control else None
    engine = ServeEngine(
        baseline,
        catalog,
        controller=controller,
        out=sys.stdout,
        eval_period_s=args.eval_period,
    )
    srv = AffectServer(args.host, args.port, engine)
    srv.start()
    print(f"listening on {srv.host}:{srv.port}", file=sys.stderr)
    stop = threading.Event()
    # installed explicitly: an inherited SIG_IGN (backgrounded process) would
    # otherwise leave no way to shut down cleanly
    for signum in (signal.SIGINT, signal.SIGTERM):
        signal.signal(signum, lambda *_: stop.set())
    try:
        while not stop.is_set():
            stop.wait(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        srv.close(timeout=5.0)
    return EXIT_OK


def cmd_replay(args) -> int:
    replay_session(
        Path(args.session).read_bytes(), args.host, args.port, pace=args.pace
    )
    return EXIT_OK


def cmd_catalog(args) -> int:
    cat = _load_catalog(args.file)
    if args.action == "validate":
        violations = validate_catalog(cat)
        for line in violations:
            print(line)
        return EXIT_DATA if violations else EXIT_OK
    selected = tuple(s for s in (args.selected or "").split(",") if s)
    for pid in recommend(cat, selected, args.goal, args.k):
        print(pid)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(
        prog="affectloop",
        description="Physiological streams to arousal estimates to game adaptation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def add_catalog_flag(p):
        p.add_argument(
            "--catalog",
            metavar="PATH",
            default=None,
            help="pattern catalog file (default: the built-in seed catalog)",
        )

    def add_controller_flags(p):
        p.add_argument(
            "--band", nargs=2, type=float, metavar=("LO", "HI"), default=(0.4, 0.7),
            help="target arousal band",
        )
        p.add_argument("--dwell", type=float, default=3.0, help="seconds out of band before acting")
        p.add_argument("--cooldown", type=float, default=5.0, help="minimum seconds between directives")
        p.add_argument("--eval-period", type=float, default=1.0, help="evaluation period in seconds")

    p = sub.add_parser("simulate", formatter_class=fmt, help="generate a synthetic session file")
    p.add_argument("--out", metavar="PATH", required=True, help="session file to write")
    p.add_argument("--seed", type=int, default=1, help="player and schedule seed")
    p.add_argument("--phases", default=None, help="comma-separated phase subset in protocol order (default: all)")
    p.add_argument("--calibration-stimuli", type=int, default=None, help="stimulus count in calibration (default: 10)")
    p.add_argument("--gaming-duration", type=float, default=None, help="gaming phase length in seconds (default: 180)")
    p.add_argument("--event-rate", type=float, default=None, help="gaming pattern events per minute (default: 6)")
    p.add_argument("--model-config", metavar="PATH", default=None, help="player model config file")
    p.add_argument("--phase-config", metavar="PATH", default=None, help="phase schedule config file")
    add_catalog_flag(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", formatter_class=fmt, help="fit a baseline from a session's calibration phase")
    p.add_argument("session", help="session file with a calibration phase marker")
    p.add_argument("--out", metavar="PATH", required=True, help="baseline file to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", formatter_class=fmt, help="offline affect trace and correlation report")
    p.add_argument("session", help="session file to analyze")
    p.add_argument("--baseline", metavar="PATH", required=True, help="baseline file from calibrate")
    add_catalog_flag(p)
    p.add_argument("--eval-period", type=float, default=1.0, help="affect evaluation period in seconds")
    p.add_argument("--window", type=float, default=5.0, help="feature window length in seconds")
    p.add_argument("--smooth-window", type=float, default=0.75, help="eda smoothing window in seconds")
    p.add_argument("--response-window", nargs=2, type=float, metavar=("LO", "HI"), default=(1.0, 6.0),
                   help="post-event window for the response statistic")
    p.add_argument("--permutations", type=int, default=1000, help="surrogate draws for the null distribution")
    p.add_argument("--seed", type=int, default=0, help="surrogate sampling seed")
    p.add_argument("--trace", metavar="PATH", default=None, help="also write the affect trace here")
    p.add_argument("--report", metavar="PATH", default=None, help="also write the correlation report here")
    p.add_argument("--plot", metavar="DIR", default=None, help="write per-channel and arousal SVG plots into DIR")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("loop", formatter_class=fmt, help="closed-loop run against the synthetic player")
    p.add_argument("--duration", type=float, default=300.0, help="main phase length in seconds (minimum 60)")
    p.add_argument("--seed", type=int, default=1, help="player seed")
    p.add_argument("--model-config", metavar="PATH", default=None, help="player model config file")
    add_catalog_flag(p)
    add_controller_flags(p)
    p.add_argument("--trace", metavar="PATH", default=None, help="write the event/state/directive trace here")
    p.add_argument("--arousal", metavar="PATH", default=None, help="write t/arousal columns here")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("serve", formatter_class=fmt, help="TCP ingestion service emitting live affect states")
    p.add_argument("--port", type=int, required=True, help="TCP port to listen on (0 picks a free port)")
    p.add_argument("--host", default="127.0.0.1", help="interface to bind")
    p.add_argument("--baseline", metavar="PATH", required=True, help="baseline file from calibrate")
    add_catalog_flag(p)
    p.add_argument("--control", action="store_true", help="attach the difficulty controller and emit directives")
    add_controller_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", formatter_class=fmt, help="stream a session file to a running server")
    p.add_argument("session", help="session file to send")
    p.add_argument("--port", type=int, required=True, help="server port")
    p.add_argument("--host", default="127.0.0.1", help="server host")
    p.add_argument("--pace", type=float, default=0.0,
                   help="replay speed: 0 sends at full rate, 1 in real time, 2 twice as fast")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("catalog", formatter_class=fmt, help="pattern catalog tools")
    p.add_argument("action", choices=("validate", "recommend"), help="what to do")
    p.add_argument("--file", metavar="PATH", default=None, help="catalog file (default: the built-in seed catalog)")
    p.add_argument("--selected", default="", help="comma-separated ids already in play (recommend)")
    p.add_argument("--goal", choices=("raise", "lower"), default="raise", help="arousal direction to push (recommend)")
    p.add_argument("-k", type=int, default=3, help="number of recommendations")
    p.set_defaults(func=cmd_catalog)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AffectLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
