"""affectloop: physiological streams to arousal estimates to game adaptation.

The package closes an affective loop around a player: parse or ingest pulse
and electrodermal streams, extract heart rate and skin-conductance responses,
estimate an arousal index, correlate responses with design-pattern events, and
drive a difficulty controller whose directives feed back into the game. A
synthetic player simulator with known ground truth doubles as the test oracle.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    AffectLoopError,
    AmbiguousAlignmentError,
    ConfigError,
    CoverageError,
    DenseSessionError,
    FormatError,
    SignalError,
    ValidationError,
)
from .affect import (
    AffectState,
    DwellState,
    Epoch,
    ReactionTemplate,
    arousal_index,
    build_template,
    classify,
    extract_epoch,
    format_affect_state,
    match_template,
    parse_affect_state,
    read_templates,
    write_templates,
)
from .catalog import (
    AffectAnnotation,
    Catalog,
    DesignPattern,
    Relation,
    effective_set,
    load_catalog,
    load_seed_catalog,
    parse_catalog,
    recommend,
    validate_catalog,
    write_catalog,
)
from .features import (
    Baseline,
    HrSeries,
    Scr,
    compute_baseline,
    detect_beats,
    detect_scrs,
    eda_decompose,
    ibi_to_hr,
    read_baseline,
    running_median,
    smooth,
    write_baseline,
)
from .playersim import (
    PhaseConfig,
    PhaseSchedule,
    PlayerModel,
    PlayerState,
    build_protocol_schedule,
    default_model,
    generate_session,
    init_state,
    read_model_config,
    read_phase_config,
    render_pulse,
    scr_kernel_curve,
    step,
)
from .session import (
    CHANNELS,
    EVENT_KINDS,
    ClockOffset,
    DeviceDecl,
    GameEvent,
    Sample,
    SessionMeta,
    SessionRecording,
    Stream,
    UniformSeries,
    estimate_offset,
    format_event,
    merge_streams,
    parse_event_line,
    parse_session,
    resample,
    sliding_windows,
    validate_recording,
    write_session,
)
from .control import (
    ACTIONS,
    AdaptationDirective,
    ControllerConfig,
    ControllerState,
    control_step,
    format_directive,
    parse_directive,
    read_directives,
    write_directives,
)
from .pipeline import (
    StreamProcessor,
    analyze_recording,
    baseline_from_signals,
    calibration_baseline,
)
from .loop import (
    CorrelationReport,
    LoopTrace,
    PatternStats,
    correlate_events,
    read_loop_trace,
    read_report,
    run_closed_loop,
    time_in_band,
    write_loop_trace,
    write_report,
)

__all__ = [
    "AffectLoopError",
    "AmbiguousAlignmentError",
    "ConfigError",
    "CoverageError",
    "DenseSessionError",
    "FormatError",
    "SignalError",
    "ValidationError",
    "AffectState",
    "DwellState",
    "Epoch",
    "ReactionTemplate",
    "arousal_index",
    "build_template",
    "classify",
    "extract_epoch",
    "format_affect_state",
    "match_template",
    "parse_affect_state",
    "read_templates",
    "write_templates",
    "Baseline",
    "HrSeries",
    "Scr",
    "compute_baseline",
    "detect_beats",
    "detect_scrs",
    "eda_decompose",
    "ibi_to_hr",
    "read_baseline",
    "running_median",
    "smooth",
    "write_baseline",
    "AffectAnnotation",
    "Catalog",
    "DesignPattern",
    "Relation",
    "effective_set",
    "load_catalog",
    "load_seed_catalog",
    "parse_catalog",
    "recommend",
    "validate_catalog",
    "write_catalog",
    "PhaseConfig",
    "PhaseSchedule",
    "PlayerModel",
    "PlayerState",
    "build_protocol_schedule",
    "default_model",
    "generate_session",
    "init_state",
    "read_model_config",
    "read_phase_config",
    "render_pulse",
    "scr_kernel_curve",
    "step",
    "CHANNELS",
    "EVENT_KINDS",
    "ClockOffset",
    "DeviceDecl",
    "GameEvent",
    "Sample",
    "SessionMeta",
    "SessionRecording",
    "Stream",
    "UniformSeries",
    "estimate_offset",
    "format_event",
    "merge_streams",
    "parse_event_line",
    "parse_session",
    "resample",
    "sliding_windows",
    "validate_recording",
    "write_session",
    "ACTIONS",
    "AdaptationDirective",
    "ControllerConfig",
    "ControllerState",
    "control_step",
    "format_directive",
    "parse_directive",
    "read_directives",
    "write_directives",
    "StreamProcessor",
    "analyze_recording",
    "baseline_from_signals",
    "calibration_baseline",
    "CorrelationReport",
    "LoopTrace",
    "PatternStats",
    "correlate_events",
    "read_loop_trace",
    "read_report",
    "run_closed_loop",
    "time_in_band",
    "write_loop_trace",
    "write_report",
    "__version__",
]
