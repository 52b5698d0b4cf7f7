"""Static vector plots: per-channel time series with event markers, arousal trace."""

from __future__ import annotations

from pathlib import Path

from .session import SessionRecording

_YLABEL = {"pulse": "amplitude", "eda": "conductance [uS]", "hr": "rate [bpm]"}
_MARK_KINDS = ("pattern_event", "stimulus_onset")


def plot_session(
    rec: SessionRecording, states, out_dir: str | Path
) -> list[Path]:
    """Write one SVG per recorded channel plus an arousal trace SVG.

    Event markers (pattern events and stimulus onsets) appear as vertical
    lines on every panel. Returns the paths written, channels first.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marks = [ev.t for ev in rec.events if ev.kind in _MARK_KINDS]
    written: list[Path] = []

    def decorate(ax, title, ylabel):
        for t in marks:
            ax.axvline(t, color="tab:red", alpha=0.25, lw=0.8)
        ax.set_xlabel("t [s]")
        ax.set_ylabel(ylabel)
        ax.set_title(title)

    for (dev, ch) in sorted(rec.streams):
        s = rec.streams[(dev, ch)]
        fig, ax = plt.subplots(figsize=(10, 3), layout="constrained")
        ax.plot(s.t, s.values, lw=0.6, color="tab:blue")
        decorate(ax, f"{dev}/{ch}", _YLABEL.get(ch, ch))
        path = out / f"{dev}_{ch}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(10, 3), layout="constrained")
    if states:
        ax.plot([st.t for st in states], [st.arousal for st in states], lw=1.2)
    ax.set_ylim(0.0, 1.0)
    decorate(ax, "arousal index", "arousal")
    path = out / "arousal.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)
    return written
