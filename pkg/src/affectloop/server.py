"""TCP ingestion service: live sample lines in, affect states out.

Clients connect over TCP and stream the same line format the session files
use, minus the H header: D lines declare their streams, S lines carry
samples, E lines carry game events. All connections feed one shared
processor, so several single-channel devices merge into one analysis exactly
as if a single client had sent the interleaved stream. Every evaluation
period the newly final affect states are written to the output stream as F
lines, followed by any adaptation directives as A lines when a controller is
attached. Timestamps are the t fields in the data, never the wall clock,
which keeps a replayed file bit-identical to the offline analysis.

A malformed line answers `ERR <line#> <msg>` on that connection only and the
stream continues; line numbers count every line the connection has sent.
"""

from __future__ import annotations

import socket
import threading
import time
from typing import IO

from .affect import format_affect_state
from .catalog import Catalog, require_raise_pattern
from .control import ControllerConfig, ControllerState, control_step, format_directive
from .errors import AffectLoopError, ConfigError, FormatError
from .features import Baseline
from .pipeline import StreamProcessor
from .session import parse_event_line


class ServeEngine:
    """Shared line handler behind the TCP front end.

    One StreamProcessor, one lock: processing of the merged stream is
    strictly serialized no matter how many connections feed it. Usable
    directly (tests, in-process replay) without any sockets.
    """

    def __init__(
        self,
        baseline: Baseline,
        catalog: Catalog | None = None,
        *,
        controller: ControllerConfig | None = None,
        out: IO[str],
        **processor_kwargs,
    ):
        if controller is not None:
            if catalog is None:
                raise ConfigError("a controller needs a catalog to pick patterns from")
            lo, hi = controller.band
            if lo > 0.0 or hi < 1.0:
                require_raise_pattern(catalog)
        self._proc = StreamProcessor(baseline, catalog, **processor_kwargs)
        self._catalog = catalog
        self._controller = controller
        self._ctl_state = ControllerState() if controller is not None else None
        self._out = out
        self._lock = threading.Lock()
        self._closed = False
        self.lines_handled = 0
        self.directives: list = []

    @property
    def states(self):
        return self._proc.states

    def handle_line(self, line: str) -> str | None:
        """Feed one wire line; returns an error message or None on success."""
        text = line.strip()
        with self._lock:
            self.lines_handled += 1
            if not text or text.startswith("#"):
                return None
            parts = text.split()
            tag = parts[0]
            try:
                if self._closed:
                    raise ConfigError("server is shutting down")
                if tag == "D":
                    if len(parts) != 4:
                        raise FormatError("D line needs device, channel, rate")
                    self._proc.declare(parts[1], parts[2], _num(parts[3], "rate"))
                elif tag == "S":
                    if len(parts) != 5:
                        raise FormatError("S line needs t, device, channel, value")
                    self._proc.feed(
                        parts[2], parts[3], _num(parts[1], "t"), _num(parts[4], "value")
                    )
                elif tag == "E":
                    self._proc.feed_event(parse_event_line(parts))
                elif tag == "H":
                    raise FormatError("H header not accepted over the wire")
                else:
                    raise FormatError(f"unknown line tag {tag!r}")
            except AffectLoopError as exc:
                return str(exc)
            self._drain(self._proc.poll())
        return None

    def _drain(self, new_states) -> None:
        for st in new_states:
            self._out.write(format_affect_state(st) + "\n")
            if self._controller is not None:
                fired, self._ctl_state = control_step(
                    st.t, st, self._controller, self._catalog, self._ctl_state
                )
                for d in fired:
                    self.directives.append(d)
                    self._out.write(format_directive(d) + "\n")
        if new_states:
            self._out.flush()

    def finalize(self) -> None:
        """Flush the remaining tail states; further lines are refused."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
            self._drain(self._proc.finalize())
            self._out.flush()


def _num(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"bad {what} {text!r}") from None


class AffectServer:
    """Threaded TCP front end: one reader thread per connection.

    Binds on construction (port 0 picks a free port, see .port), starts
    accepting on start(), and close() stops the listener, drains the client
    threads, and flushes the engine tail.
    """

    def __init__(self, host: str, port: int, engine: ServeEngine):
        self.engine = engine
        # raises OSError straight through when the port is busy
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._accept_thread: threading.Thread | None = None
        self._threads: list[threading.Thread] = []
        self._clients: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._closing = False

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self) -> None:
        t = threading.Thread(target=self._accept_loop, name="affect-accept", daemon=True)
        self._accept_thread = t
        t.start()

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _addr = self._sock.accept()
            except OSError:
                return  # listener closed
            with self._lock:
                if self._closing:
                    conn.close()
                    return
                self._clients.add(conn)
                t = threading.Thread(
                    target=self._client_loop, args=(conn,), daemon=True
                )
                self._threads.append(t)
                t.start()

    def _client_loop(self, conn: socket.socket) -> None:
        try:
            with conn, conn.makefile("rb") as rf, conn.makefile("wb") as wf:
                for line_no, raw in enumerate(rf, start=1):
                    msg = self.engine.handle_line(raw.decode("utf-8", "replace"))
                    if msg is not None:
                        # single-line response, whatever the message held
                        msg = " ".join(msg.split())
                        wf.write(f"ERR {line_no} {msg}\n".encode())
                        wf.flush()
        except OSError:
            pass
        finally:
            with self._lock:
                self._clients.discard(conn)

    def close(self, timeout: float = 5.0) -> None:
        """Stop accepting, let clients drain, then flush the tail states."""
        with self._lock:
            if self._closing:
                return
            self._closing = True
        self._sock.close()
        deadline = time.monotonic() + timeout
        for t in self._threads:
            t.join(max(0.0, deadline - time.monotonic()))
        with self._lock:
            stragglers = list(self._clients)
        for c in stragglers:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for t in self._threads:
            t.join(1.0)
        self.engine.finalize()


def replay_session(data: bytes | str, host: str, port: int, *, pace: float = 0.0) -> None:
    """Send a session file's D/S/E lines to a running server in t order.

    The H header is dropped (connections do not carry identity). pace 0
    streams as fast as possible; pace 1 replays in real time, 2 twice as
    fast. Declarations always go first so samples land on declared streams.
    """
    if isinstance(data, bytes):
        data = data.decode()
    decls: list[str] = []
    body: list[tuple[float, int, str]] = []
    for i, raw in enumerate(data.splitlines()):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag = line.split(None, 1)[0]
        if tag == "H":
            continue
        if tag == "D":
            decls.append(line)
            continue
        try:
            t = float(line.split()[1])
        except (IndexError, ValueError):
            raise FormatError("body line without a timestamp", i + 1) from None
        body.append((t, i, line))
    body.sort(key=lambda e: (e[0], e[1]))
    if pace < 0:
        raise ConfigError("pace must be >= 0")
    with socket.create_connection((host, port)) as conn:
        wf = conn.makefile("wb")
        for line in decls:
            wf.write(line.encode() + b"\n")
        if pace == 0.0:
            wf.write("\n".join(line for _, _, line in body).encode() + b"\n")
        else:
            prev_t: float | None = None
            for t, _i, line in body:
                if prev_t is not None and t > prev_t:
                    time.sleep((t - prev_t) / pace)
                prev_t = t
                wf.write(line.encode() + b"\n")
                wf.flush()
        wf.flush()
