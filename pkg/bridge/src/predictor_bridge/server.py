"""Line-protocol prediction server, one session per process.

The client opens a connection (or the process's standard streams), sends
``SCHEMA <comma-joined feature names>``, and after an ``OK`` issues any
number of ``PREDICT <n>`` requests, each followed by n delimiter-separated
rows in schema column order.  Every request gets exactly one reply line:
n space-separated labels from {-1, 1} on success, or ``ERR <message>``.
Labels come from thresholding the model's output at zero with zero mapping
to +1, mirroring the engine's tie rule.  Protocol and model failures are
answered with ERR and never terminate the session.
"""

from __future__ import annotations

import math
import socket
import sys

_ERR_LIMIT = 200


class _PeerGone(Exception):
    """The peer stopped reading; the session cannot reply any more."""


def _one_line(message) -> str:
    # replies are single lines; collapse and bound whatever the model raised
    text = " ".join(str(message).split()) or "unspecified error"
    return text if len(text) <= _ERR_LIMIT else text[: _ERR_LIMIT - 3] + "..."


class Session:
    """Protocol state machine over a pair of line-oriented text streams."""

    def __init__(self, model, reader, writer, delimiter: str = ","):
        self.model = model
        self.reader = reader
        self.writer = writer
        self.delimiter = delimiter
        self.schema: tuple[str, ...] | None = None

    def run(self):
        """Serve requests until the peer closes the stream."""
        while True:
            line = self.reader.readline()
            if not line:
                return
            try:
                self._handle(line.rstrip("\r\n"))
            except _PeerGone:
                return

    def _reply(self, text: str):
        try:
            self.writer.write(text + "\n")
            self.writer.flush()
        except (OSError, ValueError) as exc:
            raise _PeerGone from exc

    def _error(self, message):
        self._reply("ERR " + _one_line(message))

    def _handle(self, header: str):
        verb, _, rest = header.partition(" ")
        if verb == "SCHEMA":
            self._handshake(rest)
        elif verb == "PREDICT":
            self._predict(rest)
        else:
            self._error(f"unknown request {verb!r}")

    def _handshake(self, rest: str):
        names = tuple(rest.split(","))
        if not rest or any(not n for n in names):
            self._error("SCHEMA needs a comma-joined list of feature names")
            return
        expected = self.model.feature_names
        if expected is not None and tuple(expected) != names:
            self._error(f"schema mismatch: model expects {','.join(expected)}")
            return
        self.schema = names
        self._reply("OK")

    def _predict(self, rest: str):
        if not rest.isdigit():
            # nothing is consumed: a malformed count leaves no readable body
            self._error(f"malformed PREDICT count {rest!r}")
            return
        n = int(rest)
        rows = []
        for _ in range(n):
            line = self.reader.readline()
            if not line:
                self._error("unexpected end of input inside a PREDICT body")
                return
            rows.append(line.rstrip("\r\n").split(self.delimiter))
        if self.schema is None:
            self._error("SCHEMA handshake required before PREDICT")
            return
        width = len(self.schema)
        for row in rows:
            if len(row) != width:
                self._error(f"expected {width} values per row, got {len(row)}")
                return
        try:
            outputs = list(self.model.predict_rows(rows))
        except Exception as exc:  # crash isolation: the session must survive the model
            self._error(f"model failure: {exc}")
            return
        if len(outputs) != n:
            self._error(f"model returned {len(outputs)} outputs for {n} rows")
            return
        labels = []
        for value in outputs:
            try:
                score = float(value)
            except (TypeError, ValueError):
                self._error(f"model output {value!r} is not numeric")
                return
            if math.isnan(score):
                self._error("model output is NaN")
                return
            labels.append("1" if score >= 0.0 else "-1")
        self._reply(" ".join(labels))


def serve_stdio(model, delimiter: str = ","):
    """Serve one session over this process's standard streams."""
    Session(model, sys.stdin, sys.stdout, delimiter).run()


def serve_tcp(model, port: int, delimiter: str = ","):
    """Serve one connection on localhost, returning when it closes.

    Binding port 0 picks a free port; the chosen address is announced on
    stdout as ``listening on 127.0.0.1:<port>`` before the first accept, so
    callers can connect without racing the bind.
    """
    with socket.create_server(("127.0.0.1", port)) as server:
        host, bound = server.getsockname()[:2]
        print(f"listening on {host}:{bound}", flush=True)
        conn, _ = server.accept()
        with conn:
            reader = conn.makefile("r", encoding="utf-8", newline="\n")
            writer = conn.makefile("w", encoding="utf-8", newline="\n")
            Session(model, reader, writer, delimiter).run()
