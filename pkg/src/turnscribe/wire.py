"""Newline-delimited JSON wire protocol for real decoder backends.

One request line maps to one response line. Request fields: ``session_id``,
``window_start_s``, ``window_duration_s``, ``audio_ref``, ``system_prompt``,
``user_prompt``, ``speaker_hint``; the response carries the canonical token
stream under ``tokens``. Times are decimal seconds; the speaker hint is
"SPK0"/"SPK1" or null.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading

from .core import LocalSpeaker
from .orchestrate import Decoder, DecoderRequest, DecoderResponse, DecoderTransportError


class WireProtocolError(ValueError):
    """A malformed wire message."""


def encode_request_line(request: DecoderRequest) -> str:
    return (
        json.dumps(
            {
                "session_id": request.session_id,
                "window_start_s": request.window_start,
                "window_duration_s": request.window_duration,
                "audio_ref": request.audio_reference,
                "system_prompt": request.system_prompt,
                "user_prompt": request.user_prompt,
                "speaker_hint": f"SPK{request.speaker_hint.index}"
                if request.speaker_hint is not None
                else None,
            },
            ensure_ascii=False,
        )
        + "\n"
    )


def parse_request_line(line: str) -> DecoderRequest:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireProtocolError(f"invalid request JSON: {exc}") from None
    try:
        hint = record.get("speaker_hint")
        return DecoderRequest(
            session_id=record["session_id"],
            window_start=float(record["window_start_s"]),
            window_duration=float(record["window_duration_s"]),
            audio_reference=record.get("audio_ref"),
            system_prompt=record.get("system_prompt", ""),
            user_prompt=record.get("user_prompt"),
            speaker_hint=LocalSpeaker(int(hint[-1])) if hint else None,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise WireProtocolError(f"bad request field: {exc}") from None


def encode_response_line(response: DecoderResponse) -> str:
    return json.dumps({"tokens": response.tokens}, ensure_ascii=False) + "\n"


def parse_response_line(line: str) -> DecoderResponse:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireProtocolError(f"invalid response JSON: {exc}") from None
    tokens = record.get("tokens")
    if not isinstance(tokens, str):
        raise WireProtocolError("response must carry a string 'tokens' field")
    return DecoderResponse(tokens=tokens)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split "host:port" into its parts."""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host, int(port)


class WireDecoder:
    """Client for a decoder served over a TCP endpoint, one connection per call."""

    def __init__(self, host: str, port: int, timeout_s: float = 30.0):
        self._host = host
        self._port = port
        self._timeout_s = timeout_s

    def probe(self) -> None:
        """Check reachability; raises DecoderTransportError when the endpoint is down."""
        try:
            with socket.create_connection((self._host, self._port), timeout=self._timeout_s):
                pass
        except OSError as exc:
            raise DecoderTransportError(
                f"cannot reach decoder at {self._host}:{self._port}: {exc}"
            ) from exc

    def decode(self, request: DecoderRequest) -> DecoderResponse:
        try:
            with socket.create_connection((self._host, self._port), timeout=self._timeout_s) as conn:
                conn.sendall(encode_request_line(request).encode("utf-8"))
                conn.shutdown(socket.SHUT_WR)
                chunks = []
                while True:
                    data = conn.recv(65536)
                    if not data:
                        break
                    chunks.append(data)
        except OSError as exc:
            raise DecoderTransportError(
                f"decoder call to {self._host}:{self._port} failed: {exc}"
            ) from exc
        line = b"".join(chunks).decode("utf-8").strip()
        if not line:
            raise DecoderTransportError("decoder returned no response line")
        try:
            return parse_response_line(line)
        except WireProtocolError as exc:
            raise DecoderTransportError(str(exc)) from exc


class _WireHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            request = parse_request_line(line)
            response = self.server.backend.decode(request)  # type: ignore[attr-defined]
            self.wfile.write(encode_response_line(response).encode("utf-8"))
            self.wfile.flush()


class DecoderServer:
    """Serve any Decoder over the wire protocol; context manager for tests
    and for bridging a real model process into the orchestrator."""

    def __init__(self, backend: Decoder, host: str = "127.0.0.1", port: int = 0):
        self._server = socketserver.ThreadingTCPServer((host, port), _WireHandler)
        self._server.daemon_threads = True
        self._server.backend = backend  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "DecoderServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "DecoderServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
