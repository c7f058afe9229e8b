"""Length-prefixed binary streaming service.

Frame layout: one type byte, a big-endian u32 payload length, then the payload.
Clients send AUDIO (PCM16 little-endian mono samples) and END; the server answers
with one TEXT frame per committed sentence, ``speaker\\tstart\\tend\\tsentence\\n``.
A protocol violation produces a single ERROR frame and closes the connection.
"""

from __future__ import annotations

import logging
import math
import socket
import struct
from typing import BinaryIO, Callable, Iterable

from .core import SAMPLE_RATE
from .orchestrator import Pipeline, Sentence
from .windowing import StreamingWindower

log = logging.getLogger(__name__)

AUDIO, END, TEXT, ERROR = 0x01, 0x02, 0x10, 0x7F
HEADER = struct.Struct(">BI")
MAX_PAYLOAD = 1 << 24


class ProtocolError(Exception):
    pass


def encode_frame(kind: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(kind, len(payload)) + payload


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = f.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def read_frame(f: BinaryIO) -> tuple[int, bytes] | None:
    """Next frame, or None on a clean end of stream before any header byte."""
    head = _read_exact(f, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError("truncated frame header")
    kind, n = HEADER.unpack(head)
    if n > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {n} bytes exceeds the {MAX_PAYLOAD}-byte limit")
    payload = _read_exact(f, n)
    if len(payload) < n:
        raise ProtocolError("truncated frame payload")
    return kind, payload


def sentence_line(s: Sentence) -> str:
    return s.record() + "\n"


def transcript_text(sentences: Iterable[Sentence]) -> str:
    """What a client reassembles from the TEXT frames of a whole session."""
    return "".join(sentence_line(s) for s in sentences)


class StreamSession:
    """Feeds arriving audio into a pipeline window by window."""

    def __init__(self, pipeline: Pipeline, max_frames: int | None = None):
        self.pipeline = pipeline
        self.windower = StreamingWindower(pipeline.cfg.windowing)
        self.samples_per_frame = SAMPLE_RATE / pipeline.cfg.windowing.frame_rate
        self.max_frames = max_frames
        self.samples = 0
        self.frames = 0

    def _run(self, spans) -> list[Sentence]:
        out = []
        for index, a, b, last in spans:
            out.extend(self.pipeline.process_window(index, a, b, last))
        return out

    def _check(self, frames: int) -> None:
        if self.max_frames is not None and frames > self.max_frames:
            raise ProtocolError(f"stream longer than the bound reference ({self.max_frames} frames)")

    def push_samples(self, n: int) -> list[Sentence]:
        self.samples += n
        frames = int(self.samples // self.samples_per_frame)
        self._check(frames)
        new, self.frames = frames - self.frames, frames
        return self._run(self.windower.push(new))

    def end(self) -> list[Sentence]:
        frames = math.ceil(self.samples / self.samples_per_frame)
        self._check(frames)
        out = self._run(self.windower.push(frames - self.frames))
        self.frames = frames
        out += self._run(self.windower.close())
        if frames:
            out += self.pipeline.finish()
        return out


def handle_connection(rfile: BinaryIO, wfile: BinaryIO, session: StreamSession) -> int:
    """Serve one client; returns the number of TEXT frames sent."""
    sent = 0

    def send(sentences):
        nonlocal sent
        for s in sentences:
            wfile.write(encode_frame(TEXT, sentence_line(s).encode("utf-8")))
            sent += 1
        wfile.flush()

    try:
        while True:
            frame = read_frame(rfile)
            if frame is None:
                raise ProtocolError("connection closed before END")
            kind, payload = frame
            if kind == AUDIO:
                if len(payload) % 2:
                    raise ProtocolError("AUDIO payload must hold whole 16-bit samples")
                send(session.push_samples(len(payload) // 2))
            elif kind == END:
                if payload:
                    raise ProtocolError("END carries no payload")
                send(session.end())
                return sent
            else:
                raise ProtocolError(f"unexpected frame type 0x{kind:02x}")
    except ProtocolError as exc:
        log.warning("protocol violation: %s", exc)
        try:
            wfile.write(encode_frame(ERROR, str(exc).encode("utf-8")))
            wfile.flush()
        except OSError:
            pass
        raise


def serve(host: str, port: int, make_session: Callable[[], StreamSession], max_connections: int = 1,
          on_ready: Callable[[tuple[str, int]], None] | None = None) -> None:
    """Accept clients one at a time; each gets a fresh session."""
    with socket.create_server((host, port)) as srv:
        if on_ready:
            on_ready(srv.getsockname()[:2])
        for _ in range(max_connections):
            conn, addr = srv.accept()
            log.info("client %s connected", addr)
            with conn, conn.makefile("rb") as r, conn.makefile("wb") as w:
                try:
                    handle_connection(r, w, make_session())
                except ProtocolError:
                    pass


def stream_client(address: tuple[str, int], pcm: bytes, chunk_bytes: int = 6400) -> list[bytes]:
    """Send PCM in AUDIO frames followed by END and collect the TEXT payloads."""
    with socket.create_connection(address) as sock, sock.makefile("rb") as r, sock.makefile("wb") as w:
        for i in range(0, len(pcm), chunk_bytes):
            w.write(encode_frame(AUDIO, pcm[i:i + chunk_bytes]))
        w.write(encode_frame(END))
        w.flush()
        sock.shutdown(socket.SHUT_WR)
        texts = []
        while True:
            frame = read_frame(r)
            if frame is None:
                return texts
            kind, payload = frame
            if kind == ERROR:
                raise ProtocolError(payload.decode("utf-8", "replace"))
            if kind != TEXT:
                raise ProtocolError(f"unexpected frame type 0x{kind:02x} from server")
            texts.append(payload)
