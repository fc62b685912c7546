"""Binary federation protocol plus the central and client session loops.

Frame layout on the stream:

    length u32 BE (payload bytes) | msg_type u8 | payload | crc32 u32 BE
    over msg_type + payload

Weight-bearing payloads are a WeightBlob: CL3W model bytes followed by
sample_count u32, hospital_id u16, and round u16, all big-endian like the
rest of the wire integers. Only weight blobs carry data between processes,
so raw samples never touch the socket.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, replace

from .errors import FrameError, ProtocolError, ValidationError
from .federation import LocalUpdate, RoundReport, aggregate, head_of, local_train, round_seed
from .network import Mlp, accuracy
from .simulation import (
    ASSESS_LOCAL,
    Cl3Config,
    Cl3RunLog,
    begin_increment,
    client_schedule,
    evaluate_global,
    finalize_increment,
    initial_server,
    load_cohort,
    new_client,
    round_record,
    run_header,
)
from .metrics import scores
from .weightfmt import decode_weights, encode_weights

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 0x01
DEFAULT_PORT = 7731
MAX_PAYLOAD = 64 * 1024 * 1024

MSG_JOIN = 0x01
MSG_GLOBAL_WEIGHTS = 0x02
MSG_LOCAL_UPDATE = 0x03
MSG_ROUND_BEGIN = 0x04
MSG_ROUND_COMPLETE = 0x05
MSG_SHUTDOWN = 0x06
MSG_ERROR = 0x07
_VALID_TYPES = frozenset(
    (
        MSG_JOIN,
        MSG_GLOBAL_WEIGHTS,
        MSG_LOCAL_UPDATE,
        MSG_ROUND_BEGIN,
        MSG_ROUND_COMPLETE,
        MSG_SHUTDOWN,
        MSG_ERROR,
    )
)


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    """Frame a message: length, type byte, payload, trailing CRC32."""
    if msg_type not in _VALID_TYPES:
        raise FrameError(f"unknown message type 0x{msg_type:02x}")
    if len(payload) >= MAX_PAYLOAD:
        raise FrameError(f"payload of {len(payload)} bytes exceeds the 64 MiB cap")
    body = bytes([msg_type]) + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def decode_frame(data: bytes) -> tuple[int, bytes]:
    """Decode one complete frame; any single corrupted byte is rejected."""
    if len(data) < 9:
        raise FrameError(f"frame of {len(data)} bytes is shorter than the 9-byte minimum")
    (length,) = struct.unpack_from(">I", data, 0)
    if length >= MAX_PAYLOAD:
        raise FrameError(f"declared payload of {length} bytes exceeds the 64 MiB cap")
    if len(data) != 9 + length:
        raise FrameError(f"frame has {len(data)} bytes, expected {9 + length}")
    body = data[4 : 5 + length]
    (crc,) = struct.unpack_from(">I", data, 5 + length)
    if zlib.crc32(body) != crc:
        raise FrameError("frame checksum mismatch")
    msg_type = body[0]
    if msg_type not in _VALID_TYPES:
        raise FrameError(f"unknown message type 0x{msg_type:02x}")
    return msg_type, body[1:]


class _SocketStream:
    """Blocking exact-read wrapper with optional transcript recording."""

    def __init__(self, sock: socket.socket, recorder: "TranscriptRecorder | None" = None):
        self.sock = sock
        self.recorder = recorder

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            try:
                chunk = self.sock.recv(remaining)
            except socket.timeout:
                raise ProtocolError("timed out waiting for peer data") from None
            except OSError as exc:
                raise ProtocolError(f"connection failed: {exc}") from None
            if not chunk:
                raise ProtocolError("connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def read_frame(self) -> tuple[int, bytes]:
        header = self.read_exact(4)
        (length,) = struct.unpack(">I", header)
        if length >= MAX_PAYLOAD:
            raise FrameError(f"declared payload of {length} bytes exceeds the 64 MiB cap")
        rest = self.read_exact(1 + length + 4)
        frame = header + rest
        if self.recorder is not None:
            self.recorder.record(frame)
        return decode_frame(frame)

    def write_frame(self, msg_type: int, payload: bytes = b"") -> None:
        frame = encode_frame(msg_type, payload)
        if self.recorder is not None:
            self.recorder.record(frame)
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ProtocolError(f"failed to send frame: {exc}") from None

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class TranscriptRecorder:
    """Appends every raw frame seen by the server to a capture file."""

    def __init__(self, path):
        self._fh = open(path, "wb")
        self._lock = threading.Lock()

    def record(self, frame: bytes) -> None:
        with self._lock:
            self._fh.write(frame)

    def close(self) -> None:
        with self._lock:
            self._fh.close()


# -- message payloads --------------------------------------------------------

def encode_join(hospital_id: int) -> bytes:
    return struct.pack(">BH", PROTOCOL_VERSION, hospital_id)


def parse_join(payload: bytes) -> tuple[int, int]:
    if len(payload) != 3:
        raise FrameError(f"JOIN payload must be 3 bytes, got {len(payload)}")
    version, hospital_id = struct.unpack(">BH", payload)
    return version, hospital_id


def encode_round_begin(increment: int, round_index: int) -> bytes:
    return struct.pack(">HH", increment, round_index)


def parse_round_begin(payload: bytes) -> tuple[int, int]:
    if len(payload) != 4:
        raise FrameError(f"ROUND_BEGIN payload must be 4 bytes, got {len(payload)}")
    increment, round_index = struct.unpack(">HH", payload)
    return increment, round_index


def encode_round_complete(hospital_id: int, round_index: int) -> bytes:
    return struct.pack(">HH", hospital_id, round_index)


def parse_round_complete(payload: bytes) -> tuple[int, int]:
    if len(payload) != 4:
        raise FrameError(f"ROUND_COMPLETE payload must be 4 bytes, got {len(payload)}")
    hospital_id, round_index = struct.unpack(">HH", payload)
    return hospital_id, round_index


def encode_weight_blob(model: Mlp, sample_count: int, hospital_id: int, round_index: int) -> bytes:
    return encode_weights(model) + struct.pack(">IHH", sample_count, hospital_id, round_index)


def parse_weight_blob(payload: bytes) -> tuple[Mlp, int, int, int]:
    if len(payload) < 8:
        raise FrameError("weight blob too short")
    try:
        model = decode_weights(payload[:-8])
    except ValidationError as exc:
        raise FrameError(f"bad weight blob: {exc}") from None
    sample_count, hospital_id, round_index = struct.unpack(">IHH", payload[-8:])
    return model, sample_count, hospital_id, round_index


# -- central server ----------------------------------------------------------

@dataclass
class _Session:
    hospital_id: int
    stream: _SocketStream


def _broadcast_error(sessions: list[_Session], message: str) -> None:
    payload = message.encode("utf-8")
    for sess in sessions:
        try:
            sess.stream.write_frame(MSG_ERROR, payload)
        except ProtocolError:
            pass


def serve_central(
    config: Cl3Config,
    host: str = "127.0.0.1",
    port: int = DEFAULT_PORT,
    expected_clients: int | None = None,
    round_timeout: float = 60.0,
    record_path=None,
    weight_capture: list | None = None,
    ready_event: threading.Event | None = None,
) -> Cl3RunLog:
    """Run the central aggregator over TCP for a full incremental workflow.

    Waits for expected_clients JOINs, then per increment and round
    broadcasts the global weights and ROUND_BEGIN, collects one
    LOCAL_UPDATE or ROUND_COMPLETE per client, aggregates, and finally
    broadcasts SHUTDOWN. A straggler or mid-round disconnect aborts the
    run with an ERROR broadcast to the surviving clients.
    """
    cohort = load_cohort(config)
    expected = expected_clients if expected_clients is not None else len(cohort.hospitals)
    if expected < 1:
        raise ValidationError("central server needs at least one expected client")
    valid_ids = {shard.hospital_id for shard in cohort.hospitals}

    _, server = initial_server(config, cohort)
    test_X, test_y = cohort.test.features, cohort.test.labels
    head_dims = server.global_model.head_dims

    recorder = TranscriptRecorder(record_path) if record_path is not None else None
    log = Cl3RunLog()
    log.append(run_header(config))

    listener = socket.create_server((host, port), backlog=max(expected, 8))
    listener.settimeout(round_timeout)
    sessions: list[_Session] = []
    try:
        taken: set[int] = set()
        while len(sessions) < expected:
            try:
                conn, addr = listener.accept()
            except socket.timeout:
                raise ProtocolError(
                    f"timed out waiting for clients: {len(sessions)}/{expected} joined"
                ) from None
            conn.settimeout(round_timeout)
            stream = _SocketStream(conn, recorder)
            try:
                msg_type, payload = stream.read_frame()
                if msg_type != MSG_JOIN:
                    raise FrameError(f"expected JOIN, got type 0x{msg_type:02x}")
                version, hospital_id = parse_join(payload)
                if version != PROTOCOL_VERSION:
                    raise FrameError(
                        f"protocol version mismatch: server {PROTOCOL_VERSION}, client {version}"
                    )
                if hospital_id not in valid_ids:
                    raise FrameError(f"unknown hospital id {hospital_id}")
                if hospital_id in taken:
                    raise FrameError(f"duplicate JOIN for hospital id {hospital_id}")
            except (FrameError, ProtocolError) as exc:
                logger.warning("rejecting client %s: %s", addr, exc)
                try:
                    stream.write_frame(MSG_ERROR, str(exc).encode("utf-8"))
                except ProtocolError:
                    pass
                stream.close()
                continue
            taken.add(hospital_id)
            sessions.append(_Session(hospital_id, stream))
            logger.info("hospital %d joined (%d/%d)", hospital_id, len(sessions), expected)
        sessions.sort(key=lambda s: s.hospital_id)
        if ready_event is not None:
            ready_event.set()

        for increment in range(1, config.increments + 1):
            inc_participants: tuple[int, ...] | None = None
            for r in range(config.rounds_per_increment):
                round_start = time.perf_counter()
                blob = encode_weight_blob(server.global_model.model, 0, 0, r)
                try:
                    for sess in sessions:
                        sess.stream.write_frame(MSG_GLOBAL_WEIGHTS, blob)
                        sess.stream.write_frame(MSG_ROUND_BEGIN, encode_round_begin(increment, r))
                    updates: list[LocalUpdate] = []
                    for sess in sessions:
                        msg_type, payload = sess.stream.read_frame()
                        if msg_type == MSG_LOCAL_UPDATE:
                            model, count, hid, rnd = parse_weight_blob(payload)
                            if hid != sess.hospital_id or rnd != r:
                                raise FrameError(
                                    f"update from hospital {hid} round {rnd} does not match "
                                    f"session {sess.hospital_id} round {r}"
                                )
                            if model.layer_dims != head_dims:
                                raise FrameError(
                                    f"update head dims {model.layer_dims} do not match {head_dims}"
                                )
                            updates.append(
                                LocalUpdate(
                                    hospital_id=hid,
                                    head_weights=tuple(model.weights),
                                    head_biases=tuple(model.biases),
                                    sample_count=count,
                                )
                            )
                        elif msg_type == MSG_ROUND_COMPLETE:
                            hid, rnd = parse_round_complete(payload)
                            if hid != sess.hospital_id or rnd != r:
                                raise FrameError(
                                    f"ROUND_COMPLETE from hospital {hid} round {rnd} does not "
                                    f"match session {sess.hospital_id} round {r}"
                                )
                        else:
                            raise FrameError(
                                f"expected LOCAL_UPDATE or ROUND_COMPLETE, got 0x{msg_type:02x}"
                            )
                except (FrameError, ProtocolError) as exc:
                    _broadcast_error(sessions, f"round aborted: {exc}")
                    raise ProtocolError(
                        f"increment {increment} round {r} aborted: {exc}"
                    ) from None

                participants = tuple(sorted(u.hospital_id for u in updates))
                if inc_participants is None:
                    inc_participants = participants
                if updates:
                    server = aggregate(sorted(updates, key=lambda u: u.hospital_id), server)
                global_acc = accuracy(server.global_model.model, test_X, test_y)
                report = RoundReport(
                    increment=increment,
                    round=r,
                    participants=participants,
                    global_accuracy=global_acc,
                    local_accuracies={},
                )
                elapsed = (time.perf_counter() - round_start) * 1000.0
                log.append(round_record(report, server, elapsed))
                if weight_capture is not None:
                    weight_capture.append((increment, r, encode_weights(server.global_model.model)))
                logger.info(
                    "increment %d round %d: participants=%s accuracy=%.4f",
                    increment,
                    r,
                    list(participants),
                    global_acc,
                )

            cm = evaluate_global(server.global_model, test_X, test_y)
            rep = scores(cm)
            log.append(
                {
                    "event": "increment_summary",
                    "increment": increment,
                    "participants": list(inc_participants or ()),
                    "global": {
                        "ca": rep.ca,
                        "pre": rep.pre,
                        "rec": rep.rec,
                        "f1": rep.f1,
                        "tp": cm.tp,
                        "fp": cm.fp,
                        "tn": cm.tn,
                        "fn": cm.fn,
                    },
                    "per_hospital": {},
                    "pool_sizes": {},
                    "elapsed_ms": 0.0,
                }
            )
            server.global_model.increment = increment

        for sess in sessions:
            sess.stream.write_frame(MSG_SHUTDOWN)
    finally:
        for sess in sessions:
            sess.stream.close()
        listener.close()
        if recorder is not None:
            recorder.close()
    return log


# -- client ------------------------------------------------------------------

def run_client(
    host: str,
    port: int,
    hospital_id: int,
    config: Cl3Config,
    round_timeout: float = 60.0,
) -> None:
    """Join the central server and follow the round protocol until SHUTDOWN.

    The client owns its shard and increment schedule; it assesses drift
    locally when a new increment begins and only transmits head weights.
    """
    cohort = load_cohort(config)
    shard = cohort.hospital(hospital_id)
    schedule = client_schedule(config, shard)
    client = new_client(config, hospital_id, None)

    try:
        sock = socket.create_connection((host, port), timeout=round_timeout)
    except OSError as exc:
        raise ProtocolError(f"cannot connect to {host}:{port}: {exc}") from None
    stream = _SocketStream(sock)
    pending_global: Mlp | None = None
    current_increment = 0
    context: tuple | None = None  # (verdict, X, y) for the active increment
    try:
        stream.write_frame(MSG_JOIN, encode_join(hospital_id))
        while True:
            msg_type, payload = stream.read_frame()
            if msg_type == MSG_GLOBAL_WEIGHTS:
                model, _, _, _ = parse_weight_blob(payload)
                pending_global = model
                if client.model is None:
                    client.model = model.copy()
            elif msg_type == MSG_ROUND_BEGIN:
                increment, r = parse_round_begin(payload)
                if pending_global is None:
                    raise ProtocolError("ROUND_BEGIN before any GLOBAL_WEIGHTS")
                if increment != current_increment:
                    if context is not None:
                        finalize_increment(client, *context)
                    assess_model = (
                        client.model if config.assess_against == ASSESS_LOCAL else pending_global
                    )
                    verdict, X, y = begin_increment(
                        client, cohort, shard, schedule, config, increment, assess_model
                    )
                    context = (verdict, X, y)
                    current_increment = increment
                    logger.info(
                        "hospital %d increment %d: drifted=%s (%s)",
                        hospital_id,
                        increment,
                        verdict.drifted,
                        verdict.reason,
                    )
                verdict = context[0]
                if verdict.drifted:
                    h_hyper = replace(
                        config.hyper,
                        seed=round_seed(config.hyper.seed, hospital_id, increment, r),
                    )
                    update = local_train(client, pending_global, h_hyper)
                    blob = encode_weight_blob(
                        head_of(client.model), update.sample_count, hospital_id, r
                    )
                    stream.write_frame(MSG_LOCAL_UPDATE, blob)
                else:
                    stream.write_frame(MSG_ROUND_COMPLETE, encode_round_complete(hospital_id, r))
            elif msg_type == MSG_SHUTDOWN:
                if context is not None:
                    finalize_increment(client, *context)
                return
            elif msg_type == MSG_ERROR:
                raise ProtocolError(f"server error: {payload.decode('utf-8', 'replace')}")
            else:
                raise ProtocolError(f"unexpected message type 0x{msg_type:02x}")
    finally:
        stream.close()
