"""Sampler sessions and the framed byte protocol between trainer and sampler.

Frame layout (little-endian)::

    magic    4s   b"PBIT"
    version  u16  1
    msg_type u8   HELLO=1 SET_TOPOLOGY=2 SET_WEIGHTS=3 RUN=4 SAMPLES=5 ERROR=6 BYE=7
    length   u32  payload length
    payload  bytes

Payloads:

* HELLO: ``version u16``; the server echoes its own version.
* SET_TOPOLOGY: ``M u32, N u32, L u32``; acknowledged with an empty SET_TOPOLOGY.
* SET_WEIGHTS: see :func:`encode_weights`; acknowledged with an empty SET_WEIGHTS.
* RUN: ``n_samples u32, sweeps_per_sample u32, burn_in u32, seed u64, flags u8``
  (bit 0 colored updates, bit 1 LUT activation); answered with SAMPLES.
* SAMPLES: see :func:`encode_samples`.
* ERROR: ``code u16`` then UTF-8 text.
* BYE: empty; the server replies BYE and closes.
"""
from __future__ import annotations

import logging
import os
import socket
import socketserver
import struct
import threading
from abc import ABC, abstractmethod

import numpy as np

from .chimera import ChimeraTopology
from .pbit import PbitNetwork, SampleBatch, sample

log = logging.getLogger(__name__)

MAGIC = b"PBIT"
VERSION = 1
HELLO, SET_TOPOLOGY, SET_WEIGHTS, RUN, SAMPLES, ERROR, BYE = range(1, 8)
MSG_NAMES = {HELLO: "HELLO", SET_TOPOLOGY: "SET_TOPOLOGY", SET_WEIGHTS: "SET_WEIGHTS",
             RUN: "RUN", SAMPLES: "SAMPLES", ERROR: "ERROR", BYE: "BYE"}

_HEADER = struct.Struct("<4sHBI")
HEADER_SIZE = _HEADER.size
MAX_PAYLOAD = 1 << 28

ERR_MALFORMED = 1
ERR_UNKNOWN_TYPE = 2
ERR_ORDERING = 3
ERR_VERSION = 4
ERR_INVALID = 5
ERR_INTERNAL = 6

FLAG_COLORED = 1
FLAG_LUT = 2

PORT_ENV = "PBITNQS_PORT"
DEFAULT_PORT = 7741


class ProtocolError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message


class TransportError(ConnectionError):
    pass


# -- frames ---------------------------------------------------------------

def encode_frame(msg_type: int, payload: bytes = b"", version: int = VERSION) -> bytes:
    return _HEADER.pack(MAGIC, version, msg_type, len(payload)) + payload


def decode_header(header: bytes) -> tuple[int, int, int]:
    """Return ``(version, msg_type, length)``; raises on bad magic or size."""
    if len(header) != HEADER_SIZE:
        raise ProtocolError(ERR_MALFORMED, f"truncated header ({len(header)} bytes)")
    magic, version, msg_type, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(ERR_MALFORMED, f"bad magic {magic!r}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(ERR_MALFORMED, f"payload length {length} exceeds {MAX_PAYLOAD}")
    return version, msg_type, length


def decode_frame(data: bytes) -> tuple[int, bytes]:
    """Decode one complete frame held in ``data``."""
    version, msg_type, length = decode_header(data[:HEADER_SIZE])
    payload = data[HEADER_SIZE:]
    if len(payload) != length:
        raise ProtocolError(ERR_MALFORMED, f"payload has {len(payload)} bytes, header says {length}")
    return msg_type, payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    _, msg_type, length = decode_header(_recv_exact(sock, HEADER_SIZE))
    return msg_type, _recv_exact(sock, length) if length else b""


# -- payloads -------------------------------------------------------------

_WEIGHT_HEADER = struct.Struct("<II")
_COUPLER = np.dtype([("i", "<u4"), ("j", "<u4"), ("raw", "<i2")])


def encode_weights(net: PbitNetwork) -> bytes:
    """``n u32, n_couplers u32``, biases as i16 raw, then ``(i u32, j u32, raw i16)``
    triples sorted by ``(i, j)`` with ``i < j``."""
    couplers = np.empty(len(net.edges), dtype=_COUPLER)
    couplers["i"] = net.edges[:, 0]
    couplers["j"] = net.edges[:, 1]
    couplers["raw"] = net.weight_raw
    return (_WEIGHT_HEADER.pack(net.n, len(net.edges))
            + net.bias_raw.astype("<i2").tobytes()
            + couplers.tobytes())


def decode_weights(payload: bytes) -> PbitNetwork:
    if len(payload) < _WEIGHT_HEADER.size:
        raise ProtocolError(ERR_INVALID, "weights payload shorter than its header")
    n, m = _WEIGHT_HEADER.unpack_from(payload)
    expect = _WEIGHT_HEADER.size + 2 * n + m * _COUPLER.itemsize
    if len(payload) != expect:
        raise ProtocolError(ERR_INVALID, f"weights payload has {len(payload)} bytes, expected {expect}")
    off = _WEIGHT_HEADER.size
    bias = np.frombuffer(payload, dtype="<i2", count=n, offset=off)
    cp = np.frombuffer(payload, dtype=_COUPLER, count=m, offset=off + 2 * n)
    edges = np.stack([cp["i"].astype(np.int64), cp["j"].astype(np.int64)], axis=1)
    if m and np.any(edges[:, 0] >= edges[:, 1]):
        raise ProtocolError(ERR_INVALID, "couplers must satisfy i < j")
    try:
        return PbitNetwork(n, edges, cp["raw"].copy(), bias.copy())
    except ValueError as exc:
        raise ProtocolError(ERR_INVALID, str(exc)) from None


_SAMPLES_HEADER = struct.Struct("<II")


def encode_samples(batch: SampleBatch) -> bytes:
    """``n_bits u32, n_rows u32``, then rows packed LSB-first (+1 -> 1), each
    row padded to a whole byte."""
    bits = (batch.rows > 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1, bitorder="little")
    return _SAMPLES_HEADER.pack(batch.n_bits, len(batch.rows)) + packed.tobytes()


def decode_samples(payload: bytes, seed=None, sweeps_per_sample=1, burn_in_sweeps=0) -> SampleBatch:
    if len(payload) < _SAMPLES_HEADER.size:
        raise ProtocolError(ERR_INVALID, "samples payload shorter than its header")
    n_bits, n_rows = _SAMPLES_HEADER.unpack_from(payload)
    row_bytes = (n_bits + 7) // 8
    body = payload[_SAMPLES_HEADER.size:]
    if len(body) != row_bytes * n_rows:
        raise ProtocolError(ERR_INVALID, f"samples body has {len(body)} bytes, expected {row_bytes * n_rows}")
    packed = np.frombuffer(body, dtype=np.uint8).reshape(n_rows, row_bytes)
    bits = np.unpackbits(packed, axis=1, count=n_bits, bitorder="little")
    return SampleBatch(n_bits, 2 * bits.astype(np.int8) - 1, seed, sweeps_per_sample, burn_in_sweeps)


_RUN = struct.Struct("<IIIQB")


def encode_run(n_samples, sweeps_per_sample, burn_in, seed, flags=0) -> bytes:
    return _RUN.pack(n_samples, sweeps_per_sample, burn_in, seed, flags)


def decode_run(payload: bytes) -> tuple:
    if len(payload) != _RUN.size:
        raise ProtocolError(ERR_INVALID, f"RUN payload must be {_RUN.size} bytes")
    return _RUN.unpack(payload)


_TOPO = struct.Struct("<III")


def encode_topology(dims) -> bytes:
    return _TOPO.pack(*dims)


def decode_topology(payload: bytes) -> tuple:
    if len(payload) != _TOPO.size:
        raise ProtocolError(ERR_INVALID, f"SET_TOPOLOGY payload must be {_TOPO.size} bytes")
    return _TOPO.unpack(payload)


def encode_error(code: int, text: str) -> bytes:
    return struct.pack("<H", code) + text.encode("utf-8")


def decode_error(payload: bytes) -> ProtocolError:
    if len(payload) < 2:
        return ProtocolError(ERR_MALFORMED, "short ERROR payload")
    (code,) = struct.unpack_from("<H", payload)
    return ProtocolError(code, payload[2:].decode("utf-8", errors="replace"))


def encode_hello(version: int = VERSION) -> bytes:
    return struct.pack("<H", version)


def decode_hello(payload: bytes) -> int:
    if len(payload) != 2:
        raise ProtocolError(ERR_INVALID, "HELLO payload must be 2 bytes")
    return struct.unpack("<H", payload)[0]


def run_flags(update: str, activation: str) -> int:
    return (FLAG_COLORED if update == "colored" else 0) | (FLAG_LUT if activation == "lut" else 0)


def flags_modes(flags: int) -> tuple[str, str]:
    return ("colored" if flags & FLAG_COLORED else "sequential",
            "lut" if flags & FLAG_LUT else "tanh")


# -- sessions -------------------------------------------------------------

class SamplerSession(ABC):
    """Weights in, samples out.  ``run`` always uses the last weights set."""

    @abstractmethod
    def set_topology(self, dims) -> None: ...

    @abstractmethod
    def set_weights(self, net: PbitNetwork) -> None: ...

    @abstractmethod
    def run(self, n_samples: int, sweeps_per_sample: int, burn_in: int, seed: int) -> SampleBatch: ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcessSession(SamplerSession):
    def __init__(self, update: str = "sequential", activation: str = "tanh"):
        self.update = update
        self.activation = activation
        self.topology = None
        self.net = None

    def set_topology(self, dims) -> None:
        self.topology = ChimeraTopology(*dims)
        if self.net is not None and self.net.n != self.topology.n_nodes:
            self.net = None

    def set_weights(self, net: PbitNetwork) -> None:
        if self.topology is not None and net.n != self.topology.n_nodes:
            raise ProtocolError(ERR_INVALID, f"network has {net.n} p-bits, topology has "
                                             f"{self.topology.n_nodes}")
        self.net = PbitNetwork(net.n, net.edges, net.weight_raw, net.bias_raw)

    def run(self, n_samples, sweeps_per_sample, burn_in, seed) -> SampleBatch:
        if self.net is None:
            raise ProtocolError(ERR_ORDERING, "RUN before SET_WEIGHTS")
        try:
            return sample(self.net, n_samples, sweeps_per_sample, burn_in, seed,
                          update=self.update, activation=self.activation)
        except ValueError as exc:
            raise ProtocolError(ERR_INVALID, str(exc)) from None


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint {endpoint!r} is not host:port")
    return host or "127.0.0.1", int(port)


class RemoteSession(SamplerSession):
    """Client side of the protocol; substitutable for :class:`InProcessSession`."""

    def __init__(self, sock: socket.socket, update: str = "sequential", activation: str = "tanh"):
        self.sock = sock
        self.update = update
        self.activation = activation
        self.server_version = None

    def _request(self, msg_type: int, payload: bytes = b"") -> tuple[int, bytes]:
        try:
            self.sock.sendall(encode_frame(msg_type, payload))
            reply, body = read_frame(self.sock)
        except OSError as exc:
            raise TransportError(f"transport lost during {MSG_NAMES.get(msg_type, msg_type)}: {exc}") from exc
        if reply == ERROR:
            raise decode_error(body)
        return reply, body

    def _expect(self, msg_type: int, payload: bytes, want: int) -> bytes:
        reply, body = self._request(msg_type, payload)
        if reply != want:
            raise ProtocolError(ERR_MALFORMED, f"expected {MSG_NAMES[want]}, got {MSG_NAMES.get(reply, reply)}")
        return body

    def hello(self) -> int:
        self.server_version = decode_hello(self._expect(HELLO, encode_hello(), HELLO))
        return self.server_version

    def set_topology(self, dims) -> None:
        self._expect(SET_TOPOLOGY, encode_topology(dims), SET_TOPOLOGY)

    def set_weights(self, net: PbitNetwork) -> None:
        self._expect(SET_WEIGHTS, encode_weights(net), SET_WEIGHTS)

    def run(self, n_samples, sweeps_per_sample, burn_in, seed) -> SampleBatch:
        body = self._expect(RUN, encode_run(n_samples, sweeps_per_sample, burn_in, seed,
                                            run_flags(self.update, self.activation)), SAMPLES)
        return decode_samples(body, seed, sweeps_per_sample, burn_in)

    def close(self) -> None:
        if self.sock is None:
            return
        try:
            self.sock.sendall(encode_frame(BYE))
            read_frame(self.sock)
        except (OSError, ProtocolError):
            pass
        finally:
            self.sock.close()
            self.sock = None


def connect(endpoint: str, update: str = "sequential", activation: str = "tanh",
            timeout: float | None = 60.0) -> RemoteSession:
    host, port = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
    session = RemoteSession(sock, update, activation)
    session.hello()
    return session


# -- server ---------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        greeted = False
        session = InProcessSession()
        while True:
            try:
                version, msg_type, length = decode_header(_recv_exact(sock, HEADER_SIZE))
                payload = _recv_exact(sock, length) if length else b""
            except TransportError:
                return
            except ProtocolError as exc:
                # the stream cannot be resynchronised after a bad header
                self._send(ERROR, encode_error(exc.code, exc.message))
                return
            except OSError:
                return
            try:
                if version != VERSION:
                    raise ProtocolError(ERR_VERSION, f"unsupported version {version}")
                if msg_type == BYE:
                    self._send(BYE)
                    return
                if msg_type == HELLO:
                    decode_hello(payload)
                    greeted = True
                    self._send(HELLO, encode_hello())
                elif msg_type not in MSG_NAMES:
                    raise ProtocolError(ERR_UNKNOWN_TYPE, f"unknown message type {msg_type}")
                elif not greeted:
                    raise ProtocolError(ERR_ORDERING, f"{MSG_NAMES[msg_type]} before HELLO")
                elif msg_type == SET_TOPOLOGY:
                    session.set_topology(decode_topology(payload))
                    self._send(SET_TOPOLOGY)
                elif msg_type == SET_WEIGHTS:
                    session.set_weights(decode_weights(payload))
                    self._send(SET_WEIGHTS)
                elif msg_type == RUN:
                    n_samples, sweeps, burn_in, seed, flags = decode_run(payload)
                    session.update, session.activation = flags_modes(flags)
                    batch = session.run(n_samples, sweeps, burn_in, seed)
                    self._send(SAMPLES, encode_samples(batch))
                else:
                    raise ProtocolError(ERR_ORDERING, f"{MSG_NAMES[msg_type]} is a server-to-client message")
            except ProtocolError as exc:
                self._send(ERROR, encode_error(exc.code, exc.message))
            except Exception as exc:  # keep the server alive
                log.exception("session error")
                self._send(ERROR, encode_error(ERR_INTERNAL, f"{type(exc).__name__}: {exc}"))

    def _send(self, msg_type, payload=b""):
        try:
            self.request.sendall(encode_frame(msg_type, payload))
        except OSError:
            pass


class SamplerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve(endpoint: str | None = None) -> SamplerServer:
    """Bind a sampler server; call ``serve_forever`` (or :func:`serve_in_thread`)."""
    if endpoint is None:
        endpoint = f"127.0.0.1:{os.environ.get(PORT_ENV, DEFAULT_PORT)}"
    return SamplerServer(parse_endpoint(endpoint), _Handler)


def serve_in_thread(endpoint: str = "127.0.0.1:0") -> SamplerServer:
    server = serve(endpoint)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
