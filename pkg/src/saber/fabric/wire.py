"""Binary wire protocol between actors, the replay service and the learner.

Every frame is ``u32 length | u8 tag | payload`` with ``length = 1 +
len(payload)``; all integers and floats are little-endian.

======  ================  ====================================================
tag     message           payload
======  ================  ====================================================
1       PutBatch          u64 env_steps, u32 nb, nb*Blob, u32 nt, nt*Trans
2       SampleRequest     u32 batch, f64 beta
3       SampleResponse    u32 n, n*(u64 slot, u64 generation, f64 weight,
                          Trans), u32 nb, nb*Blob
4       PriorityUpdate    u32 n, n*(u64 slot, u64 generation, f64 priority)
5       ParamRequest      (empty)
6       ParamResponse     u64 version, u32 size, size bytes
7       StatsRequest      (empty)
8       Stats             UTF-8 JSON object
9       Ack               u64 value, u8 throttled
10      Error             u16 code, UTF-8 message
======  ================  ====================================================

``Trans`` is ``key obs (16) | u32 action | f64 return | f64 discount |
key next_obs (16) | f64 priority``. ``Blob`` is ``key (16) | u8 dtype |
u8 ndim | ndim*u32 dims | raw data`` with dtype codes 1=uint8, 2=float32,
3=float64, 4=int64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

KEY = 16
_LEN = struct.Struct("<I")
_TRANS = struct.Struct(f"<{KEY}sIdd{KEY}sd")
_SAMPLE_ROW = struct.Struct("<QQd")
_UPDATE_ROW = struct.Struct("<QQd")
MAX_FRAME = 1 << 30

DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<f4"), 3: np.dtype("<f8"), 4: np.dtype("<i8")}
DTYPE_CODES = {(v.kind, v.itemsize): k for k, v in DTYPES.items()}

# Error codes
E_MALFORMED = 1
E_EMPTY = 2
E_GATE = 3
E_UNKNOWN_KEY = 4
E_UNSUPPORTED = 5
E_INVALID = 6


class WireError(ValueError):
    """Malformed, truncated or unknown frame."""


@dataclass(frozen=True)
class WireTransition:
    obs_key: bytes
    action: int
    n_step_return: float
    discount_pow_n: float
    next_obs_key: bytes
    priority: float


@dataclass
class Blob:
    key: bytes
    array: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Blob) and self.key == other.key
                and self.array.dtype == other.array.dtype and np.array_equal(self.array, other.array))


@dataclass
class PutBatch:
    TAG = 1
    env_steps: int = 0
    blobs: list = field(default_factory=list)
    transitions: list = field(default_factory=list)


@dataclass
class SampleRequest:
    TAG = 2
    batch: int
    beta: float


@dataclass
class SampleResponse:
    TAG = 3
    slots: list
    generations: list
    is_weights: list
    transitions: list
    blobs: list = field(default_factory=list)


@dataclass
class PriorityUpdate:
    TAG = 4
    slots: list
    generations: list
    priorities: list


@dataclass
class ParamRequest:
    TAG = 5


@dataclass
class ParamResponse:
    TAG = 6
    version: int
    blob: bytes


@dataclass
class StatsRequest:
    TAG = 7


@dataclass
class Stats:
    TAG = 8
    values: dict


@dataclass
class Ack:
    TAG = 9
    value: int = 0
    throttled: bool = False


@dataclass
class Error:
    TAG = 10
    code: int
    message: str


MESSAGES = {cls.TAG: cls for cls in (PutBatch, SampleRequest, SampleResponse, PriorityUpdate, ParamRequest,
                                     ParamResponse, StatsRequest, Stats, Ack, Error)}


# -- payload writers --

def _key(k: bytes) -> bytes:
    if not isinstance(k, (bytes, bytearray)) or len(k) != KEY:
        raise WireError(f"keys must be {KEY} bytes")
    return bytes(k)


def _put_blob(out: list, b: Blob) -> None:
    a = np.asarray(b.array)
    code = DTYPE_CODES.get((a.dtype.kind, a.dtype.itemsize))
    if code is None:
        raise WireError(f"unsupported blob dtype {a.dtype}")
    if a.ndim > 255:
        raise WireError("too many dimensions")
    out.append(_key(b.key))
    out.append(struct.pack("<BB", code, a.ndim))
    out.append(struct.pack(f"<{a.ndim}I", *a.shape))
    out.append(np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes())


def _put_trans(out: list, t: WireTransition) -> None:
    out.append(_TRANS.pack(_key(t.obs_key), t.action, t.n_step_return, t.discount_pow_n,
                           _key(t.next_obs_key), t.priority))


def encode_payload(msg) -> bytes:
    out: list[bytes] = []
    if isinstance(msg, PutBatch):
        out.append(struct.pack("<QI", msg.env_steps, len(msg.blobs)))
        for b in msg.blobs:
            _put_blob(out, b)
        out.append(struct.pack("<I", len(msg.transitions)))
        for t in msg.transitions:
            _put_trans(out, t)
    elif isinstance(msg, SampleRequest):
        out.append(struct.pack("<Id", msg.batch, msg.beta))
    elif isinstance(msg, SampleResponse):
        n = len(msg.transitions)
        if not (len(msg.slots) == len(msg.generations) == len(msg.is_weights) == n):
            raise WireError("sample response columns differ in length")
        out.append(struct.pack("<I", n))
        for s, g, w, t in zip(msg.slots, msg.generations, msg.is_weights, msg.transitions):
            out.append(_SAMPLE_ROW.pack(s, g, w))
            _put_trans(out, t)
        out.append(struct.pack("<I", len(msg.blobs)))
        for b in msg.blobs:
            _put_blob(out, b)
    elif isinstance(msg, PriorityUpdate):
        n = len(msg.slots)
        if not (len(msg.generations) == len(msg.priorities) == n):
            raise WireError("priority update columns differ in length")
        out.append(struct.pack("<I", n))
        for s, g, p in zip(msg.slots, msg.generations, msg.priorities):
            out.append(_UPDATE_ROW.pack(s, g, p))
    elif isinstance(msg, (ParamRequest, StatsRequest)):
        pass
    elif isinstance(msg, ParamResponse):
        out.append(struct.pack("<QI", msg.version, len(msg.blob)))
        out.append(bytes(msg.blob))
    elif isinstance(msg, Stats):
        out.append(json.dumps(msg.values, sort_keys=True).encode())
    elif isinstance(msg, Ack):
        out.append(struct.pack("<QB", msg.value, int(msg.throttled)))
    elif isinstance(msg, Error):
        out.append(struct.pack("<H", msg.code))
        out.append(msg.message.encode())
    else:
        raise WireError(f"cannot encode {type(msg).__name__}")
    return b"".join(out)


def encode(msg) -> bytes:
    try:
        payload = encode_payload(msg)
    except struct.error as e:
        raise WireError(f"field out of range: {e}") from None
    if len(payload) + 1 > MAX_FRAME:
        raise WireError("frame too large")
    return _LEN.pack(len(payload) + 1) + bytes([msg.TAG]) + payload


# -- payload readers --

class _Reader:
    def __init__(self, buf: memoryview):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.off + n > len(self.buf):
            raise WireError("truncated payload")
        v = self.buf[self.off: self.off + n]
        self.off += n
        return v

    def unpack(self, s: struct.Struct):
        return s.unpack(self.take(s.size))

    def fmt(self, f: str):
        return self.unpack(struct.Struct(f))

    def blob(self) -> Blob:
        key = bytes(self.take(KEY))
        code, ndim = self.fmt("<BB")
        dt = DTYPES.get(code)
        if dt is None:
            raise WireError(f"unknown blob dtype code {code}")
        shape = self.fmt(f"<{ndim}I") if ndim else ()
        count = 1
        for d in shape:
            count *= d
        data = self.take(count * dt.itemsize)
        return Blob(key, np.frombuffer(data, dtype=dt).reshape(shape).astype(dt.newbyteorder("=")))

    def trans(self) -> WireTransition:
        ok, a, r, d, nk, p = self.unpack(_TRANS)
        return WireTransition(bytes(ok), a, r, d, bytes(nk), p)

    def done(self) -> None:
        if self.off != len(self.buf):
            raise WireError(f"{len(self.buf) - self.off} trailing bytes")


def decode_payload(tag: int, payload) -> object:
    cls = MESSAGES.get(tag)
    if cls is None:
        raise WireError(f"unknown tag {tag}")
    r = _Reader(memoryview(payload))
    if cls is PutBatch:
        env_steps, nb = r.fmt("<QI")
        blobs = [r.blob() for _ in range(nb)]
        (nt,) = r.fmt("<I")
        msg = PutBatch(env_steps, blobs, [r.trans() for _ in range(nt)])
    elif cls is SampleRequest:
        msg = SampleRequest(*r.fmt("<Id"))
    elif cls is SampleResponse:
        (n,) = r.fmt("<I")
        slots, gens, weights, trans = [], [], [], []
        for _ in range(n):
            s, g, w = r.unpack(_SAMPLE_ROW)
            slots.append(s)
            gens.append(g)
            weights.append(w)
            trans.append(r.trans())
        (nb,) = r.fmt("<I")
        msg = SampleResponse(slots, gens, weights, trans, [r.blob() for _ in range(nb)])
    elif cls is PriorityUpdate:
        (n,) = r.fmt("<I")
        rows = [r.unpack(_UPDATE_ROW) for _ in range(n)]
        msg = PriorityUpdate([x[0] for x in rows], [x[1] for x in rows], [x[2] for x in rows])
    elif cls in (ParamRequest, StatsRequest):
        msg = cls()
    elif cls is ParamResponse:
        version, size = r.fmt("<QI")
        msg = ParamResponse(version, bytes(r.take(size)))
    elif cls is Stats:
        try:
            values = json.loads(bytes(r.take(len(payload))).decode())
        except (UnicodeDecodeError, ValueError) as e:
            raise WireError(f"bad stats JSON: {e}") from None
        if not isinstance(values, dict):
            raise WireError("stats payload must be a JSON object")
        msg = Stats(values)
    elif cls is Ack:
        value, throttled = r.fmt("<QB")
        msg = Ack(value, bool(throttled))
    else:  # Error
        (code,) = r.fmt("<H")
        try:
            text = bytes(r.take(len(payload) - 2)).decode()
        except UnicodeDecodeError:
            raise WireError("error message is not UTF-8") from None
        msg = Error(code, text)
    r.done()
    return msg


def decode(frame: bytes):
    """Decode exactly one frame; trailing bytes are an error."""
    if len(frame) < _LEN.size + 1:
        raise WireError("short frame")
    (length,) = _LEN.unpack_from(frame)
    if length < 1:
        raise WireError("zero-length frame")
    if len(frame) != _LEN.size + length:
        raise WireError(f"frame length {length} disagrees with {len(frame) - _LEN.size} bytes present")
    return decode_payload(frame[_LEN.size], memoryview(frame)[_LEN.size + 1:])


# -- stream helpers --

def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    while n:
        c = sock.recv(min(n, 1 << 20))
        if not c:
            raise ConnectionError("peer closed the connection")
        chunks.append(c)
        n -= len(c)
    return b"".join(chunks)


def read_frame(sock) -> bytes:
    head = _recv_exact(sock, _LEN.size)
    (length,) = _LEN.unpack(head)
    if length < 1 or length > MAX_FRAME:
        raise WireError(f"bad frame length {length}")
    return head + _recv_exact(sock, length)


def send(sock, msg) -> None:
    sock.sendall(encode(msg))


def recv(sock):
    return decode(read_frame(sock))
