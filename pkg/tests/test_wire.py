import struct

import numpy as np
import pytest

from saber.fabric import wire

KEY_A = bytes(range(16))
KEY_B = bytes(range(16, 32))


def rand_key(rng):
    return rng.bytes(16)


def rand_trans(rng):
    return wire.WireTransition(rand_key(rng), int(rng.integers(0, 18)), float(rng.normal()),
                               float(rng.choice([0.0, rng.random()])), rand_key(rng), float(rng.exponential()))


def rand_blob(rng):
    code = int(rng.integers(1, 5))
    dt = wire.DTYPES[code]
    shape = tuple(int(s) for s in rng.integers(0, 5, size=int(rng.integers(0, 4))))
    if dt.kind == "f":
        arr = rng.normal(size=shape).astype(dt)
    else:
        arr = rng.integers(0, 200, size=shape).astype(dt)
    return wire.Blob(rand_key(rng), arr)


def rand_message(rng):
    kind = int(rng.integers(1, 11))
    n = int(rng.integers(0, 6))
    if kind == 1:
        return wire.PutBatch(int(rng.integers(0, 2**40)), [rand_blob(rng) for _ in range(n)],
                             [rand_trans(rng) for _ in range(int(rng.integers(0, 6)))])
    if kind == 2:
        return wire.SampleRequest(int(rng.integers(1, 2**31)), float(rng.random()))
    if kind == 3:
        return wire.SampleResponse([int(x) for x in rng.integers(0, 2**40, n)], [int(x) for x in rng.integers(0, 9, n)],
                                   rng.random(n).tolist(), [rand_trans(rng) for _ in range(n)],
                                   [rand_blob(rng) for _ in range(int(rng.integers(0, 3)))])
    if kind == 4:
        return wire.PriorityUpdate([int(x) for x in rng.integers(0, 2**40, n)], [int(x) for x in rng.integers(0, 9, n)],
                                   rng.exponential(size=n).tolist())
    if kind == 5:
        return wire.ParamRequest()
    if kind == 6:
        return wire.ParamResponse(int(rng.integers(0, 2**50)), rng.bytes(int(rng.integers(0, 64))))
    if kind == 7:
        return wire.StatsRequest()
    if kind == 8:
        return wire.Stats({"size": int(rng.integers(0, 100)), "ok": bool(rng.random() < 0.5), "x": float(rng.random())})
    if kind == 9:
        return wire.Ack(int(rng.integers(0, 2**60)), bool(rng.random() < 0.5))
    return wire.Error(int(rng.integers(0, 2**16)), "réponse " + str(rng.integers(1000)))


def test_param_request_is_five_bytes():
    assert wire.encode(wire.ParamRequest()) == b"\x01\x00\x00\x00\x05"
    assert wire.decode(b"\x01\x00\x00\x00\x05") == wire.ParamRequest()


def test_golden_sample_request():
    frame = wire.encode(wire.SampleRequest(32, 0.5))
    assert frame == struct.pack("<IB", 13, 2) + struct.pack("<I", 32) + struct.pack("<d", 0.5)


def test_golden_put_batch():
    msg = wire.PutBatch(4, [wire.Blob(KEY_A, np.array([[1, 2]], dtype=np.uint8))],
                        [wire.WireTransition(KEY_A, 3, 1.5, 0.25, KEY_B, 2.0)])
    payload = (struct.pack("<QI", 4, 1) + KEY_A + bytes([1, 2]) + struct.pack("<II", 1, 2) + b"\x01\x02"
               + struct.pack("<I", 1) + KEY_A + struct.pack("<Idd", 3, 1.5, 0.25) + KEY_B + struct.pack("<d", 2.0))
    assert wire.encode(msg) == struct.pack("<IB", len(payload) + 1, 1) + payload


def test_roundtrip_fuzz_10k():
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(10_000):
        m = rand_message(rng)
        try:
            assert wire.decode(wire.encode(m)) == m
        except (wire.WireError, AssertionError):
            failures += 1
    assert failures == 0


def test_truncated_frames_raise():
    frame = wire.encode(rand_message(np.random.default_rng(3)))
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = wire.encode(rand_message(rng))
        for cut in (0, 1, 4, 5, len(m) - 1):
            if cut < len(m):
                with pytest.raises(wire.WireError):
                    wire.decode(m[:cut])
    with pytest.raises(wire.WireError):
        wire.decode(frame + b"\0")


def test_trailing_payload_bytes_rejected():
    body = bytes([2]) + struct.pack("<Id", 1, 0.5) + b"\x00"
    with pytest.raises(wire.WireError, match="trailing"):
        wire.decode(struct.pack("<I", len(body)) + body)


def test_bad_tag_and_dtype():
    with pytest.raises(wire.WireError, match="unknown tag"):
        wire.decode(b"\x01\x00\x00\x00\x63")
    with pytest.raises(wire.WireError):
        wire.encode(wire.PutBatch(0, [wire.Blob(KEY_A, np.zeros(2, dtype=np.complex64))], []))
    with pytest.raises(wire.WireError):
        wire.encode(wire.PutBatch(0, [], [wire.WireTransition(b"short", 0, 0.0, 0.0, KEY_B, 1.0)]))


def test_random_garbage_never_crashes():
    rng = np.random.default_rng(2)
    for _ in range(5000):
        body = rng.bytes(int(rng.integers(1, 60)))
        frame = struct.pack("<I", len(body)) + body
        try:
            wire.decode(frame)
        except wire.WireError:
            pass
