"""Threaded in-RAM replay service speaking the wire protocol."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from ..replay import ObservationStore, PrioritizedReplay, ReplayConfig, ReplayError, Transition
from . import wire

log = logging.getLogger(__name__)


@dataclass
class LockstepGate:
    """One learner step per ``ratio`` actor environment steps.

    The learner may take step ``k`` once ``k <= env_steps / ratio``; the actor
    is throttled once it leads the learner by more than ``lead`` env steps
    (never before ``min_fill`` transitions exist, so the learner can start).
    """

    enabled: bool = False
    ratio: int = 4
    lead: int = 64
    min_fill: int = 0
    env_steps: int = 0
    learner_steps: int = 0

    def learner_may_step(self) -> bool:
        return not self.enabled or (self.learner_steps + 1) * self.ratio <= self.env_steps

    def actor_throttled(self, size: int) -> bool:
        if not self.enabled or size < self.min_fill:
            return False
        return self.env_steps - self.ratio * self.learner_steps > self.lead


class ReplayService:
    """Message dispatcher around a :class:`PrioritizedReplay`.

    One lock makes each message atomic, including the blob bookkeeping of a
    PutBatch and the observation lookup of a sample.
    """

    def __init__(self, config: ReplayConfig, gate: LockstepGate | None = None, seed: int = 0):
        self.config = config
        self.store = ObservationStore()
        self.replay = PrioritizedReplay(config, store=self.store)
        self.gate = gate or LockstepGate()
        self.rng = np.random.default_rng(seed)
        self.lock = threading.Lock()
        self.put_batches = 0
        self.put_transitions = 0
        self.rejected = 0

    def stats(self) -> dict:
        s = self.replay.stats().to_dict()
        s.update(
            put_batches=self.put_batches,
            put_transitions=self.put_transitions,
            rejected=self.rejected,
            env_steps=self.gate.env_steps,
            learner_steps=self.gate.learner_steps,
            lockstep=self.gate.enabled,
            ratio=self.gate.ratio,
            actor_throttled=self.gate.actor_throttled(len(self.replay)),
        )
        return s

    def handle(self, msg):
        with self.lock:
            if isinstance(msg, wire.PutBatch):
                return self._put(msg)
            if isinstance(msg, wire.SampleRequest):
                return self._sample(msg)
            if isinstance(msg, wire.PriorityUpdate):
                try:
                    n = self.replay.update_priorities(msg.slots, msg.priorities, msg.generations)
                except ReplayError as e:
                    return wire.Error(wire.E_INVALID, str(e))
                return wire.Ack(n)
            if isinstance(msg, wire.StatsRequest):
                return wire.Stats(self.stats())
            return wire.Error(wire.E_UNSUPPORTED, f"replay service does not handle {type(msg).__name__}")

    def _put(self, msg: wire.PutBatch):
        for b in msg.blobs:
            self.store.put(b.key, b.array)
        try:
            for t in msg.transitions:
                for k in (t.obs_key, t.next_obs_key):
                    if k not in self.store:
                        raise ReplayError(f"transition references unknown observation {k.hex()}")
            batch = [Transition(t.obs_key, t.action, t.n_step_return, t.discount_pow_n, t.next_obs_key,
                                t.priority) for t in msg.transitions]
        except ReplayError as e:
            self.store.collect()
            self.rejected += len(msg.transitions)
            return wire.Error(wire.E_INVALID, str(e))
        self.replay.push_many(batch)
        self.store.collect()
        self.put_batches += 1
        self.put_transitions += len(batch)
        self.gate.env_steps += msg.env_steps
        return wire.Ack(self.gate.learner_steps, self.gate.actor_throttled(len(self.replay)))

    def _sample(self, msg: wire.SampleRequest):
        if len(self.replay) == 0:
            return wire.Error(wire.E_EMPTY, "replay is empty")
        if not self.gate.learner_may_step():
            return wire.Error(wire.E_GATE, "lockstep: waiting for actor steps")
        try:
            b = self.replay.sample(msg.batch, msg.beta, self.rng)
        except ReplayError as e:
            return wire.Error(wire.E_INVALID, str(e))
        self.gate.learner_steps += 1
        keys = []
        seen = set()
        for t in b.transitions:
            for k in (t.obs_key, t.next_obs_key):
                if k not in seen:
                    seen.add(k)
                    keys.append(k)
        return wire.SampleResponse(
            b.slots.tolist(), b.generations.tolist(), b.is_weights.tolist(),
            [wire.WireTransition(t.obs_key, t.action, t.n_step_return, t.discount_pow_n, t.next_obs_key,
                                 t.priority) for t in b.transitions],
            [wire.Blob(k, self.store.get(k)) for k in keys],
        )


def serve_frames(sock, handle, name: str = "service") -> None:
    """Read frames until the peer closes; malformed input closes the connection."""
    while True:
        try:
            frame = wire.read_frame(sock)
        except ConnectionError:
            return
        except wire.WireError as e:
            log.warning("%s: closing connection: %s", name, e)
            return
        try:
            msg = wire.decode(frame)
        except wire.WireError as e:
            log.warning("%s: closing connection on malformed frame: %s", name, e)
            try:
                wire.send(sock, wire.Error(wire.E_MALFORMED, str(e)))
            except OSError:
                pass
            return
        try:
            wire.send(sock, handle(msg))
        except OSError:
            return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def start_server(address: tuple[str, int], handle, name: str):
    """Bind and serve ``handle`` on a background thread; returns the server."""

    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            serve_frames(self.request, handle, name)

    server = _Server(address, Handler)
    thread = threading.Thread(target=server.serve_forever, name=name, daemon=True)
    thread.start()
    return server


def serve_replay(address: tuple[str, int], config: ReplayConfig, gate: LockstepGate | None = None,
                 seed: int = 0):
    """Start a replay service; returns ``(server, service)``. ``server.server_address`` has the bound port."""
    service = ReplayService(config, gate, seed)
    server = start_server(address, service.handle, "replay")
    return server, service
