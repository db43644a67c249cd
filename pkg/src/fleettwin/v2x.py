"""Broadcast message bus with a latency/loss channel, and traffic-light controllers."""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import InvalidParameterError


class MessageKind(str, enum.Enum):
    BSM = "BSM"
    SPAT = "SPaT"
    MAP = "MAP"
    TRAJECTORY_CMD = "TrajectoryCmd"
    PREEMPTION = "Preemption"


class LightState(str, enum.Enum):
    RED = "red"
    GREEN = "green"
    YELLOW = "yellow"


@dataclass(frozen=True)
class SPaT:
    light_id: str
    state: LightState
    time_to_change: float


@dataclass(frozen=True)
class MapDigest:
    digest: str


@dataclass(frozen=True)
class PreemptionRequest:
    light_id: str
    phase: int


@dataclass(frozen=True)
class V2XMessage:
    msg_id: int
    kind: MessageKind
    sender: Any
    payload: Any
    created: float

    def __post_init__(self):
        if self.created < 0:
            raise InvalidParameterError("message creation time must be >= 0")


class ChannelModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_latency: float = Field(0.05, ge=0.0)
    jitter_sigma: float = Field(0.01, ge=0.0)
    drop_prob: float = Field(0.01, ge=0.0, le=1.0)

    @classmethod
    def ideal(cls) -> "ChannelModel":
        return cls(base_latency=0.0, jitter_sigma=0.0, drop_prob=0.0)


@dataclass
class BusStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    delay_sum: float = 0.0

    @property
    def queued(self) -> int:
        return self.sent - self.delivered - self.dropped

    @property
    def mean_delay(self) -> float:
        return self.delay_sum / self.delivered if self.delivered else 0.0

    def as_dict(self) -> dict:
        return {"sent": self.sent, "delivered": self.delivered, "dropped": self.dropped,
                "mean_delay": self.mean_delay}


class Bus:
    """Single broadcast queue. Loss is sampled once per message, not per receiver.

    Callers enqueue in a fixed (tick, agent id) order so that the sampled
    latencies and drops are reproducible for a given generator.
    """

    def __init__(self, channel: ChannelModel, rng: np.random.Generator, log: bool = False):
        self.channel = channel
        self.rng = rng
        self.stats = BusStats()
        self._next_id = 0
        self._queue: list = []
        self.log_enabled = log
        self.log: list[dict] = []

    def next_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def make(self, kind: MessageKind, sender, payload, created: float) -> V2XMessage:
        return V2XMessage(self.next_id(), kind, sender, payload, created)

    def broadcast(self, msg: V2XMessage, now: float) -> Optional[float]:
        """Schedule ``msg``; returns the delivery time, or None when dropped."""
        if msg.created > now + 1e-12:
            raise InvalidParameterError("cannot send a message before it is created")
        ch = self.channel
        self.stats.sent += 1
        # draw both variates for every message so the stream does not depend on outcomes
        u = self.rng.random() if ch.drop_prob > 0 else 1.0
        z = self.rng.standard_normal() if ch.jitter_sigma > 0 else 0.0
        if u < ch.drop_prob:
            self.stats.dropped += 1
            if self.log_enabled:
                self.log.append(self._event(msg, dropped=now))
            return None
        at = now + max(0.0, ch.base_latency + ch.jitter_sigma * z)
        heapq.heappush(self._queue, (at, msg.msg_id, msg))
        return at

    def send(self, kind: MessageKind, sender, payload, now: float) -> V2XMessage:
        msg = self.make(kind, sender, payload, now)
        self.broadcast(msg, now)
        return msg

    def deliver(self, now: float) -> list[V2XMessage]:
        """Pop every message due by ``now``, ordered by (delivery time, msg_id)."""
        out = []
        q = self._queue
        while q and q[0][0] <= now + 1e-9:
            at, _, msg = heapq.heappop(q)
            self.stats.delivered += 1
            self.stats.delay_sum += at - msg.created
            if self.log_enabled:
                self.log.append(self._event(msg, delivered=at))
            out.append(msg)
        return out

    def pending(self) -> int:
        return len(self._queue)

    @staticmethod
    def _event(msg: V2XMessage, delivered=None, dropped=None) -> dict:
        ev = {"event": "message", "msg_id": msg.msg_id, "kind": msg.kind.value, "sender": msg.sender,
              "created": round(msg.created, 9)}
        if delivered is not None:
            ev["delivered"] = round(delivered, 9)
        else:
            ev["dropped"] = round(dropped, 9)
        return ev

    def export_log(self, fh) -> None:
        """Write the message log as JSON lines."""
        for ev in self.log:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# traffic lights


@dataclass(frozen=True)
class TrafficLight:
    light_id: str
    phases: tuple[tuple[LightState, float], ...]
    phase_index: int = 0
    time_in_phase: float = 0.0
    # while preempting through yellow, the phase to jump to afterwards
    pending: Optional[int] = None

    def __post_init__(self):
        if not self.phases:
            raise InvalidParameterError("a traffic light needs at least one phase")
        phases = tuple((LightState(s), float(d)) for s, d in self.phases)
        if any(not d > 0 for _, d in phases):
            raise InvalidParameterError("phase durations must be > 0")
        object.__setattr__(self, "phases", phases)
        if not 0 <= self.phase_index < len(phases) and self.phase_index != -1:
            raise InvalidParameterError("phase_index out of range")

    @property
    def state(self) -> LightState:
        if self.phase_index == -1:
            return LightState.YELLOW
        return self.phases[self.phase_index][0]

    @property
    def duration(self) -> float:
        if self.phase_index == -1:
            return self.yellow_duration
        return self.phases[self.phase_index][1]

    @property
    def yellow_duration(self) -> float:
        for s, d in self.phases:
            if s is LightState.YELLOW:
                return d
        return 0.0

    @property
    def cycle(self) -> float:
        return sum(d for _, d in self.phases)

    @classmethod
    def with_offset(cls, light_id: str, phases: Sequence, offset: float = 0.0) -> "TrafficLight":
        light = cls(light_id, tuple(phases))
        off = offset % light.cycle
        return light_step(light, off) if off > 0 else light


def light_step(light: TrafficLight, dt: float) -> TrafficLight:
    """Advance the controller by ``dt``, rolling over phases with the remainder carried."""
    if not dt > 0:
        raise InvalidParameterError("dt must be > 0")
    idx, t, pending = light.phase_index, light.time_in_phase + dt, light.pending
    n = len(light.phases)
    while True:
        dur = light.yellow_duration if idx == -1 else light.phases[idx][1]
        # tolerate float dust so a 12 x 1.0 s sweep lands exactly on a boundary
        if t < dur - 1e-12:
            break
        t -= dur
        if idx == -1:
            idx, pending = pending, None
        else:
            idx = (idx + 1) % n
        if abs(t) < 1e-12:
            t = 0.0
    return replace(light, phase_index=idx, time_in_phase=t, pending=pending)


def preempt(light: TrafficLight, phase: int) -> TrafficLight:
    """Force the light toward phase index ``phase``.

    Leaving green goes through a full yellow first; anything else switches
    immediately. The time in phase restarts at zero.
    """
    if not isinstance(phase, (int, np.integer)) or not 0 <= phase < len(light.phases):
        raise InvalidParameterError(f"unknown phase {phase!r} for light {light.light_id}")
    phase = int(phase)
    if (light.state is LightState.GREEN and phase != light.phase_index
            and light.phases[phase][0] is not LightState.YELLOW and light.yellow_duration > 0):
        return replace(light, phase_index=-1, time_in_phase=0.0, pending=phase)
    return replace(light, phase_index=phase, time_in_phase=0.0, pending=None)


def spat_of(light: TrafficLight) -> SPaT:
    return SPaT(light.light_id, light.state, light.duration - light.time_in_phase)
