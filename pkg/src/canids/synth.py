"""Ambient CAN traffic generation and attack injection.

The injectors reproduce six attack mechanics over an ambient log: bus-flood
DoS, random-id fuzzing, targeted spoofing, max-payload fuzzing with cycling
ids, fabrication (one forged frame flammed right after each legitimate target
frame), and the masquerade post-process that deletes the legitimate frame of
each flam pair. Every injector returns a fully labeled, time-sorted log and
is deterministic under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from canids.core import (
    MAX_DLC,
    MAX_EXTENDED_ID,
    MAX_STANDARD_ID,
    CanFrame,
    LabeledFrame,
    TrafficLog,
    binary_label_space,
    to_us,
)
from canids.ingest import NIBBLE_WILDCARD, AttackMetadata

FLAM_DELAY_US = 1  # one timestamp quantum: "immediately after" the legitimate frame

DOS_PERIOD_S = 0.0003
FUZZY_PERIOD_S = 0.0005
SPOOF_PERIOD_S = 0.001

DOS_CLASS = "DoS Attack"
FUZZY_CLASS = "Fuzzy Attack"
SPOOF_CLASS = "Spoofing Attack"
MAX_PAYLOAD_FUZZ_CLASS = "Fuzzing Attack"
FABRICATION_CLASS = "Fabrication Attack"
MASQUERADE_CLASS = "Masquerade Attack"


# ---------------------------------------------------------------------------
# Ambient surrogate traffic

@dataclass(frozen=True)
class PayloadModel:
    """Per-id payload evolution: constant bytes, bounded random walk, or counters."""

    kind: str = "constant"  # constant | random_walk | counter
    base: bytes = b"\x00" * 8
    step: int = 1
    positions: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "random_walk", "counter"):
            raise ValueError(f"unknown payload model {self.kind!r}")
        if len(self.base) > MAX_DLC:
            raise ValueError("payload base exceeds 8 bytes")
        if any(p >= len(self.base) for p in self.positions):
            raise ValueError("counter position beyond payload length")

    def sequence(self, rng: np.random.Generator, count: int) -> list[bytes]:
        if self.kind == "constant":
            return [self.base] * count
        if self.kind == "counter":
            out = []
            state = bytearray(self.base)
            for _ in range(count):
                out.append(bytes(state))
                for p in self.positions:
                    state[p] = (state[p] + 1) & 0xFF
            return out
        # random_walk: each byte moves by at most `step` per frame, clipped
        out = []
        state = np.frombuffer(self.base, dtype=np.uint8).astype(np.int16)
        for _ in range(count):
            out.append(state.astype(np.uint8).tobytes())
            state = np.clip(state + rng.integers(-self.step, self.step + 1, size=state.size), 0, 255)
        return out

    def to_json_obj(self) -> dict:
        obj = {"kind": self.kind, "base": self.base.hex().upper()}
        if self.kind == "random_walk":
            obj["step"] = self.step
        if self.kind == "counter":
            obj["positions"] = list(self.positions)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PayloadModel":
        return cls(
            kind=obj.get("kind", "constant"),
            base=bytes.fromhex(obj.get("base", "00" * 8)),
            step=int(obj.get("step", 1)),
            positions=tuple(obj.get("positions", ())),
        )


def _parse_id(value) -> int:
    """Ids in JSON configs may be ints or hex strings ("0D0")."""
    return value if isinstance(value, int) else int(str(value), 16)


@dataclass(frozen=True)
class AmbientIdSpec:
    can_id: int
    period: float
    jitter_std: float = 0.0
    payload: PayloadModel = field(default_factory=PayloadModel)
    extended: bool = False

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("ambient period must be positive")
        if self.jitter_std < 0:
            raise ValueError("jitter_std must be non-negative")


@dataclass(frozen=True)
class AmbientModel:
    """Declarative surrogate for an ambient capture: periodic per-id schedules."""

    ids: tuple[AmbientIdSpec, ...]
    duration: float
    seed: int = 0
    channel: str = "can0"

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        seen = [s.can_id for s in self.ids]
        if len(seen) != len(set(seen)):
            raise ValueError("duplicate ambient id entries")

    def to_json_obj(self) -> dict:
        return {
            "duration": self.duration,
            "seed": self.seed,
            "channel": self.channel,
            "ids": [
                {
                    "id": f"{s.can_id:03X}",
                    "period": s.period,
                    "jitter_std": s.jitter_std,
                    "extended": s.extended,
                    "payload": s.payload.to_json_obj(),
                }
                for s in self.ids
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AmbientModel":
        ids = tuple(
            AmbientIdSpec(
                can_id=_parse_id(e["id"]),
                period=float(e["period"]),
                jitter_std=float(e.get("jitter_std", 0.0)),
                payload=PayloadModel.from_json_obj(e.get("payload", {})),
                extended=bool(e.get("extended", False)),
            )
            for e in obj["ids"]
        )
        return cls(
            ids=ids,
            duration=float(obj["duration"]),
            seed=int(obj.get("seed", 0)),
            channel=obj.get("channel", "can0"),
        )


def generate_ambient(model: AmbientModel) -> TrafficLog:
    """Generate ambient traffic: per-id frames at phase + k*period + jitter.

    Each id draws from its own seeded substream, so the log is deterministic
    under the model seed and ids can be generated independently.
    """
    duration_us = to_us(model.duration)
    all_frames: list[CanFrame] = []
    for spec in model.ids:
        rng = np.random.default_rng([model.seed, spec.can_id])
        period_us = to_us(spec.period)
        phase_us = int(rng.uniform(0, period_us))
        if phase_us >= duration_us:
            continue
        count = (duration_us - 1 - phase_us) // period_us + 1
        times = phase_us + period_us * np.arange(count, dtype=np.int64)
        if spec.jitter_std > 0:
            times = times + np.rint(rng.normal(0.0, spec.jitter_std * 1e6, count)).astype(np.int64)
            times = np.sort(times)
            times = times[(times >= 0) & (times < duration_us)]
        payloads = spec.payload.sequence(rng, len(times))
        all_frames.extend(
            CanFrame(int(t), model.channel, spec.can_id, p, extended=spec.extended)
            for t, p in zip(times, payloads)
        )
    all_frames.sort(key=lambda f: f.timestamp_us)
    return TrafficLog(frames=tuple(all_frames))


# ---------------------------------------------------------------------------
# Injection machinery

def _interval_us(interval: Sequence[float]) -> tuple[int, int]:
    start_us, end_us = to_us(interval[0]), to_us(interval[1])
    if start_us > end_us:
        raise ValueError("injection interval start exceeds end")
    return start_us, end_us


def _schedule_us(start_us: int, end_us: int, period: float) -> np.ndarray:
    """Periodic injection times in [start, end); an empty interval injects nothing."""
    period_us = to_us(period)
    if period_us <= 0:
        raise ValueError("injection period must be positive")
    if end_us <= start_us:
        return np.empty(0, dtype=np.int64)
    count = (end_us - 1 - start_us) // period_us + 1
    return start_us + period_us * np.arange(count, dtype=np.int64)


def _channel_of(ambient: TrafficLog) -> str:
    if len(ambient):
        return ambient.can_frames()[0].channel
    return "can0"


def _merge_labeled(
    ambient: TrafficLog, injected: list[CanFrame], attack_class: str
) -> TrafficLog:
    space = binary_label_space(attack_class)
    normal = space.get("Normal")
    attack = space.get(attack_class)
    labeled = [LabeledFrame(f, normal) for f in ambient.can_frames()]
    labeled += [LabeledFrame(f, attack) for f in injected]
    labeled.sort(key=lambda lf: lf.timestamp_us)
    return TrafficLog(frames=tuple(labeled), label_space=space)


def inject_dos(
    ambient: TrafficLog,
    interval: Sequence[float],
    period: float = DOS_PERIOD_S,
    attack_class: str = DOS_CLASS,
) -> TrafficLog:
    """Flood the bus with the all-dominant id 0x000 and a zero payload.

    Injections are spaced `period` apart (0.3 ms by default) inside the
    interval; every injected frame wins arbitration against any ambient frame
    with a nonzero id.
    """
    start_us, end_us = _interval_us(interval)
    channel = _channel_of(ambient)
    injected = [
        CanFrame(int(t), channel, 0x000, b"\x00" * 8) for t in _schedule_us(start_us, end_us, period)
    ]
    return _merge_labeled(ambient, injected, attack_class)


def inject_fuzzy(
    ambient: TrafficLog,
    interval: Sequence[float],
    period: float = FUZZY_PERIOD_S,
    seed: int = 0,
    extended_ids: bool = False,
    attack_class: str = FUZZY_CLASS,
) -> TrafficLog:
    """Inject frames with uniformly random ids and 8 random data bytes.

    Ids are drawn from the 11-bit space by default; pass extended_ids=True
    for the full 29-bit space.
    """
    start_us, end_us = _interval_us(interval)
    times = _schedule_us(start_us, end_us, period)
    rng = np.random.default_rng([seed, 0xF022])
    id_limit = MAX_EXTENDED_ID if extended_ids else MAX_STANDARD_ID
    ids = rng.integers(0, id_limit + 1, size=len(times))
    payloads = rng.integers(0, 256, size=(len(times), 8), dtype=np.uint8)
    channel = _channel_of(ambient)
    injected = [
        CanFrame(int(t), channel, int(i), p.tobytes(), extended=extended_ids)
        for t, i, p in zip(times, ids, payloads)
    ]
    return _merge_labeled(ambient, injected, attack_class)


def inject_targeted_spoof(
    ambient: TrafficLog,
    target_id: int,
    payload: bytes,
    interval: Sequence[float],
    period: float = SPOOF_PERIOD_S,
    attack_class: str = SPOOF_CLASS,
) -> TrafficLog:
    """Inject a fixed spoofed id/payload pair periodically (1 ms by default)."""
    start_us, end_us = _interval_us(interval)
    channel = _channel_of(ambient)
    extended = target_id > MAX_STANDARD_ID
    injected = [
        CanFrame(int(t), channel, target_id, bytes(payload), extended=extended)
        for t in _schedule_us(start_us, end_us, period)
    ]
    return _merge_labeled(ambient, injected, attack_class)


def inject_fuzzing_max_payload(
    ambient: TrafficLog,
    interval: Sequence[float],
    id_cycle: Sequence[int],
    period: float,
    attack_class: str = MAX_PAYLOAD_FUZZ_CLASS,
) -> TrafficLog:
    """Cycle through `id_cycle` in order, each frame carrying 8 bytes of 0xFF."""
    if not id_cycle:
        raise ValueError("id_cycle must be nonempty")
    start_us, end_us = _interval_us(interval)
    channel = _channel_of(ambient)
    payload = b"\xff" * 8
    injected = [
        CanFrame(int(t), channel, id_cycle[k % len(id_cycle)], payload,
                 extended=id_cycle[k % len(id_cycle)] > MAX_STANDARD_ID)
        for k, t in enumerate(_schedule_us(start_us, end_us, period))
    ]
    return _merge_labeled(ambient, injected, attack_class)


def apply_payload_spec(spec: str, legit: bytes) -> bytes:
    """Build a forged payload: 'X' nibbles copy the legitimate frame, hex nibbles override."""
    spec = spec.upper()
    fixed = [i for i, c in enumerate(spec) if c != NIBBLE_WILDCARD]
    n_bytes = max(len(legit), (max(fixed) // 2 + 1) if fixed else 0)
    nibbles = list((legit + b"\x00" * (n_bytes - len(legit))).hex().upper())
    for i in fixed:
        nibbles[i] = spec[i]
    return bytes.fromhex("".join(nibbles))


def inject_fabrication(
    ambient: TrafficLog,
    target_id: int,
    payload_spec: str,
    interval: Sequence[float],
    attack_class: str = FABRICATION_CLASS,
) -> TrafficLog:
    """Flam delivery: one forged frame right after each legitimate target frame.

    The forged frame reuses the legitimate frame's payload except at the
    nibbles fixed by payload_spec, and sits one timestamp quantum later, so
    only the target signal changes and only a single frame is added per
    legitimate message.
    """
    start_us, end_us = _interval_us(interval)
    injected = []
    for f in ambient.can_frames():
        if f.can_id == target_id and start_us <= f.timestamp_us <= end_us:
            forged = apply_payload_spec(payload_spec, f.data)
            injected.append(
                CanFrame(f.timestamp_us + FLAM_DELAY_US, f.channel, target_id, forged,
                         extended=f.extended)
            )
    return _merge_labeled(ambient, injected, attack_class)


def to_masquerade(
    fabricated: TrafficLog,
    target_id: int,
    interval: Sequence[float],
) -> TrafficLog:
    """Masquerade post-process: drop each legitimate target frame that a flam follows.

    Input must come from inject_fabrication with the same target/interval.
    The injected frames stay (still attack-labeled) and keep their flam
    timestamps, so the target id's rate and timing match the ambient capture
    to within the flam delay.
    """
    start_us, end_us = _interval_us(interval)
    frames = list(fabricated.frames)
    target_positions = [i for i, lf in enumerate(frames) if lf.frame.can_id == target_id]
    doomed: set[int] = set()
    for pos, i in enumerate(target_positions):
        lf = frames[i]
        if lf.label.is_attack and start_us <= lf.timestamp_us <= end_us + FLAM_DELAY_US and pos > 0:
            j = target_positions[pos - 1]
            if not frames[j].label.is_attack:
                doomed.add(j)
    kept = tuple(lf for k, lf in enumerate(frames) if k not in doomed)
    return TrafficLog(frames=kept, label_space=fabricated.label_space)


# ---------------------------------------------------------------------------
# Scenario files and sidecar metadata

SCENARIO_KINDS = ("dos", "fuzzy", "targeted_spoof", "fuzzing_max_payload", "fabrication", "masquerade")

_DEFAULT_CLASS = {
    "dos": DOS_CLASS,
    "fuzzy": FUZZY_CLASS,
    "targeted_spoof": SPOOF_CLASS,
    "fuzzing_max_payload": MAX_PAYLOAD_FUZZ_CLASS,
    "fabrication": FABRICATION_CLASS,
    "masquerade": MASQUERADE_CLASS,
}

_DEFAULT_PERIOD = {"dos": DOS_PERIOD_S, "fuzzy": FUZZY_PERIOD_S, "targeted_spoof": SPOOF_PERIOD_S}


@dataclass(frozen=True)
class AttackScenario:
    """Declarative description of one injection campaign."""

    kind: str
    interval: tuple[float, float]
    target_id: int | None = None
    payload: bytes | None = None
    payload_spec: str | None = None
    period: float | None = None
    id_cycle: tuple[int, ...] = ()
    seed: int = 0
    extended_ids: bool = False
    attack_class: str | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.interval[0] > self.interval[1]:
            raise ValueError("scenario interval start exceeds end")
        if self.kind in ("targeted_spoof", "fabrication", "masquerade") and self.target_id is None:
            raise ValueError(f"scenario kind {self.kind!r} requires target_id")
        if self.kind == "targeted_spoof" and self.payload is None:
            raise ValueError("targeted_spoof requires a payload")
        if self.kind in ("fabrication", "masquerade") and self.payload_spec is None:
            raise ValueError(f"scenario kind {self.kind!r} requires payload_spec")
        if self.kind == "fuzzing_max_payload" and (not self.id_cycle or self.period is None):
            raise ValueError("fuzzing_max_payload requires id_cycle and period")
        if self.period is not None and self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def effective_period(self) -> float | None:
        return self.period if self.period is not None else _DEFAULT_PERIOD.get(self.kind)

    @property
    def effective_class(self) -> str:
        return self.attack_class or _DEFAULT_CLASS[self.kind]

    def to_json_obj(self) -> dict:
        obj: dict = {"kind": self.kind, "interval": list(self.interval), "seed": self.seed}
        if self.target_id is not None:
            obj["target_id"] = f"{self.target_id:03X}"
        if self.payload is not None:
            obj["payload"] = self.payload.hex().upper()
        if self.payload_spec is not None:
            obj["payload_spec"] = self.payload_spec
        if self.period is not None:
            obj["period"] = self.period
        if self.id_cycle:
            obj["id_cycle"] = [f"{i:03X}" for i in self.id_cycle]
        if self.extended_ids:
            obj["extended_ids"] = True
        if self.attack_class is not None:
            obj["attack_class"] = self.attack_class
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AttackScenario":
        return cls(
            kind=obj["kind"],
            interval=(float(obj["interval"][0]), float(obj["interval"][1])),
            target_id=_parse_id(obj["target_id"]) if "target_id" in obj else None,
            payload=bytes.fromhex(obj["payload"]) if "payload" in obj else None,
            payload_spec=obj.get("payload_spec"),
            period=float(obj["period"]) if "period" in obj else None,
            id_cycle=tuple(_parse_id(i) for i in obj.get("id_cycle", ())),
            seed=int(obj.get("seed", 0)),
            extended_ids=bool(obj.get("extended_ids", False)),
            attack_class=obj.get("attack_class"),
        )


def load_scenario(stream: IO[str]) -> AttackScenario:
    return AttackScenario.from_json_obj(json.load(stream))


def save_scenario(scenario: AttackScenario, stream: IO[str]) -> None:
    json.dump(scenario.to_json_obj(), stream, indent=2)
    stream.write("\n")


def run_scenario(ambient: TrafficLog, scenario: AttackScenario) -> TrafficLog:
    """Apply a scenario to ambient traffic, returning the labeled log."""
    if len(ambient):
        first = ambient.can_frames()[0].timestamp_us
        last = ambient.can_frames()[-1].timestamp_us
        start_us, end_us = _interval_us(scenario.interval)
        if start_us < first or start_us > last:
            raise ValueError(
                f"scenario interval starts at {scenario.interval[0]}s, outside the ambient span"
            )
        del end_us
    kind = scenario.kind
    cls = scenario.effective_class
    if kind == "dos":
        return inject_dos(ambient, scenario.interval, scenario.effective_period, attack_class=cls)
    if kind == "fuzzy":
        return inject_fuzzy(
            ambient, scenario.interval, scenario.effective_period,
            seed=scenario.seed, extended_ids=scenario.extended_ids, attack_class=cls,
        )
    if kind == "targeted_spoof":
        return inject_targeted_spoof(
            ambient, scenario.target_id, scenario.payload, scenario.interval,
            scenario.effective_period, attack_class=cls,
        )
    if kind == "fuzzing_max_payload":
        return inject_fuzzing_max_payload(
            ambient, scenario.interval, scenario.id_cycle, scenario.period, attack_class=cls
        )
    if kind == "fabrication":
        return inject_fabrication(
            ambient, scenario.target_id, scenario.payload_spec, scenario.interval, attack_class=cls
        )
    # masquerade: fabricate, then remove the legitimate halves of the flam pairs
    fabricated = inject_fabrication(
        ambient, scenario.target_id, scenario.payload_spec, scenario.interval, attack_class=cls
    )
    return to_masquerade(fabricated, scenario.target_id, scenario.interval)


def sidecar_metadata(scenario: AttackScenario, labeled: TrafficLog) -> list[AttackMetadata]:
    """Build labeling metadata that reproduces the construction labels.

    Most kinds need a single entry (interval + id + payload pattern); the
    random-content fuzzy attack gets one exact entry per injected frame since
    no single pattern separates its frames from ambient traffic. The entries
    are only as discriminative as the scenario is against the ambient model:
    an ambient frame that matches the attack's id, interval, and pattern
    would be labeled as attack on replay.
    """
    start_us, end_us = _interval_us(scenario.interval)
    cls = scenario.effective_class
    kind = scenario.kind
    if kind == "dos":
        return [AttackMetadata(start_us, end_us, can_id=0x000, pattern="0" * 16, attack_class=cls)]
    if kind == "fuzzy":
        return [
            AttackMetadata(
                lf.timestamp_us, lf.timestamp_us,
                can_id=lf.frame.can_id,
                pattern=lf.frame.data.hex().upper(),
                attack_class=cls,
            )
            for lf in labeled
            if lf.label.is_attack
        ]
    if kind == "targeted_spoof":
        return [
            AttackMetadata(
                start_us, end_us, can_id=scenario.target_id,
                pattern=scenario.payload.hex().upper(), attack_class=cls,
            )
        ]
    if kind == "fuzzing_max_payload":
        return [AttackMetadata(start_us, end_us, can_id=None, pattern="F" * 16, attack_class=cls)]
    # fabrication / masquerade: the flam frame sits one quantum past a legit
    # frame at the interval edge, so the matching window extends by that much
    return [
        AttackMetadata(
            start_us, end_us + FLAM_DELAY_US,
            can_id=scenario.target_id, pattern=scenario.payload_spec.upper(), attack_class=cls,
        )
    ]
