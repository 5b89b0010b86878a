"""Device wire format, pose ingestion, simulated device and trace files.

Drive frame (big-endian)::

    0xAA | seq u8 | count u8 (1..32) | count x i16 millivolts | crc16 u16

Telemetry frame::

    0xAB | seq u8 | count u8 (1..32) | count x (t_ms u32, force i16 mN,
    temperature i16 centi-degC) | crc16 u16

The CRC is CRC-16/CCITT-FALSE over every byte before it.
"""

from __future__ import annotations

import binascii
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .electromech import (
    BLOCKED,
    Integrator,
    LumpedParams,
    SimTrace,
    ThermalParams,
    max_stable_dt,
)
from .errors import (
    BadCountError,
    CrcMismatchError,
    FrameError,
    MalformedLineError,
    TruncatedFrameError,
)

DRIVE_SYNC = 0xAA
TELEMETRY_SYNC = 0xAB
MAX_COUNT = 32
MAX_MILLIVOLTS = 10_000
TELEMETRY_DECIMATION = 10
TRACE_HEADER = ["t_s", "x_m", "v_mps", "I_A", "F_N", "accel_G"]


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.

    binascii.crc_hqx implements the same non-reflected 0x1021 polynomial
    with a caller-supplied initial value.
    """
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class DeviceFrame:
    seq: int
    samples: tuple  # millivolts

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(int(s) for s in self.samples))
        if not 0 <= self.seq <= 0xFF:
            raise FrameError(f"seq {self.seq} outside 0..255")
        if not 1 <= len(self.samples) <= MAX_COUNT:
            raise BadCountError(f"sample count {len(self.samples)} outside 1..{MAX_COUNT}")
        if any(abs(s) > MAX_MILLIVOLTS for s in self.samples):
            raise FrameError(f"sample magnitude exceeds {MAX_MILLIVOLTS} mV")

    @property
    def volts(self):
        return [s / 1000.0 for s in self.samples]


@dataclass(frozen=True)
class TelemetryRecord:
    t_ms: int
    force_mN: int
    temp_centi: int


@dataclass(frozen=True)
class TelemetryFrame:
    seq: int
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not 0 <= self.seq <= 0xFF:
            raise FrameError(f"seq {self.seq} outside 0..255")
        if not 1 <= len(self.records) <= MAX_COUNT:
            raise BadCountError(f"record count {len(self.records)} outside 1..{MAX_COUNT}")


def frame_length(count: int, sync: int = DRIVE_SYNC) -> int:
    per = 2 if sync == DRIVE_SYNC else 8
    return 3 + per * count + 2


def encode_frame(frame: DeviceFrame) -> bytes:
    body = struct.pack(f">BBB{len(frame.samples)}h", DRIVE_SYNC, frame.seq,
                       len(frame.samples), *frame.samples)
    return body + struct.pack(">H", crc16(body))


def encode_telemetry(frame: TelemetryFrame) -> bytes:
    body = bytearray(struct.pack(">BBB", TELEMETRY_SYNC, frame.seq, len(frame.records)))
    for r in frame.records:
        body += struct.pack(">Ihh", r.t_ms, r.force_mN, r.temp_centi)
    body = bytes(body)
    return body + struct.pack(">H", crc16(body))


def _decode_at(buf: bytes, i: int, sync: int):
    """Decode one frame starting at ``buf[i]``; returns (frame, length)."""
    if len(buf) - i < 3:
        raise TruncatedFrameError("buffer ends inside a frame header")
    if buf[i] != sync:
        raise FrameError(f"expected sync 0x{sync:02X}, found 0x{buf[i]:02X}")
    seq, count = buf[i + 1], buf[i + 2]
    if not 1 <= count <= MAX_COUNT:
        raise BadCountError(f"count {count} outside 1..{MAX_COUNT}")
    n = frame_length(count, sync)
    if len(buf) - i < n:
        raise TruncatedFrameError(f"frame needs {n} bytes, {len(buf) - i} available")
    body = bytes(buf[i:i + n - 2])
    (crc,) = struct.unpack_from(">H", buf, i + n - 2)
    if crc16(body) != crc:
        raise CrcMismatchError(f"crc mismatch in frame seq={seq}")
    if sync == DRIVE_SYNC:
        samples = struct.unpack_from(f">{count}h", body, 3)
        if any(abs(s) > MAX_MILLIVOLTS for s in samples):
            raise FrameError("sample magnitude exceeds limit")
        return DeviceFrame(seq, samples), n
    recs = [TelemetryRecord(*struct.unpack_from(">Ihh", body, 3 + 8 * j)) for j in range(count)]
    return TelemetryFrame(seq, recs), n


def decode_frame(buf: bytes) -> DeviceFrame:
    """Decode the drive frame at the start of ``buf``."""
    frame, _ = _decode_at(buf, 0, DRIVE_SYNC)
    return frame


def decode_telemetry(buf: bytes) -> TelemetryFrame:
    frame, _ = _decode_at(buf, 0, TELEMETRY_SYNC)
    return frame


class StreamDecoder:
    """Incremental decoder that resynchronizes on the next sync byte after
    a bad frame. Errors are counted rather than raised."""

    def __init__(self, sync: int = DRIVE_SYNC):
        self.sync = sync
        self.buf = bytearray()
        self.errors = []

    def feed(self, data: bytes, final: bool = False) -> list:
        self.buf += data
        out = []
        i = 0
        while True:
            j = self.buf.find(bytes([self.sync]), i)
            if j < 0:
                i = len(self.buf)
                break
            try:
                frame, n = _decode_at(self.buf, j, self.sync)
            except TruncatedFrameError as exc:
                if not final:
                    i = j
                    break
                # no more bytes coming, so this sync was false
                self.errors.append(exc)
                i = j + 1
                continue
            except FrameError as exc:
                self.errors.append(exc)
                i = j + 1
                continue
            out.append(frame)
            i = j + n
        del self.buf[:i]
        return out

    def flush(self) -> list:
        """End of input: give up on a pending partial frame and rescan past it."""
        return self.feed(b"", final=True)


def decode_stream(data: bytes, sync: int = DRIVE_SYNC):
    """Decode all complete frames in ``data``; returns (frames, errors)."""
    dec = StreamDecoder(sync)
    frames = dec.feed(data, final=True)
    return frames, dec.errors


def frames_from_volts(volts, per_frame: int = MAX_COUNT, seq0: int = 0):
    """Pack a voltage sequence into drive frames with a wrapping sequence."""
    mv = [int(round(v * 1000.0)) for v in volts]
    frames = []
    for k, start in enumerate(range(0, len(mv), per_frame)):
        frames.append(DeviceFrame((seq0 + k) & 0xFF, mv[start:start + per_frame]))
    return frames


@dataclass(frozen=True)
class PoseRecord:
    t_ms: int
    finger: str
    x: float
    y: float
    z: float

    @property
    def position(self):
        return (self.x, self.y, self.z)


def parse_pose_line(line: str, lineno: int = 1) -> PoseRecord | None:
    """Parse ``t_ms,finger,x,y,z``; returns None for blank and ``#`` lines."""
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 5:
        raise MalformedLineError(lineno, f"expected 5 fields, got {len(parts)}")
    try:
        t_ms = int(parts[0])
        x, y, z = (float(v) for v in parts[2:])
    except ValueError as exc:
        raise MalformedLineError(lineno, str(exc)) from None
    if t_ms < 0:
        raise MalformedLineError(lineno, "t_ms must be non-negative")
    if not parts[1]:
        raise MalformedLineError(lineno, "empty finger id")
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise MalformedLineError(lineno, "non-finite coordinate")
    return PoseRecord(t_ms, parts[1], x, y, z)


def read_poses(lines: Iterable[str]) -> list:
    """Parse a pose stream, rejecting time going backwards for any finger."""
    last = {}
    out = []
    for lineno, line in enumerate(lines, 1):
        rec = parse_pose_line(line, lineno)
        if rec is None:
            continue
        if rec.finger in last and rec.t_ms < last[rec.finger]:
            raise MalformedLineError(
                lineno, f"t_ms {rec.t_ms} goes backwards for finger {rec.finger!r}")
        last[rec.finger] = rec.t_ms
        out.append(rec)
    return out


def _clip_i16(v: float) -> int:
    return int(max(-32768, min(32767, round(v))))


class SimulatedDevice:
    """Stand-in for the MCU + motor driver + actuator.

    Each drive sample is held for one tick; the electromechanical model is
    advanced in blocked mode with ``dt`` sub-steps per tick and a telemetry
    record is produced every ``decimation`` ticks.
    """

    def __init__(self, params: LumpedParams, thermal: ThermalParams, tick_rate: float = 1000.0,
                 dt: float | None = None, decimation: int = TELEMETRY_DECIMATION):
        tick = 1.0 / tick_rate
        if dt is None:
            dt = tick / math.ceil(tick / max_stable_dt(params, BLOCKED) - 1e-9)
        self.n_sub = int(round(tick / dt))
        if self.n_sub < 1 or abs(self.n_sub * dt - tick) > 1e-9 * tick:
            raise ValueError("dt must divide the tick period")
        self.params = params
        self.thermal = thermal
        self.tick_rate = tick_rate
        self.decimation = decimation
        self.integrator = Integrator(params, BLOCKED, dt)
        self.temperature = thermal.T_amb
        self.ticks = 0
        self.seq = 0
        self._a = math.exp(-dt / thermal.tau)
        self._b = thermal.R_th * (1.0 - self._a)
        self.records = []  # (t_s, force_N, temperature_C) unquantized
        self._i_prev = 0.0

    def _force(self) -> float:
        x = self.integrator.state[0]
        p = self.params
        return max(0.0, p.preload + p.k_contact * x) - p.preload

    def tick(self, volts: float):
        """Advance one tick; returns a TelemetryFrame on decimation ticks."""
        _, _, cur = self.integrator.run([volts] * self.n_sub)
        y = self.temperature - self.thermal.T_amb
        for i in cur:
            # power held over each sub-step, matching thermal_sim's recurrence
            y = self._a * y + self._b * (self._i_prev * self._i_prev * self.params.R)
            self._i_prev = i
        self.temperature = self.thermal.T_amb + y
        self.ticks += 1
        if self.ticks % self.decimation:
            return None
        t = self.ticks / self.tick_rate
        force = self._force()
        self.records.append((t, force, self.temperature))
        rec = TelemetryRecord(int(round(t * 1000.0)) & 0xFFFFFFFF, _clip_i16(force * 1e3),
                              _clip_i16(self.temperature * 100.0))
        frame = TelemetryFrame(self.seq, [rec])
        self.seq = (self.seq + 1) & 0xFF
        return frame


def simulated_device(frames: Iterable[DeviceFrame], params: LumpedParams, thermal: ThermalParams,
                     tick_rate: float = 1000.0, dt: float | None = None) -> Iterator[TelemetryFrame]:
    """Consume drive frames in order and yield telemetry frames."""
    dev = SimulatedDevice(params, thermal, tick_rate, dt)
    for fr in frames:
        for v in fr.volts:
            out = dev.tick(v)
            if out is not None:
                yield out


def write_trace(trace: SimTrace, path) -> None:
    """Write a trace CSV; values carry nine digits after the leading one."""
    cols = (trace.time, trace.x, trace.v, trace.I, trace.F_contact, trace.accel)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        if len(trace):
            data = np.column_stack(cols)
            np.savetxt(fh, data, fmt="%.9e", delimiter=",")


def read_trace(path, mode: str = BLOCKED) -> SimTrace:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        first = fh.tell()
        empty = not fh.readline().strip()
        fh.seek(first)
        rows = np.zeros((0, 6)) if empty else np.loadtxt(fh, delimiter=",", ndmin=2)
    return SimTrace(*(rows[:, j] for j in range(6)), mode=mode)
