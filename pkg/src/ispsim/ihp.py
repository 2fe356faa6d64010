"""Host-vs-storage comparison: replay a host IO trace on the baseline SSD.

The expected host execution time on the simulated SSD keeps the measured
non-IO time and swaps the measured IO time for the replayed one:

    expected = T_total - T_IO + T_IOsim

which assumes the host's non-IO time does not depend on the storage device.
All times are integer nanoseconds.

Trace format, one record per line (``#`` starts a comment)::

    issue_time_ns R|W offset_bytes length_bytes
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Union

from .nand import NandArray, NandGeometry, NandTiming, PageAddress


class TraceError(ValueError):
    pass


class IoTraceRecord(NamedTuple):
    issue_time: int
    op: str  # "read" or "write"
    offset_bytes: int
    length_bytes: int


@dataclass(frozen=True)
class IhpMeasurement:
    t_total: int
    t_io: int

    def __post_init__(self):
        if not 0 <= self.t_io <= self.t_total:
            raise TraceError(f"need 0 <= T_IO <= T_total, got T_IO={self.t_io}, T_total={self.t_total}")

    @property
    def t_nonio(self) -> int:
        return self.t_total - self.t_io


_OPS = {"R": "read", "W": "write"}


def parse_trace_text(text: str) -> List[IoTraceRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) != 4:
            raise TraceError(f"line {lineno}: expected 4 fields, got {len(body)}: {line.strip()!r}")
        t, op, off, length = body
        if op.upper() not in _OPS:
            raise TraceError(f"line {lineno}: op must be R or W, got {op!r}")
        try:
            rec = IoTraceRecord(int(t), _OPS[op.upper()], int(off), int(length))
        except ValueError:
            raise TraceError(f"line {lineno}: non-integer field in {line.strip()!r}") from None
        if rec.issue_time < 0 or rec.offset_bytes < 0:
            raise TraceError(f"line {lineno}: negative time or offset")
        if rec.length_bytes <= 0:
            raise TraceError(f"line {lineno}: length must be positive")
        records.append(rec)
    records.sort(key=lambda r: r.issue_time)  # stable
    return records


def parse_trace(path: Union[str, Path]) -> List[IoTraceRecord]:
    return parse_trace_text(Path(path).read_text())


def format_trace(records: Iterable[IoTraceRecord]) -> str:
    return "".join(f"{r.issue_time} {'R' if r.op == 'read' else 'W'} {r.offset_bytes} {r.length_bytes}\n"
                   for r in records)


@dataclass(frozen=True)
class BaselineSsd:
    num_channels: int = 16
    blocks_per_channel: int = 1024
    pages_per_block: int = 128
    page_size: int = 8192
    timing: NandTiming = NandTiming()
    stride: int = 1  # consecutive logical pages per channel before moving on

    def __post_init__(self):
        if min(self.num_channels, self.blocks_per_channel, self.pages_per_block, self.page_size, self.stride) < 1:
            raise TraceError("baseline SSD geometry and stride must be >= 1")


class _Replayer:
    def __init__(self, ssd: BaselineSsd):
        self.ssd = ssd
        geometry = NandGeometry(ssd.num_channels, ssd.blocks_per_channel, ssd.pages_per_block, ssd.page_size)
        self.nand = NandArray(geometry, ssd.timing)
        self.free_at = [0] * ssd.num_channels
        self.write_slot = [0] * ssd.num_channels
        self.mapping = {}  # logical page -> PageAddress
        self.blank = bytes(ssd.page_size)

    def channel_of(self, lpn: int) -> int:
        return (lpn // self.ssd.stride) % self.ssd.num_channels

    def _next_write_address(self, ch: int) -> (PageAddress, int):
        """Log-structured append; erases a block when the channel wraps onto it."""
        g = self.nand.geometry
        slot = self.write_slot[ch] % g.pages_per_channel
        self.write_slot[ch] += 1
        addr = PageAddress(ch, slot // g.pages_per_block, slot % g.pages_per_block)
        extra = 0
        if not self.nand.is_erased(addr):
            extra = self.nand.erase_block(ch, addr.block)
            stale = [lpn for lpn, a in self.mapping.items() if a.channel == ch and a.block == addr.block]
            for lpn in stale:
                del self.mapping[lpn]
        return addr, extra

    def op(self, issue: int, kind: str, lpn: int) -> int:
        ch = self.channel_of(lpn)
        start = max(issue, self.free_at[ch])
        if kind == "read":
            addr = self.mapping.get(lpn)
            if addr is None:
                ch_pages = self.nand.geometry.pages_per_channel
                slot = (lpn // (self.ssd.stride * self.ssd.num_channels)) * self.ssd.stride + lpn % self.ssd.stride
                slot %= ch_pages
                addr = PageAddress(ch, slot // self.ssd.pages_per_block, slot % self.ssd.pages_per_block)
            _, latency = self.nand.read_page(addr)
        else:
            addr, latency = self._next_write_address(ch)
            latency += self.nand.program_page(addr, self.blank)
            self.mapping[lpn] = addr
        done = start + latency
        self.free_at[ch] = done
        return done


def replay_trace(trace: Sequence[IoTraceRecord], ssd: BaselineSsd = BaselineSsd()) -> int:
    """Simulated IO time of ``trace`` on the baseline (non-ISP) SSD, in ns.

    Every record touches the pages its byte range covers; each page goes to
    its channel's FIFO queue. The result is the completion time of the last
    page operation, measured from time zero.
    """
    rep = _Replayer(ssd)
    end = 0
    for rec in sorted(trace, key=lambda r: r.issue_time):
        first = rec.offset_bytes // ssd.page_size
        last = (rec.offset_bytes + rec.length_bytes - 1) // ssd.page_size
        for lpn in range(first, last + 1):
            end = max(end, rep.op(rec.issue_time, rec.op, lpn))
    return end


def expected_ihp_time(m: IhpMeasurement, t_iosim: int) -> int:
    if t_iosim < 0:
        raise TraceError("T_IOsim must be nonnegative")
    result = m.t_total - m.t_io + t_iosim
    if result < 0:
        raise TraceError("inconsistent inputs: expected IHP time would be negative")
    return result


def synth_trace(pattern: str, total_bytes: int, io_size: int, seed: int = 0,
                page_size: int = 8192) -> List[IoTraceRecord]:
    """All-at-time-zero trace covering ``total_bytes`` in ``io_size`` requests."""
    if not 0 < io_size <= total_bytes:
        raise TraceError("need 0 < io_size <= total_bytes")
    count = total_bytes // io_size
    if pattern == "sequential_read":
        return [IoTraceRecord(0, "read", i * io_size, io_size) for i in range(count)]
    if pattern not in ("random_read", "mixed"):
        raise TraceError(f"unknown pattern {pattern!r}")
    rng = random.Random(seed)
    max_page = (total_bytes - io_size) // page_size
    out = []
    for _ in range(count):
        offset = rng.randint(0, max_page) * page_size
        op = "read" if pattern == "random_read" or rng.random() < 0.5 else "write"
        out.append(IoTraceRecord(0, op, offset, io_size))
    return out


def load_measurement(path: Union[str, Path]) -> IhpMeasurement:
    """Read ``T_total_ns = ...`` / ``T_IO_ns = ...`` lines."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TraceError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = int(value)
        except ValueError:
            raise TraceError(f"{path}: line {lineno}: {key} must be an integer number of ns") from None
    missing = {"T_total_ns", "T_IO_ns"} - values.keys()
    if missing:
        raise TraceError(f"{path}: missing {', '.join(sorted(missing))}")
    return IhpMeasurement(values["T_total_ns"], values["T_IO_ns"])


REPORT_FIELDS = ("T_total", "T_IO", "T_nonIO", "T_IOsim", "expected_IHP_time")


def report(m: IhpMeasurement, t_iosim: int) -> dict:
    return dict(zip(REPORT_FIELDS, (m.t_total, m.t_io, m.t_nonio, t_iosim, expected_ihp_time(m, t_iosim))))


def report_csv(row: dict) -> str:
    return ",".join(REPORT_FIELDS) + "\n" + ",".join(str(row[f]) for f in REPORT_FIELDS) + "\n"


def report_text(row: dict) -> str:
    lines = [f"{f}: {row[f]} ns" for f in REPORT_FIELDS]
    lines.append("assumption: non-IO host time is independent of the storage device")
    return "\n".join(lines) + "\n"
