"""Discrete-event model of the ISP-capable SSD controller.

One ``Fabric`` owns the simulated clock, the event queue, the NAND channels,
the cache controller (master) and the bookkeeping that becomes the
``MetricsLog``. Channel controllers (slaves) are plain event handlers
registered by the training algorithm; see ``ispsim.algorithms``.

Time is integer nanoseconds. Compute and bus costs come out of ``CostModel``
in (possibly fractional) nanoseconds and are rounded up when scheduled.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .nand import NandArray

# Event kinds
PAGE_READ_DONE = "page_read_done"
COMPUTE_DONE = "compute_done"
MSG_DELIVERED = "msg_delivered"
BARRIER_RELEASE = "barrier_release"
EVAL_CHECKPOINT = "eval_checkpoint"

# Message kinds
PULL_REQUEST = "pull_request"
PULL_REPLY = "pull_reply"
PUSH = "push"
BARRIER_SIGNAL = "barrier_signal"

CACHE = "cache"
EVAL = "eval"


class SimulationError(Exception):
    """Broken engine contract, e.g. scheduling an event in the past."""


@dataclass(frozen=True)
class CostModel:
    clock_period: float = 2.5  # ns
    instr_per_cycle: float = 0.5
    flops_weight_fwd: float = 2.0  # per parameter per sample
    flops_weight_grad: float = 2.0  # per parameter per sample
    sigmoid_cycles: int = 1
    bus_bytes_per_cycle: int = 4
    word_bytes: int = 4
    read_overhead: int = 0  # ns added to every ISP page read (firmware / FTL lookup)
    free_transfers: bool = False

    def __post_init__(self):
        positive = ("clock_period", "instr_per_cycle", "flops_weight_fwd", "flops_weight_grad",
                    "sigmoid_cycles", "bus_bytes_per_cycle", "word_bytes")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"cost.{name} must be > 0")
        if self.read_overhead < 0:
            raise ValueError("cost.read_overhead must be >= 0")


def compute_cost(flops: int, sigmoid_evals: int, cost: CostModel) -> float:
    if flops < 0 or sigmoid_evals < 0:
        raise ValueError("operation counts must be nonnegative")
    cycles = math.ceil(flops / cost.instr_per_cycle) + sigmoid_evals * cost.sigmoid_cycles
    return cycles * cost.clock_period


def transfer_cost(payload_bytes: int, cost: CostModel) -> float:
    if payload_bytes < 0:
        raise ValueError("payload size must be nonnegative")
    if cost.free_transfers:
        return 0.0
    return math.ceil(payload_bytes / cost.bus_bytes_per_cycle) * cost.clock_period


def ticks(duration: float) -> int:
    return math.ceil(duration)


@dataclass(frozen=True)
class Event:
    time: int
    seq: int
    target: str
    kind: str
    payload: Any = field(default=None, compare=False, repr=False)

    def trace_line(self) -> str:
        return f"{self.time} {self.seq} {self.target} {self.kind}"


@dataclass
class Message:
    kind: str
    src: str
    dst: str
    payload: Any = None
    payload_bytes: int = 0


@dataclass
class MetricsRecord:
    sim_time_ns: int
    minibatches: Tuple[int, ...]
    test_accuracy: float
    reads: int
    pushes: int
    bytes_transferred: int
    epochs: Tuple[int, ...] = ()

    @property
    def minibatches_done(self) -> int:
        return sum(self.minibatches)


CSV_COLUMNS = ("sim_time_ns", "minibatches_done", "test_accuracy", "reads", "pushes", "bytes_transferred")


@dataclass
class MetricsLog:
    records: List[MetricsRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    end_time_ns: int = 0
    final_params: Optional[np.ndarray] = None
    totals: Dict[str, int] = field(default_factory=dict)
    peak_memory: Dict[str, int] = field(default_factory=dict)
    trace: Optional[List[str]] = None

    def time_to_target(self, target: float) -> Optional[int]:
        for rec in self.records:
            if rec.test_accuracy >= target:
                return rec.sim_time_ns
        return None

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.records[-1].test_accuracy if self.records else None

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            out.write(f"{r.sim_time_ns},{r.minibatches_done},{r.test_accuracy:.6f},"
                      f"{r.reads},{r.pushes},{r.bytes_transferred}\n")
        return out.getvalue()


class Fabric:
    """Event engine plus the shared SSD resources (NAND channels, master port)."""

    def __init__(self, nand: NandArray, cost: CostModel = CostModel(), record_trace: bool = False):
        self.nand = nand
        self.cost = cost
        self.now = 0
        self._queue: List[Tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: Dict[str, Callable[[Event], None]] = {}
        self.channel_free = [0] * nand.geometry.num_channels
        self.stopped = False
        self.reads = 0
        self.pushes = 0
        self.pulls = 0
        self.bytes_transferred = 0
        self.trace: Optional[List[str]] = [] if record_trace else None
        self.log = MetricsLog(trace=self.trace)
        self._mem_peak: Dict[str, int] = {}
        self._mem_budget: Dict[str, int] = {}

    # -- engine -----------------------------------------------------------

    def register(self, target: str, handler: Callable[[Event], None]) -> None:
        self._handlers[target] = handler

    def schedule(self, time: int, target: str, kind: str, payload: Any = None) -> Event:
        if time < self.now:
            raise SimulationError(f"cannot schedule {kind} for {target} at {time} ns (now {self.now} ns)")
        ev = Event(int(time), self._seq, target, kind, payload)
        self._seq += 1
        heapq.heappush(self._queue, (ev.time, ev.seq, ev))
        return ev

    def after(self, delay: float, target: str, kind: str, payload: Any = None) -> Event:
        return self.schedule(self.now + ticks(delay), target, kind, payload)

    def pending(self) -> int:
        return len(self._queue)

    def stop(self) -> None:
        self.stopped = True

    def run_until(self, deadline: Optional[int] = None) -> MetricsLog:
        """Process events in (time, seq) order until the deadline, a stop request, or an empty queue."""
        self.nand.started = True
        while self._queue and not self.stopped:
            t, _, ev = self._queue[0]
            if deadline is not None and t > deadline:
                break
            heapq.heappop(self._queue)
            if t < self.now:
                raise SimulationError("clock went backwards")
            self.now = t
            if self.trace is not None:
                self.trace.append(ev.trace_line())
            handler = self._handlers.get(ev.target)
            if handler is None:
                raise SimulationError(f"no handler for target {ev.target!r}")
            handler(ev)
        self.log.end_time_ns = self.now
        self.log.totals = {"reads": self.reads, "pushes": self.pushes, "pulls": self.pulls,
                           "bytes_transferred": self.bytes_transferred}
        self.log.peak_memory = dict(self._mem_peak)
        return self.log

    # -- shared resources -------------------------------------------------

    def read_page(self, target: str, addr, payload: Any = None) -> Event:
        """Start a page read on ``addr``'s channel; ``target`` gets page_read_done with (bytes, payload)."""
        data, latency = self.nand.read_page(addr)
        ch = addr[0]
        start = max(self.now, self.channel_free[ch])
        done = start + latency + self.cost.read_overhead
        self.channel_free[ch] = done
        self.reads += 1
        return self.schedule(done, target, PAGE_READ_DONE, (data, payload))

    def compute(self, target: str, flops: int, sigmoid_evals: int = 0, payload: Any = None) -> Event:
        return self.after(compute_cost(flops, sigmoid_evals, self.cost), target, COMPUTE_DONE, payload)

    def send(self, msg: Message, delay: float = 0) -> Event:
        return self.after(delay, msg.dst, MSG_DELIVERED, msg)

    def message_bytes(self, n_words: int) -> int:
        return n_words * self.cost.word_bytes

    # -- memory accounting ------------------------------------------------

    def set_memory_budget(self, who: str, budget: int) -> None:
        self._mem_budget[who] = budget

    def use_memory(self, who: str, nbytes: int) -> None:
        if nbytes <= self._mem_peak.get(who, -1):
            return
        self._mem_peak[who] = nbytes
        budget = self._mem_budget.get(who)
        if budget is not None and nbytes > budget:
            msg = f"{who}: modeled memory {nbytes} B exceeds budget {budget} B"
            self.log.warnings = [w for w in self.log.warnings if not w.startswith(f"{who}:")]
            self.log.warnings.append(msg)


@dataclass
class _Job:
    duration: float
    finish: Callable[[], None]
    label: str = ""


class CacheController:
    """The master: holds the central parameters and serves pulls and pushes one at a time.

    Requests are queued by (arrival time, slave id). ``push_rule`` decides what
    a push does to the central parameters and may return a follow-up job
    (e.g. the synchronous aggregation) that runs before the next request.
    """

    def __init__(self, fabric: Fabric, params: np.ndarray, push_flops: int = 0,
                 push_rule: Optional[Callable[["CacheController", Message], Optional[_Job]]] = None,
                 n_slaves: int = 1, observer=None):
        self.fabric = fabric
        self.params = params
        self.push_flops = push_flops
        self.push_rule = push_rule
        self.observer = observer
        self.n_slaves = n_slaves
        self._inbox: List[Tuple[int, int, int, Message]] = []
        self._busy: Optional[_Job] = None
        self._followup: Optional[_Job] = None
        self._wake_pending = False
        self.updates = 0
        page = fabric.nand.geometry.page_size_bytes
        fabric.set_memory_budget(CACHE, (n_slaves + 1) * page)
        fabric.register(CACHE, self.on_event)

    @property
    def param_bytes(self) -> int:
        return self.fabric.message_bytes(len(self.params))

    def on_event(self, ev: Event) -> None:
        if ev.kind == MSG_DELIVERED:
            msg: Message = ev.payload
            heapq.heappush(self._inbox, (ev.time, slave_index(msg.src), ev.seq, msg))
            if self._busy is None and not self._wake_pending:
                # zero-delay dispatch so same-tick arrivals queue up before service starts
                self._wake_pending = True
                self.fabric.schedule(self.fabric.now, CACHE, COMPUTE_DONE)
        elif ev.kind == COMPUTE_DONE:
            self._wake_pending = False
            if self._busy is not None:
                job, self._busy = self._busy, None
                job.finish()
            self._dispatch()
        else:
            raise SimulationError(f"cache controller cannot handle {ev.kind}")

    def _dispatch(self) -> None:
        if self._busy is not None:
            return
        if self._followup is not None:
            job, self._followup = self._followup, None
        elif self._inbox:
            _, _, _, msg = heapq.heappop(self._inbox)
            job = self._job_for(msg)
        else:
            return
        self._busy = job
        self.fabric.after(job.duration, CACHE, COMPUTE_DONE)

    def _job_for(self, msg: Message) -> _Job:
        fab = self.fabric
        if msg.kind == PULL_REQUEST:
            nbytes = self.param_bytes

            def reply():
                fab.pulls += 1
                fab.bytes_transferred += nbytes
                fab.send(Message(PULL_REPLY, CACHE, msg.src, self.params.copy(), nbytes))

            return _Job(transfer_cost(nbytes, fab.cost), reply, "pull")
        if msg.kind == PUSH:
            duration = transfer_cost(msg.payload_bytes, fab.cost) + compute_cost(self.push_flops, 0, fab.cost)

            def apply():
                fab.pushes += 1
                fab.bytes_transferred += msg.payload_bytes
                self._followup = self.push_rule(self, msg) if self.push_rule else None

            return _Job(duration, apply, "push")
        raise SimulationError(f"cache controller cannot serve {msg.kind}")

    def run_job(self, duration: float, finish: Callable[[], None], label: str = "") -> _Job:
        return _Job(duration, finish, label)

    def updated(self, src: str) -> None:
        self.updates += 1
        if self.observer is not None:
            self.observer(self.fabric.now, src, self.params)


def slave_name(i: int) -> str:
    return f"ch{i}"


def slave_index(name: str) -> int:
    return int(name[2:]) if name.startswith("ch") else -1
