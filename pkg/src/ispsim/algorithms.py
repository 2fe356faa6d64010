"""Synchronous SGD, Downpour SGD and EASGD as channel-controller/cache-controller choreographies.

Each channel controller (slave) reads one page-minibatch at a time from its
own NAND channel and talks to the cache controller (master) through
pull/push messages. The master's parameter update for a push is the only
thing that differs between algorithms on the master side.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional

import numpy as np

from . import model as M
from .dataset import DatasetLayout, PlacedPage, decode_page
from .fabric import (
    BARRIER_RELEASE, CACHE, COMPUTE_DONE, EVAL, EVAL_CHECKPOINT, MSG_DELIVERED, PAGE_READ_DONE,
    PULL_REPLY, PULL_REQUEST, PUSH, CacheController, Fabric, Message, MetricsLog, MetricsRecord,
    SimulationError, compute_cost, slave_index, slave_name,
)
from .nand import MS

KINDS = ("synchronous", "downpour", "easgd")
CHANNEL_MEMORY = 24 * 1024


@dataclass(frozen=True)
class StopCondition:
    deadline_ns: Optional[int] = None
    target_accuracy: Optional[float] = None
    max_minibatches: Optional[int] = None  # per slave
    max_epochs: Optional[int] = None  # per slave


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: str = "easgd"
    hyper: M.HyperParams = field(default_factory=M.HyperParams)
    stop: StopCondition = field(default_factory=StopCondition)
    eval_cadence_ns: int = 10 * MS
    strict_downpour: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise M.ConfigError(f"unknown algorithm {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.eval_cadence_ns <= 0:
            raise M.ConfigError("eval cadence must be positive")
        if self.kind == "synchronous" and self.hyper.comm_period != 1:
            object.__setattr__(self, "hyper", replace(self.hyper, comm_period=1))


def data_pass_controller(layout: DatasetLayout) -> List[Iterator[PlacedPage]]:
    """Per-channel endless page order: ascending, wrapping to the first page after the last."""
    return [itertools.cycle(ch) if ch else iter(()) for ch in layout.channels]


class _Slave:
    vectors = 2  # parameter-sized buffers the channel controller keeps

    def __init__(self, sim: "IspTraining", idx: int, pages: List[PlacedPage], order: Iterator[PlacedPage]):
        self.sim = sim
        self.fabric = sim.fabric
        self.idx = idx
        self.name = slave_name(idx)
        self.n_pages = len(pages)
        self.order = order
        self.reads = 0
        self.minibatches = 0
        self.done = False
        self.theta: Optional[np.ndarray] = None
        self.batch: Optional[M.PageMinibatch] = None
        self.fabric.register(self.name, self.on_event)
        self.fabric.set_memory_budget(self.name, CHANNEL_MEMORY)

    @property
    def epochs(self) -> int:
        return self.reads // self.n_pages if self.n_pages else 0

    @property
    def hyper(self) -> M.HyperParams:
        return self.sim.config.hyper

    def start(self) -> None:
        page = self.fabric.nand.geometry.page_size_bytes
        self.fabric.use_memory(self.name, page + self.vectors * self.sim.master.param_bytes)
        self.read_next()

    def finished(self) -> bool:
        stop = self.sim.config.stop
        if stop.max_minibatches is not None and self.minibatches >= stop.max_minibatches:
            return True
        return stop.max_epochs is not None and self.epochs >= stop.max_epochs

    def retire(self) -> None:
        if not self.done:
            self.done = True
            self.sim.retired(self)

    def read_next(self) -> None:
        if self.finished():
            self.retire()
            return
        placed = next(self.order)
        self.reads += 1
        self.fabric.read_page(self.name, placed.address, placed)

    def send(self, kind: str, payload=None) -> None:
        nbytes = self.fabric.message_bytes(len(payload)) if payload is not None else 0
        self.fabric.send(Message(kind, self.name, CACHE, payload, nbytes))

    def step_flops(self, batch: M.PageMinibatch) -> int:
        cost = self.fabric.cost
        per_sample = (cost.flops_weight_fwd + cost.flops_weight_grad) * self.sim.num_params
        return math.ceil(len(batch) * per_sample)

    def compute(self, flops: int, sigmoid_evals: int, payload=None) -> None:
        self.fabric.compute(self.name, flops, sigmoid_evals, payload)

    def gradient_step(self, theta: np.ndarray, batch: M.PageMinibatch) -> np.ndarray:
        return M.accumulate_minibatch_gradient(theta, batch, self.hyper.learning_rate, self.sim.model)

    def on_event(self, ev) -> None:
        if ev.kind == PAGE_READ_DONE:
            data, placed = ev.payload
            self.batch = self.sim.decode(data, placed)
            self.on_page()
        elif ev.kind == MSG_DELIVERED:
            msg: Message = ev.payload
            if msg.kind != PULL_REPLY:
                raise SimulationError(f"{self.name} got unexpected {msg.kind}")
            self.on_pull_reply(msg.payload)
        elif ev.kind == COMPUTE_DONE:
            self.on_compute_done(ev.payload)
        elif ev.kind == BARRIER_RELEASE:
            self.on_release()
        else:
            raise SimulationError(f"{self.name} cannot handle {ev.kind}")

    def on_page(self):
        raise NotImplementedError

    def on_pull_reply(self, params):
        raise NotImplementedError

    def on_compute_done(self, payload):
        raise NotImplementedError

    def on_release(self):
        raise SimulationError(f"{self.name}: barrier release outside synchronous mode")


class SyncSlave(_Slave):
    def on_page(self):
        self.send(PULL_REQUEST)

    def on_pull_reply(self, params):
        self.theta = params
        batch = self.batch
        delta = self.gradient_step(self.theta, batch)
        self.compute(self.step_flops(batch), len(batch) * self.sim.model.num_classes, delta)

    def on_compute_done(self, delta):
        self.minibatches += 1
        self.send(PUSH, delta)

    def on_release(self):
        self.read_next()


class DownpourSlave(_Slave):
    """Pushes every tau-th minibatch without waiting for the master.

    Default mode keeps a working copy between pushes and sends the sum of all
    gradients since the last push. ``strict`` re-pulls and zeroes the
    accumulator every minibatch, so only every tau-th minibatch reaches the master.
    """

    def __init__(self, *args, strict: bool = False):
        super().__init__(*args)
        self.strict = strict
        self.need_pull = True
        self.acc: Optional[np.ndarray] = None
        if not strict and self.hyper.comm_period > 1:
            self.vectors = 3

    def _pushing_next(self) -> bool:
        return (self.minibatches + 1) % self.hyper.comm_period == 0

    def on_page(self):
        if self.strict or self.need_pull:
            self.send(PULL_REQUEST)
        else:
            self._step()

    def on_pull_reply(self, params):
        self.theta = params
        self.need_pull = False
        self._step()

    def _step(self):
        batch = self.batch
        delta = self.gradient_step(self.theta, batch)
        flops = self.step_flops(batch)
        if not self.strict and self.hyper.comm_period > 1:
            n = self.sim.num_params
            flops += n if self.acc is not None else 0
            flops += 0 if self._pushing_next() else n
        self.compute(flops, len(batch) * self.sim.model.num_classes, delta)

    def on_compute_done(self, delta):
        self.minibatches += 1
        pushing = self.minibatches % self.hyper.comm_period == 0
        if self.strict:
            if pushing:
                self.send(PUSH, delta)
        else:
            self.acc = delta if self.acc is None else self.acc + delta
            if pushing:
                self.send(PUSH, self.acc)
                self.acc = None
                self.need_pull = True
            else:
                self.theta = self.theta - delta
        self.read_next()


class EasgdSlave(_Slave):
    vectors = 3

    def __init__(self, *args):
        super().__init__(*args)
        self.exchanging = False
        self.initialized = False

    def start(self):
        page = self.fabric.nand.geometry.page_size_bytes
        self.fabric.use_memory(self.name, page + self.vectors * self.sim.master.param_bytes)
        if self.finished():
            self.retire()
            return
        self.send(PULL_REQUEST)

    def on_page(self):
        batch = self.batch
        temp = self.gradient_step(self.theta, batch)
        flops = self.step_flops(batch) + 2 * self.sim.num_params
        self.compute(flops, len(batch) * self.sim.model.num_classes, ("local", temp))

    def on_pull_reply(self, center):
        if not self.initialized:
            self.initialized = True
            self.theta = center
            self.read_next()
            return
        alpha = self.hyper.moving_rate
        before = self.theta
        delta = alpha * (self.theta - center)
        self.theta = self.theta - delta
        if self.sim.exchange_observer is not None:
            self.sim.exchange_observer(self.idx, before, center, self.theta, delta)
        self.compute(3 * self.sim.num_params, 0, ("push", delta))

    def on_compute_done(self, payload):
        phase, vec = payload
        if phase == "local":
            self.theta = self.theta - vec / len(self.batch)
            self.minibatches += 1
            if self.minibatches % self.hyper.comm_period == 0:
                self.send(PULL_REQUEST)
            else:
                self.read_next()
        else:
            self.send(PUSH, vec)
            self.read_next()


class IspTraining:
    """Wires one algorithm's slaves and master rule onto a fabric and runs it."""

    def __init__(self, fabric: Fabric, model: M.ModelConfig, layout: DatasetLayout, config: AlgorithmConfig,
                 test_set: Optional[M.SampleSet] = None, init_params: Optional[np.ndarray] = None,
                 observer: Optional[Callable] = None, exchange_observer: Optional[Callable] = None):
        self.fabric = fabric
        self.model = model
        self.layout = layout
        self.config = config
        self.test_set = test_set
        self.exchange_observer = exchange_observer
        self.num_params = model.num_params
        self._decoded: Dict[int, M.PageMinibatch] = {}
        params = M.init_params(model) if init_params is None else np.array(init_params, dtype=np.float64)
        if params.shape != (self.num_params,):
            raise M.ConfigError(f"initial parameters must have length {self.num_params}")

        n = layout.num_channels
        self.pending_deltas: Dict[int, np.ndarray] = {}
        kind = config.kind
        if kind == "synchronous":
            rule, push_flops = self._sync_push, 0
        elif kind == "downpour":
            rule, push_flops = self._downpour_push, self.num_params
        else:
            rule, push_flops = self._easgd_push, self.num_params
        self.master = CacheController(fabric, params, push_flops, rule, n_slaves=n, observer=observer)

        orders = data_pass_controller(layout)
        self.slaves: List[_Slave] = []
        for i, pages in enumerate(layout.channels):
            if kind == "synchronous":
                s = SyncSlave(self, i, pages, orders[i])
            elif kind == "downpour":
                s = DownpourSlave(self, i, pages, orders[i], strict=config.strict_downpour)
            else:
                s = EasgdSlave(self, i, pages, orders[i])
            self.slaves.append(s)
        fabric.register(EVAL, self._on_eval)

    # -- master rules -------------------------------------------------------

    def _sync_push(self, master: CacheController, msg: Message):
        self.pending_deltas[slave_index(msg.src)] = msg.payload
        self.fabric.use_memory(CACHE, (1 + len(self.pending_deltas)) * master.param_bytes)
        if len(self.pending_deltas) < self.active_count():
            return None
        k = len(self.pending_deltas)
        flops = (k + 1) * self.num_params

        def aggregate():
            ids = sorted(self.pending_deltas)
            master.params = master.params - M.mean_of([self.pending_deltas[i] for i in ids])
            self._check(master.params)
            self.pending_deltas.clear()
            master.updated("aggregate")
            for i in ids:
                self.fabric.schedule(self.fabric.now, slave_name(i), BARRIER_RELEASE)

        return master.run_job(compute_cost(flops, 0, self.fabric.cost), aggregate, "aggregate")

    def _downpour_push(self, master: CacheController, msg: Message):
        self.fabric.use_memory(CACHE, 2 * master.param_bytes)
        master.params = master.params - msg.payload
        self._check(master.params)
        master.updated(msg.src)
        return None

    def _easgd_push(self, master: CacheController, msg: Message):
        self.fabric.use_memory(CACHE, 2 * master.param_bytes)
        master.params = master.params + msg.payload
        self._check(master.params)
        master.updated(msg.src)
        return None

    @staticmethod
    def _check(params):
        if not M.all_finite(params):
            raise SimulationError("central parameters became non-finite")

    # -- bookkeeping ----------------------------------------------------------

    def decode(self, data: bytes, placed: PlacedPage) -> M.PageMinibatch:
        batch = self._decoded.get(placed.index)
        if batch is None:
            batch = decode_page(data, placed.sample_count, self.model.input_dim, placed.address)
            self._decoded[placed.index] = batch
        return batch

    def active_count(self) -> int:
        return sum(not s.done for s in self.slaves)

    def retired(self, slave: _Slave) -> None:
        if slave.n_pages == 0:
            self.fabric.log.notes.append(f"{slave.name}: no pages in layout, terminated at start")

    def record(self) -> MetricsRecord:
        fab = self.fabric
        acc = float("nan")
        if self.test_set is not None and len(self.test_set):
            acc = M.evaluate_accuracy(self.master.params, self.test_set, self.model)
        rec = MetricsRecord(fab.now, tuple(s.minibatches for s in self.slaves), acc, fab.reads,
                            fab.pushes, fab.bytes_transferred, tuple(s.epochs for s in self.slaves))
        fab.log.records.append(rec)
        return rec

    def _on_eval(self, ev) -> None:
        rec = self.record()
        target = self.config.stop.target_accuracy
        if target is not None and rec.test_accuracy >= target:
            self.fabric.stop()
        elif self.fabric.pending():
            self.fabric.schedule(self.fabric.now + self.config.eval_cadence_ns, EVAL, EVAL_CHECKPOINT)

    def run(self) -> MetricsLog:
        for s in self.slaves:
            if s.n_pages == 0:
                s.retire()
            else:
                s.start()
        self.fabric.schedule(self.config.eval_cadence_ns, EVAL, EVAL_CHECKPOINT)
        log = self.fabric.run_until(self.config.stop.deadline_ns)
        log.final_params = self.master.params.copy()
        log.totals["minibatches"] = sum(s.minibatches for s in self.slaves)
        log.totals["master_updates"] = self.master.updates
        return log


def _run(kind, fabric, model, layout, config, **kwargs) -> MetricsLog:
    return IspTraining(fabric, model, layout, replace(config, kind=kind), **kwargs).run()


def run_sync_sgd(fabric, model, layout, config, **kwargs) -> MetricsLog:
    return _run("synchronous", fabric, model, layout, config, **kwargs)


def run_downpour(fabric, model, layout, config, **kwargs) -> MetricsLog:
    return _run("downpour", fabric, model, layout, config, **kwargs)


def run_easgd(fabric, model, layout, config, **kwargs) -> MetricsLog:
    return _run("easgd", fabric, model, layout, config, **kwargs)
