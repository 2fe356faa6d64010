import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ispsim.fabric import (
    CACHE, COMPUTE_DONE, MSG_DELIVERED, PAGE_READ_DONE, PULL_REQUEST, PUSH, CacheController, CostModel, Fabric,
    Message, MetricsLog, MetricsRecord, SimulationError, compute_cost, transfer_cost,
)
from ispsim.nand import NandArray, NandGeometry, PageAddress

P = 7850


def fabric(n=4, **kw):
    return Fabric(NandArray(NandGeometry(n, 2, 8, 8192)), **kw)


def recorder(fab, *names):
    seen = []
    for name in names:
        fab.register(name, lambda ev, name=name: seen.append((ev.time, name, ev.kind, ev.payload)))
    return seen


def test_cost_arithmetic():
    c = CostModel()
    assert compute_cost(1, 0, c) == 5.0
    assert compute_cost(2, 1, c) == 12.5  # 4 cycles + 1 sigmoid cycle
    assert transfer_cost(4, c) == 2.5
    assert transfer_cost(5, c) == 5.0
    assert transfer_cost(P * 4, c) == 19_625
    assert compute_cost(40 * P, 0, c) == 1_570_000  # one page-minibatch of gradients
    assert transfer_cost(123, CostModel(free_transfers=True)) == 0
    with pytest.raises(ValueError):
        CostModel(clock_period=0)


def test_same_time_events_run_in_schedule_order():
    fab = fabric()
    seen = recorder(fab, "a", "b")
    fab.schedule(10, "b", "x", 1)
    fab.schedule(5, "a", "x", 2)
    fab.schedule(10, "a", "x", 3)
    fab.schedule(10, "b", "x", 4)
    fab.run_until()
    assert [s[3] for s in seen] == [2, 1, 3, 4]


def test_past_events_rejected():
    fab = fabric()
    fab.register("a", lambda ev: fab.schedule(ev.time - 1, "a", "x"))
    fab.schedule(5, "a", "x")
    with pytest.raises(SimulationError):
        fab.run_until()


def test_deadline_and_stop():
    fab = fabric()
    seen = recorder(fab, "a")
    for t in (1, 2, 3):
        fab.schedule(t, "a", "x")
    fab.run_until(2)
    assert len(seen) == 2 and fab.now == 2


def test_single_read_latency():
    fab = fabric()
    seen = recorder(fab, "ch0")
    fab.read_page("ch0", PageAddress(0, 0, 0))
    fab.run_until()
    assert seen[0][0] == 75_000 and seen[0][2] == PAGE_READ_DONE


@settings(max_examples=20)
@given(st.integers(1, 16))
def test_reads_serialize_per_channel(k):
    fab = fabric()
    seen = recorder(fab, "ch0")
    for i in range(k):
        fab.read_page("ch0", PageAddress(0, i // 8, i % 8))
    fab.run_until()
    assert [s[0] for s in seen] == [75_000 * (i + 1) for i in range(k)]


def test_reads_parallel_across_channels():
    fab = fabric(16)
    names = [f"ch{i}" for i in range(16)]
    seen = recorder(fab, *names)
    for i in range(16):
        fab.read_page(names[i], PageAddress(i, 0, 0))
    fab.run_until()
    assert {s[0] for s in seen} == {75_000} and fab.now == 75_000


def test_read_overhead_added():
    fab = fabric(cost=CostModel(read_overhead=1000))
    seen = recorder(fab, "ch0")
    fab.read_page("ch0", PageAddress(0, 0, 0))
    fab.run_until()
    assert seen[0][0] == 76_000


def test_fractional_compute_rounds_up():
    fab = fabric(cost=CostModel(clock_period=0.3))
    seen = recorder(fab, "a")
    fab.compute("a", 1)  # 2 cycles of 0.3 ns
    fab.run_until()
    assert seen[0][0] == 1


def master_setup(rule=None, push_flops=0):
    fab = fabric()
    seen = recorder(fab, "ch0", "ch1", "ch2")
    master = CacheController(fab, np.arange(P, dtype=float), push_flops, rule, n_slaves=3)
    return fab, master, seen


def test_pull_serialized_and_ordered_by_slave_id():
    fab, master, seen = master_setup()
    # ch2 sends first in schedule order, but same-tick arrivals are served by slave id
    for name in ("ch2", "ch0", "ch1"):
        fab.send(Message(PULL_REQUEST, name, CACHE))
    fab.run_until()
    replies = [(t, n) for t, n, kind, _ in seen if kind == MSG_DELIVERED]
    assert replies == [(19_625, "ch0"), (39_250, "ch1"), (58_875, "ch2")]
    assert fab.pulls == 3 and fab.bytes_transferred == 3 * P * 4
    assert np.array_equal(seen[0][3].payload, np.arange(P))


def test_push_applies_rule_after_transfer_and_compute():
    applied = []

    def rule(master, msg):
        master.params = master.params - msg.payload
        applied.append(master.fabric.now)
        master.updated(msg.src)

    fab, master, _ = master_setup(rule, push_flops=P)
    delta = np.ones(P)
    fab.send(Message(PUSH, "ch1", CACHE, delta, P * 4))
    fab.send(Message(PUSH, "ch0", CACHE, delta, P * 4))
    fab.run_until()
    one = 19_625 + 39_250
    assert applied == [one, 2 * one]
    assert np.array_equal(master.params, np.arange(P) - 2)
    assert fab.pushes == 2 and master.updates == 2


def test_followup_job_runs_before_next_request():
    order = []

    def rule(master, msg):
        order.append(("push", master.fabric.now))
        return master.run_job(100, lambda: order.append(("job", master.fabric.now)))

    fab, master, seen = master_setup(rule)
    fab.send(Message(PUSH, "ch0", CACHE, np.zeros(1), 4))
    fab.send(Message(PULL_REQUEST, "ch1", CACHE))
    fab.run_until()
    reply_time = [t for t, n, k, _ in seen if k == MSG_DELIVERED][0]
    assert order == [("push", 3), ("job", 103)]
    assert reply_time == 103 + 19_625


def test_memory_budget_warning():
    fab = fabric()
    fab.set_memory_budget("ch0", 100)
    fab.use_memory("ch0", 50)
    assert not fab.log.warnings
    fab.use_memory("ch0", 150)
    fab.use_memory("ch0", 200)
    assert fab.log.warnings == ["ch0: modeled memory 200 B exceeds budget 100 B"]


def test_metrics_csv_and_time_to_target():
    log = MetricsLog(records=[MetricsRecord(10, (1, 2), 0.5, 3, 3, 120),
                              MetricsRecord(20, (2, 3), 0.875, 6, 5, 240)])
    assert log.to_csv() == ("sim_time_ns,minibatches_done,test_accuracy,reads,pushes,bytes_transferred\n"
                            "10,3,0.500000,3,3,120\n20,5,0.875000,6,5,240\n")
    assert log.time_to_target(0.85) == 20 and log.time_to_target(0.9) is None
    assert MetricsLog().to_csv().count("\n") == 1


def test_trace_lines():
    fab = fabric(record_trace=True)
    recorder(fab, "a")
    fab.schedule(7, "a", COMPUTE_DONE)
    log = fab.run_until()
    assert log.trace == ["7 0 a compute_done"]
