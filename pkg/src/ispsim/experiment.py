"""Build and execute simulations from a ``RunConfig``; sweeps and time-to-target tables."""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import model as M
from .algorithms import AlgorithmConfig, IspTraining, StopCondition
from .config import RunConfig, set_value, to_text
from .dataset import DataError, pack_pages, parse_idx, preload_nand, stripe_across_channels
from .fabric import CSV_COLUMNS, CostModel, Fabric, MetricsLog
from .nand import NandArray, NandGeometry, NandTiming

DEFAULT_TARGET = 0.85
AXES = ("channels", "tau", "algorithm", "learning_rate")

_STANDARD_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _resolve(cfg: RunConfig, key: str) -> str:
    explicit = getattr(cfg.data, key)
    if explicit:
        return explicit
    if not cfg.data.dir:
        raise DataError(f"no path for data.{key} (set data.dir or data.{key})")
    base = Path(cfg.data.dir) / _STANDARD_NAMES[key]
    for candidate in (base, base.with_name(base.name + ".gz")):
        if candidate.exists():
            return str(candidate)
    raise DataError(f"{base}[.gz] not found")


@functools.lru_cache(maxsize=8)
def _load_pair(images: str, labels: str) -> M.SampleSet:
    for p in (images, labels):
        if not Path(p).is_file():
            raise DataError(f"data file not found: {p}")
    return parse_idx(images, labels)


def _limit(samples: M.SampleSet, n: int) -> M.SampleSet:
    if n and n < len(samples):
        return M.SampleSet(samples.features[:n], samples.labels[:n])
    return samples


def load_data(cfg: RunConfig) -> Tuple[M.SampleSet, M.SampleSet]:
    train = _load_pair(_resolve(cfg, "train_images"), _resolve(cfg, "train_labels"))
    test = _load_pair(_resolve(cfg, "test_images"), _resolve(cfg, "test_labels"))
    return _limit(train, cfg.data.train_limit), _limit(test, cfg.data.test_limit)


def model_config(cfg: RunConfig, input_dim: int = 784) -> M.ModelConfig:
    return M.ModelConfig(input_dim=input_dim, num_classes=10, regularizer_kind=cfg.model.regularizer,
                         regularizer_coeff=cfg.model.regularizer_coeff, sigmoid_mode=cfg.model.sigmoid)


def cost_model(cfg: RunConfig) -> CostModel:
    c = cfg.cost
    return CostModel(c.clock_period_ns, c.instr_per_cycle, c.flops_weight_fwd, c.flops_weight_grad,
                     c.sigmoid_cycles, c.bus_bytes_per_cycle, c.word_bytes, c.read_overhead_ns,
                     c.free_transfers)


def nand_timing(cfg: RunConfig) -> NandTiming:
    n = cfg.nand
    return NandTiming(round(n.t_read_us * 1000), round(n.t_prog_us * 1000), round(n.t_erase_us * 1000))


def _ms(value: Optional[float]) -> Optional[int]:
    return None if value is None else round(value * 1_000_000)


def algorithm_config(cfg: RunConfig) -> AlgorithmConfig:
    hyper = M.HyperParams(cfg.sgd.learning_rate, cfg.sgd.tau, cfg.sgd.alpha)
    stop = StopCondition(_ms(cfg.stop.deadline_ms), cfg.stop.target_accuracy, cfg.stop.max_minibatches,
                         cfg.stop.max_epochs)
    return AlgorithmConfig(cfg.algorithm, hyper, stop, _ms(cfg.eval.cadence_ms), cfg.sgd.strict_downpour)


def validate(cfg: RunConfig) -> None:
    """Raise ConfigError/ValueError for anything wrong with the config itself."""
    if cfg.channels < 1:
        raise M.ConfigError("channels must be >= 1")
    algorithm_config(cfg)
    model_config(cfg)
    cost_model(cfg)
    nand_timing(cfg)
    if cfg.model.init not in ("zeros", "uniform"):
        raise M.ConfigError(f"model.init must be zeros or uniform, got {cfg.model.init!r}")
    if cfg.stop.deadline_ms is None and cfg.stop.target_accuracy is None \
            and cfg.stop.max_epochs is None and cfg.stop.max_minibatches is None:
        raise M.ConfigError("no stop condition: set stop.deadline_ms, target_accuracy, max_epochs or max_minibatches")


def build(cfg: RunConfig, train: M.SampleSet, test: Optional[M.SampleSet]) -> IspTraining:
    validate(cfg)
    pages = pack_pages(train, cfg.nand.page_size)
    n = cfg.channels
    layout = stripe_across_channels(pages, n, cfg.seed if cfg.data.shuffle_pages else None,
                                    cfg.nand.pages_per_block)
    per_channel = math.ceil(len(pages) / n)
    if cfg.nand.blocks_per_channel:
        geometry = NandGeometry(n, cfg.nand.blocks_per_channel, cfg.nand.pages_per_block, cfg.nand.page_size)
    else:
        geometry = NandGeometry.for_pages(n, per_channel, cfg.nand.pages_per_block, cfg.nand.page_size)
    nand = NandArray(geometry, nand_timing(cfg))
    preload_nand(layout, pages, nand)
    fabric = Fabric(nand, cost_model(cfg), record_trace=cfg.trace)
    mcfg = model_config(cfg, train.features.shape[1])
    init = M.init_params(mcfg, cfg.seed if cfg.model.init == "uniform" else None)
    return IspTraining(fabric, mcfg, layout, algorithm_config(cfg), test_set=test, init_params=init)


def run(cfg: RunConfig) -> MetricsLog:
    train, test = load_data(cfg)
    return build(cfg, train, test).run()


def summary_text(cfg: RunConfig, log: MetricsLog, target: Optional[float] = None) -> str:
    target = target if target is not None else (cfg.stop.target_accuracy or DEFAULT_TARGET)
    ttt = log.time_to_target(target)
    lines = [
        f"algorithm: {cfg.algorithm}",
        f"channels: {cfg.channels}",
        f"learning_rate: {cfg.sgd.learning_rate!r}",
        f"tau: {cfg.sgd.tau}",
        f"alpha: {cfg.sgd.alpha!r}",
        f"simulated_end_ns: {log.end_time_ns}",
        f"final_accuracy: {'n/a' if log.final_accuracy is None else f'{log.final_accuracy:.6f}'}",
        f"target_accuracy: {target}",
        f"time_to_target_ns: {'not reached' if ttt is None else ttt}",
    ]
    lines += [f"{k}: {v}" for k, v in sorted(log.totals.items())]
    lines += [f"peak_memory_bytes.{k}: {v}" for k, v in sorted(log.peak_memory.items())]
    lines += [f"warning: {w}" for w in log.warnings]
    lines += [f"note: {n}" for n in log.notes]
    lines.append("assumption: non-IO host time is independent of the storage device")
    return "\n".join(lines) + "\n"


def write_outputs(cfg: RunConfig, log: MetricsLog, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "metrics.csv").write_text(log.to_csv())
    (outdir / "config.echo").write_text(to_text(cfg))
    (outdir / "summary.txt").write_text(summary_text(cfg, log))
    if log.trace is not None:
        (outdir / "trace.txt").write_text("".join(line + "\n" for line in log.trace))
    return outdir


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepPoint:
    value: str
    learning_rate: float
    log: MetricsLog
    time_to_target: Optional[int]
    config: RunConfig


def apply_axis(cfg: RunConfig, axis: str, value: str) -> RunConfig:
    cfg = cfg.copy()
    key = {"channels": "channels", "tau": "sgd.tau", "algorithm": "algorithm",
           "learning_rate": "sgd.learning_rate"}.get(axis)
    if key is None:
        raise M.ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    set_value(cfg, key, str(value))
    return cfg


def _rank(log: MetricsLog, target: float):
    ttt = log.time_to_target(target)
    final = log.final_accuracy if log.final_accuracy is not None else -1.0
    return (ttt is None, ttt if ttt is not None else 0, -final)


def best_of(cfgs: Sequence[RunConfig], logs: Sequence[MetricsLog], target: float) -> int:
    """Index of the fastest run to target; unreached runs rank by final accuracy."""
    return min(range(len(logs)), key=lambda i: (_rank(logs[i], target), i))


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("ISPSIM_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise M.ConfigError(f"ISPSIM_THREADS must be an integer, got {raw!r}") from None


def sweep(base: RunConfig, axis: str, values: Sequence[str], lr_grid: Sequence[float] = (),
          target: float = DEFAULT_TARGET, workers: Optional[int] = None) -> List[SweepPoint]:
    if not values:
        raise M.ConfigError("sweep axis has no values")
    train, test = load_data(base)
    jobs: List[Tuple[int, RunConfig]] = []
    for i, value in enumerate(values):
        point = apply_axis(base, axis, value)
        for lr in (lr_grid or [point.sgd.learning_rate]):
            job = point.copy()
            job.sgd.learning_rate = float(lr)
            jobs.append((i, job))
    for _, job in jobs:
        validate(job)

    def one(job: RunConfig) -> MetricsLog:
        return build(job, train, test).run()

    workers = workers if workers is not None else worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(one, [j for _, j in jobs]))
    else:
        logs = [one(j) for _, j in jobs]

    points = []
    for i, value in enumerate(values):
        idx = [k for k, (owner, _) in enumerate(jobs) if owner == i]
        pick = idx[best_of([jobs[k][1] for k in idx], [logs[k] for k in idx], target)]
        cfg = jobs[pick][1]
        points.append(SweepPoint(str(value), cfg.sgd.learning_rate, logs[pick],
                                 logs[pick].time_to_target(target), cfg))
    return points


def combined_csv(axis: str, points: Sequence[SweepPoint]) -> str:
    rows = [",".join((axis, "learning_rate") + CSV_COLUMNS)]
    for p in points:
        for line in p.log.to_csv().splitlines()[1:]:
            rows.append(f"{p.value},{p.learning_rate!r},{line}")
    return "\n".join(rows) + "\n"


def speedup_csv(axis: str, points: Sequence[SweepPoint]) -> str:
    rows = [f"{axis},learning_rate,time_to_target_ns,speedup"]
    ref = points[0].time_to_target
    for p in points:
        t = p.time_to_target
        speed = "" if (t is None or ref is None) else f"{ref / t:.4f}"
        rows.append(f"{p.value},{p.learning_rate!r},{'' if t is None else t},{speed}")
    return "\n".join(rows) + "\n"


def speedups(points: Sequence[SweepPoint]) -> Dict[str, Optional[float]]:
    ref = points[0].time_to_target
    return {p.value: (None if p.time_to_target is None or ref is None else ref / p.time_to_target)
            for p in points}
