"""Run configuration and its flat ``section.key = value`` text form.

Every run is reproducible from its echoed config alone. Keys without a dot
live at the top level; ``none`` (or an empty value) clears an optional field.

    algorithm = easgd
    channels = 16
    sgd.learning_rate = 0.01
    nand.t_read_us = 75
"""

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Optional


class ConfigFileError(ValueError):
    pass


@dataclass
class SgdSection:
    learning_rate: float = 0.01
    tau: int = 1
    alpha: float = 0.001
    strict_downpour: bool = False


@dataclass
class ModelSection:
    sigmoid: str = "approximate"
    regularizer: str = "none"
    regularizer_coeff: float = 0.0
    init: str = "zeros"


@dataclass
class DataSection:
    dir: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_limit: int = 0
    test_limit: int = 0
    shuffle_pages: bool = False


@dataclass
class NandSection:
    page_size: int = 8192
    pages_per_block: int = 128
    blocks_per_channel: int = 0  # 0: dataset plus 25% slack
    t_read_us: float = 75.0
    t_prog_us: float = 300.0
    t_erase_us: float = 5000.0


@dataclass
class CostSection:
    clock_period_ns: float = 2.5
    instr_per_cycle: float = 0.5
    flops_weight_fwd: float = 2.0
    flops_weight_grad: float = 2.0
    sigmoid_cycles: int = 1
    bus_bytes_per_cycle: int = 4
    word_bytes: int = 4
    read_overhead_ns: int = 0
    free_transfers: bool = False


@dataclass
class StopSection:
    deadline_ms: Optional[float] = 2000.0
    target_accuracy: Optional[float] = None
    max_epochs: Optional[int] = None
    max_minibatches: Optional[int] = None


@dataclass
class EvalSection:
    cadence_ms: float = 10.0


@dataclass
class RunConfig:
    algorithm: str = "easgd"
    channels: int = 16
    seed: int = 0
    output_dir: str = "out"
    trace: bool = False
    sgd: SgdSection = field(default_factory=SgdSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    nand: NandSection = field(default_factory=NandSection)
    cost: CostSection = field(default_factory=CostSection)
    stop: StopSection = field(default_factory=StopSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def copy(self) -> "RunConfig":
        return from_text(to_text(self))


def _hints(obj):
    return typing.get_type_hints(type(obj))


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, hint, key: str):
    text = raw.strip()
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    if optional:
        if text.lower() in ("", "none"):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigFileError(f"{key}: cannot read {raw!r} as {getattr(hint, '__name__', hint)}") from None


def items(cfg: RunConfig):
    """Yield ``(dotted_key, value)`` in declaration order."""
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                yield f"{f.name}.{sub.name}", getattr(value, sub.name)
        else:
            yield f.name, value


def set_value(cfg: RunConfig, key: str, raw: str) -> None:
    parts = key.strip().split(".")
    target = cfg
    for part in parts[:-1]:
        sub = getattr(target, part, None)
        if not dataclasses.is_dataclass(sub):
            raise ConfigFileError(f"unknown config section {part!r} in {key!r}")
        target = sub
    name = parts[-1]
    hints = _hints(target)
    if name not in hints or dataclasses.is_dataclass(getattr(target, name)):
        raise ConfigFileError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(raw, hints[name], key))


def to_text(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items(cfg))


def from_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        set_value(cfg, key.strip(), value)
    return cfg


def load(path, overrides=()) -> RunConfig:
    with open(path) as fh:
        cfg = from_text(fh.read())
    for key, value in overrides:
        set_value(cfg, key, value)
    return cfg
