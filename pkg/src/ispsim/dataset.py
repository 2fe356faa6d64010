"""IDX parsing, packing samples into NAND pages, and striping pages over channels.

A page holds ``b = page_size // (input_dim + 1)`` raw records. Each record is
the sample's pixel bytes followed by one label byte; the unused tail of the
page is zero. Features are scaled to [0, 1] only when a page is decoded.
"""

from __future__ import annotations

import gzip
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

from .model import PageMinibatch, SampleSet
from .nand import NandArray, NandError, PageAddress

PathLike = Union[str, Path]


class DataError(Exception):
    pass


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path: PathLike) -> np.ndarray:
    """Load an unsigned-byte IDX file (optionally gzipped) as a uint8 array."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header at byte offset {len(raw)}")
    zero, dtype_code, ndim = struct.unpack_from(">HBB", raw, 0)
    if zero != 0 or dtype_code != 0x08:
        raise DataError(f"{path}: bad magic {raw[:4].hex()} at byte offset 0 (want 0000 08xx)")
    if ndim < 1:
        raise DataError(f"{path}: zero dimensions declared at byte offset 3")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataError(f"{path}: truncated dimension list at byte offset {len(raw)}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header_end < size:
        raise DataError(
            f"{path}: payload truncated at byte offset {len(raw)} "
            f"(expected {header_end + size} bytes)"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def parse_idx(image_file: PathLike, label_file: PathLike, num_classes: int = 10) -> SampleSet:
    images = read_idx(image_file)
    labels = read_idx(label_file)
    if labels.ndim != 1:
        raise DataError(f"{label_file}: labels must be 1-D, got dims {labels.shape}")
    if len(images) != len(labels):
        raise DataError(
            f"sample count mismatch: {len(images)} images vs {len(labels)} labels "
            f"(count field at byte offset 4)"
        )
    if len(labels) and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise DataError(f"{label_file}: label {labels[bad]} out of range at byte offset {8 + bad}")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return SampleSet(features, labels.astype(np.int64))


def record_size(input_dim: int) -> int:
    return input_dim + 1


def samples_per_page(page_size: int, input_dim: int) -> int:
    return page_size // record_size(input_dim)


@dataclass(frozen=True)
class PackedPage:
    data: bytes
    sample_count: int


def _quantize(features: np.ndarray) -> np.ndarray:
    q = np.rint(features * 255.0)
    if q.min(initial=0) < 0 or q.max(initial=0) > 255:
        raise DataError("features must lie in [0, 1]")
    return q.astype(np.uint8)


def pack_pages(samples: SampleSet, page_size: int = 8192) -> List[PackedPage]:
    if len(samples) == 0:
        raise DataError("nothing to pack")
    input_dim = samples.features.shape[1]
    rec = record_size(input_dim)
    if rec > page_size:
        raise DataError(f"a {rec}-byte record does not fit in a {page_size}-byte page")
    per_page = page_size // rec
    records = np.empty((len(samples), rec), dtype=np.uint8)
    records[:, :-1] = _quantize(samples.features)
    records[:, -1] = samples.labels
    pages = []
    for start in range(0, len(samples), per_page):
        chunk = records[start:start + per_page]
        body = chunk.tobytes()
        pages.append(PackedPage(body + bytes(page_size - len(body)), len(chunk)))
    return pages


def decode_page(data: bytes, sample_count: int, input_dim: int = 784, source_page=None) -> PageMinibatch:
    rec = record_size(input_dim)
    if sample_count * rec > len(data):
        raise DataError(f"{sample_count} records do not fit in {len(data)} bytes")
    table = np.frombuffer(data, dtype=np.uint8, count=sample_count * rec).reshape(sample_count, rec)
    return PageMinibatch(table[:, :-1].astype(np.float64) / 255.0, table[:, -1].astype(np.int64),
                         source_page=source_page)


@dataclass(frozen=True)
class PlacedPage:
    index: int  # position in the packed page list
    address: PageAddress
    sample_count: int


@dataclass
class DatasetLayout:
    channels: List[List[PlacedPage]]
    total_samples: int = field(init=False)

    def __post_init__(self):
        self.total_samples = sum(p.sample_count for ch in self.channels for p in ch)

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def samples_per_channel(self) -> List[int]:
        return [sum(p.sample_count for p in ch) for ch in self.channels]

    def pages(self) -> Iterator[PlacedPage]:
        for ch in self.channels:
            yield from ch

    def manifest(self) -> str:
        """Line-delimited ``page_index channel block page sample_count``, ordered by page index."""
        rows = sorted(self.pages(), key=lambda p: p.index)
        return "".join(f"{p.index} {p.address.channel} {p.address.block} {p.address.page} {p.sample_count}\n"
                       for p in rows)


def slot_address(channel: int, slot: int, pages_per_block: int) -> PageAddress:
    return PageAddress(channel, slot // pages_per_block, slot % pages_per_block)


def stripe_across_channels(pages: Sequence[PackedPage], n: int, seed: Optional[int] = None,
                           pages_per_block: int = 128) -> DatasetLayout:
    """Round-robin pages over ``n`` channels, after a seeded shuffle of page order if ``seed`` is given."""
    if n < 1:
        raise DataError("need at least one channel")
    order = list(range(len(pages)))
    if seed is not None:
        random.Random(seed).shuffle(order)
    channels: List[List[PlacedPage]] = [[] for _ in range(n)]
    for pos, idx in enumerate(order):
        ch = pos % n
        addr = slot_address(ch, len(channels[ch]), pages_per_block)
        channels[ch].append(PlacedPage(idx, addr, pages[idx].sample_count))
    return DatasetLayout(channels)


def preload_nand(layout: DatasetLayout, pages: Sequence[PackedPage], nand: NandArray) -> None:
    g = nand.geometry
    if layout.num_channels > g.num_channels:
        raise DataError(f"layout needs {layout.num_channels} channels, NAND has {g.num_channels}")
    need = max((len(ch) for ch in layout.channels), default=0)
    if need > g.pages_per_channel:
        raise DataError(f"capacity exceeded: need {need} pages per channel, "
                        f"{g.pages_per_channel} available")
    try:
        for placed in layout.pages():
            nand.preload(placed.address, pages[placed.index].data)
    except NandError as exc:
        raise DataError(str(exc)) from exc
    for placed in layout.pages():
        data, _ = nand.read_page(placed.address)
        if data != pages[placed.index].data:
            raise DataError(f"read-back mismatch at {tuple(placed.address)}")
