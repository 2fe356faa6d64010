"""Simulated NAND flash array: page storage, erase state, and operation latencies.

Latencies are returned, not slept; the fabric decides when a channel is busy.
All durations are integer nanoseconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, NamedTuple, Tuple

US = 1_000
MS = 1_000_000


class NandError(Exception):
    pass


@dataclass(frozen=True)
class NandGeometry:
    num_channels: int = 1
    blocks_per_channel: int = 64
    pages_per_block: int = 128
    page_size_bytes: int = 8192

    def __post_init__(self):
        for name in ("num_channels", "blocks_per_channel", "pages_per_block", "page_size_bytes"):
            if getattr(self, name) < 1:
                raise NandError(f"{name} must be >= 1")

    @property
    def pages_per_channel(self) -> int:
        return self.blocks_per_channel * self.pages_per_block

    @classmethod
    def for_pages(cls, num_channels: int, pages_per_channel: int, pages_per_block: int = 128,
                  page_size_bytes: int = 8192, slack: float = 0.25) -> "NandGeometry":
        """Smallest geometry holding ``pages_per_channel`` pages per channel plus ``slack``."""
        need = max(1, int(pages_per_channel * (1 + slack) + 0.999999))
        blocks = -(-need // pages_per_block)
        return cls(num_channels, blocks, pages_per_block, page_size_bytes)


@dataclass(frozen=True)
class NandTiming:
    t_read: int = 75 * US
    t_prog: int = 300 * US
    t_erase: int = 5 * MS

    def __post_init__(self):
        if min(self.t_read, self.t_prog, self.t_erase) <= 0:
            raise NandError("NAND latencies must be strictly positive")


class PageAddress(NamedTuple):
    channel: int
    block: int
    page: int


class NandArray:
    """Page-granular flash contents with the program-once-per-erase rule.

    Pages that were never written (or were erased) read back as
    ``erased_value`` bytes, zero by default so padding decodes as zero features.
    """

    def __init__(self, geometry: NandGeometry, timing: NandTiming = NandTiming(), erased_value: int = 0):
        self.geometry = geometry
        self.timing = timing
        self.erased_page = bytes([erased_value]) * geometry.page_size_bytes
        self._pages: Dict[Tuple[int, int, int], bytes] = {}
        self._written: set = set()
        self.started = False

    def _check(self, addr) -> Tuple[int, int, int]:
        g = self.geometry
        ch, blk, pg = addr
        if not (0 <= ch < g.num_channels and 0 <= blk < g.blocks_per_channel and 0 <= pg < g.pages_per_block):
            raise NandError(f"address {tuple(addr)} outside geometry {g}")
        return (ch, blk, pg)

    def _check_data(self, data: bytes):
        if len(data) != self.geometry.page_size_bytes:
            raise NandError(f"page data must be {self.geometry.page_size_bytes} bytes, got {len(data)}")

    def is_erased(self, addr) -> bool:
        return self._check(addr) not in self._written

    def read_page(self, addr) -> Tuple[bytes, int]:
        key = self._check(addr)
        return self._pages.get(key, self.erased_page), self.timing.t_read

    def program_page(self, addr, data: bytes) -> int:
        key = self._check(addr)
        self._check_data(data)
        if key in self._written:
            raise NandError(f"page {key} already programmed; erase its block first")
        self._pages[key] = bytes(data)
        self._written.add(key)
        return self.timing.t_prog

    def erase_block(self, channel: int, block: int) -> int:
        self._check((channel, block, 0))
        for pg in range(self.geometry.pages_per_block):
            key = (channel, block, pg)
            self._pages.pop(key, None)
            self._written.discard(key)
        return self.timing.t_erase

    def preload(self, addr, data: bytes) -> None:
        """Out-of-band load that costs no simulated time and ignores erase state."""
        if self.started:
            raise NandError("preload is only allowed before the simulation starts")
        key = self._check(addr)
        self._check_data(data)
        self._pages[key] = bytes(data)
        self._written.add(key)
