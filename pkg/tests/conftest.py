import os
from pathlib import Path

import numpy as np
import pytest

from ispsim import model as M
from ispsim.dataset import pack_pages, preload_nand, stripe_across_channels
from ispsim.fabric import CostModel, Fabric
from ispsim.nand import NandArray, NandGeometry

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = ROOT / "data" / "mnist5k"


def toy_set(n=200, dim=784, classes=10, seed=0):
    """Random features in [0, 1] quantized to 1/255, labels 0..classes-1."""
    rng = np.random.default_rng(seed)
    x = np.round(rng.random((n, dim)) * 255) / 255
    y = rng.integers(0, classes, n)
    return M.SampleSet(x, y)


def separable_set(n=200, seed=0):
    """Two classes split by the mean of the first 20 pixels; every sample is clear of the boundary."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.integers(0, 40, (n, 784)).astype(float)
    x[:, :20] += np.where(y[:, None] == 1, 200, 0)
    x = np.minimum(x, 255) / 255
    return M.SampleSet(x, y)


def build_fabric(samples, n, cost=CostModel(), replicate=1, trace=False):
    pages = pack_pages(samples)
    if replicate > 1:
        pages = [p for p in pages for _ in range(replicate)]
    layout = stripe_across_channels(pages, n)
    per = -(-len(pages) // n)
    nand = NandArray(NandGeometry.for_pages(n, per, 128, 8192))
    preload_nand(layout, pages, nand)
    return Fabric(nand, cost, record_trace=trace), layout


@pytest.fixture(scope="session")
def mnist_dir():
    if not (DATA_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.skip("bundled MNIST subset missing")
    return DATA_DIR


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.delenv("ISPSIM_THREADS", raising=False)
    yield


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
