import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conxnet import cli, data, kernels

sys.path.insert(0, str(Path(__file__).parent))

SYNTH_SEED = 7
SYNTH_PER_CLASS = 300
SYNTH_SIZE = 64
TRAIN_EPOCHS = 20

_acceptance_lines = []


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return kernels.NUMBA_KERNELS if request.param == "numba" else kernels.NUMPY_KERNELS


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    data.synth_generate(SYNTH_PER_CLASS, SYNTH_SIZE, SYNTH_SEED, root)
    return root


@pytest.fixture(scope="session")
def trained_run(synthetic_corpus, tmp_path_factory):
    """One CLI training run with the default lr and batch size, shared by several tests."""
    out = tmp_path_factory.mktemp("trained")
    ckpt, log_csv = out / "model.ckpt", out / "log.csv"
    argv = [
        "train", "--data", str(synthetic_corpus), "--seed", str(SYNTH_SEED),
        "--epochs", str(TRAIN_EPOCHS), "--batch", "32", "--lr", "0.001",
        "--input-size", str(SYNTH_SIZE), "--out", str(ckpt), "--log", str(log_csv),
    ]
    t0 = time.perf_counter()
    code = cli.main(argv)
    elapsed = time.perf_counter() - t0
    return {"code": code, "ckpt": ckpt, "log": log_csv, "elapsed": elapsed, "data": synthetic_corpus}


@pytest.fixture(scope="session")
def acceptance_record():
    def record(number, title, passed, detail=""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _acceptance_lines.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
