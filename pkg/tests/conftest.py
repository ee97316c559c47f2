import random
import sys
import struct

import numpy as np
import pytest

from framedag.framestore import Store
from framedag.framestore.table import ColumnDesc, TableManifest, write_blob_column
from framedag.kernels import Kernel, KernelDecl, register

from oracles import mix_digest


class Mix(Kernel):
    """Digest of all fields of an element; sensitive to every input byte and to field order."""

    def execute(self, fields):
        return [mix_digest(*col) for col in zip(*fields)]


class Flaky(Kernel):
    """Fails the first ``fail_times`` invocations across all instances, then behaves like Mix."""

    failures = {"left": 0}

    def execute(self, fields):
        if Flaky.failures["left"] > 0:
            Flaky.failures["left"] -= 1
            raise RuntimeError("injected kernel failure")
        return [mix_digest(*col) for col in zip(*fields)]


register(KernelDecl("mix", Mix, arity=None))
register(KernelDecl("flaky", Flaky, arity=None))


@pytest.fixture
def store(tmp_path):
    return Store(tmp_path / "store")


def random_frames(rng: np.random.Generator, n: int, size: int, levels: int = 4) -> list[bytes]:
    return [rng.integers(0, levels, size, dtype=np.uint8).tobytes() for _ in range(n)]


def make_blob_table(store: Store, name: str, column: str, values):
    path = store.table_path(name)
    path.mkdir(parents=True, exist_ok=True)
    n = write_blob_column(path / f"{column}.blob", values)
    (path / "manifest.json").write_text(TableManifest(name, n, [ColumnDesc(column, "blob")]).to_json())
    return store.open(name)


def f64s(xs):
    return [struct.pack("<d", float(x)) for x in xs]


@pytest.fixture
def pyrng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
