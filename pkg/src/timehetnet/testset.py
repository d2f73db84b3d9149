"""Fixed test-set files: pre-generated tasks serialized for comparable
evaluation across methods.

Layout (little-endian):

    magic   b"THTS"
    u32     format version
    u32     task count
    32 B    sha256 digest of the generating configuration
    tasks, each:
        u32 x 7   predictor count C_p, window T, past length L_y,
                  support count N_s, query count N_q, horizon p, source id
        f64[...]  support x [N_s*T*C_p], support y [N_s*L_y],
                  support y' [N_s], then the same three query arrays

Rebuilding a file from the same stores, seed and config is bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .data import DatasetStore, sample_task, task_rng
from .tasks import Task, TaskSplit

MAGIC = b"THTS"
VERSION = 1


class TestSetError(ValueError):
    pass


def config_digest(payload: dict) -> bytes:
    """sha256 over a canonical JSON encoding of the build configuration."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).digest()


def write_tasks(path, tasks: list, digest: bytes = b"\0" * 32) -> None:
    if len(digest) != 32:
        raise TestSetError("config digest must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tasks)))
        fh.write(digest)
        for task in tasks:
            s, q = task.support, task.query
            n_s, t, c_p = s.x.shape
            n_q = q.x.shape[0]
            l_y = s.y.shape[1]
            fh.write(struct.pack("<7I", c_p, t, l_y, n_s, n_q,
                                 task.horizon, task.source_id))
            for arr in (s.x, s.y, s.y_future, q.x, q.y, q.y_future):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_tasks(path) -> tuple[list, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise TestSetError(f"{path}: not a test-set file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise TestSetError(f"{path}: unsupported version {version}")
    digest = raw[12:44]
    offset = 44
    tasks = []
    for _ in range(count):
        c_p, t, l_y, n_s, n_q, horizon, source_id = struct.unpack_from(
            "<7I", raw, offset)
        offset += 28
        arrays = []
        for n, rows, cols in ((n_s, t, c_p), (n_s, l_y, None), (n_s, 1, None),
                              (n_q, t, c_p), (n_q, l_y, None), (n_q, 1, None)):
            size = n * rows * (cols or 1)
            data = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            shape = (n, rows, cols) if cols else (n, rows)
            arrays.append(data.reshape(shape).astype(np.float64))
        tasks.append(Task(
            support=TaskSplit(x=arrays[0], y=arrays[1], y_future=arrays[2]),
            query=TaskSplit(x=arrays[3], y=arrays[4], y_future=arrays[5]),
            horizon=horizon, source_id=source_id))
    if offset != len(raw):
        raise TestSetError(f"{path}: trailing bytes after last task")
    return tasks, digest


def build_fixed_test_set(stores: list, tasks_per_channel_count: int,
                         seed: int, horizon: int, path=None,
                         c_range: tuple = (5, 10), length: int = 100,
                         n_support: int = 20, n_query: int = 20
                         ) -> tuple[list, bytes]:
    """Exactly ``tasks_per_channel_count`` tasks per store per channel count.

    Tasks are generated from per-task seeded generators so the file is a
    pure function of (stores, seed, config).  Returns the task list and
    the config digest; writes the file when ``path`` is given.
    """
    digest = config_digest({
        "stores": [s.name for s in stores],
        "tasks_per_channel_count": tasks_per_channel_count,
        "seed": seed, "horizon": horizon, "c_range": list(c_range),
        "length": length, "n_support": n_support, "n_query": n_query,
    })
    tasks = []
    for sid, store in enumerate(stores):
        index = 0
        for c in range(c_range[0], c_range[1] + 1):
            for _ in range(tasks_per_channel_count):
                rng = task_rng(seed, store.name, index)
                tasks.append(sample_task(
                    store, rng, c_range=(c, c), length=length,
                    n_support=n_support, n_query=n_query, horizon=horizon,
                    source_id=sid, seed=index))
                index += 1
    if path is not None:
        write_tasks(path, tasks, digest)
    return tasks, digest
