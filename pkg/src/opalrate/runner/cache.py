"""Content-addressed, write-once storage for per-sample results."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def atomic_write(path, text: str, overwrite: bool = True) -> bool:
    """Write via a temporary file and rename. Returns False if skipped."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not overwrite and path.exists():
        return False
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        if not overwrite and path.exists():
            os.unlink(tmp)
            return False
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return True


class SampleCache:
    """Per-sample records stored under ``root/<key[:2]>/<key>.json``.

    Keys come from :meth:`ScenarioConfig.sample_key`; entries are never
    overwritten once written.
    """

    def __init__(self, root, keyfunc):
        self.root = Path(root)
        self.keyfunc = keyfunc
        self.hits = 0
        self.writes = 0

    def path(self, index: int) -> Path:
        k = self.keyfunc(index)
        return self.root / k[:2] / f"{k}.json"

    def get(self, index: int):
        p = self.path(index)
        if not p.exists():
            return None
        with open(p) as fh:
            rec = json.load(fh)
        self.hits += 1
        return rec

    def put(self, index: int, record: dict):
        rec = dict(record, key=self.keyfunc(index), sample_index=int(index))
        if atomic_write(self.path(index), json.dumps(rec, sort_keys=True), overwrite=False):
            self.writes += 1
