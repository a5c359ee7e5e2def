"""Append-only configuration store.

Records are JSON lines `{"key": [...], "version": n, "config": {...}, "ts": t}`
appended to a single log file; an in-memory index maps each key to its latest
record. Writers serialize on one lock and the log is flushed before a write is
acknowledged, so an acknowledged write survives a killed process (an optional
fsync flag extends that to power loss, at a heavy cost per write). Reads take
no lock: they are single dict lookups returning immutable records.

Recovery replays complete lines and truncates a torn tail, which is the only
corruption an append-only flush-per-write discipline can produce.

With no path the store keeps just the index: same interface, no durability.
The same class serves as the results store for benchmark runs.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .domain import ChannelConfig, ConfigKey


@dataclass(frozen=True)
class StoreRecord:
    key: ConfigKey
    version: int
    config: ChannelConfig
    ts: int

    def to_json(self) -> str:
        return json.dumps(
            {"key": self.key.to_list(), "version": self.version, "config": self.config.to_dict(), "ts": self.ts},
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "StoreRecord":
        return cls(
            key=ConfigKey.from_list(d["key"]),
            version=int(d["version"]),
            config=ChannelConfig.from_dict(d["config"]),
            ts=int(d["ts"]),
        )


@dataclass
class StoreStats:
    writes: int = 0
    reads: int = 0
    hits: int = 0
    misses: int = 0
    log_records: int = 0
    keys: int = 0


class ConfigStore:
    """Latest-version key/value store over an append-only JSONL log."""

    def __init__(self, path: Optional[str] = None, fsync: bool = False):
        self._path = path
        self._fsync = fsync
        self._lock = threading.Lock()
        self._index: dict[ConfigKey, StoreRecord] = {}
        self._log_records = 0
        self._writes = 0
        self._reads = 0
        self._hits = 0
        self._fh = None
        if path is not None:
            self._recover()
            self._fh = open(path, "ab")

    # -- recovery ---------------------------------------------------------

    def _recover(self) -> None:
        """Rebuild the index from the log, truncating any torn tail.

        A torn tail is a final region that is not a complete, parseable,
        newline-terminated record; everything before it is kept.
        """
        if not os.path.exists(self._path):
            return
        good_end = 0
        with open(self._path, "rb") as fh:
            buf = fh.read()
        pos = 0
        while pos < len(buf):
            nl = buf.find(b"\n", pos)
            if nl < 0:
                break
            line = buf[pos:nl]
            try:
                rec = StoreRecord.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError):
                break
            self._index[rec.key] = rec
            self._log_records += 1
            pos = nl + 1
            good_end = pos
        if good_end < len(buf):
            with open(self._path, "r+b") as fh:
                fh.truncate(good_end)

    # -- operations -------------------------------------------------------

    def write(self, key: ConfigKey, config: ChannelConfig, ts: int = 0) -> int:
        """Append a new version for `key`; returns the version number.

        The call does not return before the record reaches the OS file, so a
        process kill cannot lose an acknowledged write.
        """
        with self._lock:
            prev = self._index.get(key)
            version = 1 if prev is None else prev.version + 1
            rec = StoreRecord(key=key, version=version, config=config, ts=ts)
            if self._fh is not None:
                self._fh.write(rec.to_json().encode() + b"\n")
                self._fh.flush()
                if self._fsync:
                    os.fsync(self._fh.fileno())
            self._index[key] = rec
            self._log_records += 1
            self._writes += 1
            return version

    def read(self, key: ConfigKey) -> Optional[StoreRecord]:
        """Latest record for `key`, or None on a miss. Lock-free."""
        rec = self._index.get(key)
        self._reads += 1
        if rec is not None:
            self._hits += 1
        return rec

    def read_with_retry(
        self,
        key: ConfigKey,
        retries: int = 3,
        interval_s: float = 0.05,
        sleep: Callable[[float], None] = time.sleep,
    ) -> Optional[StoreRecord]:
        """Read, waiting a fixed interval between attempts on a miss.

        Performs at most `retries` sleeps (retries + 1 reads). Misses caused by
        a concurrent writer that has not landed yet resolve on a later attempt;
        a truly absent key returns None after the last one.
        """
        rec = self.read(key)
        for _ in range(retries):
            if rec is not None:
                return rec
            sleep(interval_s)
            rec = self.read(key)
        return rec

    def compact(self) -> int:
        """Rewrite the log keeping only the latest version per key.

        Atomic: the new log is built in a sibling file and swapped in with
        os.replace, so a crash leaves either the old or the new log, never a
        mix. Returns the number of superseded records dropped.
        """
        with self._lock:
            if self._fh is None:
                return 0
            records = sorted(self._index.values(), key=lambda r: r.key)
            tmp = self._path + ".compact"
            with open(tmp, "wb") as out:
                for rec in records:
                    out.write(rec.to_json().encode() + b"\n")
                out.flush()
                os.fsync(out.fileno())
            self._fh.close()
            os.replace(tmp, self._path)
            self._fh = open(self._path, "ab")
            dropped = self._log_records - len(records)
            self._log_records = len(records)
            return dropped

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "ConfigStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self._index)

    @property
    def path(self) -> Optional[str]:
        return self._path

    def stats(self) -> StoreStats:
        return StoreStats(
            writes=self._writes,
            reads=self._reads,
            hits=self._hits,
            misses=self._reads - self._hits,
            log_records=self._log_records,
            keys=len(self._index),
        )
