"""Append-only classification cache keyed by (post_id, model, prompt_version)."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .parser import Classification

log = logging.getLogger(__name__)

CacheKey = tuple[str, str, str]


@dataclass(frozen=True)
class FailureRecord:
    post_id: str
    kind: str
    message: str
    attempts: int

    def to_dict(self) -> dict[str, Any]:
        return {"post_id": self.post_id, "error_kind": self.kind, "message": self.message, "attempts": self.attempts}


@dataclass(frozen=True)
class CacheEntry:
    key: CacheKey
    value: Classification | FailureRecord

    @property
    def ok(self) -> bool:
        return isinstance(self.value, Classification)

    def to_line(self) -> str:
        post_id, model, version = self.key
        payload: dict[str, Any] = {"post_id": post_id, "model_name": model, "prompt_version": version}
        if isinstance(self.value, Classification):
            payload["status"] = "ok"
            payload["classification"] = self.value.to_dict()
        else:
            payload["status"] = "failed"
            payload["failure"] = self.value.to_dict()
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_line(cls, line: str) -> "CacheEntry":
        data = json.loads(line)
        key = (str(data["post_id"]), data["model_name"], data["prompt_version"])
        if data["status"] == "ok":
            value: Classification | FailureRecord = Classification.from_dict(data["classification"])
        else:
            f = data["failure"]
            value = FailureRecord(f["post_id"], f["error_kind"], f["message"], int(f["attempts"]))
        return cls(key, value)


class ClassificationCache:
    """Line-delimited cache file, replayed on open; the last entry for a key wins.

    A torn final line (from a killed run) is skipped on replay.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[CacheKey, CacheEntry] = {}
        self.skipped_lines = 0
        self._tail_checked = False
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    entry = CacheEntry.from_line(line)
                except (ValueError, KeyError, TypeError) as exc:
                    self.skipped_lines += 1
                    log.warning("%s:%d: skipping unreadable cache line (%s)", self.path, lineno, exc)
                    continue
                self._entries[entry.key] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: CacheKey) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[CacheEntry]:
        return iter(self._entries.values())

    def get(self, key: CacheKey) -> CacheEntry | None:
        return self._entries.get(key)

    def put(self, entry: CacheEntry) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        needs_newline = False
        if not self._tail_checked:
            # Start on a fresh line if a previous run died mid-write.
            if self.path.exists() and self.path.stat().st_size > 0:
                with self.path.open("rb") as fh:
                    fh.seek(-1, os.SEEK_END)
                    needs_newline = fh.read(1) != b"\n"
            self._tail_checked = True
        with self.path.open("a", encoding="utf-8") as fh:
            if needs_newline:
                fh.write("\n")
            fh.write(entry.to_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._entries[entry.key] = entry
