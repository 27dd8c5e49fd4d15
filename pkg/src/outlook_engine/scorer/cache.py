"""Content-addressed on-disk response cache.

Layout is cache/<model>/<firm_id>.json, one human-inspectable JSON file per
(model, firm) holding the raw response plus the SHA-256 of the prompt it
answered. A hit requires the stored prompt hash to match, so edits to the
prompt template invalidate the cache automatically.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path

from .prompt import PromptPair


def prompt_hash(prompt: PromptPair) -> str:
    h = hashlib.sha256()
    h.update(prompt.system_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(prompt.user_text.encode("utf-8"))
    return h.hexdigest()


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in name)


class ScoreCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path(self, model: str, firm_id: str) -> Path:
        return self.root / _safe_name(model) / f"{_safe_name(firm_id)}.json"

    def get(self, model: str, firm_id: str, phash: str) -> str | None:
        path = self.path(model, firm_id)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None
        if entry.get("prompt_sha256") != phash:
            return None
        response = entry.get("response")
        return response if isinstance(response, str) else None

    def put(self, model: str, firm_id: str, phash: str, response: str) -> None:
        path = self.path(model, firm_id)
        entry = {
            "model": model,
            "firm_id": firm_id,
            "prompt_sha256": phash,
            "response": response,
        }
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(entry, indent=2), encoding="utf-8")


__all__ = ["ScoreCache", "prompt_hash"]
