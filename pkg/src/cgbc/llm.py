"""Chat-completion transport with recordable, replayable responses.

Every request is identified by a digest of (system prompt, user prompt,
model). Record mode performs the live call and appends (digest, response)
to a fixture file; replay mode answers from the fixture alone, consuming
entries for identical requests in recorded order so a whole generation
session can be replayed deterministically and offline.

Fixture file format: a JSON array of {"digest": hex, "response": string}.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .errors import ReplayMissError, TransportError

logger = logging.getLogger(__name__)

API_KEY_ENV = "CGBC_LLM_KEY"
MAX_RETRIES = 3


def request_digest(system: str, user: str, model: str) -> str:
    """Collision-safe key for one request; field boundaries are explicit."""
    payload = json.dumps(
        {"system": system, "user": user, "model": model},
        sort_keys=True, ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmClientConfig:
    model: str
    mode: str = "replay"  # live | record | replay
    endpoint: Optional[str] = None
    fixture_path: Optional[Path] = None
    per_call: int = 10          # concepts requested per completion
    timeout: float = 60.0
    backoff_base: float = 1.0   # seconds; retry n sleeps base * 2**n

    def __post_init__(self):
        if self.mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("live", "record") and not self.endpoint:
            raise ValueError(f"mode {self.mode!r} requires an endpoint")
        if self.mode in ("record", "replay") and self.fixture_path is None:
            raise ValueError(f"mode {self.mode!r} requires a fixture path")
        if self.per_call < 1:
            raise ValueError("per_call must be >= 1")


def _default_post(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


def load_fixture(path) -> list:
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(entries, list):
        raise ValueError(f"fixture {path} is not a JSON array")
    for e in entries:
        if not isinstance(e, dict) or "digest" not in e or "response" not in e:
            raise ValueError(f"fixture {path} has a malformed entry: {e!r}")
    return entries


class LlmClient:
    """One conversation-free completion per call, in one of three modes."""

    def __init__(self, cfg: LlmClientConfig, post_fn: Callable = _default_post):
        self.cfg = cfg
        self._post = post_fn
        self._lock = threading.Lock()  # single-writer rule for record mode
        self._queues = None
        if cfg.mode == "replay":
            entries = load_fixture(cfg.fixture_path)  # missing file raises here
            self._queues = defaultdict(deque)
            for e in entries:
                self._queues[e["digest"]].append(e["response"])

    def complete(self, system: str, user: str) -> str:
        digest = request_digest(system, user, self.cfg.model)
        if self.cfg.mode == "replay":
            queue = self._queues.get(digest)
            if not queue:
                raise ReplayMissError(digest)
            return queue.popleft()

        text = self._live_call(system, user)
        if self.cfg.mode == "record":
            self._append_fixture(digest, text)
        return text

    def _live_call(self, system: str, user: str) -> str:
        payload = {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last_error = None
        for attempt in range(1 + MAX_RETRIES):
            if attempt:
                delay = self.cfg.backoff_base * 2 ** (attempt - 1)
                logger.warning("retrying LLM call in %.1fs (attempt %d)", delay, attempt + 1)
                if delay:
                    time.sleep(delay)
            try:
                body = self._post(self.cfg.endpoint, payload, headers, self.cfg.timeout)
                return body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as e:
                raise TransportError(f"malformed completion response: {e!r}") from e
            except Exception as e:  # connection errors, HTTP errors, timeouts
                last_error = e
        raise TransportError(
            f"LLM endpoint failed after {1 + MAX_RETRIES} attempts: {last_error!r}"
        )

    def _append_fixture(self, digest: str, response: str):
        with self._lock:
            path = Path(self.cfg.fixture_path)
            entries = load_fixture(path) if path.is_file() else []
            entries.append({"digest": digest, "response": response})
            tmp = path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps(entries, indent=2, ensure_ascii=False) + "\n",
                encoding="utf-8",
            )
            tmp.replace(path)
