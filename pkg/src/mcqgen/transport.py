"""Request/response transports for out-of-process model backends.

All external backends (question generator, fill-mask model, tagger, entity
recognizer, context encoder, LLM) speak one JSON object per request and one
JSON object per response, either over a long-lived subprocess's stdin/stdout
or as an HTTP POST.
"""

from __future__ import annotations

import json
import logging
import subprocess
import threading
import time
import urllib.error
import urllib.request
from typing import Callable, Optional, Sequence, TypeVar

from .errors import BackendError

log = logging.getLogger(__name__)

T = TypeVar("T")


def with_retries(
    fn: Callable[[], T],
    attempts: int = 3,
    base_delay: float = 0.5,
    retry_on: tuple = (BackendError, OSError),
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Call ``fn`` up to ``attempts`` times with exponential backoff."""
    last: Optional[BaseException] = None
    for attempt in range(attempts):
        try:
            return fn()
        except retry_on as exc:
            last = exc
            log.warning("attempt %d/%d failed: %s", attempt + 1, attempts, exc)
            if attempt + 1 < attempts:
                sleep(base_delay * (2 ** attempt))
    raise BackendError(f"gave up after {attempts} attempts: {last}") from last


class SubprocessTransport:
    """One JSON line in, one JSON line out, over a persistent child process.

    Not safe for concurrent use; callers share it behind ``lock``.
    """

    concurrent_safe = False

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout
        self.lock = threading.Lock()
        self._proc: Optional[subprocess.Popen] = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        return self._proc

    def request(self, payload: dict) -> dict:
        with self.lock:
            proc = self._ensure()
            try:
                proc.stdin.write(json.dumps(payload, ensure_ascii=False) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                self.close()
                raise BackendError(f"{self.command[0]}: {exc}") from exc
        if not line:
            self.close()
            raise BackendError(f"{self.command[0]}: backend closed its output")
        try:
            out = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendError(f"{self.command[0]}: bad response {line[:200]!r}") from exc
        if not isinstance(out, dict):
            raise BackendError(f"{self.command[0]}: response is not an object")
        return out

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:  # noqa: BLE001 - best-effort shutdown
                self._proc.kill()
            self._proc = None


class HttpTransport:
    concurrent_safe = True

    def __init__(self, endpoint: str, timeout: float = 60.0, headers: Optional[dict] = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.headers = {"Content-Type": "application/json", **(headers or {})}

    def request(self, payload: dict) -> dict:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=data, headers=self.headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read().decode("utf-8")
        except (urllib.error.URLError, TimeoutError) as exc:
            raise BackendError(f"{self.endpoint}: {exc}") from exc
        try:
            out = json.loads(body)
        except json.JSONDecodeError as exc:
            raise BackendError(f"{self.endpoint}: bad response {body[:200]!r}") from exc
        if not isinstance(out, dict):
            raise BackendError(f"{self.endpoint}: response is not an object")
        return out

    def close(self) -> None:
        pass


def make_transport(backend_cfg: dict):
    """Build a transport from a config mapping with ``command`` or ``endpoint``."""
    if "command" in backend_cfg:
        cmd = backend_cfg["command"]
        if isinstance(cmd, str):
            cmd = cmd.split()
        return SubprocessTransport(cmd, timeout=float(backend_cfg.get("timeout", 60)))
    if "endpoint" in backend_cfg:
        return HttpTransport(backend_cfg["endpoint"], timeout=float(backend_cfg.get("timeout", 60)),
                             headers=backend_cfg.get("headers"))
    raise ValueError("external backend needs 'command' or 'endpoint'")
