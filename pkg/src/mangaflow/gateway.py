"""Uniform model access with record/replay cassettes.

Every agent and renderer call in the pipeline goes through one ``Gateway``.
In ``live`` mode requests hit the configured provider endpoints; ``record``
does the same and writes each response into a cassette file; ``replay``
serves responses from the cassette alone and never opens a connection.
Requests are addressed by a canonical content digest, so rebuilding a
prompt with different whitespace or field order still hits the cassette.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .errors import (
    CassetteMissError,
    CredentialError,
    GatewayError,
    ProviderError,
    ValidationError,
)

KINDS = ("chat", "multimodal", "image")
DEFAULT_CHAT_MODEL = "mf-chat-1"
DEFAULT_IMAGE_MODEL = "mf-image-1"
MAX_RETRIES = 3
BACKOFF_BASE = 0.5

ENV_CHAT_KEY = "MANGAFLOW_CHAT_API_KEY"
ENV_IMAGE_KEY = "MANGAFLOW_IMAGE_API_KEY"
ENV_MODE = "MANGAFLOW_MODE"
ENV_CASSETTE = "MANGAFLOW_CASSETTE"
ENV_CHAT_URL = "MANGAFLOW_CHAT_URL"
ENV_IMAGE_URL = "MANGAFLOW_IMAGE_URL"


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image file attached to a request.

    Hashing uses the file content, not the path, so a project can move on
    disk without invalidating its cassettes.
    """

    path: str

    def digest(self) -> str:
        return hashlib.sha256(Path(self.path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class GatewayRequest:
    kind: str
    payload: dict
    model_id: str
    temperature: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown request kind {self.kind!r}")


def _canonical(value):
    """Normalize a payload value for hashing.

    Strings collapse internal whitespace; image refs become content
    digests; dicts and lists recurse. Key order is irrelevant because the
    final serialization sorts keys.
    """
    if isinstance(value, str):
        return " ".join(value.split())
    if isinstance(value, ImageRef):
        return {"__image__": value.digest()}
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()
                if k not in ("timestamp", "timestamps")}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def canonical_key(request: GatewayRequest) -> str:
    """Stable digest addressing a request in a cassette."""
    doc = {
        "kind": request.kind,
        "model_id": request.model_id,
        "temperature": request.temperature,
        "seed": request.seed,
        "payload": _canonical(request.payload),
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cassette:
    """Keyed store of recorded responses; image payloads live beside it."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries: dict[str, dict] = {}
        if self.path.exists():
            raw = json.loads(self.path.read_text())
            for entry in raw.get("entries", []):
                self.entries[entry["key"]] = entry

    def get(self, key: str) -> Optional[dict]:
        entry = self.entries.get(key)
        if entry is None:
            return None
        if "image_file" in entry:
            png = (self.path.parent / entry["image_file"]).read_bytes()
            return {"png": png}
        return entry["response"]

    def put(self, key: str, kind: str, response: dict) -> None:
        if "png" in response:
            name = f"{key}.png"
            self.path.parent.mkdir(parents=True, exist_ok=True)
            (self.path.parent / name).write_bytes(response["png"])
            self.entries[key] = {"key": key, "kind": kind, "image_file": name}
        else:
            self.entries[key] = {"key": key, "kind": kind, "response": response}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"entries": list(self.entries.values())}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
        tmp.replace(self.path)


class TokenBucket:
    """Blocking token-bucket limiter shared by concurrent callers."""

    def __init__(self, rate: float, capacity: float,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.capacity = capacity
        self.tokens = capacity
        self.clock = clock
        self.sleep = sleep
        self.updated = clock()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self.lock:
                now = self.clock()
                self.tokens = min(self.capacity,
                                  self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


def _http_transport(request: GatewayRequest, endpoint: str, api_key: str,
                    timeout: float = 120.0) -> dict:
    """POST the request to a provider endpoint; raises ProviderError."""
    import requests

    body: dict = {"model": request.model_id,
                  "temperature": request.temperature}
    if request.seed is not None:
        body["seed"] = request.seed
    if request.kind == "image":
        body.update(request.payload)
        refs = body.pop("refs", [])
        body["refs"] = [base64.b64encode(Path(r.path).read_bytes()).decode()
                        if isinstance(r, ImageRef) else r for r in refs]
        url = endpoint.rstrip("/") + "/images"
    else:
        messages = []
        for m in request.payload.get("messages", []):
            m = dict(m)
            images = m.pop("images", None)
            if images:
                m["images"] = [
                    base64.b64encode(Path(r.path).read_bytes()).decode()
                    if isinstance(r, ImageRef) else r for r in images]
            messages.append(m)
        body["messages"] = messages
        url = endpoint.rstrip("/") + "/chat"
    try:
        resp = requests.post(url, json=body, timeout=timeout,
                             headers={"Authorization": f"Bearer {api_key}"})
    except requests.RequestException as exc:
        raise ProviderError(f"transport failure: {exc}", transient=True)
    if resp.status_code >= 500 or resp.status_code == 429:
        raise ProviderError(f"provider {resp.status_code}: {resp.text[:200]}",
                            transient=True, status=resp.status_code)
    if resp.status_code >= 400:
        raise ProviderError(f"provider {resp.status_code}: {resp.text[:200]}",
                            transient=False, status=resp.status_code)
    data = resp.json()
    if request.kind == "image":
        return {"png": base64.b64decode(data["image_b64"])}
    return {"text": data["text"]}


class Gateway:
    """Mode-aware client for chat, multimodal, and image models.

    A ``transport`` callable may be injected for tests; replay mode never
    touches it. The same instance may be shared across threads.
    """

    def __init__(self, mode: str = "replay", cassette: Optional[str] = None,
                 chat_api_key: Optional[str] = None,
                 image_api_key: Optional[str] = None,
                 chat_url: Optional[str] = None,
                 image_url: Optional[str] = None,
                 chat_model: str = DEFAULT_CHAT_MODEL,
                 image_model: str = DEFAULT_IMAGE_MODEL,
                 transport: Callable = _http_transport,
                 rate: float = 4.0, burst: float = 8.0,
                 sleep: Callable[[float], None] = time.sleep,
                 jitter_rng: Optional[random.Random] = None):
        if mode not in ("live", "record", "replay"):
            raise ValidationError(f"unknown gateway mode {mode!r}")
        if mode in ("record", "replay") and cassette is None:
            raise ValidationError(f"{mode} mode needs a cassette path")
        self.mode = mode
        self.cassette = Cassette(cassette) if cassette else None
        self.chat_api_key = chat_api_key
        self.image_api_key = image_api_key
        self.chat_url = chat_url
        self.image_url = image_url
        self.chat_model = chat_model
        self.image_model = image_model
        self.transport = transport
        self.sleep = sleep
        self.jitter = jitter_rng or random.Random(0)
        self.limiter = TokenBucket(rate, burst, sleep=sleep)
        self.call_count = 0
        self.network_count = 0
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls, env=None, **overrides) -> "Gateway":
        import os
        env = env if env is not None else os.environ
        kwargs = dict(
            mode=env.get(ENV_MODE, "replay"),
            cassette=env.get(ENV_CASSETTE),
            chat_api_key=env.get(ENV_CHAT_KEY),
            image_api_key=env.get(ENV_IMAGE_KEY),
            chat_url=env.get(ENV_CHAT_URL),
            image_url=env.get(ENV_IMAGE_URL),
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    # -- plumbing ----------------------------------------------------------

    def _credentials_for(self, kind: str) -> tuple[str, str]:
        if kind == "image":
            key, url = self.image_api_key, self.image_url
            what = "image"
        else:
            key, url = self.chat_api_key, self.chat_url
            what = "chat"
        if not key:
            raise CredentialError(f"no {what} API key configured "
                                  f"({ENV_IMAGE_KEY if what == 'image' else ENV_CHAT_KEY})")
        if not url:
            raise GatewayError(f"no {what} endpoint configured "
                               f"({ENV_IMAGE_URL if what == 'image' else ENV_CHAT_URL})")
        return key, url

    def _network_call(self, request: GatewayRequest) -> dict:
        key, url = self._credentials_for(request.kind)
        last: Exception = GatewayError("no attempt made")
        for attempt in range(MAX_RETRIES + 1):
            if attempt:
                # exponential backoff with bounded jitter; delays strictly
                # increase because the jitter never exceeds the step gap
                delay = BACKOFF_BASE * (2 ** (attempt - 1))
                delay += self.jitter.uniform(0, BACKOFF_BASE / 2)
                self.sleep(delay)
            self.limiter.acquire()
            with self._lock:
                self.network_count += 1
            try:
                return self.transport(request, url, key)
            except ProviderError as exc:
                last = exc
                if not exc.transient:
                    raise
        raise ProviderError(f"retries exhausted: {last}", transient=True)

    def call(self, request: GatewayRequest) -> dict:
        key = canonical_key(request)
        with self._lock:
            self.call_count += 1
        if self.mode == "replay":
            response = self.cassette.get(key)
            if response is None:
                raise CassetteMissError(key)
            return response
        response = self._network_call(request)
        if self.mode == "record":
            with self._lock:
                self.cassette.put(key, request.kind, response)
                self.cassette.save()
        return response

    # -- typed entry points ------------------------------------------------

    def chat(self, messages: list[dict], temperature: float = 0.2,
             seed: Optional[int] = None, model_id: Optional[str] = None) -> str:
        kind = "multimodal" if any("images" in m for m in messages) else "chat"
        request = GatewayRequest(kind=kind, payload={"messages": messages},
                                 model_id=model_id or self.chat_model,
                                 temperature=temperature, seed=seed)
        return self.call(request)["text"]

    def image(self, prompt: str, width: int, height: int,
              refs: tuple = (), seed: Optional[int] = None,
              model_id: Optional[str] = None) -> bytes:
        payload = {"prompt": prompt, "width": width, "height": height,
                   "refs": list(refs)}
        request = GatewayRequest(kind="image", payload=payload,
                                 model_id=model_id or self.image_model,
                                 temperature=0.0, seed=seed)
        return self.call(request)["png"]
