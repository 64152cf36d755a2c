"""Embedding and label-vector sources.

The scorer and metrics consume fixed-dimension vectors but never compute
them: they come from a deterministic hash embedder (offline default), a
fixture file, or the remote inference service. All remote responses are
schema-validated before use.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from . import schemas
from .errors import InputError, TransportError
from .text import normalize


class EmbeddingSource(Protocol):
    @property
    def dim(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """(len(texts), dim) array, row i embedding texts[i]."""
        ...


class HashEmbedder:
    """Deterministic sha256-derived unit vectors.

    Carries no semantics; equal texts map to equal vectors and that is
    the only property offline tests and desk-scale runs rely on.
    """

    def __init__(self, dim: int = 64) -> None:
        if dim < 1:
            raise InputError(f"dim must be >= 1, got {dim}")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self._dim), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = self._one(normalize(text))
        return out

    def _one(self, text: str) -> np.ndarray:
        base = hashlib.sha256(text.encode("utf-8")).digest()
        values = np.empty(self._dim, dtype=np.float64)
        block = b""
        counter = 0
        for j in range(self._dim):
            if not block:
                block = hashlib.sha256(base + counter.to_bytes(4, "little")).digest()
                counter += 1
            chunk, block = block[:8], block[8:]
            # Map 64 bits to [-1, 1).
            values[j] = int.from_bytes(chunk, "little", signed=True) / 2.0**63
        norm = float(np.linalg.norm(values))
        return values / norm if norm else values


class FixtureEmbedder:
    """Embeddings looked up from a JSON fixture: {"d": int, "vectors": {text: [...]}}."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray]) -> None:
        self._dim = dim
        self._vectors = vectors

    @classmethod
    def from_file(cls, path: str | Path) -> FixtureEmbedder:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict) or "d" not in raw or "vectors" not in raw:
            raise InputError(f"{path}: expected an object with 'd' and 'vectors'")
        dim = raw["d"]
        vectors = {}
        for text, values in raw["vectors"].items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (dim,):
                raise InputError(
                    f"{path}: vector for {text!r} has length {arr.shape}, expected ({dim},)"
                )
            vectors[normalize(text)] = arr
        return cls(dim=dim, vectors=vectors)

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self._dim), dtype=np.float64)
        for i, text in enumerate(texts):
            key = normalize(text)
            if key not in self._vectors:
                raise InputError(f"fixture has no embedding for text {text!r}")
            out[i] = self._vectors[key]
        return out


def _post_json(
    url: str,
    payload: dict,
    *,
    timeout: float,
    retries: int,
    backoff: float,
    session: requests.Session | None = None,
) -> dict:
    post = session.post if session is not None else requests.post
    last_failure = "no attempt made"
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last_failure = f"transport: {exc}"
            continue
        if resp.status_code != 200:
            last_failure = f"HTTP {resp.status_code}"
            continue
        try:
            data = resp.json()
        except ValueError:
            last_failure = "body is not JSON"
            continue
        return data
    raise TransportError(f"POST {url} failed after {retries + 1} attempts ({last_failure})")


class RemoteEmbedder:
    """Embeddings from the inference service's /embed endpoint."""

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ) -> None:
        self._url = endpoint.rstrip("/") + "/embed"
        self._timeout = timeout
        self._retries = retries
        self._backoff = backoff
        self._session = session
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            # One probe call pins the dimension for the session.
            self.embed([""])
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        data = _post_json(
            self._url,
            {"texts": list(texts)},
            timeout=self._timeout,
            retries=self._retries,
            backoff=self._backoff,
            session=self._session,
        )
        schemas.validate_response(data, schemas.EMBED_RESPONSE, self._url)
        d = data["d"]
        if self._dim is not None and d != self._dim:
            raise TransportError(f"{self._url}: dimension changed from {self._dim} to {d}")
        self._dim = d
        vectors = np.asarray(data["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), d):
            raise TransportError(
                f"{self._url}: expected {(len(texts), d)} vectors, got {vectors.shape}"
            )
        return vectors


class LabelSource(Protocol):
    def labels(self, texts: Sequence[str], category: str) -> tuple[tuple[str, ...], np.ndarray]:
        """(subclass names, (len(texts), n_subclasses) score array)."""
        ...


class FixtureLabels:
    """Label vectors from a JSON fixture:
    {"categories": {cat: {"subclass_names": [...], "by_text": {text: [...]}}}}."""

    def __init__(self, categories: dict[str, tuple[tuple[str, ...], dict[str, np.ndarray]]]):
        self._categories = categories

    @classmethod
    def from_file(cls, path: str | Path) -> FixtureLabels:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict) or "categories" not in raw:
            raise InputError(f"{path}: expected an object with 'categories'")
        categories = {}
        for cat, spec in raw["categories"].items():
            names = tuple(spec.get("subclass_names", ()))
            if not names:
                raise InputError(f"{path}: category {cat!r} has no subclass names")
            by_text = {}
            for text, values in spec.get("by_text", {}).items():
                arr = np.asarray(values, dtype=np.float64)
                if arr.shape != (len(names),):
                    raise InputError(
                        f"{path}: scores for {text!r} in {cat!r} have shape {arr.shape}, "
                        f"expected ({len(names)},)"
                    )
                by_text[normalize(text)] = arr
            categories[cat] = (names, by_text)
        return cls(categories)

    def labels(self, texts: Sequence[str], category: str) -> tuple[tuple[str, ...], np.ndarray]:
        if category not in self._categories:
            raise InputError(f"fixture has no label category {category!r}")
        names, by_text = self._categories[category]
        out = np.empty((len(texts), len(names)), dtype=np.float64)
        for i, text in enumerate(texts):
            key = normalize(text)
            if key not in by_text:
                raise InputError(f"fixture has no {category!r} labels for text {text!r}")
            out[i] = by_text[key]
        return names, out


class RemoteLabels:
    """Label vectors from the inference service's /labels endpoint."""

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ) -> None:
        self._url = endpoint.rstrip("/") + "/labels"
        self._timeout = timeout
        self._retries = retries
        self._backoff = backoff
        self._session = session

    def labels(self, texts: Sequence[str], category: str) -> tuple[tuple[str, ...], np.ndarray]:
        data = _post_json(
            self._url,
            {"texts": list(texts), "category": category},
            timeout=self._timeout,
            retries=self._retries,
            backoff=self._backoff,
            session=self._session,
        )
        schemas.validate_response(data, schemas.LABELS_RESPONSE, self._url)
        names = tuple(data["subclass_names"])
        # The wire format is one array per subclass; rows here are texts.
        scores = np.asarray(data["scores"], dtype=np.float64)
        if scores.shape != (len(names), len(texts)):
            raise TransportError(
                f"{self._url}: expected scores shape {(len(names), len(texts))}, "
                f"got {scores.shape}"
            )
        return names, scores.T.copy()
