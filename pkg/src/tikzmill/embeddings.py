"""Embedding-provider contract: how rendered figures become patch matrices.

Binary matrix file format (shared by both transports):

    bytes 0-7    magic b"TMEMB001"
    bytes 8-11   uint32 little-endian row count
    bytes 12-15  uint32 little-endian column count
    bytes 16-    rows*cols float32 little-endian, row-major

Transports:
  * file exchange: a subprocess is invoked with the image path and an output
    path and must write the matrix file;
  * HTTP: the image is POSTed base64-encoded and the response carries the
    same matrix bytes base64-encoded.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
import subprocess
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

MAGIC = b"TMEMB001"
HEADER = struct.Struct("<8sII")


class EmbeddingProviderError(RuntimeError):
    """Infrastructure failure while obtaining embeddings (not a sample failure)."""


def write_embedding_matrix(path: str | Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_embedding_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    return decode_embedding_matrix(data)


def decode_embedding_matrix(data: bytes) -> np.ndarray:
    if len(data) < HEADER.size:
        raise EmbeddingProviderError("embedding matrix payload shorter than header")
    magic, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EmbeddingProviderError(f"bad embedding matrix magic {magic!r}")
    expected = HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise EmbeddingProviderError(
            f"embedding matrix size mismatch: {len(data)} bytes, expected {expected}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    return flat.reshape(rows, cols).astype(np.float64)


def encode_embedding_matrix(matrix: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    return HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]) + arr.tobytes(order="C")


_MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}


def media_type_for(path: str | Path) -> str:
    return _MEDIA_TYPES.get(Path(path).suffix.lower(), "application/octet-stream")


@dataclass
class FileExchangeProvider:
    """Runs ``command`` with {image} and {out} placeholders, reads the matrix back."""

    command: list[str]
    name: str = "file-exchange"
    timeout_s: float = 120.0

    def embed(self, image_path: str | Path) -> np.ndarray:
        image_path = Path(image_path)
        out_path = image_path.with_suffix(image_path.suffix + ".emb")
        argv = [
            a.replace("{image}", str(image_path)).replace("{out}", str(out_path))
            for a in self.command
        ]
        try:
            proc = subprocess.run(
                argv, capture_output=True, timeout=self.timeout_s, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EmbeddingProviderError(f"provider command failed: {exc}") from exc
        if proc.returncode != 0:
            raise EmbeddingProviderError(
                f"provider exited {proc.returncode}: {proc.stderr[:500]!r}"
            )
        if not out_path.exists():
            raise EmbeddingProviderError("provider produced no matrix file")
        try:
            return read_embedding_matrix(out_path)
        finally:
            out_path.unlink(missing_ok=True)


@dataclass
class HttpEmbeddingProvider:
    """POSTs {"image_b64", "media_type"} and expects {"matrix_b64"} back."""

    url: str
    name: str = "http"
    timeout_s: float = 120.0

    def embed(self, image_path: str | Path) -> np.ndarray:
        payload = {
            "image_b64": base64.b64encode(Path(image_path).read_bytes()).decode("ascii"),
            "media_type": media_type_for(image_path),
        }
        try:
            resp = httpx.post(self.url, json=payload, timeout=self.timeout_s)
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise EmbeddingProviderError(f"embedding endpoint failed: {exc}") from exc
        if "matrix_b64" not in body:
            raise EmbeddingProviderError("embedding endpoint response missing matrix_b64")
        return decode_embedding_matrix(base64.b64decode(body["matrix_b64"]))


@dataclass
class MockEmbeddingProvider:
    """Deterministic stand-in for CI: embeddings derived from the image bytes.

    Identical images map to identical patch sets, so reward pipelines stay
    reproducible without any model inference.
    """

    patches: int = 9
    dim: int = 8
    name: str = "mock"

    def embed(self, image_path: str | Path) -> np.ndarray:
        digest = hashlib.sha256(Path(image_path).read_bytes()).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        mat = rng.normal(size=(self.patches, self.dim))
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        return mat / norms
