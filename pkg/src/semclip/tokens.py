"""Semantic token vectors: toy encoders, synthetic clusters and the feature cache.

Token batches are plain float32 arrays of shape ``(B, N)`` wrapped in a
:class:`TokenBatch` together with optional integer labels.  Tokens are kept
un-normalized; cosine similarity normalizes internally.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import FormatError, ShapeError

CACHE_MAGIC = b"SCTK"
CACHE_VERSION = 1
DTYPE_F32_LE = 1
# magic, version u16, N u32, count u64, dtype u8
_CACHE_HEADER = struct.Struct("<4sHIQB")


@dataclass(frozen=True)
class ImageSpec:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        for name in ("height", "width", "channels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"ImageSpec.{name} must be a positive integer, got {v!r}")

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    @classmethod
    def parse(cls, text: str) -> "ImageSpec":
        """Parse ``HxWxC`` (e.g. ``336x336x3``)."""
        try:
            h, w, c = (int(p) for p in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"image spec must look like HxWxC, got {text!r}") from None
        return cls(h, w, c)

    def __str__(self):
        return f"{self.height}x{self.width}x{self.channels}"


@dataclass
class TokenBatch:
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeError(f"token batch must be 2-D (B, N), got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("token batch contains non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.values),):
                raise ShapeError("labels must have one entry per row")
            if len(self.labels) and self.labels.min() < 0:
                raise ValueError("labels must be non-negative")

    def __len__(self):
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None or not len(self.labels) else int(self.labels.max()) + 1

    def subset(self, index) -> "TokenBatch":
        labels = None if self.labels is None else self.labels[index]
        return TokenBatch(self.values[index], labels)


class EncoderAdapter(Protocol):
    """Contract a pretrained vision-language model must satisfy to plug in.

    Nothing in the package requires an adapter; the toy encoders and the
    synthetic world cover every code path.
    """

    token_dim: int
    embed_dim: int

    def encode_images(self, images: Sequence[np.ndarray]) -> TokenBatch: ...

    def encode_text_embeddings(self, sequence, mask=None): ...

    def word_embeddings(self, text: str) -> np.ndarray: ...


def toy_image_encoder(image: np.ndarray, seed: int = 0, dim: int = 64,
                      spec: ImageSpec | None = None) -> np.ndarray:
    """Deterministic stand-in for a frozen image encoder.

    A seeded random affine projection of the flattened pixels followed by
    ``tanh``.  Returns a float32 vector of length ``dim``.
    """
    image = np.asarray(image, dtype=np.float64)
    if dim < 8:
        raise ValueError("toy encoder dimension must be at least 8")
    if spec is not None and image.shape != (spec.height, spec.width, spec.channels):
        raise ShapeError(f"image shape {image.shape} does not match {spec}")
    if image.ndim != 3:
        raise ShapeError(f"expected an HxWxC image, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite pixels")
    x = image.reshape(-1)
    rng = np.random.default_rng([seed, x.size, dim])
    w = rng.standard_normal((dim, x.size)) / np.sqrt(x.size)
    b = rng.standard_normal(dim)
    return np.tanh(w @ x + b).astype(np.float32)


def draw_centers(count: int, dim: int, rng: np.random.Generator,
                 basis: np.ndarray | None = None) -> np.ndarray:
    """Unit-norm Gaussian directions, optionally confined to ``span(basis)``.

    ``basis`` is a ``(dim, r)`` matrix with orthonormal columns.
    """
    if basis is None:
        c = rng.standard_normal((count, dim))
    else:
        c = rng.standard_normal((count, basis.shape[1])) @ basis.T
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def sample_around(centers: np.ndarray, per_class: int, spread: float,
                  rng: np.random.Generator, basis: np.ndarray | None = None,
                  labels: Sequence[int] | None = None) -> TokenBatch:
    """``per_class`` samples around each center with perturbation norm ~ ``spread``.

    Perturbations are isotropic Gaussian inside ``span(basis)`` (whole space
    when ``basis`` is None) with per-axis deviation ``spread / sqrt(rank)``.
    """
    g, n = centers.shape
    rank = n if basis is None else basis.shape[1]
    z = rng.standard_normal((g, per_class, rank)) * (spread / np.sqrt(rank))
    if basis is not None:
        z = z @ basis.T
    values = (centers[:, None, :] + z).reshape(g * per_class, n)
    if labels is None:
        labels = np.arange(g)
    return TokenBatch(values, np.repeat(np.asarray(labels), per_class))


def synth_cluster_tokens(G: int, per_class: int, N: int, spread: float, seed: int,
                         subspace_dim: int | None = None) -> TokenBatch:
    """Synthetic clustered tokens: ``G`` unit-norm centers plus Gaussian perturbation.

    Rows are grouped by class (labels ``[0]*per_class + [1]*per_class + ...``).
    With ``subspace_dim`` the centers and perturbations share a random
    ``subspace_dim``-dimensional subspace of R^N.
    """
    if G < 2:
        raise ValueError("need at least two classes")
    if per_class < 1:
        raise ValueError("per_class must be positive")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    basis = None
    if subspace_dim is not None:
        if not 1 <= subspace_dim <= N:
            raise ValueError("subspace_dim must lie in [1, N]")
        basis = random_basis(N, subspace_dim, rng)
    centers = draw_centers(G, N, rng, basis)
    return sample_around(centers, per_class, spread, rng, basis)


def random_basis(n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return q


def l2_normalize(v, axis: int = -1, eps: float = 0.0):
    """Scale ``v`` to unit L2 norm along ``axis``; zero vectors are rejected."""
    v = np.asarray(v)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm <= eps):
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def _labels_path(path: Path) -> Path:
    return path.with_name(path.name + ".labels")


def save_feature_cache(batch: TokenBatch, path) -> None:
    path = Path(path)
    values = np.ascontiguousarray(batch.values, dtype="<f4")
    count, n = values.shape
    with open(path, "wb") as f:
        f.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, count, DTYPE_F32_LE))
        f.write(values.tobytes(order="C"))
    labels_path = _labels_path(path)
    if batch.labels is not None:
        labels_path.write_text("".join(f"{int(l)}\n" for l in batch.labels))
    elif labels_path.exists():
        labels_path.unlink()


def read_cache_header(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read(_CACHE_HEADER.size)
    if len(raw) < _CACHE_HEADER.size:
        raise FormatError(f"{path}: file too short for a feature-cache header")
    magic, version, n, count, dtype = _CACHE_HEADER.unpack(raw)
    if magic != CACHE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    if dtype != DTYPE_F32_LE:
        raise FormatError(f"{path}: unsupported dtype tag {dtype}")
    return {"version": version, "dim": n, "count": count, "dtype": "f32-le"}


def load_feature_cache(path, expected_dim: int | None = None) -> TokenBatch:
    path = Path(path)
    header = read_cache_header(path)
    n, count = header["dim"], header["count"]
    if expected_dim is not None and n != expected_dim:
        raise FormatError(f"{path}: token dim {n} does not match expected {expected_dim}")
    payload = path.read_bytes()[_CACHE_HEADER.size:]
    expected = count * n * 4
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(count, n).astype(np.float32)
    labels = None
    labels_path = _labels_path(path)
    if labels_path.exists():
        labels = np.array([int(x) for x in labels_path.read_text().split()], dtype=np.int64)
        if len(labels) != count:
            raise FormatError(f"{labels_path}: {len(labels)} labels for {count} rows")
    return TokenBatch(values, labels)
