"""Dataset parsers and synthetic generators.

Parsers return dense arrays. LIBSVM rows are densified at parse time and IDX
tensors come back as ``uint8`` arrays with the declared shape.
"""

from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedcorr.errors import InvalidInput, ParseError

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803


@dataclass
class LabeledDataset:
    """Feature matrix (one sample per row) with integer labels.

    ``groups`` optionally assigns each sample to a cluster that partitioning
    treats like a class label; it defaults to the labels themselves.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInput("features must be (N, f) with one label per row")
        if self.groups is not None and len(self.groups) != len(self.labels):
            raise InvalidInput("one group id per sample required")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def partition_keys(self) -> np.ndarray:
        return self.labels if self.groups is None else self.groups

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        groups = None if self.groups is None else self.groups[idx]
        return LabeledDataset(self.features[idx], self.labels[idx], groups, dict(self.meta))


def to_pm1(labels) -> np.ndarray:
    """Map ``{0, 1}`` labels to ``{-1, +1}``; ``±1`` labels pass through."""
    labels = np.asarray(labels)
    values = set(np.unique(labels).tolist())
    if values <= {-1, 1}:
        return labels.astype(np.int64)
    if values <= {0, 1}:
        return np.where(labels > 0, 1, -1).astype(np.int64)
    raise InvalidInput(f"cannot map labels {sorted(values)} to ±1")


# -- LIBSVM ------------------------------------------------------------------


def _parse_label(tok: str, lineno: int):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", lineno) from None
    return int(val) if val.is_integer() else val


def parse_libsvm(stream, dim: int | None = None) -> LabeledDataset:
    """Parse ``label idx:val idx:val ...`` lines with 1-based ascending indices.

    Parameters
    ----------
    stream : text file object, or str holding the whole file
    dim : int, optional
        Declared feature dimension. Inferred from the largest index if omitted.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels = []
    rows = []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_parse_label(toks[0], lineno))
        idx, vals = [], []
        for tok in toks[1:]:
            key, sep, value = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                i = int(key)
                v = float(value)
            except ValueError:
                raise ParseError(f"malformed feature {tok!r}", lineno) from None
            if i < 1:
                raise ParseError(f"index {i} is not 1-based", lineno)
            if idx and i <= idx[-1]:
                raise ParseError(f"index {i} does not ascend", lineno)
            if dim is not None and i > dim:
                raise ParseError(f"index {i} exceeds declared dimension {dim}", lineno)
            idx.append(i)
            vals.append(v)
        rows.append((idx, vals))
    if dim is None:
        dim = max((r[0][-1] for r in rows if r[0]), default=0)
    features = np.zeros((len(rows), dim))
    for row, (idx, vals) in enumerate(rows):
        if idx:
            features[row, np.asarray(idx) - 1] = vals
    return LabeledDataset(features, np.asarray(labels))


def serialize_libsvm(ds: LabeledDataset) -> str:
    out = []
    for x, y in zip(ds.features, ds.labels):
        label = f"{int(y):+d}" if float(y).is_integer() else repr(float(y))
        feats = [f"{i + 1}:{float(x[i])!r}" for i in np.flatnonzero(x)]
        out.append(" ".join([label, *feats]))
    return "\n".join(out) + "\n"


# -- IDX ---------------------------------------------------------------------


def parse_idx(stream) -> np.ndarray:
    """Read an IDX label (``0x801``) or image (``0x803``) file of unsigned bytes.

    Gzip-compressed input is detected and inflated transparently.
    """
    data = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 4:
        raise ParseError("file shorter than the magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_LABELS:
        ndim = 1
    elif magic == IDX_IMAGES:
        ndim = 3
    else:
        raise ParseError(f"bad magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ParseError("truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims))
    payload = data[header:]
    if len(payload) < count:
        raise ParseError(f"header declares {count} bytes of data, found {len(payload)}")
    if len(payload) > count:
        raise ParseError(f"{len(payload) - count} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def serialize_idx(array) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8 or array.ndim not in (1, 3):
        raise InvalidInput("IDX output supports uint8 arrays with 1 or 3 dimensions")
    magic = IDX_LABELS if array.ndim == 1 else IDX_IMAGES
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """Row-stochastic (dst, src) matrix averaging the source span of each output pixel."""
    edges = np.linspace(0.0, src, dst + 1)
    out = np.zeros((dst, src))
    for i in range(dst):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            out[i, j] = min(hi, j + 1) - max(lo, j)
    return out / out.sum(axis=1, keepdims=True)


def load_mnist(images_path, labels_path, limit: int | None = None, side: int | None = None):
    """MNIST-style IDX pair as a dataset with pixels scaled to ``[0, 1]``.

    ``side`` area-resamples each image to ``side x side`` before flattening.
    """
    images = parse_idx(Path(images_path).read_bytes())
    labels = parse_idx(Path(labels_path).read_bytes())
    if images.shape[0] != labels.shape[0]:
        raise ParseError("image and label counts differ")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.astype(np.float64) / 255.0
    if side is not None and side != x.shape[1]:
        rows = _area_matrix(x.shape[1], side)
        cols = _area_matrix(x.shape[2], side)
        x = np.einsum("ij,njk,lk->nil", rows, x, cols)
    return LabeledDataset(x.reshape(x.shape[0], -1), labels.astype(np.int64))


# -- synthetic ---------------------------------------------------------------


def synth_linreg(n: int, d: int, noise: float = 0.1, seed: int = 0) -> LabeledDataset:
    """Linear-regression data ``y = [xi; 1]^T x_true + noise``.

    ``d`` counts the model parameters, so features have ``d - 1`` columns and
    the last parameter is the bias. ``meta['x_true']`` holds the ground truth.
    """
    if n < 1 or d < 1:
        raise InvalidInput("n and d must be positive")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(d)
    xi = rng.standard_normal((n, d - 1))
    y = xi @ x_true[:-1] + x_true[-1] + noise * rng.standard_normal(n)
    return LabeledDataset(xi, y, meta={"x_true": x_true, "task": "linreg"})


def synth_logreg(
    n: int, d: int, margin: float = 0.1, seed: int = 0, groups: int = 10, spread: float = 2.0
) -> LabeledDataset:
    """Two-class data separable by a hyperplane through the origin with a margin.

    Samples come from ``groups`` Gaussian clusters (centres scaled by
    ``spread``); the cluster id is stored in ``groups`` so a label-limited
    partition can hand each client only a few clusters. Labels are ``±1``.
    """
    if n < 1 or d < 1:
        raise InvalidInput("n and d must be positive")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    centres = spread * rng.standard_normal((groups, d))
    gid = rng.integers(0, groups, size=n)
    xi = centres[gid] + rng.standard_normal((n, d))
    score = xi @ w
    labels = np.where(score >= 0, 1, -1)
    short = np.abs(score) < margin
    xi[short] += np.outer(labels[short] * margin - score[short], w)
    return LabeledDataset(xi, labels, groups=gid, meta={"w_true": w, "task": "logreg"})
