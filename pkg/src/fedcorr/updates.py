"""Model-update containers and vector <-> matrix reshaping.

A flat update of length ``d`` is laid out as an ``m x n`` matrix whose
columns ("slices") are consecutive segments of the vector, zero-padded at the
tail when ``m * n > d``. Convolution kernels instead use a labelled axis
partition: the source tensor is read in (O, I, H, W) order, row axes index
matrix rows and the remaining axes index columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fedcorr.errors import InvalidInput, ShapeMismatch

CONV_AXES = ("O", "I", "H", "W")


def as_vector(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or g.size < 1:
        raise InvalidInput(f"expected a non-empty 1-D vector, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise InvalidInput("vector contains non-finite entries")
    return g


@dataclass(frozen=True)
class ReshapeSpec:
    """How a flat update maps onto an ``m x n`` update matrix.

    ``source_shape`` is a tuple of ``(label, length)`` pairs. A flat vector
    uses the single label ``FLAT`` and empty axis partitions.
    """

    m: int
    n: int
    source_shape: tuple = ()
    row_axes: tuple = ()
    col_axes: tuple = ()

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidInput(f"m and n must be positive, got {self.m}x{self.n}")
        if self.row_axes:
            lengths = dict(self.source_shape)
            if math.prod(lengths[a] for a in self.row_axes) != self.m:
                raise InvalidInput("row axes do not multiply to m")
            if math.prod(lengths[a] for a in self.col_axes) != self.n:
                raise InvalidInput("column axes do not multiply to n")

    @property
    def is_conv(self) -> bool:
        return bool(self.row_axes)

    @property
    def size(self) -> int:
        return self.m * self.n


def flat_spec(d: int, m: int | None = None, n: int | None = None) -> ReshapeSpec:
    """Spec for a plain vector of length ``d``.

    Given only ``m``, ``n = ceil(d / m)``; given only ``n``, ``m = ceil(d / n)``;
    given neither, the vector becomes a single column.
    """
    if d < 1:
        raise InvalidInput("d must be positive")
    if m is None and n is None:
        m, n = d, 1
    elif n is None:
        n = -(-d // m)
    elif m is None:
        m = -(-d // n)
    if m * n < d:
        raise ShapeMismatch(f"{m}x{n} matrix cannot hold {d} entries")
    return ReshapeSpec(m=m, n=n, source_shape=(("FLAT", d),))


def conv_axis_spec(o: int, i: int, h: int, w: int, row_axes) -> ReshapeSpec:
    """Partition the four kernel axes into matrix rows and columns.

    >>> s = conv_axis_spec(256, 512, 3, 3, {"I", "W"})
    >>> (s.m, s.n)
    (1536, 768)
    """
    row_set = set(row_axes)
    if not row_set or not row_set < set(CONV_AXES):
        raise InvalidInput(f"row_axes must be a non-empty proper subset of {CONV_AXES}")
    lengths = dict(zip(CONV_AXES, (o, i, h, w)))
    if any(v < 1 for v in lengths.values()):
        raise InvalidInput("axis lengths must be positive")
    rows = tuple(a for a in CONV_AXES if a in row_set)
    cols = tuple(a for a in CONV_AXES if a not in row_set)
    return ReshapeSpec(
        m=math.prod(lengths[a] for a in rows),
        n=math.prod(lengths[a] for a in cols),
        source_shape=tuple(lengths.items()),
        row_axes=rows,
        col_axes=cols,
    )


@dataclass(frozen=True)
class UpdateMatrix:
    g_mat: np.ndarray
    spec: ReshapeSpec
    pad_count: int

    def slice(self, i: int) -> np.ndarray:
        return self.g_mat[:, i]

    @property
    def d(self) -> int:
        return self.spec.size - self.pad_count


def _conv_permutation(spec: ReshapeSpec):
    labels = [a for a, _ in spec.source_shape]
    return [labels.index(a) for a in spec.row_axes + spec.col_axes]


def reshape_to_matrix(g, spec: ReshapeSpec) -> UpdateMatrix:
    """Lay ``g`` out as the ``m x n`` update matrix described by ``spec``."""
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if spec.size < d:
        raise ShapeMismatch(f"{spec.m}x{spec.n} matrix cannot hold {d} entries")
    if spec.is_conv:
        if spec.size != d:
            raise ShapeMismatch(f"kernel of {spec.size} entries, update has {d}")
        tensor = g.reshape([n for _, n in spec.source_shape])
        mat = tensor.transpose(_conv_permutation(spec)).reshape(spec.m, spec.n)
        return UpdateMatrix(np.ascontiguousarray(mat), spec, 0)
    padded = np.zeros(spec.size)
    padded[:d] = g
    mat = padded.reshape(spec.m, spec.n, order="F")
    return UpdateMatrix(np.ascontiguousarray(mat), spec, spec.size - d)


def matrix_from_columns(cols: np.ndarray, like: UpdateMatrix) -> UpdateMatrix:
    return UpdateMatrix(np.asarray(cols, dtype=np.float64), like.spec, like.pad_count)


def flatten_from_matrix(gm: UpdateMatrix) -> np.ndarray:
    """Inverse of :func:`reshape_to_matrix`; drops the padding."""
    spec = gm.spec
    if spec.is_conv:
        lengths = dict(spec.source_shape)
        perm = _conv_permutation(spec)
        tensor = gm.g_mat.reshape([lengths[a] for a in spec.row_axes + spec.col_axes])
        return tensor.transpose(np.argsort(perm)).reshape(-1).copy()
    flat = gm.g_mat.reshape(-1, order="F")
    return flat[: flat.size - gm.pad_count].copy()
