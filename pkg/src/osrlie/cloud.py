"""Point cloud data model shared by every pipeline stage.

A cloud is stored column-wise: one ``(n, 3)`` coordinate array in feet plus
optional per-point columns (intensity mark, truth label, ground flag, LIE
feature, predicted label).  Point identity is the row index assigned at
ingestion; stages exchange :class:`IndexSet` objects or per-index arrays and
never reorder rows.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyInput


class Label(enum.IntEnum):
    GROUND = 0
    TREE = 1
    HUMAN_MADE = 2
    HUMAN_MADE_1 = 3
    HUMAN_MADE_2 = 4

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Label":
        try:
            return _FROM_TOKEN[token.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown label {token!r}") from None

    def collapsed(self) -> "Label":
        """Map the human-made subclasses onto HUMAN_MADE."""
        return Label.HUMAN_MADE if self >= Label.HUMAN_MADE else self


_TOKENS = {
    Label.GROUND: "ground",
    Label.TREE: "tree",
    Label.HUMAN_MADE: "human",
    Label.HUMAN_MADE_1: "human_1",
    Label.HUMAN_MADE_2: "human_2",
}
_FROM_TOKEN = {v: k for k, v in _TOKENS.items()}

TRUTH_LABELS = (Label.GROUND, Label.TREE, Label.HUMAN_MADE)


def collapse_labels(labels: np.ndarray) -> np.ndarray:
    """Vectorised :meth:`Label.collapsed`."""
    return np.minimum(np.asarray(labels, dtype=np.int8), int(Label.HUMAN_MADE))


class IndexSet:
    """Sorted, unique, immutable set of point indices."""

    __slots__ = ("_idx",)

    def __init__(self, indices: Iterable[int] = ()):
        idx = np.unique(np.asarray(list(indices) if not isinstance(indices, np.ndarray)
                                   else indices, dtype=np.int64))
        if idx.size and idx[0] < 0:
            raise IndexError(f"negative index {idx[0]}")
        idx.setflags(write=False)
        self._idx = idx

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "IndexSet":
        return cls(np.flatnonzero(np.asarray(mask, dtype=bool)))

    @classmethod
    def full(cls, n: int) -> "IndexSet":
        return cls(np.arange(n, dtype=np.int64))

    @property
    def indices(self) -> np.ndarray:
        return self._idx

    def mask(self, n: int) -> np.ndarray:
        self.check(n)
        m = np.zeros(n, dtype=bool)
        m[self._idx] = True
        return m

    def complement(self, n: int) -> "IndexSet":
        return IndexSet(np.flatnonzero(~self.mask(n)))

    def check(self, n: int) -> None:
        if self._idx.size and self._idx[-1] >= n:
            raise IndexError(f"index {int(self._idx[-1])} out of range for n={n}")

    def __contains__(self, i) -> bool:
        pos = np.searchsorted(self._idx, i)
        return bool(pos < self._idx.size and self._idx[pos] == i)

    def __len__(self) -> int:
        return int(self._idx.size)

    def __iter__(self):
        return iter(self._idx.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndexSet):
            return NotImplemented
        return np.array_equal(self._idx, other._idx)

    def __hash__(self):
        return hash(self._idx.tobytes())

    def __repr__(self) -> str:
        if len(self) <= 8:
            return f"IndexSet({self._idx.tolist()})"
        return f"IndexSet(<{len(self)} indices>)"


@dataclass(frozen=True)
class AxisBounds:
    min: np.ndarray
    max: np.ndarray

    def contains(self, other: "AxisBounds") -> bool:
        return bool(np.all(self.min <= other.min) and np.all(other.max <= self.max))


def _frozen(a, dtype, n, name):
    if a is None:
        return None
    a = np.array(a, dtype=dtype)
    if a.shape[0] != n:
        raise ValueError(f"{name} has {a.shape[0]} rows, expected {n}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable column store of point records.

    ``xyz`` is an ``(n, 3)`` float64 array.  Optional columns are ``None`` when
    absent.  ``v`` holds NaN for points without a feature; ``source_index``
    maps rows of a sub-cloud back to the cloud it was selected from.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    truth: Optional[np.ndarray] = None
    ground: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    predicted: Optional[np.ndarray] = None
    source_index: Optional[np.ndarray] = None
    allow_empty: dataclasses.InitVar[bool] = False

    def __post_init__(self, allow_empty):
        xyz = np.array(self.xyz, dtype=np.float64)
        if xyz.ndim == 1 and xyz.size == 3:
            xyz = xyz.reshape(1, 3)
        if xyz.size == 0:
            xyz = xyz.reshape(0, 3)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must have shape (n, 3), got {xyz.shape}")
        n = xyz.shape[0]
        if n == 0 and not allow_empty:
            raise EmptyInput("a point cloud needs at least one point")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("non-finite coordinate in point cloud")
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)

        intensity = _frozen(self.intensity, np.float64, n, "intensity")
        if intensity is not None and not (np.all(np.isfinite(intensity)) and np.all(intensity >= 0)):
            raise ValueError("intensity must be finite and nonnegative")
        object.__setattr__(self, "intensity", intensity)

        truth = _frozen(self.truth, np.int8, n, "truth")
        if truth is not None and np.any((truth < 0) | (truth > Label.HUMAN_MADE)):
            raise ValueError("truth labels must be ground, tree or human")
        object.__setattr__(self, "truth", truth)

        predicted = _frozen(self.predicted, np.int8, n, "predicted")
        if predicted is not None and np.any((predicted < 0) | (predicted > Label.HUMAN_MADE_2)):
            raise ValueError("invalid predicted label code")
        object.__setattr__(self, "predicted", predicted)

        object.__setattr__(self, "ground", _frozen(self.ground, bool, n, "ground"))
        object.__setattr__(self, "v", _frozen(self.v, np.float64, n, "v"))
        object.__setattr__(self, "source_index", _frozen(self.source_index, np.int64, n, "source_index"))

    @property
    def n(self) -> int:
        return self.xyz.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def usable(self) -> bool:
        return self.n > 0

    @property
    def x(self) -> np.ndarray:
        return self.xyz[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.xyz[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]

    def replace(self, **changes) -> "PointCloud":
        """Return a copy with some columns swapped out."""
        fields = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        fields.update(changes)
        return PointCloud(**fields, allow_empty=self.n == 0)

    def ground_set(self) -> IndexSet:
        if self.ground is None:
            raise AttributeError("cloud has no ground column")
        return IndexSet.from_mask(self.ground)

    def nonground_set(self) -> IndexSet:
        if self.ground is None:
            raise AttributeError("cloud has no ground column")
        return IndexSet.from_mask(~self.ground)


def bounds(cloud: PointCloud) -> AxisBounds:
    if cloud.n == 0:
        raise EmptyInput("bounds of an empty cloud")
    return AxisBounds(cloud.xyz.min(axis=0), cloud.xyz.max(axis=0))


def select(cloud: PointCloud, index_set: IndexSet) -> PointCloud:
    """Sub-cloud of the records in ``index_set``, order preserved.

    The returned cloud's ``source_index`` holds each record's index in the
    original cloud (composed through nested selections).
    """
    if not isinstance(index_set, IndexSet):
        index_set = IndexSet(index_set)
    index_set.check(cloud.n)
    idx = index_set.indices
    source = idx if cloud.source_index is None else cloud.source_index[idx]

    def take(col):
        return None if col is None else col[idx]

    return PointCloud(
        cloud.xyz[idx],
        intensity=take(cloud.intensity),
        truth=take(cloud.truth),
        ground=take(cloud.ground),
        v=take(cloud.v),
        predicted=take(cloud.predicted),
        source_index=source,
        allow_empty=True,
    )
