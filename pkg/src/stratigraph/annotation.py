"""Lineage annotations: a store of random differentiae plus a deposit counter.

Two storage strategies are provided.  A column keeps retained differentiae in
chronological order and deletes dropped entries by shifting down; a surface
is a fixed buffer of ``S`` sites where every deposit overwrites one site.
Neither stores ranks: they are recomputed from ``(policy, counter)``.

Counter conventions differ slightly, following creation semantics.  A column
deposits rank 0 when created, so a column with counter ``k`` holds ranks drawn
from ``0..k``.  A surface starts fully randomized with counter 0, and a surface
with counter ``k`` holds deposits of ranks ``0..k-1``.  Rank ``r`` of a
surface is therefore laid down in generation ``r + 1``; ``retained_generations``
reports both stores on that common generation scale.
"""

from __future__ import annotations

import numpy as np

from . import retention
from .retention import RetentionPolicy, parse_policy

__all__ = [
    "WIDTHS",
    "Annotation",
    "ColumnAnnotation",
    "SurfaceAnnotation",
    "create_annotation",
    "deposit",
    "retained_ranks",
    "differentia_draw",
    "differentia_draws",
    "FILL_STREAM",
    "DEPOSIT_STREAM",
]

WIDTHS = (1, 8, 32, 64)
_MASK64 = (1 << 64) - 1
_COUNTER_MAX = _MASK64
_LANES = {8: np.uint8, 32: np.uint32, 64: np.uint64}

FILL_STREAM = 1
DEPOSIT_STREAM = 2


# -- counter-keyed generator ------------------------------------------------


def _splitmix(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _splitmix_np(x: np.ndarray) -> np.ndarray:
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _key_base(seed: int, stream: int) -> int:
    return _splitmix(_splitmix(seed & _MASK64) ^ stream)


def _mask(width: int) -> int:
    return (1 << width) - 1


def differentia_draw(seed: int, key: int, width: int, stream: int = DEPOSIT_STREAM) -> int:
    """Pseudorandom differentia for ``key`` under ``seed``, masked to ``width``."""
    _check_width(width)
    return _splitmix(_key_base(seed, stream) ^ (key & _MASK64)) & _mask(width)


def differentia_draws(seed: int, keys, width: int, stream: int = DEPOSIT_STREAM) -> np.ndarray:
    """Vectorized ``differentia_draw`` over an integer array of keys."""
    _check_width(width)
    k = np.asarray(keys).astype(np.uint64) ^ np.uint64(_key_base(seed, stream))
    with np.errstate(over="ignore"):
        out = _splitmix_np(k)
    return out & np.uint64(_mask(width))


def _check_width(width: int) -> None:
    if width not in WIDTHS:
        raise ValueError(f"unsupported differentia width {width}; choose from {WIDTHS}")


# -- packed storage ---------------------------------------------------------


def _pack(values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.uint64)
    if width == 1:
        return np.packbits(values.astype(np.uint8) & 1)
    return values.astype(_LANES[width])


def _unpack(data: np.ndarray, n: int, width: int) -> np.ndarray:
    if width == 1:
        return np.unpackbits(data, count=n).astype(np.uint64)
    return data[:n].astype(np.uint64)


class Annotation:
    """Common behaviour of column and surface annotations."""

    storage = ""
    generation_offset = 0

    def __init__(
        self,
        policy: RetentionPolicy,
        width: int,
        counter: int,
        values,
    ) -> None:
        _check_width(width)
        self.policy = policy
        self.width = width
        self.counter = int(counter)
        values = np.asarray(values, dtype=np.uint64)
        if values.size and int(values.max()) > _mask(width):
            raise ValueError("differentia value exceeds width")
        self._n = int(values.size)
        self._data = _pack(values, width)

    # subclasses fill these in
    def site_ranks(self) -> list[int]:
        raise NotImplementedError

    def deposit(self, draw: int) -> None:
        raise NotImplementedError

    @property
    def n_sites(self) -> int:
        return self._n

    def values(self) -> np.ndarray:
        """Stored differentiae in storage order, as ``uint64``."""
        return _unpack(self._data, self._n, self.width)

    def retained_ranks(self) -> list[int]:
        return sorted(r for r in self.site_ranks() if r >= 0)

    def retained(self) -> tuple[np.ndarray, np.ndarray]:
        """Deposited ranks in increasing order with their differentiae."""
        ranks = np.asarray(self.site_ranks(), dtype=np.int64)
        vals = self.values()
        live = ranks >= 0
        ranks, vals = ranks[live], vals[live]
        order = np.argsort(ranks, kind="stable")
        return ranks[order], vals[order]

    def retained_generations(self) -> tuple[np.ndarray, np.ndarray]:
        """Like ``retained`` but keyed by the generation of each deposit."""
        ranks, vals = self.retained()
        return ranks + self.generation_offset, vals

    def copy(self):
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out._data = self._data.copy()
        return out

    def _check_counter(self) -> None:
        if self.counter >= _COUNTER_MAX:
            raise OverflowError("generation counter exhausted")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Annotation) or type(other) is not type(self):
            return NotImplemented
        return (
            self.policy == other.policy
            and self.width == other.width
            and self.counter == other.counter
            and self._n == other._n
            and np.array_equal(self._data, other._data)
            and getattr(self, "size", None) == getattr(other, "size", None)
        )

    __hash__ = None  # mutable

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(policy={self.policy}, width={self.width}, "
            f"counter={self.counter}, sites={self._n})"
        )


class ColumnAnnotation(Annotation):
    """Growable chronological store; entry ``i`` pairs with retained rank ``i``."""

    storage = "column"
    generation_offset = 0

    def __init__(self, policy, width, counter, values) -> None:
        super().__init__(parse_policy(policy), width, counter, values)
        expect = len(retention.enumerate_retained(self.policy, self.counter + 1))
        if self._n != expect:
            raise ValueError(f"column holds {self._n} entries, schedule expects {expect}")

    def site_ranks(self) -> list[int]:
        return retention.enumerate_retained(self.policy, self.counter + 1)

    def deposit(self, draw: int) -> None:
        self._check_counter()
        draw = int(draw) & _mask(self.width)
        G = self.counter + 1
        vals = self.values()
        if self.policy.kind != "keep-all":
            new = set(retention.enumerate_retained(self.policy, G + 1))
            old = retention.enumerate_retained(self.policy, G)
            keep = np.fromiter((r in new for r in old), dtype=bool, count=len(old))
            vals = vals[keep]
        vals = np.append(vals, np.uint64(draw))
        self._n = int(vals.size)
        self._data = _pack(vals, self.width)
        self.counter += 1


class SurfaceAnnotation(Annotation):
    """Fixed buffer of ``size`` sites, fully randomized at creation."""

    storage = "surface"
    generation_offset = 1

    def __init__(self, policy, width, counter, values) -> None:
        policy = parse_policy(policy)
        values = np.asarray(values, dtype=np.uint64)
        retention._check_surface(policy, int(values.size))
        super().__init__(policy, width, counter, values)
        self.size = self._n

    def site_ranks(self) -> list[int]:
        return retention.surface_site_ranks(self.policy, self.counter, self.size)

    def deposit(self, draw: int) -> None:
        self._check_counter()
        draw = int(draw) & _mask(self.width)
        site = retention.pick_deposition_site(self.policy, self.counter, self.size)
        if self.width == 1:
            byte, bit = divmod(site, 8)
            m = np.uint8(0x80 >> bit)
            self._data[byte] = (self._data[byte] | m) if draw else (self._data[byte] & ~m)
        else:
            self._data[site] = draw
        self.counter += 1


def create_annotation(
    policy: RetentionPolicy | str,
    width: int,
    capacity: int | None = None,
    seed: int = 0,
    storage: str | None = None,
) -> Annotation:
    """Fresh annotation with counter 0.

    Capped policies default to surface storage with ``capacity`` sites
    (``capacity`` defaults to the policy's own); unbounded policies always
    use a column.  A column draws its rank-0 differentia here.
    """
    policy = parse_policy(policy)
    _check_width(width)
    if storage is None:
        storage = "surface" if policy.capped else "column"
    if storage == "surface":
        size = policy.param if capacity is None else int(capacity)
        retention._check_surface(policy, size)
        fill = differentia_draws(seed, np.arange(size), width, stream=FILL_STREAM)
        return SurfaceAnnotation(policy, width, 0, fill)
    if storage != "column":
        raise ValueError(f"unknown storage {storage!r}")
    first = differentia_draw(seed, 0, width, stream=FILL_STREAM)
    return ColumnAnnotation(policy, width, 0, [first])


def deposit(annotation: Annotation, rng_draw: int) -> Annotation:
    """Return a copy of ``annotation`` with one more deposit."""
    out = annotation.copy()
    out.deposit(rng_draw)
    return out


def retained_ranks(annotation: Annotation) -> list[int]:
    return annotation.retained_ranks()
