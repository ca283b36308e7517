"""Shared numeric helpers, the fitness-problem contract and RNG streams."""

from __future__ import annotations

import abc
import functools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FitnessProblem",
    "RngStream",
    "SparsityMask",
    "as_param_vector",
    "derive_stream",
    "feature_group_norms",
    "l0_norm",
    "pairwise_sum",
]

_U64 = 1 << 64


def as_param_vector(values, name: str = "theta") -> np.ndarray:
    """Return ``values`` as a fresh finite float64 vector of length >= 1."""
    v = np.array(values, dtype=np.float64, copy=True)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def l0_norm(v) -> int:
    """Number of exactly-nonzero entries (no tolerance)."""
    return int(np.count_nonzero(np.asarray(v)))


def feature_group_norms(theta, group_size: int) -> np.ndarray:
    """L1 norm of each consecutive block of ``group_size`` coordinates.

    The last block may be shorter than ``group_size``.
    """
    if int(group_size) != group_size or group_size < 1:
        raise ValueError(f"group_size must be a positive integer, got {group_size!r}")
    a = np.abs(np.asarray(theta, dtype=np.float64))
    return np.add.reduceat(a, np.arange(0, a.size, int(group_size)))


def pairwise_sum(rows: Sequence[np.ndarray]) -> np.ndarray:
    """Sum ``rows`` with a fixed balanced binary tree over their index order.

    The association order depends only on ``len(rows)``, so the result is
    identical no matter which thread produced which row.
    """
    if len(rows) == 0:
        raise ValueError("cannot sum an empty sequence")
    level = [np.asarray(r, dtype=np.float64) for r in rows]
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0].copy()


@dataclass(frozen=True)
class SparsityMask:
    """Sorted support of a vector together with its sparsity capacity."""

    support: tuple[int, ...]
    k: int
    d: int

    def __post_init__(self):
        s = tuple(int(i) for i in self.support)
        object.__setattr__(self, "support", s)
        if not 1 <= self.k <= self.d:
            raise ValueError(f"capacity k={self.k} must lie in [1, d={self.d}]")
        if len(s) > self.k:
            raise ValueError(f"support of size {len(s)} exceeds capacity {self.k}")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("support indices must be strictly increasing")
        if s and (s[0] < 0 or s[-1] >= self.d):
            raise ValueError(f"support indices must lie in [0, {self.d})")

    @classmethod
    def of(cls, v, k: int | None = None) -> "SparsityMask":
        v = np.asarray(v)
        support = tuple(np.flatnonzero(v).tolist())
        return cls(support, k if k is not None else max(1, len(support)), v.size)

    def __contains__(self, i) -> bool:
        return int(i) in set(self.support)

    def __len__(self) -> int:
        return len(self.support)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------
#
# A stream is identified by (base_seed, path).  The last three path entries
# become words 1..3 of a Philox-4x64 counter (word 0 counts draws inside the
# stream); the path length and any earlier entries are hashed into the Philox
# key through SeedSequence.  Streams with different paths therefore never share
# counter blocks, and nothing depends on creation order.


@functools.lru_cache(maxsize=4096)
def _philox_key(base_seed: int, length: int, prefix: tuple[int, ...]) -> tuple[int, int]:
    ss = np.random.SeedSequence(base_seed, spawn_key=(length,) + prefix)
    k0, k1 = ss.generate_state(2, np.uint64)
    return int(k0), int(k1)


@functools.lru_cache(maxsize=4096)
def _philox_key_array(base_seed: int, length: int, prefix: tuple[int, ...]) -> np.ndarray:
    key = np.array(_philox_key(base_seed, length, prefix), dtype=np.uint64)
    key.flags.writeable = False
    return key


def _check_u64(x, what: str) -> int:
    if isinstance(x, (bool, np.bool_)) or int(x) != x:
        raise TypeError(f"{what} must be an integer, got {x!r}")
    x = int(x)
    if not 0 <= x < _U64:
        raise ValueError(f"{what} must fit in an unsigned 64-bit integer, got {x}")
    return x


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by ``(base_seed, path)``."""

    base_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base_seed", _check_u64(self.base_seed, "base_seed"))
        object.__setattr__(
            self, "path", tuple(_check_u64(p, "path index") for p in self.path)
        )

    def child(self, *indices: int) -> "RngStream":
        return self._extend(tuple(_check_u64(i, "path index") for i in indices))

    def _extend(self, indices: tuple[int, ...]) -> "RngStream":
        # trusted fast path: ``indices`` are already valid u64 Python ints
        out = object.__new__(RngStream)
        object.__setattr__(out, "base_seed", self.base_seed)
        object.__setattr__(out, "path", self.path + indices)
        return out

    def _key_counter(self):
        p = self.path
        key = _philox_key_array(self.base_seed, len(p), p[:-3])
        tail = (0, 0, 0) + p[-3:]
        return key, np.array((0, tail[-3], tail[-2], tail[-1]), dtype=np.uint64)

    def generator(self, reuse: np.random.Generator | None = None) -> np.random.Generator:
        """A generator positioned at the start of this stream.

        Passing ``reuse`` (a Philox-backed generator previously returned by
        this method) rewinds it in place instead of building a new one, which
        is several times cheaper in tight loops.  Draws are identical either way.
        """
        key, counter = self._key_counter()
        if reuse is None:
            return np.random.Generator(np.random.Philox(key=key, counter=counter))
        bg = reuse.bit_generator
        if not isinstance(bg, np.random.Philox):
            raise TypeError("only Philox-backed generators can be rewound")
        bg.state = {
            "bit_generator": "Philox",
            "state": {"counter": counter, "key": key},
            "buffer": _EMPTY_BUFFER,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return reuse


_EMPTY_BUFFER = np.zeros(4, dtype=np.uint64)
_EMPTY_BUFFER.flags.writeable = False


def derive_stream(base_seed: int, path: Iterable[int] = ()) -> RngStream:
    """Stream for ``path`` under ``base_seed``; pure in both arguments."""
    return RngStream(base_seed, tuple(path))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# Fitness-problem contract
# ---------------------------------------------------------------------------


class FitnessProblem(abc.ABC):
    """A stochastic fitness ``F(theta) = E f_tau(theta)`` to be maximized.

    Subclasses implement :meth:`rollout`, which must be a pure function of
    ``theta`` and the generator state.  ``bound_B`` (``|F| <= B``) and
    ``var_bound_C`` (``Var f_tau <= C``) are ``None`` when unknown or
    unbounded.  Closed forms are optional and return ``None`` when absent.
    """

    dim: int
    bound_B: float | None = None
    var_bound_C: float | None = None
    #: rollout ignores its generator entirely (C = 0)
    deterministic: bool = False

    @abc.abstractmethod
    def rollout(self, theta: np.ndarray, rng: np.random.Generator) -> float:
        """Return one sampled cumulative reward ``f_tau(theta)``."""

    def rollout_batch(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One rollout per row of ``thetas``, drawn in row order from ``rng``."""
        return np.array([self.rollout(th, rng) for th in np.atleast_2d(thetas)])

    def rollout_streams(self, thetas: np.ndarray, streams) -> np.ndarray:
        """Row ``k`` of ``thetas`` rolled out on ``streams[k]``.

        Equal to ``[rollout(thetas[k], streams[k].generator()) ...]``; subclasses
        may vectorize, but row ``k`` must not depend on the other rows.
        """
        thetas = np.atleast_2d(thetas)
        return np.array([self.rollout(th, s.generator()) for th, s in zip(thetas, streams)])

    def exact_expectation(self, theta) -> float | None:
        return None

    def exact_smoothed(self, theta, sigma: float) -> tuple[float, np.ndarray] | None:
        return None

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected theta of shape ({self.dim},), got {theta.shape}")
        return theta
