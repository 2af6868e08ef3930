"""Deterministic seeded randomness and parallel evaluation helpers.

Every randomized routine in the package takes an explicit integer seed and
derives private streams with `derive_rng`, so results never depend on call
order, thread count, or interpreter hash randomization.
"""

from __future__ import annotations

import os
import random
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "BLOWPACK_THREADS"


def derive_rng(seed: int, *tags: object) -> random.Random:
    """Return an RNG keyed by (seed, tags). str-seeding is stable across runs."""
    key = str(int(seed)) + "/" + "/".join(str(t) for t in tags)
    return random.Random(key)


def derive_seed(seed: int, *tags: object) -> int:
    return derive_rng(seed, *tags).getrandbits(63)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    return max(1, k)


def pmap(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map `fn` over `items`, in parallel if BLOWPACK_THREADS > 1.

    Results are returned in input order, so output is identical for every
    thread count provided `fn(item)` itself is deterministic.
    """
    items = list(items)
    k = thread_count()
    if k <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, items))


def sample_masks(rng: random.Random, universe: int, size: int) -> int:
    """Bitmask of a uniform `size`-subset of range(universe)."""
    chosen = rng.sample(range(universe), size)
    m = 0
    for c in chosen:
        m |= 1 << c
    return m


def mask_to_list(mask: int) -> list[int]:
    out = []
    while mask:
        out.append((mask & -mask).bit_length() - 1)
        mask &= mask - 1
    return out


def list_to_mask(ids: Iterable[int]) -> int:
    m = 0
    for i in ids:
        m |= 1 << i
    return m
