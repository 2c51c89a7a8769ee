import asyncio
import time
from typing import Callable, Iterable, TypeVar

from loguru import logger

T = TypeVar("T")
R = TypeVar("R")


async def _bounded_gather(fn: Callable[[T], R], items: list[T], concurrency: int, label: str) -> list[R]:
    semaphore = asyncio.Semaphore(concurrency)
    done = 0
    start = time.monotonic()

    async def run_one(item: T) -> R:
        nonlocal done
        async with semaphore:
            result = await asyncio.to_thread(fn, item)
        done += 1
        if done % 50 == 0 or done == len(items):
            elapsed = time.monotonic() - start
            logger.info(f"{label}: {done}/{len(items)} done in {elapsed:.2f}s")
        return result

    # gather keeps input order, so results are deterministic
    return await asyncio.gather(*(run_one(item) for item in items))


def run_bounded(fn: Callable[[T], R], items: Iterable[T], threads: int = 1, *, label: str = "work") -> list[R]:
    """Apply fn to every item with at most `threads` calls in flight; results follow input order."""
    items = list(items)
    threads = max(1, threads)
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.info(f"{label}: {len(items)} items on {threads} workers")
    return asyncio.run(_bounded_gather(fn, items, threads, label))


__all__ = ["run_bounded"]
