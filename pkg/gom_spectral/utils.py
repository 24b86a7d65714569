# -*- encoding: utf-8 -*-
"""Helper and utils functions"""
import hashlib
import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

import numpy as np

from .cache import BaseCache, DictCache, DummyCache, FileCache


def check_cache(cache: Union[BaseCache, bool, str, None]) -> BaseCache:
    """Coerce a user supplied cache setting into a cache object.

    A BaseCache is used as is, False gives an in-memory DictCache, None
    disables caching and a string is taken as a diskcache directory.
    """
    if isinstance(cache, BaseCache):
        return cache
    elif cache is False:
        return DictCache()
    elif cache is None:
        return DummyCache()
    elif isinstance(cache, (str, Path)):
        return FileCache(str(cache))
    else:
        raise ValueError("Provided cache must implement BaseCache")


def file_digest(path: Union[str, Path]) -> str:
    """sha256 hex digest of a file, read in chunks"""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_digest(config: Dict[str, Any]) -> str:
    """Stable short digest of a JSON-serialisable configuration"""
    payload = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


class StageTimer:
    """Collects wall-clock seconds per named stage"""

    def __init__(self) -> None:
        self.timings: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + (
                time.perf_counter() - start
            )

    def total(self, name: Optional[str] = None) -> float:
        if name is not None:
            return self.timings.get(name, 0.0)
        return sum(self.timings.values())


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Philox stream for (seed, key...); distinct keys give independent streams
    regardless of the order in which they are created"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))
