# -*- encoding: utf-8 -*-
"""Caches for per-replication results of the batch runners.

A replication is fully determined by its scenario, its index and the
estimator configuration, so its metric record can be stored and replayed
when a bench is rerun or resumed after an interruption."""
import hashlib
import json
import logging
from typing import Any, Callable, Dict

LOGGER = logging.getLogger(__name__)

KEY_PREFIX = "ggom_"


def result_key(key: Any) -> str:
    """Digest of a JSON-like replication key; dict order does not matter"""
    payload = json.dumps(key, sort_keys=True, default=str).encode("utf-8")
    # prefix keeps result keys apart if the cache directory is shared
    return KEY_PREFIX + hashlib.sha256(payload).hexdigest()


class BaseCache(object):
    """Interface shared by every replication cache"""

    def set(self, key, value):
        """Store the records of one replication"""
        raise NotImplementedError

    def get(self, key, default=None):
        """Stored records for key, or default"""
        raise NotImplementedError

    def invalidate(self, key):
        """Forget one replication"""
        raise NotImplementedError

    def get_or_compute(self, key, compute: Callable[[], Any]):
        """Return the cached value for key, computing and storing it on a miss."""
        missing = object()
        value = self.get(key, missing)
        if value is not missing:
            LOGGER.debug(f"Replication cache hit {result_key(key)}")
            return value
        value = compute()
        self.set(key, value)
        return value


class FileCache(BaseCache):
    """Replication cache on disk, backed by diskcache.Cache
    see http://www.grantjenks.com/docs/diskcache/api.html#cache
    """

    def __init__(self, path, **settings):
        """Constructor

        Arguments:
            path {String} -- The directory holding the cache files
            settings {dict} -- The settings values for diskcache
        """
        from diskcache import Cache

        self._store = Cache(path, **settings)
        LOGGER.info(f"Using replication cache at {path}")

    def __del__(self):
        store = getattr(self, "_store", None)
        if store is not None:
            store.close()

    def __len__(self):
        return len(self._store)

    def set(self, key, value):
        self._store.set(result_key(key), value)

    def get(self, key, default=None):
        return self._store.get(result_key(key), default)

    def invalidate(self, key):
        self._store.delete(result_key(key))


class DictCache(BaseCache):
    """In-process replication cache"""

    def __init__(self):
        self._records: Dict[str, Any] = {}

    def __len__(self):
        return len(self._records)

    def get(self, key, default=None):
        return self._records.get(result_key(key), default)

    def set(self, key, value):
        self._records[result_key(key)] = value

    def invalidate(self, key):
        self._records.pop(result_key(key), None)

    def clear(self):
        self._records.clear()


class DummyCache(BaseCache):
    """Stores nothing; every replication is recomputed"""

    def get(self, key, default=None):
        return default

    def set(self, key, value):
        return None

    def invalidate(self, key):
        return None
