# src/utils/caching.py

import abc
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict

logger = logging.getLogger(__name__)

CACHE_SCHEMA_VERSION = 1


def settings_fingerprint(settings: Dict[str, Any]) -> str:
    """Short stable digest of the settings a cached result depends on."""
    encoded = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(encoded).hexdigest()[:16]


class CacheManager(abc.ABC):
    """
    Interface for storing solved grid points between pipeline runs.

    The pipeline only talks to `load` and `save` with a grid-point key, so
    experiments can run with a persistent cache or with caching switched off.
    """

    @abc.abstractmethod
    def load(self, key: str) -> Dict[str, Any] | None:
        """Returns the cached payload for `key`, or None on a miss."""

    @abc.abstractmethod
    def save(self, key: str, data: Dict[str, Any]) -> None:
        """Stores `data` under `key`."""


class FileSystemCacheManager(CacheManager):
    """
    Stores one JSON file per grid point under a cache directory.

    Each entry records the fingerprint of the solver settings it was computed
    with; an entry written under different settings counts as a miss.
    """

    def __init__(self, directory: Path | str, fingerprint: str = ""):
        self.directory = Path(directory)
        self.fingerprint = fingerprint

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def load(self, key: str) -> Dict[str, Any] | None:
        path = self._path(key)
        if not path.exists():
            logger.info(f"Cache MISS for: {key}")
            return None
        try:
            with open(path, 'r') as f:
                entry = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            logger.error(f"Failed to load cache file {path}: {e}")
            return None
        if entry.get("schema_version") != CACHE_SCHEMA_VERSION or entry.get("fingerprint") != self.fingerprint:
            logger.info(f"Cache STALE for: {key}")
            return None
        logger.info(f"Cache HIT for: {key}")
        return entry["data"]

    def save(self, key: str, data: Dict[str, Any]) -> None:
        path = self._path(key)
        entry = {"schema_version": CACHE_SCHEMA_VERSION, "fingerprint": self.fingerprint, "data": data}
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w') as f:
                json.dump(entry, f)
            logger.info(f"Cache SAVED to: {path}")
        except IOError as e:
            logger.error(f"Failed to save cache file {path}: {e}")


class NoOpCacheManager(CacheManager):
    """A cache that always misses; selected with --no-cache."""

    def load(self, key: str) -> Dict[str, Any] | None:
        return None

    def save(self, key: str, data: Dict[str, Any]) -> None:
        pass
