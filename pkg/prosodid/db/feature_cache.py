"""
On-disk feature cache. Entries are .npz archives keyed by recording id
under a directory named after the extraction-config hash; every write goes
to a temporary file in the target directory and is renamed into place, so
concurrent readers never observe a partial entry.
"""
import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from prosodid.core.config import settings
from prosodid.core.errors import CacheError

logger = logging.getLogger(__name__)

TRACKS = "tracks"
DESCRIPTORS = "descriptors"
META_KEY = "__meta__"


def resolve_cache_dir(cache_dir: Optional[Union[str, Path]] = None) -> Path:
    """Explicit directory, else $PROSODID_CACHE, else the settings default."""
    if cache_dir:
        return Path(cache_dir)
    return Path(os.environ.get("PROSODID_CACHE") or settings.PROSODID_CACHE)


def config_hash(fingerprint: str) -> str:
    return hashlib.sha256(fingerprint.encode("utf-8")).hexdigest()[:16]


class FeatureCache:
    """Feature store for one extraction configuration."""

    def __init__(self, cache_dir: Optional[Union[str, Path]], fingerprint: str):
        self.root = resolve_cache_dir(cache_dir) / config_hash(fingerprint)
        self.fingerprint = fingerprint

    def _path(self, kind: str, recording_id: str) -> Path:
        return self.root / kind / f"{recording_id}.npz"

    def exists(self, kind: str, recording_id: str) -> bool:
        return self._path(kind, recording_id).is_file()

    def write(self, kind: str, recording_id: str, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> Path:
        path = self._path(kind, recording_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = dict(arrays)
        payload[META_KEY] = np.array(json.dumps(meta or {}, sort_keys=True))
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{recording_id}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                np.savez(f, **payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def read(self, kind: str, recording_id: str) -> Dict[str, np.ndarray]:
        """Arrays of an entry plus its metadata dict under the `meta` key."""
        path = self._path(kind, recording_id)
        if not path.is_file():
            raise CacheError(f"no cached {kind} for recording {recording_id!r} in {self.root}")
        try:
            with np.load(path, allow_pickle=False) as data:
                entry = {k: data[k] for k in data.files if k != META_KEY}
                entry["meta"] = json.loads(str(data[META_KEY])) if META_KEY in data.files else {}
        except (OSError, ValueError) as exc:
            raise CacheError(f"corrupt cache entry {path}: {exc}")
        return entry

    def entries(self, kind: str) -> List[str]:
        folder = self.root / kind
        if not folder.is_dir():
            return []
        return sorted(p.stem for p in folder.glob("*.npz"))

    def write_config(self) -> None:
        """Record the fingerprint next to the entries for inspection."""
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.json").write_text(self.fingerprint, encoding="utf-8")
