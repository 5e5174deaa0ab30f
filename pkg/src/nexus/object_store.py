"""
Content-addressed object store.

Large artifacts never enter a prompt; they are stored here and referenced by
``obj://sha256/<hex>`` urls that are resolved lazily, only when code needs
the bytes.

On-disk layout::

    <root>/objects/<2-hex>/<62-hex>        payload
    <root>/objects/<2-hex>/<62-hex>.json   metadata sidecar
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator

from nexus.constants.keywords import OBJ_URL_PREFIX
from nexus.constants.regexps import OBJ_URL_RE
from nexus.errors import CorruptObject, InvalidObjectRef, NotFound, StorageFull

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".json"


class ObjectOrigin(BaseModel):
    model_config = ConfigDict(frozen=True)

    subtask_id: str
    step_index: int


class ObjectRef(BaseModel):
    """Reference to an immutable stored object."""

    model_config = ConfigDict(frozen=True)

    url: str
    size_bytes: int = Field(ge=0)
    media_type: str = "application/octet-stream"
    origin: ObjectOrigin | None = None

    @field_validator("url")
    @classmethod
    def _check_url(cls, url: str) -> str:
        if not OBJ_URL_RE.match(url):
            msg = f"not an object url: {url!r}"
            raise ValueError(msg)
        return url

    @property
    def digest(self) -> str:
        return self.url.removeprefix(OBJ_URL_PREFIX)


def digest_of(ref: ObjectRef | str) -> str:
    """Return the hex digest of a ref or url, validating the url form."""
    url = ref.url if isinstance(ref, ObjectRef) else ref
    match = OBJ_URL_RE.match(url)
    if match is None:
        msg = f"not an object url: {url!r}"
        raise InvalidObjectRef(msg)
    return match.group(1)


class ObjectStore:
    """
    Filesystem-backed, content-addressed store.

    Puts are idempotent and safe to call from several threads; objects are
    never modified once written, so reads need no locking.
    """

    def __init__(self, root: Path, quota_bytes: int | None = None) -> None:
        """
        Open (or create) a store.

        Args:
            root: Objects directory; payloads live at ``root/<2-hex>/<62-hex>``.
            quota_bytes: Maximum total payload size, ``None`` for unlimited.
        """
        self.objects_dir = Path(root)
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self.quota_bytes = quota_bytes
        self._lock = threading.Lock()
        self._total_bytes = sum(
            p.stat().st_size
            for p in self.objects_dir.glob("*/*")
            if p.suffix != SIDECAR_SUFFIX and not p.name.startswith(".")
        )

    @property
    def total_bytes(self) -> int:
        return self._total_bytes

    def _path_for(self, digest: str) -> Path:
        return self.objects_dir / digest[:2] / digest[2:]

    def put_object(
        self,
        data: bytes,
        media_type: str = "application/octet-stream",
        origin: ObjectOrigin | None = None,
    ) -> ObjectRef:
        """
        Store ``data`` and return its reference.

        Identical bytes always yield the identical url; the second put of an
        existing object writes nothing.

        Raises:
            StorageFull: When a new object would push the store over quota.
        """
        digest = hashlib.sha256(data).hexdigest()
        path = self._path_for(digest)
        ref = ObjectRef(
            url=OBJ_URL_PREFIX + digest,
            size_bytes=len(data),
            media_type=media_type,
            origin=origin,
        )

        with self._lock:
            if path.exists():
                return ref
            if (
                self.quota_bytes is not None
                and self._total_bytes + len(data) > self.quota_bytes
            ):
                msg = (
                    f"object of {len(data)} bytes exceeds the store quota "
                    f"({self._total_bytes}/{self.quota_bytes} bytes used)"
                )
                raise StorageFull(msg)

            path.parent.mkdir(parents=True, exist_ok=True)
            sidecar = {
                "media_type": media_type,
                "size_bytes": len(data),
                "origin": origin.model_dump() if origin else None,
            }
            sidecar_path = path.with_name(path.name + SIDECAR_SUFFIX)
            _atomic_write(sidecar_path, json.dumps(sidecar).encode())
            _atomic_write(path, data)
            self._total_bytes += len(data)

        logger.debug("stored %s (%d bytes)", ref.url, len(data))
        return ref

    def get_object(self, ref: ObjectRef | str) -> bytes:
        """
        Return the bytes behind ``ref``.

        Raises:
            InvalidObjectRef: For a malformed url.
            NotFound: When the digest is unknown to this store.
            CorruptObject: When the stored bytes no longer hash to the digest.
        """
        digest = digest_of(ref)
        path = self._path_for(digest)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            msg = f"no object {OBJ_URL_PREFIX}{digest}"
            raise NotFound(msg) from None

        if hashlib.sha256(data).hexdigest() != digest:
            msg = f"object {digest} does not match its digest"
            raise CorruptObject(msg)
        return data

    def exists(self, ref: ObjectRef | str) -> bool:
        return self._path_for(digest_of(ref)).is_file()

    def ref_for(self, url: str) -> ObjectRef:
        """Rebuild the reference of a stored object from its url."""
        digest = digest_of(url)
        sidecar = self._path_for(digest).with_name(digest[2:] + SIDECAR_SUFFIX)
        try:
            meta = json.loads(sidecar.read_text())
        except FileNotFoundError:
            msg = f"no object {url}"
            raise NotFound(msg) from None
        return ObjectRef(
            url=url,
            size_bytes=meta["size_bytes"],
            media_type=meta["media_type"],
        )


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        Path(tmp).replace(path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
