"""Append-only file store with commit markers.

Layout (little-endian)::

    header   = "RSTO" u16:version u32:json_len json
    record   = u32:length u8:tag u32:class_id u64:seq u16:slot_count values
    tag      = 1 record | 2 tombstone | 3 commit

``length`` counts the bytes after the length field. A batch is a run of
records followed by one commit marker; on open, anything after the last
complete marker is discarded. Values are kind-tagged:

    0 null | 1 int i64 | 2 long i64 | 3 double f64 | 4 bool u8
    5 str (u32 len + UTF-8) | 6 ref (u32 class_id, u64 seq)
    7 reflist (u32 count + (u32 class_id, u64 seq)*)
    8 foreign ref (u16 store_len + store + u32 class_id + u64 seq)
    9 foreign reflist (u32 count + (u16 store_len + store + u32 + u64)*)
"""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Iterator

from ..errors import IncompatibleSchema, StoreIOError, StoreUnavailable
from ..metamodel import FieldKind, ObjectId, Registry
from .base import BackendAdapter, StoreRecord, reconcile_registry

logger = logging.getLogger(__name__)

MAGIC = b"RSTO"
FORMAT_VERSION = 1

TAG_RECORD = 1
TAG_TOMBSTONE = 2
TAG_COMMIT = 3

V_NULL, V_INT, V_LONG, V_DOUBLE, V_BOOL, V_STR, V_REF, V_REFLIST, V_FREF, V_FREFLIST = range(10)

_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<BIQH")
_OIDS = struct.Struct("<IQ")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


# -- codec ------------------------------------------------------------------


def encode_value(kind: FieldKind, value: Any, local_store: str) -> bytes:
    if value is None:
        return bytes([V_NULL])
    base = kind.base
    if base == "int":
        return bytes([V_INT]) + _I64.pack(value)
    if base == "long":
        return bytes([V_LONG]) + _I64.pack(value)
    if base == "double":
        return bytes([V_DOUBLE]) + _F64.pack(value)
    if base == "bool":
        return bytes([V_BOOL, 1 if value else 0])
    if base == "str":
        data = value.encode("utf-8")
        return bytes([V_STR]) + _U32.pack(len(data)) + data
    if base == "ref":
        if value.store == local_store:
            return bytes([V_REF]) + _OIDS.pack(value.class_id, value.seq)
        return bytes([V_FREF]) + _foreign(value)
    if all(v.store == local_store for v in value):
        return (
            bytes([V_REFLIST])
            + _U32.pack(len(value))
            + b"".join(_OIDS.pack(v.class_id, v.seq) for v in value)
        )
    return bytes([V_FREFLIST]) + _U32.pack(len(value)) + b"".join(_foreign(v) for v in value)


def _foreign(oid: ObjectId) -> bytes:
    name = oid.store.encode("utf-8")
    return _U16.pack(len(name)) + name + _OIDS.pack(oid.class_id, oid.seq)


def decode_value(buf: bytes, pos: int, local_store: str) -> tuple[Any, int]:
    tag = buf[pos]
    pos += 1
    if tag == V_NULL:
        return None, pos
    if tag in (V_INT, V_LONG):
        return _I64.unpack_from(buf, pos)[0], pos + 8
    if tag == V_DOUBLE:
        return _F64.unpack_from(buf, pos)[0], pos + 8
    if tag == V_BOOL:
        return buf[pos] != 0, pos + 1
    if tag == V_STR:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        return buf[pos : pos + n].decode("utf-8"), pos + n
    if tag == V_REF:
        cid, seq = _OIDS.unpack_from(buf, pos)
        return ObjectId(local_store, cid, seq), pos + 12
    if tag == V_REFLIST:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        out = []
        for _ in range(n):
            cid, seq = _OIDS.unpack_from(buf, pos)
            out.append(ObjectId(local_store, cid, seq))
            pos += 12
        return out, pos
    if tag == V_FREF:
        return _read_foreign(buf, pos)
    if tag == V_FREFLIST:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        out = []
        for _ in range(n):
            oid, pos = _read_foreign(buf, pos)
            out.append(oid)
        return out, pos
    raise ValueError(f"unknown value tag {tag}")


def _read_foreign(buf: bytes, pos: int) -> tuple[ObjectId, int]:
    (n,) = _U16.unpack_from(buf, pos)
    pos += 2
    store = buf[pos : pos + n].decode("utf-8")
    pos += n
    cid, seq = _OIDS.unpack_from(buf, pos)
    return ObjectId(store, cid, seq), pos + 12


def encode_record(tag: int, class_id: int, seq: int, values: list[bytes]) -> bytes:
    body = _HEAD.pack(tag, class_id, seq, len(values)) + b"".join(values)
    return _LEN.pack(len(body)) + body


def encode_header(store_name: str, classes: list[dict], sections: dict) -> bytes:
    payload = json.dumps(
        {"store": store_name, "classes": classes, "sections": sections},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + _U16.pack(FORMAT_VERSION) + _U32.pack(len(payload)) + payload


def iter_records(buf: bytes, start: int) -> Iterator[tuple[int, int, int, int, int, int]]:
    """Yield ``(offset, end, tag, class_id, seq, slot_count)`` for complete records."""
    pos = start
    n = len(buf)
    while pos + 4 <= n:
        (length,) = _LEN.unpack_from(buf, pos)
        end = pos + 4 + length
        if length < _HEAD.size or end > n:
            return
        tag, cid, seq, count = _HEAD.unpack_from(buf, pos + 4)
        if tag not in (TAG_RECORD, TAG_TOMBSTONE, TAG_COMMIT):
            return
        yield pos, end, tag, cid, seq, count
        pos = end


# -- adapter ----------------------------------------------------------------


class FileStore(BackendAdapter):
    kind = "file"

    def __init__(self, path: str | os.PathLike, store_name: str, registry: Registry | None = None):
        self.path = Path(path)
        if not self.path.parent.is_dir():
            raise StoreUnavailable(f"directory {self.path.parent} does not exist")
        try:
            if self.path.exists():
                data = self.path.read_bytes()
                header = self._read_header(data)
                stored_name = header["store"]
                if store_name and stored_name != store_name:
                    logger.info("store %s opened under name %s", stored_name, store_name)
                reg, grow = reconcile_registry(header["classes"], registry)
                super().__init__(stored_name, reg)
                self.sections = header.get("sections", {})
                self._recover(data)
                if grow:
                    self._write_header()
            else:
                super().__init__(store_name, registry if registry is not None else Registry())
                self._log_start = 0
                self._end = 0
                self._live: dict[int, dict[int, int]] = {}
                self._commits = 0
                self.path.write_bytes(b"")
                self._write_header()
        except OSError as exc:
            raise StoreUnavailable(f"{self.path}: {exc}") from exc
        self._fd = os.open(self.path, os.O_RDWR)

    @staticmethod
    def _read_header(data: bytes) -> dict:
        if len(data) < 10 or data[:4] != MAGIC:
            raise StoreUnavailable("not a reachstore file (bad magic)")
        (version,) = _U16.unpack_from(data, 4)
        if version != FORMAT_VERSION:
            raise IncompatibleSchema(f"file format version {version}, expected {FORMAT_VERSION}")
        (n,) = _U32.unpack_from(data, 6)
        if 10 + n > len(data):
            raise StoreUnavailable("truncated header")
        return json.loads(data[10 : 10 + n].decode("utf-8"))

    def _recover(self, data: bytes) -> None:
        (n,) = _U32.unpack_from(data, 6)
        self._log_start = 10 + n
        live: dict[int, dict[int, int]] = {}
        pending: list[tuple[int, int, int, int]] = []
        committed_end = self._log_start
        max_seq = 0
        commits = 0
        for off, end, tag, cid, seq, _count in iter_records(data, self._log_start):
            if tag == TAG_COMMIT:
                for ptag, pcid, pseq, poff in pending:
                    max_seq = max(max_seq, pseq)
                    if ptag == TAG_RECORD:
                        live.setdefault(pcid, {})[pseq] = poff
                    else:
                        live.get(pcid, {}).pop(pseq, None)
                pending.clear()
                committed_end = end
                commits += 1
            else:
                pending.append((tag, cid, seq, off))
        if committed_end < len(data):
            logger.warning(
                "%s: discarding %d uncommitted trailing bytes", self.path, len(data) - committed_end
            )
            with open(self.path, "r+b") as fh:
                fh.truncate(committed_end)
        self._live = live
        self._end = committed_end
        self._next_seq = max_seq + 1
        self._commits = commits

    def _write_header(self) -> None:
        header = encode_header(self.store_name, self.registry.to_table(), self.sections)
        if self._end == 0:
            self.path.write_bytes(header)
            self._log_start = self._end = len(header)
            return
        with open(self.path, "rb") as fh:
            fh.seek(self._log_start)
            log = fh.read(self._end - self._log_start)
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(log)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        delta = len(header) - self._log_start
        if delta:
            for per_class in self._live.values():
                for seq in per_class:
                    per_class[seq] += delta
        self._log_start = len(header)
        self._end = self._log_start + len(log)
        if getattr(self, "_fd", None) is not None:
            os.close(self._fd)
            self._fd = os.open(self.path, os.O_RDWR)

    # -- writes -----------------------------------------------------------

    def _encode_put(self, record: StoreRecord) -> bytes:
        rc = self.registry.get(record.class_id)
        if len(record.payload) != len(rc.slots):
            raise StoreIOError(f"payload has {len(record.payload)} values, {rc.name} has {len(rc.slots)}")
        values = [
            encode_value(f.kind, v, self.store_name) for f, v in zip(rc.slots, record.payload)
        ]
        return encode_record(TAG_RECORD, record.class_id, record.oid.seq, values)

    def _apply(self, puts, deletes) -> None:
        chunks: list[tuple[int, int, int, bytes]] = []
        for record, _changed in puts:
            chunks.append((TAG_RECORD, record.class_id, record.oid.seq, self._encode_put(record)))
        for oid in deletes:
            chunks.append((TAG_TOMBSTONE, oid.class_id, oid.seq, encode_record(TAG_TOMBSTONE, oid.class_id, oid.seq, [])))
        self._commits += 1
        marker = encode_record(TAG_COMMIT, 0, self._commits, [])
        start = self._end
        pos = start
        placed = []
        try:
            for tag, cid, seq, data in chunks:
                self._fault("record")
                os.pwrite(self._fd, data, pos)
                placed.append((tag, cid, seq, pos))
                pos += len(data)
            self._fault("commit")
            os.pwrite(self._fd, marker, pos)
            pos += len(marker)
            os.fsync(self._fd)
        except Exception as exc:
            self._commits -= 1
            try:
                os.ftruncate(self._fd, start)
            except OSError:
                logger.exception("could not truncate aborted batch; recovery will discard it")
            raise StoreIOError(f"batch aborted: {exc}") from exc
        for tag, cid, seq, off in placed:
            if tag == TAG_RECORD:
                self._live.setdefault(cid, {})[seq] = off
            else:
                self._live.get(cid, {}).pop(seq, None)
        self._end = pos

    def drop_class_data(self, class_id: int) -> None:
        seqs = list(self._live.get(class_id, {}))
        if not seqs:
            return
        self.begin_batch()
        ok = False
        try:
            for seq in seqs:
                self.delete(self.oid(class_id, seq))
            ok = True
        finally:
            self.end_batch(ok)

    def sync_classes(self) -> None:
        with self._commit_lock, self._io_lock:
            self._write_header()

    # -- reads ------------------------------------------------------------

    def _read_at(self, offset: int) -> StoreRecord:
        head = os.pread(self._fd, 4, offset)
        (length,) = _LEN.unpack(head)
        body = os.pread(self._fd, length, offset + 4)
        tag, cid, seq, count = _HEAD.unpack_from(body, 0)
        pos = _HEAD.size
        payload = []
        for _ in range(count):
            value, pos = decode_value(body, pos, self.store_name)
            payload.append(value)
        return StoreRecord(ObjectId(self.store_name, cid, seq), cid, payload, tag == TAG_TOMBSTONE)

    def get(self, oid: ObjectId) -> StoreRecord | None:
        if oid.store != self.store_name:
            return None
        with self._io_lock:
            off = self._live.get(oid.class_id, {}).get(oid.seq)
            if off is None:
                return None
            return self._read_at(off)

    def scan(self, class_id: int, subclasses: bool = False) -> Iterator[StoreRecord]:
        with self._io_lock:
            snapshot = [
                (cid, sorted(self._live.get(cid, {}).items()))
                for cid in self._class_ids(class_id, subclasses)
            ]
            out = [self._read_at(off) for cid, items in snapshot for _seq, off in items]
        return iter(out)

    def count(self) -> int:
        return sum(len(v) for v in self._live.values())

    @property
    def committed_size(self) -> int:
        return self._end

    def close(self) -> None:
        if getattr(self, "_fd", None) is not None:
            os.close(self._fd)
            self._fd = None
