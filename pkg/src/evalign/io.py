"""Bit-exact persistence: event files, embedding files, dataset manifests.

EventFileV1 layout (all little-endian):

    magic       4 bytes  "EVZ1"
    version     u16      = 1
    width       u16
    height      u16
    duration_us u64
    count       u64
    records     count x { t_us: u32, x: u16, y: u16, polarity: u8, pad: u8 }

Records are sorted by (t, y, x, polarity); polarity is stored 0 = negative,
1 = positive; pad must be 0. Header is 26 bytes, each record 10, so a valid
file is exactly 26 + 10 * count bytes long.

EmbeddingFileV1 layout:

    magic   4 bytes  "EMB1"
    version u16      = 1
    dim     u32
    count   u64
    payload count x dim float32, row-major

Rows are unit l2 norm; the writer normalizes (rejecting zero rows) and the
reader re-verifies each norm to within 1e-4.

Readers never trust the header count: file length is validated against the
header before any allocation, and every malformed-input error names the
byte offset where parsing failed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .emitter import EventStream, duration_us
from .errors import FormatError, IntegrityError
from .representation import EventFrame, to_event_frame

EVENT_MAGIC = b"EVZ1"
EVENT_HEADER = struct.Struct("<4sHHHQQ")
EVENT_RECORD_SIZE = 10

EMBEDDING_MAGIC = b"EMB1"
EMBEDDING_HEADER = struct.Struct("<4sHIQ")

_NORM_TOLERANCE = 1e-4


def write_events(stream: EventStream, path: str | Path) -> None:
    """Serialize an EventStream as EventFileV1."""
    n = len(stream)
    dur = duration_us(stream.duration)
    if dur > 0xFFFFFFFFFFFFFFFF:
        raise FormatError("duration does not fit u64")
    if n and stream.t_us.max() > 0xFFFFFFFF:
        raise FormatError("event timestamp does not fit u32")
    header = EVENT_HEADER.pack(EVENT_MAGIC, 1, stream.width, stream.height, dur, n)
    records = np.zeros(
        n,
        dtype=np.dtype(
            [("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")]
        ),
    )
    records["t"] = stream.t_us
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = (stream.polarity > 0).astype(np.uint8)
    Path(path).write_bytes(header + records.tobytes())


def read_events(path: str | Path) -> EventStream:
    """Parse an EventFileV1, validating structure before allocation."""
    raw = Path(path).read_bytes()
    if len(raw) < EVENT_HEADER.size:
        raise FormatError("truncated header", offset=len(raw))
    magic, version, width, height, dur, count = EVENT_HEADER.unpack_from(raw)
    if magic != EVENT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported version {version}", offset=4)
    expected = EVENT_HEADER.size + EVENT_RECORD_SIZE * count
    if len(raw) != expected:
        raise FormatError(
            f"file length {len(raw)} != expected {expected} for count {count}",
            offset=min(len(raw), expected),
        )
    records = np.frombuffer(
        raw,
        dtype=np.dtype([("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")]),
        count=count,
        offset=EVENT_HEADER.size,
    )
    if count:
        if records["pad"].max() != 0:
            bad = int(np.argmax(records["pad"] != 0))
            raise FormatError("nonzero record padding", offset=EVENT_HEADER.size + 10 * bad + 9)
        if records["p"].max() > 1:
            bad = int(np.argmax(records["p"] > 1))
            raise FormatError("polarity byte not in {0,1}", offset=EVENT_HEADER.size + 10 * bad + 8)
        for name, limit in (("x", width), ("y", height)):
            if records[name].max() >= limit:
                bad = int(np.argmax(records[name] >= limit))
                raise FormatError(
                    f"{name} coordinate out of bounds", offset=EVENT_HEADER.size + 10 * bad
                )
        if records["t"].max() > dur:
            bad = int(np.argmax(records["t"] > dur))
            raise FormatError("timestamp beyond duration", offset=EVENT_HEADER.size + 10 * bad)
        key = np.stack(
            [
                records["t"].astype(np.int64),
                records["y"].astype(np.int64),
                records["x"].astype(np.int64),
                records["p"].astype(np.int64),
            ]
        )
        diffs = np.sign(np.diff(key, axis=1))
        first = (diffs != 0).argmax(axis=0)  # index of highest-priority differing key
        cmp = diffs[first, np.arange(diffs.shape[1])]
        if np.any(cmp < 0):
            bad = int(np.argmax(cmp < 0)) + 1
            raise FormatError("records not sorted", offset=EVENT_HEADER.size + 10 * bad)
    polarity = records["p"].astype(np.int8) * 2 - 1
    return EventStream(width, height, dur / 1e6, records["t"], records["x"], records["y"], polarity)


def write_embeddings(rows: np.ndarray, path: str | Path) -> None:
    """Serialize an (n, dim) batch as EmbeddingFileV1, normalizing each row."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {rows.shape}")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"row {int(np.argmax(norms == 0))} is a zero vector, cannot normalize")
    payload = (rows / norms[:, None]).astype("<f4")
    header = EMBEDDING_HEADER.pack(EMBEDDING_MAGIC, 1, rows.shape[1], rows.shape[0])
    Path(path).write_bytes(header + payload.tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    """Parse an EmbeddingFileV1 and re-verify unit norms; returns float32."""
    raw = Path(path).read_bytes()
    if len(raw) < EMBEDDING_HEADER.size:
        raise FormatError("truncated header", offset=len(raw))
    magic, version, dim, count = EMBEDDING_HEADER.unpack_from(raw)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported version {version}", offset=4)
    expected = EMBEDDING_HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise FormatError(
            f"file length {len(raw)} != expected {expected} for {count}x{dim}",
            offset=min(len(raw), expected),
        )
    rows = np.frombuffer(raw, dtype="<f4", offset=EMBEDDING_HEADER.size).reshape(count, dim)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    off = np.abs(norms - 1.0)
    if count and off.max() > _NORM_TOLERANCE:
        raise IntegrityError(
            f"row {int(np.argmax(off))} norm deviates by {off.max():.2e} (> {_NORM_TOLERANCE})"
        )
    return rows.copy()


@dataclass(frozen=True)
class ManifestEntry:
    event_file: str
    source_image: str
    class_id: int
    class_name: str
    image_embedding_ref: dict | None = None  # {"file": str, "row": int}


@dataclass(frozen=True)
class Manifest:
    """Dataset index pairing event files with images, labels and embeddings."""

    dataset: str
    seed: int
    motion: dict
    emitter: dict
    entries: list[ManifestEntry]

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text(manifest.to_json())


def read_manifest(path: str | Path) -> Manifest:
    """Load and validate a manifest: files must exist, class ids dense from 0."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path.name}: invalid JSON: {exc}") from exc
    try:
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        manifest = Manifest(
            dataset=doc["dataset"],
            seed=doc["seed"],
            motion=doc["motion"],
            emitter=doc["emitter"],
            entries=entries,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path.name}: bad manifest structure: {exc}") from exc
    base = path.parent
    for i, entry in enumerate(manifest.entries):
        if not (base / entry.event_file).exists():
            raise FormatError(f"entry {i}: missing event file {entry.event_file}")
        ref = entry.image_embedding_ref
        if ref is not None and not (base / ref["file"]).exists():
            raise FormatError(f"entry {i}: missing embedding file {ref['file']}")
    ids = sorted({e.class_id for e in manifest.entries})
    if ids and ids != list(range(ids[-1] + 1)):
        raise IntegrityError(f"class ids not dense from 0: {ids}")
    return manifest


def load_paired_batch(
    manifest: Manifest, manifest_dir: str | Path, indices
) -> tuple[list[EventFrame], np.ndarray, np.ndarray]:
    """Aligned (event frames, image embeddings, class ids) for the given entries."""
    base = Path(manifest_dir)
    frames: list[EventFrame] = []
    rows = []
    class_ids = []
    emb_cache: dict[str, np.ndarray] = {}
    for i in indices:
        entry = manifest.entries[i]
        stream = read_events(base / entry.event_file)
        frames.append(to_event_frame(stream, (0.0, stream.duration)))
        ref = entry.image_embedding_ref
        if ref is None:
            raise IntegrityError(f"entry {i} has no image embedding reference")
        if ref["file"] not in emb_cache:
            emb_cache[ref["file"]] = read_embeddings(base / ref["file"])
        table = emb_cache[ref["file"]]
        if ref["row"] >= len(table):
            raise IntegrityError(f"entry {i}: embedding row {ref['row']} out of range")
        rows.append(table[ref["row"]])
        class_ids.append(entry.class_id)
    dims = {r.shape[0] for r in rows}
    if len(dims) > 1:
        raise IntegrityError(f"mixed embedding dims in batch: {sorted(dims)}")
    return frames, np.array(rows), np.array(class_ids, dtype=np.int64)
