"""Binary persistence with integrity checking.

Checkpoint layout (little-endian throughout):

    magic    4 bytes   b"PFT1"
    version  u16       currently 1
    payload:
        count    u32   number of entries
        entry*:
            name_len u16, name UTF-8 bytes
            flags    u8       bit 0 = trainable
            rank     u32
            extents  rank x u32
            values   prod(extents) x f64
    crc      u32       CRC32 of the payload bytes

Loading verifies magic, version and CRC before any entry is surfaced, so a
corrupted file never yields a partial model. The same framing carries
subject profiles and per-subject sample files inside a dataset directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .synthdata import Dataset, DatasetSpec, Sample, SubjectProfile, make_prototypes

__all__ = [
    "CheckpointError",
    "BadMagicError",
    "VersionError",
    "ChecksumError",
    "TruncatedError",
    "EntryShapeError",
    "MAGIC",
    "VERSION",
    "write_entries",
    "read_entries",
    "save_checkpoint",
    "load_checkpoint",
    "load_into",
    "manifest_hash",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"PFT1"
VERSION = 1


class CheckpointError(RuntimeError):
    """Base class for persistence failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class EntryShapeError(CheckpointError):
    pass


def write_entries(entries: dict[str, tuple[np.ndarray, bool]], path) -> None:
    """Serialize named float64 arrays with trainable flags to the framed format."""
    payload = bytearray()
    payload += struct.pack("<I", len(entries))
    for name, (arr, trainable) in entries.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
        payload += struct.pack("<B", 1 if trainable else 0)
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        payload += arr.tobytes(order="C")
    blob = MAGIC + struct.pack("<H", VERSION) + bytes(payload)
    blob += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def read_entries(path) -> dict[str, tuple[np.ndarray, bool]]:
    """Parse the framed format, verifying magic, version and CRC first."""
    blob = Path(path).read_bytes()
    if len(blob) < 10:
        raise TruncatedError(f"{path}: file too short ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    payload, crc_bytes = blob[6:-4], blob[-4:]
    (crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC mismatch, file is corrupted")

    entries: dict[str, tuple[np.ndarray, bool]] = {}
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(payload):
            raise TruncatedError(f"{path}: payload ends inside an entry")
        out = payload[off:off + n]
        off += n
        return out

    (count,) = struct.unpack("<I", take(4))
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (flags,) = struct.unpack("<B", take(1))
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_vals = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(8 * n_vals), dtype="<f8").reshape(shape).copy()
        entries[name] = (arr, bool(flags & 1))
    if off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - off} trailing payload bytes")
    return entries


def model_entries(models: dict) -> dict[str, tuple[np.ndarray, bool]]:
    """Flatten {prefix: network} into named (array, trainable) entries."""
    out: dict[str, tuple[np.ndarray, bool]] = {}
    for prefix, net in models.items():
        for name, tensor in net.named_params().items():
            out[f"{prefix}.{name}"] = (tensor.data, tensor.requires_grad)
    return out


def save_checkpoint(models: dict, path) -> None:
    """Persist networks given as {prefix: network with named_params()}."""
    write_entries(model_entries(models), path)


def load_checkpoint(path) -> dict[str, tuple[np.ndarray, bool]]:
    return read_entries(path)


def load_into(models: dict, entries: dict[str, tuple[np.ndarray, bool]]) -> None:
    """Copy entries into existing networks, restoring trainable flags.

    Raises EntryShapeError on any missing name or extent mismatch (for
    example a checkpoint written at a different feature dimension).
    """
    for prefix, net in models.items():
        for name, tensor in net.named_params().items():
            key = f"{prefix}.{name}"
            if key not in entries:
                raise EntryShapeError(f"checkpoint is missing entry {key!r}")
            arr, trainable = entries[key]
            if arr.shape != tensor.data.shape:
                raise EntryShapeError(
                    f"dimension mismatch for {key!r}: checkpoint {arr.shape} vs model {tensor.data.shape}")
            tensor.data[...] = arr
            tensor.set_requires_grad(trainable)
        net.frozen = not any(p.requires_grad for p in net.params())


def checkpoint_bytes(models: dict) -> bytes:
    """In-memory serialization, handy for byte-identity assertions."""
    payload = bytearray()
    entries = model_entries(models)
    payload += struct.pack("<I", len(entries))
    for name, (arr, trainable) in entries.items():
        encoded = name.encode("utf-8")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
        payload += struct.pack("<B", 1 if trainable else 0)
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        payload += np.ascontiguousarray(arr, dtype=np.float64).tobytes(order="C")
    return bytes(payload)


def manifest_hash(payload: dict) -> str:
    """Stable hash of a JSON-serializable run description."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# dataset directory: manifest.json + profiles.bin + per-subject sample files
# ---------------------------------------------------------------------------


def _profile_entries(profiles: list[SubjectProfile]) -> dict[str, tuple[np.ndarray, bool]]:
    out: dict[str, tuple[np.ndarray, bool]] = {}
    for p in profiles:
        key = f"subject{p.subject_id}"
        out[f"{key}.style_gain"] = (p.style_gain, False)
        out[f"{key}.style_offset"] = (p.style_offset, False)
        out[f"{key}.mixing"] = (p.mixing, False)
        out[f"{key}.landmarks"] = (p.landmarks, False)
        out[f"{key}.pose"] = (p.pose, False)
        out[f"{key}.attrs"] = (np.array([p.age, p.gender, 1.0 if p.population == "target" else 0.0]),
                               False)
    return out


def _entries_to_profiles(entries: dict[str, tuple[np.ndarray, bool]]) -> list[SubjectProfile]:
    sids = sorted({int(name.split(".")[0][len("subject"):]) for name in entries})
    profiles = []
    for sid in sids:
        get = lambda field: entries[f"subject{sid}.{field}"][0]
        attrs = get("attrs")
        profiles.append(SubjectProfile(
            subject_id=sid,
            style_gain=get("style_gain"),
            style_offset=get("style_offset"),
            mixing=get("mixing"),
            landmarks=get("landmarks"),
            pose=get("pose"),
            age=int(attrs[0]),
            gender=int(attrs[1]),
            population="target" if attrs[2] > 0.5 else "source",
        ))
    return profiles


def save_dataset(dataset: Dataset, directory) -> None:
    """Write manifest.json, profiles.bin and samples_<sid>.bin with split roles."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    profiles = dataset.source_profiles + dataset.target_profiles
    write_entries(_profile_entries(profiles), directory / "profiles.bin")

    def sample_entries(samples: list[Sample], roles: np.ndarray) -> dict:
        return {
            "x": (np.stack([s.x for s in samples]), False),
            "y": (np.array([s.label for s in samples], dtype=float), False),
            "frame_id": (np.array([s.frame_id for s in samples], dtype=float), False),
            "role": (roles.astype(float), False),
        }

    if not dataset.source_open:
        raise RuntimeError("cannot persist a dataset whose source split is sealed")
    for p in dataset.source_profiles:
        train = [s for s in dataset.source_train() if s.subject_id == p.subject_id]
        val = [s for s in dataset.source_val() if s.subject_id == p.subject_id]
        samples = sorted(train + val, key=lambda s: s.frame_id)
        val_ids = {s.frame_id for s in val}
        roles = np.array([1 if s.frame_id in val_ids else 0 for s in samples])
        write_entries(sample_entries(samples, roles), directory / f"samples_{p.subject_id}.bin")
    for p in dataset.target_profiles:
        sid = p.subject_id
        train = dataset.target_train[sid]
        test = dataset.target_test[sid]
        samples = sorted(train + test, key=lambda s: s.frame_id)
        test_ids = {s.frame_id for s in test}
        roles = np.array([1 if s.frame_id in test_ids else 0 for s in samples])
        write_entries(sample_entries(samples, roles), directory / f"samples_{sid}.bin")

    spec_dict = dataclasses.asdict(dataset.spec)
    manifest = {
        "format": "pft-dataset",
        "version": VERSION,
        "spec": spec_dict,
        "subjects": {
            "source": [p.subject_id for p in dataset.source_profiles],
            "target": [p.subject_id for p in dataset.target_profiles],
        },
        "manifest_hash": manifest_hash({"dataset": spec_dict}),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(directory) -> Dataset:
    """Reconstruct a Dataset (with a fresh, open source guard) from a directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path}: dataset manifest not found")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "pft-dataset":
        raise CheckpointError(f"{manifest_path}: not a dataset manifest")
    spec = DatasetSpec(**manifest["spec"])
    profiles = _entries_to_profiles(read_entries(directory / "profiles.bin"))
    by_id = {p.subject_id: p for p in profiles}
    source_ids = manifest["subjects"]["source"]
    target_ids = manifest["subjects"]["target"]

    def read_samples(sid: int) -> tuple[list[Sample], np.ndarray]:
        entries = read_entries(directory / f"samples_{sid}.bin")
        x = entries["x"][0]
        y = entries["y"][0].astype(int)
        fid = entries["frame_id"][0].astype(int)
        roles = entries["role"][0].astype(int)
        samples = [Sample(x=x[i], label=int(y[i]), subject_id=sid, frame_id=int(fid[i]))
                   for i in range(len(y))]
        return samples, roles

    source_train: list[Sample] = []
    source_val: list[Sample] = []
    for sid in source_ids:
        samples, roles = read_samples(sid)
        for s, r in zip(samples, roles):
            (source_val if r == 1 else source_train).append(s)
    target_train: dict[int, list[Sample]] = {}
    target_test: dict[int, list[Sample]] = {}
    target_adapt: dict[int, list[Sample]] = {}
    for sid in target_ids:
        samples, roles = read_samples(sid)
        target_train[sid] = [s for s, r in zip(samples, roles) if r == 0]
        target_test[sid] = [s for s, r in zip(samples, roles) if r == 1]
        target_adapt[sid] = [s for s in target_train[sid] if s.label == 0]

    # prototypes are a pure function of the spec, so reloading recomputes them
    prototypes = make_prototypes(spec)

    return Dataset(
        spec=spec,
        prototypes=prototypes,
        source_profiles=[by_id[s] for s in source_ids],
        target_profiles=[by_id[s] for s in target_ids],
        _source_train=source_train,
        _source_val=source_val,
        target_adapt=target_adapt,
        target_train=target_train,
        target_test=target_test,
    )
