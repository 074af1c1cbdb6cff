"""Self-contained AFB1 container writer/reader.

Layout (little-endian): 4-byte magic "AFB1", u16 version (=1), u16 subject
id, u16 modality count (=8), u16 reserved (=0), u64 sample count n, eight
8-byte NUL-padded ASCII modality names in canonical order, u32 sample rate
(=700), n u8 labels, then eight blocks of n f32 samples.  Total size is
exactly 88 + 33*n bytes.  Implemented against the byte layout alone so this
package stays independent of the consumer.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AFB1"
VERSION = 1
CANONICAL_MODALITIES = ("ECG", "EDA", "EMG", "RESP", "TEMP",
                        "ACC_X", "ACC_Y", "ACC_Z")
SAMPLE_RATE_HZ = 700
HEADER_BYTES = 88
BYTES_PER_SAMPLE = 33  # 1 label byte + 8 modalities * 4 bytes


class ContainerFormatError(Exception):
    """Raised when bytes do not parse as a well-formed AFB1 container."""


def container_size(num_samples: int) -> int:
    return HEADER_BYTES + BYTES_PER_SAMPLE * num_samples


def write_container(path, subject_id: int, labels, modalities) -> None:
    """Serialize one subject's streams; samples are stored as f32."""
    labels = np.asarray(labels, dtype=np.uint8)
    n = len(labels)
    if not 0 <= subject_id < 2 ** 16:
        raise ValueError(f"subject id {subject_id} does not fit u16")
    out = bytearray()
    out += struct.pack("<4sHHHHQ", MAGIC, VERSION, subject_id,
                       len(CANONICAL_MODALITIES), 0, n)
    for name in CANONICAL_MODALITIES:
        out += name.encode("ascii").ljust(8, b"\x00")
    out += struct.pack("<I", SAMPLE_RATE_HZ)
    out += labels.tobytes()
    for name in CANONICAL_MODALITIES:
        block = np.ascontiguousarray(modalities[name], dtype="<f4")
        if block.shape != (n,):
            raise ValueError(
                f"modality {name} has shape {block.shape}, expected ({n},)")
        out += block.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def read_container(path):
    """Parse a container; returns (subject_id, labels, {name: f32 array}).

    Used by verify() to recompute manifest fields, so it raises
    ContainerFormatError rather than the consumer's error taxonomy.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_BYTES:
        raise ContainerFormatError(
            f"file is {len(blob)} bytes, shorter than the {HEADER_BYTES}-byte "
            "fixed region")
    magic, version, subject_id, nmod, _reserved, n = struct.unpack_from(
        "<4sHHHHQ", blob, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported version {version}")
    if nmod != len(CANONICAL_MODALITIES):
        raise ContainerFormatError(f"modality count {nmod} != 8")
    for i, expected in enumerate(CANONICAL_MODALITIES):
        raw = blob[20 + 8 * i:28 + 8 * i]
        name = raw.rstrip(b"\x00").decode("ascii", errors="replace")
        if name != expected:
            raise ContainerFormatError(
                f"modality {i} is {name!r}, expected {expected!r}")
    (rate,) = struct.unpack_from("<I", blob, 84)
    if rate != SAMPLE_RATE_HZ:
        raise ContainerFormatError(f"sample rate {rate} != {SAMPLE_RATE_HZ}")
    if len(blob) != container_size(n):
        raise ContainerFormatError(
            f"file is {len(blob)} bytes, expected {container_size(n)} "
            f"for {n} samples")
    labels = np.frombuffer(blob, dtype=np.uint8, count=n,
                           offset=HEADER_BYTES).copy()
    modalities = {}
    for i, name in enumerate(CANONICAL_MODALITIES):
        offset = HEADER_BYTES + n + 4 * n * i
        modalities[name] = np.frombuffer(blob, dtype="<f4", count=n,
                                         offset=offset).copy()
    return subject_id, labels, modalities
