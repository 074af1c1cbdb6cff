"""Session-to-container conversion and manifest verification.

A source session is a pickled dict with the chest-device signals under
session["signal"]["chest"] (keys ACC with three columns, ECG, EMG, EDA,
Temp, Resp) and one label per 700 Hz sample under session["label"].  The
eight canonical output modalities are ECG, EDA, EMG, RESP, TEMP and the
three ACC axes.  Channels whose length differs from the label stream are
linearly resampled to 700 Hz; the native rate is inferred from the length
ratio and must come out integral.  Raw label codes are written through
unmapped (range-checked to 0..7) unless an explicit label_map remaps them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import pickle
from fractions import Fraction
from pathlib import Path

import numpy as np

from wesad_convert.afb1 import (
    CANONICAL_MODALITIES,
    SAMPLE_RATE_HZ,
    ContainerFormatError,
    container_size,
    read_container,
    write_container,
)

MAX_LABEL_CODE = 7

# Canonical name -> chest-section source.  ACC columns are split by axis.
_SCALAR_SOURCES = {"ECG": "ECG", "EDA": "EDA", "EMG": "EMG",
                   "RESP": "Resp", "TEMP": "Temp"}
_ACC_AXES = {"ACC_X": 0, "ACC_Y": 1, "ACC_Z": 2}


class ConversionError(Exception):
    """Raised for unreadable, structurally wrong, or inconsistent sources."""


@dataclasses.dataclass
class ConversionManifest:
    """Everything needed to re-check a written container field by field."""

    source_path: str
    subject_id: int
    samples_read: int
    samples_written: int
    label_histogram: dict[int, int]
    modality_stats: dict[str, dict[str, float]]
    checksum_sha256: str

    def to_dict(self) -> dict:
        return {
            "source_path": self.source_path,
            "subject_id": self.subject_id,
            "samples_read": self.samples_read,
            "samples_written": self.samples_written,
            "label_histogram": {str(k): v
                                for k, v in sorted(self.label_histogram.items())},
            "modality_stats": {name: dict(stats)
                               for name, stats in self.modality_stats.items()},
            "checksum_sha256": self.checksum_sha256,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConversionManifest":
        try:
            return cls(
                source_path=str(d["source_path"]),
                subject_id=int(d["subject_id"]),
                samples_read=int(d["samples_read"]),
                samples_written=int(d["samples_written"]),
                label_histogram={int(k): int(v)
                                 for k, v in d["label_histogram"].items()},
                modality_stats={str(name): {"mean": float(s["mean"]),
                                            "sd": float(s["sd"])}
                                for name, s in d["modality_stats"].items()},
                checksum_sha256=str(d["checksum_sha256"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConversionError(f"malformed manifest: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConversionManifest":
        try:
            text = Path(path).read_text(encoding="utf-8")
            return cls.from_dict(json.loads(text))
        except OSError as exc:
            raise ConversionError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConversionError(f"manifest {path} is not JSON: {exc}") from exc


def default_manifest_path(out_path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def resample_linear(seq, from_hz: int, to_hz: int) -> np.ndarray:
    """Linear-interpolation resample with clamped endpoints.

    Output length is round(len * to_hz / from_hz), computed exactly for
    integer rates.  Matches the consumer's definition bit for bit.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise ValueError("sample rates must be positive")
    x = np.asarray(seq, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("resampling needs at least 2 samples")
    if from_hz == to_hz:
        return x.copy()
    out_len = round(Fraction(n * int(to_hz), int(from_hz)))
    pos = np.arange(out_len, dtype=np.float64) * (from_hz / to_hz)
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    return x[i0] * (1.0 - frac) + x[i1] * frac


def _load_session(path) -> dict:
    try:
        with open(path, "rb") as fh:
            session = pickle.load(fh, encoding="latin1")
    except OSError as exc:
        raise ConversionError(f"cannot read source {path}: {exc}") from exc
    except (pickle.UnpicklingError, EOFError, AttributeError,
            ImportError, IndexError) as exc:
        raise ConversionError(f"source {path} is not a pickled session: "
                              f"{exc}") from exc
    if not isinstance(session, dict):
        raise ConversionError(f"source {path} unpickles to "
                              f"{type(session).__name__}, expected dict")
    return session


def _parse_subject_id(value) -> int:
    if isinstance(value, bytes):
        value = value.decode("ascii", errors="replace")
    if isinstance(value, str):
        value = value.strip().lstrip("Ss")
    try:
        sid = int(value)
    except (TypeError, ValueError):
        raise ConversionError(f"cannot parse subject id from {value!r}") \
            from None
    if not 0 <= sid < 2 ** 16:
        raise ConversionError(f"subject id {sid} out of u16 range")
    return sid


def _subject_id(session: dict, path) -> int:
    if "subject" in session:
        return _parse_subject_id(session["subject"])
    return _parse_subject_id(Path(path).stem)


def _as_channel(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ConversionError(
            f"modality {name} has shape {arr.shape}, expected one column")
    return arr.astype(np.float64)


def _extract_channels(session: dict) -> dict[str, np.ndarray]:
    signal = session.get("signal")
    if not isinstance(signal, dict) or not isinstance(signal.get("chest"),
                                                      dict):
        raise ConversionError("source has no signal.chest section")
    chest = signal["chest"]
    channels: dict[str, np.ndarray] = {}
    for name, key in _SCALAR_SOURCES.items():
        if key not in chest:
            raise ConversionError(f"missing modality {key} in chest section")
        channels[name] = _as_channel(name, chest[key])
    if "ACC" not in chest:
        raise ConversionError("missing modality ACC in chest section")
    acc = np.asarray(chest["ACC"], dtype=np.float64)
    if acc.ndim != 2 or acc.shape[1] != 3:
        raise ConversionError(
            f"ACC has shape {acc.shape}, expected (n, 3)")
    for name, axis in _ACC_AXES.items():
        channels[name] = acc[:, axis].copy()
    return channels


def _labels(session: dict, label_map: dict[int, int] | None) -> np.ndarray:
    if "label" not in session:
        raise ConversionError("source has no label stream")
    raw = np.asarray(session["label"]).ravel()
    if raw.size == 0:
        raise ConversionError("label stream is empty")
    as_int = raw.astype(np.int64)
    if np.issubdtype(raw.dtype, np.floating) and not np.array_equal(
            raw, as_int):
        raise ConversionError("label stream has non-integer codes")
    lo, hi = int(as_int.min()), int(as_int.max())
    if lo < 0 or hi > MAX_LABEL_CODE:
        raise ConversionError(
            f"label codes span {lo}..{hi}, outside 0..{MAX_LABEL_CODE}")
    if label_map:
        for k, v in label_map.items():
            if not (0 <= k <= MAX_LABEL_CODE and 0 <= v <= MAX_LABEL_CODE):
                raise ConversionError(
                    f"label_map entry {k}->{v} outside 0..{MAX_LABEL_CODE}")
        table = np.arange(MAX_LABEL_CODE + 1, dtype=np.int64)
        for k, v in label_map.items():
            table[k] = v
        as_int = table[as_int]
    return as_int.astype(np.uint8)


def _to_rate(name: str, values: np.ndarray, n_labels: int) -> np.ndarray:
    """Bring one channel to the label timeline, inferring its native rate."""
    n = len(values)
    if n == n_labels:
        return values
    implied = Fraction(SAMPLE_RATE_HZ * n, n_labels)
    if implied.denominator != 1 or implied.numerator < 1:
        raise ConversionError(
            f"modality {name}: {n} samples against {n_labels} labels "
            f"implies a non-integral rate ({float(implied):.4f} Hz)")
    if n < 2:
        raise ConversionError(
            f"modality {name}: {n} samples cannot be resampled")
    return resample_linear(values, int(implied), SAMPLE_RATE_HZ)


def _stats(modalities: dict[str, np.ndarray]) -> dict[str, dict[str, float]]:
    """Mean/sd of the stored f32 values, so verification recomputes exactly."""
    out = {}
    for name in CANONICAL_MODALITIES:
        block = np.asarray(modalities[name], dtype=np.float64)
        out[name] = {"mean": float(block.mean()),
                     "sd": float(block.std(ddof=0))}
    return out


def _histogram(labels: np.ndarray) -> dict[int, int]:
    counts = np.bincount(labels, minlength=MAX_LABEL_CODE + 1)
    return {code: int(c) for code, c in enumerate(counts) if c}


def convert(subject_session_path, out_path,
            label_map: dict[int, int] | None = None,
            manifest_path=None) -> ConversionManifest:
    """Convert one session to an AFB1 container plus a JSON manifest.

    Returns the manifest; the container goes to out_path and the manifest
    JSON to manifest_path (default: out_path + ".manifest.json").
    """
    session = _load_session(subject_session_path)
    subject_id = _subject_id(session, subject_session_path)
    labels = _labels(session, label_map)
    n = len(labels)
    channels = _extract_channels(session)
    resampled = {name: _to_rate(name, values, n)
                 for name, values in channels.items()}
    stored = {name: np.ascontiguousarray(values, dtype="<f4")
              for name, values in resampled.items()}
    write_container(out_path, subject_id, labels, stored)
    blob = Path(out_path).read_bytes()
    manifest = ConversionManifest(
        source_path=str(subject_session_path),
        subject_id=subject_id,
        samples_read=n,
        samples_written=n,
        label_histogram=_histogram(labels),
        modality_stats=_stats({k: v.astype(np.float64)
                               for k, v in stored.items()}),
        checksum_sha256=hashlib.sha256(blob).hexdigest(),
    )
    if manifest_path is None:
        manifest_path = default_manifest_path(out_path)
    manifest.save(manifest_path)
    return manifest


def verify(afb_path, manifest_path) -> list[str]:
    """Re-read a container and compare with its manifest field by field.

    Returns a list of human-readable diagnostics; empty means ok.
    """
    manifest = ConversionManifest.load(manifest_path)
    diagnostics: list[str] = []
    if manifest.samples_read != manifest.samples_written:
        diagnostics.append(
            f"manifest: samples_read {manifest.samples_read} != "
            f"samples_written {manifest.samples_written}")
    try:
        blob = Path(afb_path).read_bytes()
    except OSError as exc:
        raise ConversionError(f"cannot read container {afb_path}: {exc}") \
            from exc
    expected_size = container_size(manifest.samples_written)
    if len(blob) != expected_size:
        diagnostics.append(
            f"length: file is {len(blob)} bytes, expected {expected_size} "
            f"for {manifest.samples_written} samples")
    checksum = hashlib.sha256(blob).hexdigest()
    if checksum != manifest.checksum_sha256:
        diagnostics.append(
            f"checksum: file is sha256 {checksum[:16]}..., manifest says "
            f"{manifest.checksum_sha256[:16]}...")
    try:
        subject_id, labels, modalities = read_container(afb_path)
    except ContainerFormatError as exc:
        diagnostics.append(f"structure: {exc}")
        return diagnostics
    if subject_id != manifest.subject_id:
        diagnostics.append(
            f"subject_id: container has {subject_id}, manifest says "
            f"{manifest.subject_id}")
    if len(labels) != manifest.samples_written:
        diagnostics.append(
            f"samples_written: container has {len(labels)}, manifest says "
            f"{manifest.samples_written}")
    histogram = _histogram(labels)
    if histogram != manifest.label_histogram:
        diagnostics.append(
            f"label_histogram: container has {histogram}, manifest says "
            f"{manifest.label_histogram}")
    stats = _stats({k: v.astype(np.float64) for k, v in modalities.items()})
    for name in CANONICAL_MODALITIES:
        if name not in manifest.modality_stats:
            diagnostics.append(f"modality_stats: {name} missing from manifest")
            continue
        if stats[name] != manifest.modality_stats[name]:
            diagnostics.append(
                f"modality_stats: {name} recomputes to {stats[name]}, "
                f"manifest says {manifest.modality_stats[name]}")
    return diagnostics
