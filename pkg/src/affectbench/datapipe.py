"""Subject containers, normalization, windowing, split protocols, synthesis.

The pipeline is: load (or synthesize) a SubjectRecording, normalize each
modality over the subject's full recording, cut sliding windows that carry
a single class annotation, then split per protocol:

  personalized       train/val/test all from the one subject, sequential
  subject_exclusive  train/val from every other subject, test held out
  subject_inclusive  train/val from all subjects, test from one subject

All three share the identical per-subject test segment, so their scores
are directly comparable.

Container file layout "AFB1" (little-endian): magic, u16 version=1,
u16 subject id, u16 modality count=8, u16 reserved=0, u64 sample count,
eight 8-byte NUL-padded modality names in canonical order, u32 sample
rate, sample count u8 label codes, then eight blocks of sample count f32
values, modality-major in canonical order.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from affectbench.binio import ByteReader
from affectbench.errors import (
    BadMagicError,
    FormatError,
    ModalityTableError,
    UnsupportedVersionError,
)
from affectbench.rng import Rng

CONTAINER_MAGIC = b"AFB1"
CONTAINER_VERSION = 1
CANONICAL_MODALITIES = ("ECG", "EDA", "EMG", "RESP", "TEMP",
                        "ACC_X", "ACC_Y", "ACC_Z")
SAMPLE_RATE_HZ = 700
WINDOW_LEN = 64
WINDOW_STRIDE = 32

# Raw label codes carried in containers; anything else voids the window.
RAW_CODE_NEUTRAL = 1
RAW_CODE_STRESS = 2
RAW_CODE_AMUSEMENT = 3


class AffectClass(enum.IntEnum):
    NEUTRAL = 0
    STRESS = 1
    AMUSEMENT = 2


LABEL_MAP = {
    RAW_CODE_NEUTRAL: AffectClass.NEUTRAL,
    RAW_CODE_STRESS: AffectClass.STRESS,
    RAW_CODE_AMUSEMENT: AffectClass.AMUSEMENT,
}

PROTOCOL_PERSONALIZED = "personalized"
PROTOCOL_EXCLUSIVE = "subject_exclusive"
PROTOCOL_INCLUSIVE = "subject_inclusive"


@dataclass
class SubjectRecording:
    subject_id: int
    sample_rate: int
    modalities: dict[str, np.ndarray]
    labels: np.ndarray

    def validate(self) -> None:
        if not 0 <= self.subject_id < 2 ** 16:
            raise ValueError("subject_id must fit in u16")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if tuple(self.modalities) != CANONICAL_MODALITIES:
            raise ValueError(
                f"modalities must be exactly {CANONICAL_MODALITIES} in order"
            )
        n = len(self.labels)
        for name, seq in self.modalities.items():
            if seq.ndim != 1:
                raise ValueError(f"modality {name} must be 1-d")
            if len(seq) != n:
                raise ValueError(
                    f"modality {name} length {len(seq)} != label length {n}"
                )

    @property
    def num_samples(self) -> int:
        return len(self.labels)

    def signal_matrix(self) -> np.ndarray:
        """[8, N] float64 stack in canonical modality order."""
        return np.stack([np.asarray(self.modalities[m], dtype=np.float64)
                         for m in CANONICAL_MODALITIES])

    def equals(self, other: "SubjectRecording") -> bool:
        return (
            self.subject_id == other.subject_id
            and self.sample_rate == other.sample_rate
            and tuple(self.modalities) == tuple(other.modalities)
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(self.modalities[m], other.modalities[m])
                    for m in self.modalities)
        )


@dataclass(frozen=True)
class Window:
    signal: np.ndarray          # [8, 64] float64
    label: AffectClass
    subject_id: int
    start_index: int

    def identity(self) -> tuple[int, int, int]:
        return (self.subject_id, self.start_index, int(self.label))


@dataclass
class SplitTriple:
    train: list[Window]
    val: list[Window]
    test: list[Window]
    protocol: str
    test_subject: int


def stack_windows(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """(X [N,8,64] float64, y [N] int64) from a window list."""
    if not windows:
        return (np.zeros((0, len(CANONICAL_MODALITIES), WINDOW_LEN)),
                np.zeros((0,), dtype=np.int64))
    x = np.stack([w.signal for w in windows])
    y = np.array([int(w.label) for w in windows], dtype=np.int64)
    return x, y


def normalize(rec: SubjectRecording,
              stats_fraction: float = 1.0) -> SubjectRecording:
    """Per-modality z-score over the subject's recording.

    Statistics use the population standard deviation (ddof=0) over the
    full recording by default; a modality with sigma below 1e-12 becomes
    all zeros.  ``stats_fraction`` restricts the statistics to the
    initial fraction of samples (e.g. 0.70 approximates train-only
    statistics) while still transforming the whole sequence.
    """
    if not 0.0 < stats_fraction <= 1.0:
        raise ValueError("stats_fraction must be in (0, 1]")
    out: dict[str, np.ndarray] = {}
    for name in CANONICAL_MODALITIES:
        x = np.asarray(rec.modalities[name], dtype=np.float64)
        if x.size == 0:
            raise ValueError(f"modality {name} is empty")
        k = len(x) if stats_fraction == 1.0 else max(
            1, int(round(len(x) * stats_fraction)))
        head = x[:k]
        mu = float(head.mean())
        sigma = float(head.std(ddof=0))
        if sigma < 1e-12:
            out[name] = np.zeros_like(x)
        else:
            out[name] = (x - mu) / sigma
    return SubjectRecording(rec.subject_id, rec.sample_rate, out,
                            np.asarray(rec.labels, dtype=np.uint8).copy())


def scan_windows(rec: SubjectRecording) -> tuple[list[Window], int]:
    """(kept windows in ascending start order, discarded window count).

    Starts advance by the stride; a window survives only if every raw
    label inside it is one identical mapped code.
    """
    sig = rec.signal_matrix()
    labels = np.asarray(rec.labels)
    n = sig.shape[1]
    if n < WINDOW_LEN:
        raise ValueError(
            f"recording has {n} samples; windows need at least {WINDOW_LEN}"
        )
    kept: list[Window] = []
    discarded = 0
    for start in range(0, n - WINDOW_LEN + 1, WINDOW_STRIDE):
        codes = labels[start:start + WINDOW_LEN]
        first = int(codes[0])
        if first in LABEL_MAP and np.all(codes == first):
            kept.append(Window(
                signal=sig[:, start:start + WINDOW_LEN].copy(),
                label=LABEL_MAP[first],
                subject_id=rec.subject_id,
                start_index=start,
            ))
        else:
            discarded += 1
    return kept, discarded


def make_windows(rec: SubjectRecording) -> list[Window]:
    return scan_windows(rec)[0]


def _class_segments(windows: Iterable[Window]
                    ) -> dict[AffectClass, tuple[list[Window], list[Window],
                                                 list[Window]]]:
    """Per class, (train, val, test) by cumulative-floor boundaries.

    Boundaries are floor(0.70 n) and floor(0.85 n), computed in integer
    arithmetic; windows stay in ascending time order.
    """
    by_class: dict[AffectClass, list[Window]] = {c: [] for c in AffectClass}
    for w in sorted(windows, key=lambda w: w.start_index):
        by_class[w.label].append(w)
    segments = {}
    for cls, ws in by_class.items():
        n = len(ws)
        a = (70 * n) // 100
        b = (85 * n) // 100
        segments[cls] = (ws[:a], ws[a:b], ws[b:])
    return segments


def _concat(segments, part: int) -> list[Window]:
    return [w for cls in AffectClass for w in segments[cls][part]]


def split_personalized(windows: Sequence[Window]) -> SplitTriple:
    """Sequential 70/15/15 split per class, all from one subject."""
    subjects = {w.subject_id for w in windows}
    if len(subjects) != 1:
        raise ValueError(
            f"personalized split needs exactly one subject, got {sorted(subjects)}"
        )
    segments = _class_segments(windows)
    for cls in AffectClass:
        n = sum(len(part) for part in segments[cls])
        if n < 3:
            raise ValueError(
                f"class {cls.name} has {n} windows; need at least 3"
            )
    return SplitTriple(
        train=_concat(segments, 0),
        val=_concat(segments, 1),
        test=_concat(segments, 2),
        protocol=PROTOCOL_PERSONALIZED,
        test_subject=subjects.pop(),
    )


def _group_by_subject(windows: Iterable[Window]) -> dict[int, list[Window]]:
    groups: dict[int, list[Window]] = {}
    for w in windows:
        groups.setdefault(w.subject_id, []).append(w)
    return {sid: groups[sid] for sid in sorted(groups)}


def split_subject_exclusive(windows: Sequence[Window],
                            test_subject: int) -> SplitTriple:
    """Held-out subject: train/val pool the other subjects' early segments."""
    groups = _group_by_subject(windows)
    if test_subject not in groups:
        raise ValueError(f"unknown test subject {test_subject}")
    if len(groups) < 2:
        raise ValueError("subject-exclusive split needs at least 2 subjects")
    train: list[Window] = []
    val: list[Window] = []
    for sid, ws in groups.items():
        if sid == test_subject:
            continue
        segments = _class_segments(ws)
        train.extend(_concat(segments, 0))
        val.extend(_concat(segments, 1))
    test = _concat(_class_segments(groups[test_subject]), 2)
    return SplitTriple(train, val, test, PROTOCOL_EXCLUSIVE, test_subject)


def split_subject_inclusive(windows: Sequence[Window],
                            test_subject: int) -> SplitTriple:
    """All subjects' early segments train/val; one subject's tail tests."""
    groups = _group_by_subject(windows)
    if test_subject not in groups:
        raise ValueError(f"unknown test subject {test_subject}")
    train: list[Window] = []
    val: list[Window] = []
    for ws in groups.values():
        segments = _class_segments(ws)
        train.extend(_concat(segments, 0))
        val.extend(_concat(segments, 1))
    test = _concat(_class_segments(groups[test_subject]), 2)
    return SplitTriple(train, val, test, PROTOCOL_INCLUSIVE, test_subject)


def write_subject(rec: SubjectRecording, path) -> None:
    """Serialize to the AFB1 container; samples stored as f32."""
    rec.validate()
    n = rec.num_samples
    out = bytearray()
    out += struct.pack("<4sHHHHQ", CONTAINER_MAGIC, CONTAINER_VERSION,
                       rec.subject_id, len(CANONICAL_MODALITIES), 0, n)
    for name in CANONICAL_MODALITIES:
        out += name.encode("ascii").ljust(8, b"\x00")
    out += struct.pack("<I", rec.sample_rate)
    out += np.asarray(rec.labels, dtype=np.uint8).tobytes()
    for name in CANONICAL_MODALITIES:
        out += np.ascontiguousarray(rec.modalities[name], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_subject(path) -> SubjectRecording:
    """Parse an AFB1 container, validating structure before content."""
    with open(path, "rb") as fh:
        r = ByteReader(fh)
        magic = r.read(4, "magic")
        if magic != CONTAINER_MAGIC:
            raise BadMagicError(f"bad container magic {magic!r} at byte 0")
        version, subject_id, num_modalities, _reserved = r.unpack(
            "<HHHH", "header")
        if version != CONTAINER_VERSION:
            raise UnsupportedVersionError(
                f"unsupported container version {version}")
        if num_modalities != len(CANONICAL_MODALITIES):
            raise ModalityTableError(
                f"modality count {num_modalities} != "
                f"{len(CANONICAL_MODALITIES)}"
            )
        (n,) = r.unpack("<Q", "sample count")
        for i, expected in enumerate(CANONICAL_MODALITIES):
            raw = r.read(8, f"modality name {i}")
            name = raw.rstrip(b"\x00").decode("ascii", errors="replace")
            if name != expected:
                raise ModalityTableError(
                    f"modality {i} is {name!r}, expected {expected!r} "
                    "(canonical order)"
                )
        (rate,) = r.unpack("<I", "sample rate")
        if rate != SAMPLE_RATE_HZ:
            raise FormatError(
                f"sample rate {rate} Hz unsupported; containers carry "
                f"{SAMPLE_RATE_HZ} Hz"
            )
        labels = np.frombuffer(r.read(n, "labels"), dtype=np.uint8).copy()
        modalities: dict[str, np.ndarray] = {}
        for name in CANONICAL_MODALITIES:
            blob = r.read(4 * n, f"samples of {name}")
            modalities[name] = np.frombuffer(blob, dtype="<f4").astype(
                np.float64)
        if not r.at_eof():
            raise FormatError(f"trailing bytes after byte {r.offset}")
    rec = SubjectRecording(subject_id, rate, modalities, labels)
    rec.validate()
    return rec


def resample_linear(seq, from_hz, to_hz) -> np.ndarray:
    """Linear-interpolation resample; endpoints clamp.

    Output length is round(len * to_hz / from_hz).  Equal rates return
    an untouched copy.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise ValueError("sample rates must be positive")
    x = np.asarray(seq, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("resampling needs at least 2 samples")
    if from_hz == to_hz:
        return x.copy()
    if float(from_hz).is_integer() and float(to_hz).is_integer():
        out_len = round(Fraction(n * int(to_hz), int(from_hz)))
    else:
        out_len = round(n * to_hz / from_hz)
    pos = np.arange(out_len, dtype=np.float64) * (from_hz / to_hz)
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = pos - i0
    return x[i0] * (1.0 - frac) + x[i1] * frac


# Synthetic generator constants.  Classes separate within a subject by
# per-modality mean level and by oscillation frequency/amplitude.  With
# subject variation on, each subject draws its own class signatures (and
# a DC offset per modality), so nothing about the class-to-signature
# mapping transfers across subjects; with it off, every subject shares
# the fixed base signature below.
_SYNTH_STREAM = 0x452821E638D01377
_CLASS_RATIOS = (0.55, 0.30, 0.15)
_RAW_CODES = (RAW_CODE_NEUTRAL, RAW_CODE_STRESS, RAW_CODE_AMUSEMENT)
_BASE_FREQ_HZ = (1.3, 4.7, 2.4)
_BASE_AMP = (0.7, 1.6, 1.1)
_BASE_LEVEL = (0.0, 1.9, -1.4)
_MOD_GAIN = tuple(0.6 + 0.1 * m for m in range(len(CANONICAL_MODALITIES)))
_MOD_SIGN = tuple(1 if m % 2 == 0 else -1
                  for m in range(len(CANONICAL_MODALITIES)))
_DC_RANGE = 2.0
_LEVEL_RANGE = 1.8
_FREQ_RANGE_HZ = (1.0, 6.0)
_AMP_RANGE = (0.6, 1.6)
_NOISE_SIGMA = 0.25
_MASK64 = 2 ** 64 - 1


def _subject_rng(seed: int, subject_id: int) -> Rng:
    lane = (subject_id * 0x9E3779B97F4A7C15) & _MASK64
    return Rng.derived(seed, _SYNTH_STREAM ^ lane)


def synth_generate(num_subjects: int, seconds_per_condition: float,
                   seed: int,
                   subject_variation: bool = True) -> list[SubjectRecording]:
    """Deterministic labeled recordings with three contiguous class blocks.

    Total duration is 3 * seconds_per_condition, divided 55/30/15 across
    Neutral, Stress, Amusement in that order.  Each subject's data is a
    pure function of (seed, subject id), independent of how many other
    subjects are generated.

    ``subject_variation`` adds per-subject DC offsets and, because a
    per-subject z-score later removes anything constant, also draws each
    subject's class signatures (mean levels, frequencies, amplitudes)
    privately.  Within a subject the classes stay well separated, but
    across subjects the signature-to-class mapping carries no
    information, which is what starves subject-exclusive training.

    Samples are rounded through f32 so a container round trip
    reproduces them exactly.
    """
    if num_subjects < 1:
        raise ValueError("num_subjects must be >= 1")
    total = int(round(3 * seconds_per_condition * SAMPLE_RATE_HZ))
    n0 = int(round(total * _CLASS_RATIOS[0]))
    n1 = int(round(total * _CLASS_RATIOS[1]))
    block_lens = (n0, n1, total - n0 - n1)
    nmod = len(CANONICAL_MODALITIES)
    base_level = np.array(
        [[_BASE_LEVEL[c] * _MOD_GAIN[m] * _MOD_SIGN[m] for m in range(nmod)]
         for c in range(3)])

    recordings = []
    for s in range(1, num_subjects + 1):
        rng = _subject_rng(seed, s)
        if subject_variation:
            dc = rng.uniform(-_DC_RANGE, _DC_RANGE, nmod)
            freq = rng.uniform(*_FREQ_RANGE_HZ, 3)
            amp = rng.uniform(*_AMP_RANGE, 3)
            level = rng.uniform(-_LEVEL_RANGE, _LEVEL_RANGE,
                                3 * nmod).reshape(3, nmod)
        else:
            dc = np.zeros(nmod)
            freq = np.array(_BASE_FREQ_HZ)
            amp = np.array(_BASE_AMP)
            level = base_level
        phase = [rng.uniform(0.0, 2.0 * math.pi, nmod) for _ in range(3)]

        chunks = []
        label_chunks = []
        for c, n in enumerate(block_lens):
            t = np.arange(n, dtype=np.float64) / SAMPLE_RATE_HZ
            noise = rng.normals(nmod * n).reshape(nmod, n)
            block = np.empty((nmod, n))
            for m in range(nmod):
                wave = amp[c] * _MOD_GAIN[m] * np.sin(
                    2.0 * math.pi * freq[c] * t + phase[c][m])
                block[m] = (level[c, m] + wave + dc[m]
                            + _NOISE_SIGMA * noise[m])
            chunks.append(block)
            label_chunks.append(np.full(n, _RAW_CODES[c], dtype=np.uint8))

        signal = np.concatenate(chunks, axis=1)
        signal = signal.astype(np.float32).astype(np.float64)
        modalities = {name: signal[m].copy()
                      for m, name in enumerate(CANONICAL_MODALITIES)}
        recordings.append(SubjectRecording(
            subject_id=s,
            sample_rate=SAMPLE_RATE_HZ,
            modalities=modalities,
            labels=np.concatenate(label_chunks),
        ))
    return recordings
