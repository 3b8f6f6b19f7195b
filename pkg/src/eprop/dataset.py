"""Corpus indexing, audio and transcript readers, the synthetic task and feature caches."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheError, FormatError, IndexingError, InputError

log = logging.getLogger(__name__)

N_PHONES = 61
SAMPLE_RATE = 16000

# Speakers of the standard TIMIT core test set (TIMIT documentation, "core
# test set": two male and one female speaker per dialect region).
CORE_TEST_SPEAKERS = frozenset({
    "MDAB0", "MWBT0", "FELC0",
    "MTAS1", "MWEW0", "FPAS0",
    "MJMP0", "MLNT0", "FPKT0",
    "MLLL0", "MTLS0", "FJLM0",
    "MBPM0", "MKLT0", "FNLP0",
    "MCMJ0", "MJDH0", "FMGD0",
    "MGRT0", "MNJM0", "FDHC0",
    "MJLN0", "MPAM0", "FMLD0",
})

TIMIT_COUNTS = {"train": 3696, "val": 400, "test": 192}


@dataclass
class Utterance:
    features: np.ndarray  # (T, C)
    labels: np.ndarray    # (T,) class indices
    uid: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputError("features must be a (frames, channels) array")
        if len(self.labels) != len(self.features):
            raise InputError("one label per frame is required")


# --- phone map --------------------------------------------------------------

class PhoneMap:
    """Phone string <-> class index, assigned in encounter order, at most 61 entries."""

    def __init__(self, phones=(), capacity=N_PHONES):
        self.capacity = capacity
        self._index = {}
        self._phones = []
        for p in phones:
            self.add(p)

    def add(self, phone):
        if phone in self._index:
            return self._index[phone]
        if len(self._phones) >= self.capacity:
            raise FormatError(f"phone {phone!r} does not fit: map already holds {self.capacity}")
        self._index[phone] = len(self._phones)
        self._phones.append(phone)
        return self._index[phone]

    def __getitem__(self, phone):
        return self._index[phone]

    def __contains__(self, phone):
        return phone in self._index

    def __len__(self):
        return len(self._phones)

    def phone(self, index):
        return self._phones[index]

    @property
    def phones(self):
        return list(self._phones)


# --- transcripts and audio ------------------------------------------------------

@dataclass(frozen=True)
class PhoneInterval:
    start: int
    end: int
    phone: str


def read_phones(path, phone_map=None):
    """Parse ``start end phone`` lines; sort them and warn about gaps or overlaps.

    When ``phone_map`` is given, unseen phones are added to it (which fails
    once it is full).
    """
    intervals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'start end phone'")
            start, end, phone = int(parts[0]), int(parts[1]), parts[2]
            if end <= start:
                raise FormatError(f"{path}:{lineno}: empty interval")
            intervals.append(PhoneInterval(start, end, phone))
    if not intervals:
        raise FormatError(f"{path}: no phone intervals")
    ordered = sorted(intervals, key=lambda iv: (iv.start, iv.end))
    if ordered != intervals:
        log.warning("%s: phone lines out of order, sorted", path)
    for a, b in zip(ordered, ordered[1:]):
        if b.start != a.end:
            log.warning("%s: gap or overlap between samples %d and %d", path, a.end, b.start)
    if phone_map is not None:
        for iv in ordered:
            phone_map.add(iv.phone)
    return ordered


def _parse_sphere_header(raw):
    lines = raw.split(b"\n")
    fields = {}
    for line in lines[2:]:
        line = line.strip()
        if not line:
            continue
        if line == b"end_head":
            break
        parts = line.split(None, 2)
        if len(parts) != 3:
            continue
        key, typ, value = parts[0].decode(), parts[1], parts[2]
        if typ == b"-i":
            fields[key] = int(value)
        elif typ == b"-r":
            fields[key] = float(value)
        else:
            fields[key] = value.decode(errors="replace").strip()
    return fields


def _read_sphere(data, path):
    head = data[:16].split(b"\n")
    try:
        header_len = int(head[1].strip())
    except (IndexError, ValueError):
        raise FormatError(f"{path}: malformed SPHERE header") from None
    fields = _parse_sphere_header(data[:header_len])
    rate = fields.get("sample_rate")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if fields.get("channel_count", 1) != 1:
        raise FormatError(f"{path}: only mono audio is supported")
    if fields.get("sample_n_bytes", 2) != 2:
        raise FormatError(f"{path}: only 16-bit samples are supported")
    coding = fields.get("sample_coding", "pcm")
    if coding != "pcm":
        raise FormatError(f"{path}: unsupported sample coding {coding!r}")
    order = fields.get("sample_byte_format", "01")
    dtype = {"01": "<i2", "10": ">i2", "1": "<i2"}.get(order)
    if dtype is None:
        raise FormatError(f"{path}: unsupported byte format {order!r}")
    payload = data[header_len:]
    n = fields.get("sample_count", len(payload) // 2)
    if len(payload) < 2 * n:
        raise FormatError(f"{path}: truncated audio payload")
    return np.frombuffer(payload[:2 * n], dtype=dtype).astype(float)


def _read_riff(path):
    try:
        with wave.open(str(path), "rb") as w:
            if w.getframerate() != SAMPLE_RATE:
                raise FormatError(f"{path}: sample rate {w.getframerate()}, expected {SAMPLE_RATE}")
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise FormatError(f"{path}: only mono 16-bit PCM is supported")
            frames = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from None
    return np.frombuffer(frames, dtype="<i2").astype(float)


def read_audio(path):
    """Samples of a 16 kHz mono 16-bit file in RIFF WAV or NIST SPHERE format."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(b"NIST_1A"):
        return _read_sphere(data, path)
    if data.startswith(b"RIFF"):
        return _read_riff(path)
    raise FormatError(f"{path}: neither RIFF nor NIST SPHERE")


def write_wav(path, samples, rate=SAMPLE_RATE):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def write_sphere(path, samples, rate=SAMPLE_RATE, header_len=1024):
    """Write a minimal little-endian PCM SPHERE file."""
    samples = np.asarray(samples, dtype="<i2")
    body = (
        f"sample_count -i {len(samples)}\n"
        f"sample_rate -i {rate}\n"
        "channel_count -i 1\n"
        "sample_n_bytes -i 2\n"
        "sample_byte_format -s2 01\n"
        "sample_coding -s3 pcm\n"
        "end_head\n"
    )
    header = f"NIST_1A\n{header_len:>7d}\n{body}".encode()
    if len(header) > header_len:
        raise FormatError("SPHERE header does not fit")
    with open(path, "wb") as fh:
        fh.write(header.ljust(header_len, b" "))
        fh.write(samples.tobytes())


# --- corpus index -------------------------------------------------------------

@dataclass
class UtteranceRecord:
    uid: str
    audio: str
    phones: str
    speaker: str
    dialect: str
    sentence_type: str
    split: str = ""


@dataclass
class CorpusIndex:
    records: list = field(default_factory=list)

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def counts(self):
        return {name: len(self.split(name)) for name in ("train", "val", "test")}

    def speakers(self, name):
        return {r.speaker for r in self.split(name)}


def _find_child(path, name):
    for child in path.iterdir():
        if child.name.lower() == name.lower():
            return child
    return None


def index_corpus(root_dir, seed=0, n_val=400, strict=False):
    """Index a TIMIT tree into train / val / test records.

    Training material is every non-SA sentence under TRAIN. The test split is
    the core test set (non-SA sentences of the core speakers). Validation
    sentences are drawn by a seeded shuffle from the remaining TEST speakers.
    With ``strict=True`` the split sizes must equal 3696 / 400 / 192.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IndexingError(f"corpus root {root} is not a directory", [root])
    records = []
    missing = []
    for part in ("TRAIN", "TEST"):
        part_dir = _find_child(root, part)
        if part_dir is None:
            raise IndexingError(f"missing {part} directory under {root}", [root / part])
        for dr in sorted(p for p in part_dir.iterdir() if p.is_dir()):
            for spk in sorted(p for p in dr.iterdir() if p.is_dir()):
                for wav in sorted(spk.iterdir()):
                    if wav.suffix.lower() != ".wav":
                        continue
                    stem = wav.stem
                    phn = next((wav.with_suffix(s) for s in (".phn", ".PHN")
                                if wav.with_suffix(s).exists()), None)
                    if phn is None:
                        missing.append(wav)
                        continue
                    speaker = spk.name.upper()
                    records.append(UtteranceRecord(
                        uid=f"{part_dir.name.upper()}/{dr.name.upper()}/{speaker}/{stem.upper()}",
                        audio=str(wav), phones=str(phn), speaker=speaker,
                        dialect=dr.name.upper(), sentence_type=stem[:2].upper(),
                        split=part.lower()))
    if missing:
        raise IndexingError("audio files without a phone transcript", missing)
    if not records:
        raise IndexingError(f"no utterances found under {root}", [root])

    records = [r for r in records if r.sentence_type != "SA"]
    pool = []
    for r in records:
        if r.split == "train":
            continue
        if r.speaker in CORE_TEST_SPEAKERS:
            r.split = "test"
        else:
            r.split = ""
            pool.append(r)
    order = np.random.default_rng(seed).permutation(len(pool))
    for k, i in enumerate(order):
        pool[i].split = "val" if k < n_val else ""
    index = CorpusIndex([r for r in records if r.split])

    overlap = (index.speakers("train") | index.speakers("val")) & index.speakers("test")
    if overlap:
        raise IndexingError("speakers present in both training and test material", sorted(overlap))
    if strict:
        counts = index.counts()
        if counts != TIMIT_COUNTS:
            raise IndexingError(f"unexpected split sizes {counts}, expected {TIMIT_COUNTS}")
    return index


# --- synthetic task -------------------------------------------------------------

def synthetic_task(seed, n_classes, n_samples, t_len, n_channels=39, separation=1.0,
                   smoothing=0.8, noise=1.0, offset=1.0):
    """Class-conditional smoothed Gaussian sequences with one label per sample.

    Each class owns a random mean pattern over the channels; a sample is that
    pattern (times ``separation``) plus exponentially smoothed Gaussian noise.
    Deterministic for a given ``seed``.
    """
    if n_classes < 1 or n_samples < 0 or t_len < 1:
        raise InputError("n_classes >= 1, n_samples >= 0 and t_len >= 1 are required")
    rng = np.random.default_rng(seed)
    patterns = rng.normal(size=(n_classes, n_channels))
    labels = rng.integers(0, n_classes, size=n_samples)
    out = []
    scale = noise * np.sqrt(1.0 - smoothing ** 2)
    for i, c in enumerate(labels):
        eps = rng.normal(size=(t_len, n_channels))
        smooth = np.empty_like(eps)
        smooth[0] = noise * eps[0]
        for t in range(1, t_len):
            smooth[t] = smoothing * smooth[t - 1] + scale * eps[t]
        feats = offset + separation * patterns[c] + smooth
        out.append(Utterance(feats, np.full(t_len, c), uid=f"syn{i}"))
    return out


def synthetic_splits(seed, n_classes, n_train, n_val, t_len, **kwargs):
    data = synthetic_task(seed, n_classes, n_train + n_val, t_len, **kwargs)
    return data[:n_train], data[n_train:]


# --- feature cache ------------------------------------------------------------

CACHE_MAGIC = b"EPFT"
CACHE_VERSION = 1
_CACHE_HEAD = struct.Struct("<4sIIIB")


def write_cache(path, utterance, with_labels=True):
    feats = np.ascontiguousarray(utterance.features, dtype="<f4")
    n_frames, n_ch = feats.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEAD.pack(CACHE_MAGIC, CACHE_VERSION, n_frames, n_ch, int(with_labels)))
        fh.write(feats.tobytes())
        if with_labels:
            labels = np.asarray(utterance.labels)
            if labels.min(initial=0) < 0 or labels.max(initial=0) > 0xFFFF:
                raise CacheError("labels do not fit in 16 bits")
            fh.write(labels.astype("<u2").tobytes())


def read_cache(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _CACHE_HEAD.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, n_frames, n_ch, has_labels = _CACHE_HEAD.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    expected = _CACHE_HEAD.size + 4 * n_frames * n_ch + (2 * n_frames if has_labels else 0)
    if len(data) != expected:
        raise CacheError(f"{path}: length mismatch ({len(data)} bytes, header implies {expected})")
    off = _CACHE_HEAD.size
    feats = np.frombuffer(data, dtype="<f4", count=n_frames * n_ch, offset=off)
    feats = feats.reshape(n_frames, n_ch).astype(float)
    if has_labels:
        labels = np.frombuffer(data, dtype="<u2", count=n_frames, offset=off + 4 * n_frames * n_ch)
    else:
        labels = np.zeros(n_frames)
    return Utterance(feats, labels.astype(np.int64), uid=Path(path).stem)


def config_hash(feature_config):
    blob = json.dumps(asdict(feature_config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Manifest:
    phones: list
    mean: list
    std: list
    splits: dict
    feature_hash: str
    version: int = 1

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path, feature_config=None):
        with open(path) as fh:
            raw = json.load(fh)
        m = cls(**raw)
        if feature_config is not None and m.feature_hash != config_hash(feature_config):
            raise CacheError(f"{path}: feature configuration changed since the cache was written")
        return m


def cache_filename(uid):
    return uid.replace("/", "_") + ".eft"


def load_split(cache_dir, name, feature_config=None):
    """Read every cached utterance of a split, checking the manifest hash."""
    cache_dir = Path(cache_dir)
    manifest = Manifest.load(cache_dir / "manifest.json", feature_config)
    if name not in manifest.splits:
        raise CacheError(f"split {name!r} not in manifest")
    return [read_cache(cache_dir / cache_filename(uid)) for uid in manifest.splits[name]]


def timit_root(path=None):
    """Corpus root: explicit path, else the ``EPROP_DATA_ROOT`` environment variable."""
    return path or os.environ.get("EPROP_DATA_ROOT")
