"""Corpus ingestion, preprocessing, label construction, train/test
splitting, and (de)serialization of corpora, labels, and model states.

Wire formats:
  * corpus: JSON-lines, one object per line with keys patient_id, source,
    tokens, labels (labels may appear on any record of a patient and are
    unioned per patient);
  * explicit label streams: CSV with header patient_id,label;
  * model state: JSON container with format_version "ss3m-state-v1".
"""

import csv
import json
import logging
import os
import tempfile
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, VersionError
from .model import (
    LABEL_PRESENT,
    LABEL_UNKNOWN,
    Corpus,
    LabelMatrix,
    ModelState,
)

logger = logging.getLogger(__name__)

STATE_FORMAT_VERSION = "ss3m-state-v1"
CORPUS_FORMAT_VERSION = "ss3m-corpus-v1"
LABELS_FORMAT_VERSION = "ss3m-labels-v1"
_RECORD_FIELDS = {"patient_id", "source", "tokens", "labels"}


@dataclass
class RawRecord:
    patient_id: str
    source: str
    tokens: list
    labels: list = field(default_factory=list)


@dataclass(frozen=True)
class PreprocessConfig:
    """Token filters: stopwords, minimum corpus count, maximum fraction of
    patients a token may appear in. Per-source overrides map a source name
    to another PreprocessConfig."""

    stopwords: frozenset = frozenset()
    min_count: int = 0
    max_doc_fraction: float = 1.0

    def __post_init__(self):
        if self.min_count < 0:
            raise ConfigError("min_count must be >= 0")
        if not 0.0 < self.max_doc_fraction <= 1.0:
            raise ConfigError("max_doc_fraction must lie in (0, 1]")
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))


@dataclass(frozen=True)
class Split:
    train_indices: np.ndarray
    test_indices: np.ndarray


def load_raw(path) -> list:
    """Parse a JSON-lines corpus file into RawRecords, in file order."""
    records = []
    unknown_fields = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON on line {lineno}: {exc}")
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {lineno} is not a JSON object")
            missing = {"patient_id", "source", "tokens"} - obj.keys()
            if missing:
                raise DataError(
                    f"{path}: line {lineno} missing fields {sorted(missing)}")
            unknown_fields += len(obj.keys() - _RECORD_FIELDS)
            pid = obj["patient_id"]
            if not isinstance(pid, str) or not pid:
                raise DataError(f"{path}: line {lineno}: empty patient_id")
            records.append(RawRecord(
                patient_id=pid,
                source=str(obj["source"]),
                tokens=[str(t) for t in obj["tokens"]],
                labels=[str(l) for l in obj.get("labels", [])],
            ))
    if unknown_fields:
        logger.warning("%s: ignored %d unknown field(s)", path, unknown_fields)
    return records


def _patient_order(records) -> list:
    seen = OrderedDict()
    for rec in records:
        seen.setdefault(rec.patient_id, None)
    return list(seen)


def preprocess(records, config):
    """Build a Corpus from raw records after stopword/frequency filtering.

    config is a PreprocessConfig or a dict mapping source name to one
    (per-source overrides; a "*" entry is the default). Vocabularies are
    sorted lexicographically per source, so the string-to-ID map depends
    only on the surviving token multiset. Patients ending with zero tokens
    in every source are dropped (count logged).

    Returns (Corpus, patient_ids).
    """
    if not records:
        raise DataError("no records to preprocess")

    def cfg_for(source):
        if isinstance(config, PreprocessConfig):
            return config
        if source in config:
            return config[source]
        if "*" in config:
            return config["*"]
        raise ConfigError(f"no preprocess config for source {source!r}")

    patients = _patient_order(records)
    pidx = {pid: i for i, pid in enumerate(patients)}
    sources = sorted({rec.source for rec in records})
    D = len(patients)

    # token streams per (source, patient), duplicates concatenated in order
    streams = {s: [[] for _ in range(D)] for s in sources}
    for rec in records:
        streams[rec.source][pidx[rec.patient_id]].extend(rec.tokens)

    vocab = []
    tokens = []
    for s in sources:
        cfg = cfg_for(s)
        total = Counter()
        doc_count = Counter()
        for doc in streams[s]:
            total.update(doc)
            doc_count.update(set(doc))
        keep = {
            tok for tok, cnt in total.items()
            if tok not in cfg.stopwords
            and cnt >= cfg.min_count
            and doc_count[tok] / D <= cfg.max_doc_fraction
        }
        if not keep:
            raise ConfigError(
                f"preprocessing left an empty vocabulary for source {s!r}")
        voc = sorted(keep)
        tok2id = {tok: i for i, tok in enumerate(voc)}
        vocab.append(voc)
        tokens.append([
            np.array([tok2id[t] for t in doc if t in keep], dtype=np.int64)
            for doc in streams[s]
        ])

    empty = [d for d in range(D)
             if all(tokens[si][d].size == 0 for si in range(len(sources)))]
    if empty:
        logger.warning("dropping %d patient(s) with no surviving tokens",
                       len(empty))
        keep_idx = [d for d in range(D) if d not in set(empty)]
        tokens = [[per_source[d] for d in keep_idx] for per_source in tokens]
        patients = [patients[d] for d in keep_idx]

    return Corpus(vocab=vocab, tokens=tokens), patients


def build_labels(records, top_k: int, patient_ids=None) -> LabelMatrix:
    """Label matrix over the top_k most frequent label names (patient-level
    frequency, ties broken lexicographically). Cells are Present where the
    patient carries the label and Unknown otherwise; Absent is reserved for
    explicit negative label streams."""
    if top_k < 1:
        raise ConfigError("top_k must be positive")
    per_patient = {}
    for rec in records:
        per_patient.setdefault(rec.patient_id, set()).update(rec.labels)
    if patient_ids is None:
        patient_ids = _patient_order(records)

    freq = Counter()
    for labels in per_patient.values():
        freq.update(labels)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) < top_k:
        logger.warning("only %d distinct labels available (requested %d)",
                       len(ranked), top_k)
    names = [name for name, _ in ranked[:top_k]]

    entries = np.full((len(patient_ids), len(names)), LABEL_UNKNOWN,
                      dtype=np.int8)
    col = {name: j for j, name in enumerate(names)}
    for i, pid in enumerate(patient_ids):
        for name in per_patient.get(pid, ()):
            j = col.get(name)
            if j is not None:
                entries[i, j] = LABEL_PRESENT
    return LabelMatrix(entries=entries, label_names=names)


def load_label_csv(path, patient_ids, label_names) -> LabelMatrix:
    """Explicit label stream: CSV with header patient_id,label; cells are
    Present where listed, Unknown otherwise."""
    pidx = {pid: i for i, pid in enumerate(patient_ids)}
    col = {name: j for j, name in enumerate(label_names)}
    entries = np.full((len(patient_ids), len(label_names)), LABEL_UNKNOWN,
                      dtype=np.int8)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                {"patient_id", "label"} - set(reader.fieldnames):
            raise DataError(f"{path}: expected header patient_id,label")
        for row in reader:
            i = pidx.get(row["patient_id"])
            j = col.get(row["label"])
            if i is not None and j is not None:
                entries[i, j] = LABEL_PRESENT
    return LabelMatrix(entries=entries, label_names=list(label_names))


def split(corpus: Corpus, labels: LabelMatrix, train_fraction: float,
          seed: int):
    """Uniform random patient-level split; both halves share the vocabulary
    objects. Returns ((train_corpus, train_labels), (test_corpus,
    test_labels), Split)."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie strictly in (0, 1)")
    D = corpus.num_patients
    n_train = int(round(train_fraction * D))
    if n_train < 1 or n_train > D - 1:
        raise DataError("split would leave a side with zero patients")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(D)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])

    def take(indices):
        sub = Corpus(
            vocab=corpus.vocab,  # shared, IDs identical across halves
            tokens=[[per_source[d] for d in indices]
                    for per_source in corpus.tokens],
        )
        lab = None
        if labels is not None:
            lab = LabelMatrix(entries=labels.entries[indices],
                              label_names=labels.label_names)
        return sub, lab

    return take(train_idx), take(test_idx), Split(train_idx, test_idx)


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_state(state: ModelState, path, extra=None):
    """Write a ModelState as a versioned JSON container (atomic)."""
    payload = {
        "format_version": STATE_FORMAT_VERSION,
        "theta": state.theta.tolist(),
        "phi": [p.tolist() for p in state.phi],
        "z": [[zz.tolist() for zz in per_source] for per_source in state.z],
        "A": state.A.tolist(),
        "B": state.B.tolist(),
        "Bstar": float(state.Bstar),
    }
    if extra:
        payload["meta"] = extra
    _atomic_write(path, json.dumps(payload))


def load_state(path):
    """Inverse of save_state. Returns (ModelState, meta dict)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: not a valid state container: {exc}")
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise DataError(f"{path}: missing format_version field")
    version = payload["format_version"]
    if version != STATE_FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version!r} is not supported "
            f"(expected {STATE_FORMAT_VERSION!r})")
    state = ModelState(
        theta=np.array(payload["theta"], dtype=float),
        phi=[np.array(p, dtype=float) for p in payload["phi"]],
        z=[[np.array(zz, dtype=np.int64) for zz in per_source]
           for per_source in payload["z"]],
        A=np.array(payload["A"], dtype=np.int8),
        B=np.array(payload["B"], dtype=float),
        Bstar=float(payload["Bstar"]),
    )
    return state, payload.get("meta", {})


def _load_container(path, expected_version):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: not a valid container: {exc}")
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise DataError(f"{path}: missing format_version field")
    version = payload["format_version"]
    if version != expected_version:
        raise VersionError(
            f"{path}: format version {version!r} is not supported "
            f"(expected {expected_version!r})")
    return payload


def save_corpus(corpus: Corpus, patient_ids, path, source_names=None):
    """Preprocessed-corpus container (token IDs, shared vocab)."""
    if source_names is None:
        source_names = [f"source{s}" for s in range(corpus.num_sources)]
    payload = {
        "format_version": CORPUS_FORMAT_VERSION,
        "patient_ids": list(patient_ids),
        "sources": list(source_names),
        "vocab": [list(v) for v in corpus.vocab],
        "tokens": [[w.tolist() for w in per_source]
                   for per_source in corpus.tokens],
    }
    _atomic_write(path, json.dumps(payload))


def load_corpus(path):
    """Returns (Corpus, patient_ids, source_names)."""
    payload = _load_container(path, CORPUS_FORMAT_VERSION)
    corpus = Corpus(
        vocab=[list(v) for v in payload["vocab"]],
        tokens=[[np.array(w, dtype=np.int64) for w in per_source]
                for per_source in payload["tokens"]],
    )
    return corpus, list(payload["patient_ids"]), list(payload["sources"])


def save_labels(labels: LabelMatrix, patient_ids, path):
    payload = {
        "format_version": LABELS_FORMAT_VERSION,
        "patient_ids": list(patient_ids),
        "label_names": list(labels.label_names),
        "entries": labels.entries.tolist(),
    }
    _atomic_write(path, json.dumps(payload))


def load_labels(path):
    """Returns (LabelMatrix, patient_ids)."""
    payload = _load_container(path, LABELS_FORMAT_VERSION)
    labels = LabelMatrix(
        entries=np.array(payload["entries"], dtype=np.int8),
        label_names=list(payload["label_names"]),
    )
    return labels, list(payload["patient_ids"])


def save_corpus_jsonl(corpus: Corpus, labels, path, patient_ids=None,
                      source_names=None):
    """Write a corpus (and Present labels, attached to each patient's first
    record) back to the JSON-lines wire format."""
    D = corpus.num_patients
    if patient_ids is None:
        patient_ids = [f"p{d:06d}" for d in range(D)]
    if source_names is None:
        source_names = [f"source{s}" for s in range(corpus.num_sources)]
    lines = []
    for d in range(D):
        present = []
        if labels is not None:
            present = [labels.label_names[j]
                       for j in np.flatnonzero(
                           labels.entries[d] == LABEL_PRESENT)]
        for s in range(corpus.num_sources):
            obj = {
                "patient_id": patient_ids[d],
                "source": source_names[s],
                "tokens": [corpus.vocab[s][v] for v in corpus.tokens[s][d]],
                "labels": present if s == 0 else [],
            }
            lines.append(json.dumps(obj))
    _atomic_write(path, "\n".join(lines) + "\n")
