"""Reading and writing per-sample score files.

CSV layout (UTF-8, one header row)::

    id,label,v1,...,vC,kind

``label`` is the true class index, ``v1..vC`` are softmax probabilities or
logits and ``kind`` is ``softmax`` or ``logits`` (one kind per file).  The
JSON-lines equivalent has one object per line with keys ``id``, ``label``,
``values`` (a list) and ``kind``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from doctor.scoring import InvalidDistributionError, validate_probs

KINDS = ("softmax", "logits")


class ScoreFileError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class ScoreFile:
    ids: list
    labels: np.ndarray
    values: np.ndarray  # (n, C)
    kind: str

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return len(self.ids)


def _check_row(values, kind, line):
    if kind not in KINDS:
        raise ScoreFileError(f"kind must be one of {KINDS}, got {kind!r}", line)
    if not np.all(np.isfinite(values)):
        raise ScoreFileError("values must be finite", line)
    if kind == "softmax":
        try:
            validate_probs(values)
        except InvalidDistributionError as exc:
            raise ScoreFileError(str(exc), line) from None


def _build(ids, labels, rows, kinds, lines):
    if not rows:
        raise ScoreFileError("no records")
    if len(set(kinds)) > 1:
        raise ScoreFileError(f"mixed kinds {sorted(set(kinds))}", lines[kinds.index(kinds[-1])])
    values = np.array(rows, dtype=np.float64)
    labels = np.array(labels, dtype=np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= values.shape[1]))
    if bad.size:
        raise ScoreFileError(f"label {labels[bad[0]]} outside 0..{values.shape[1] - 1}", lines[bad[0]])
    return ScoreFile(ids, labels, values, kinds[0])


def parse_csv(text: str) -> ScoreFile:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ScoreFileError("empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 5 or header[:2] != ["id", "label"] or header[-1] != "kind":
        raise ScoreFileError("header must be id,label,v1..vC,kind", 1)
    C = len(header) - 3
    if header[2:-1] != [f"v{i}" for i in range(1, C + 1)]:
        raise ScoreFileError("value columns must be named v1..vC", 1)
    ids, labels, rows, kinds, lines = [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != C + 3:
            raise ScoreFileError(f"expected {C + 3} fields, got {len(row)}", lineno)
        try:
            label = int(row[1])
            values = [float(v) for v in row[2:-1]]
        except ValueError as exc:
            raise ScoreFileError(f"unparseable field ({exc})", lineno) from None
        kind = row[-1].strip()
        _check_row(np.array(values), kind, lineno)
        ids.append(row[0])
        labels.append(label)
        rows.append(values)
        kinds.append(kind)
        lines.append(lineno)
    return _build(ids, labels, rows, kinds, lines)


def parse_jsonl(text: str) -> ScoreFile:
    ids, labels, rows, kinds, lines = [], [], [], [], []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            rid, label, values, kind = str(rec["id"]), int(rec["label"]), \
                [float(v) for v in rec["values"]], rec["kind"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ScoreFileError(f"malformed record ({exc})", lineno) from None
        if width is None:
            width = len(values)
        if len(values) != width or width < 2:
            raise ScoreFileError(f"expected {width} values, got {len(values)}", lineno)
        _check_row(np.array(values), kind, lineno)
        ids.append(rid)
        labels.append(label)
        rows.append(values)
        kinds.append(kind)
        lines.append(lineno)
    return _build(ids, labels, rows, kinds, lines)


def read_score_file(path) -> ScoreFile:
    """Load a ``.csv`` or ``.jsonl`` score file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".jsonl", ".ndjson"):
        return parse_jsonl(text)
    return parse_csv(text)


def format_csv(sf: ScoreFile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", *[f"v{i}" for i in range(1, sf.n_classes + 1)], "kind"])
    for rid, label, row in zip(sf.ids, sf.labels, sf.values):
        w.writerow([rid, int(label), *[repr(float(v)) for v in row], sf.kind])
    return buf.getvalue()


def write_score_file(sf: ScoreFile, path) -> None:
    path = Path(path)
    if path.suffix in (".jsonl", ".ndjson"):
        lines = [json.dumps({"id": rid, "label": int(lab), "values": [float(v) for v in row], "kind": sf.kind})
                 for rid, lab, row in zip(sf.ids, sf.labels, sf.values)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        path.write_text(format_csv(sf), encoding="utf-8")
