"""File formats: dataset CSV, model JSON, calibrated-output CSV.

Floats are written with 17 significant digits so 64-bit values survive a
round trip unchanged. Every write goes to a temporary file that is then
renamed over the target.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .core import Dataset
from .errors import SchemaError, ValidationError
from .model import BatchOutput, MetaCalModel

SCHEMA_VERSION = 1

_COLUMN = re.compile(r"^([pz])(\d+)$")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, doc: Any) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


def read_json(path: str | os.PathLike) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(
            f"invalid JSON in {path}: {exc.msg}", path=str(path), line=exc.lineno, column=exc.colno
        ) from None


def _parse_header(header: list[str]) -> tuple[str, list[int], int, int | None]:
    family = None
    prob_cols: dict[int, int] = {}
    label_col = id_col = None
    for pos, name in enumerate(h.strip() for h in header):
        m = _COLUMN.match(name)
        if m:
            if family is None:
                family = m.group(1)
            elif family != m.group(1):
                raise SchemaError("dataset mixes probability (p*) and logit (z*) columns", line=1)
            idx = int(m.group(2))
            if idx in prob_cols:
                raise SchemaError(f"duplicate column {name}", line=1)
            prob_cols[idx] = pos
        elif name == "label":
            label_col = pos
        elif name == "id":
            id_col = pos
        else:
            raise SchemaError(f"unexpected column {name!r}", line=1)
    if family is None:
        raise SchemaError("no p0.. or z0.. columns in header", line=1)
    if label_col is None:
        raise SchemaError("missing label column", line=1)
    k = len(prob_cols)
    if sorted(prob_cols) != list(range(k)):
        raise SchemaError(f"{family} columns must be numbered 0..{k - 1}", line=1)
    return family, [prob_cols[i] for i in range(k)], label_col, id_col


def read_dataset(path: str | os.PathLike, *, one_based_labels: bool = False) -> Dataset:
    """Load a dataset CSV.

    The header holds either ``p0..p{k-1}`` (probabilities) or ``z0..z{k-1}``
    (logits), a ``label`` column and optionally ``id``. With
    ``one_based_labels`` labels are shifted down by one on read.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty", line=1) from None
        family, cols, label_col, id_col = _parse_header(header)
        rows, labels, ids = [], [], []
        for record in reader:
            if not record or all(not f.strip() for f in record):
                continue
            line = reader.line_num
            if len(record) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(record)}", line=line)
            try:
                rows.append([float(record[c]) for c in cols])
                label = int(record[label_col])
            except ValueError as exc:
                raise SchemaError(f"cannot parse row: {exc}", line=line) from None
            labels.append(label - 1 if one_based_labels else label)
            if id_col is not None:
                ids.append(record[id_col])
    if not rows:
        raise SchemaError(f"{path} has no data rows", line=2)
    arr = np.array(rows, dtype=np.float64)
    try:
        if family == "z":
            return Dataset.from_logits(arr, labels, ids if id_col is not None else None)
        return Dataset(arr, labels, ids if id_col is not None else None)
    except ValidationError as exc:
        if "row" in exc.context:
            exc.context["line"] = int(exc.context["row"]) + 2
        raise


def dataset_csv(data: Dataset, *, logits: bool = False) -> str:
    if logits and data.logits is None:
        raise ValidationError("dataset carries no logits")
    values = data.logits if logits else data.probs
    prefix = "z" if logits else "p"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ([] if data.ids is None else ["id"]) + [f"{prefix}{j}" for j in range(data.k)] + ["label"]
    w.writerow(header)
    for i in range(data.n):
        lead = [] if data.ids is None else [data.ids[i]]
        w.writerow(lead + [fmt(x) for x in values[i]] + [int(data.labels[i])])
    return buf.getvalue()


def write_dataset(path: str | os.PathLike, data: Dataset, *, logits: bool = False) -> None:
    atomic_write_text(path, dataset_csv(data, logits=logits))


def outputs_csv(out: BatchOutput, ids=None) -> str:
    n, k = out.probs.shape
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"q{j}" for j in range(k)] + ["accepted", "score"])
    for i in range(n):
        w.writerow([ids[i]] + [fmt(x) for x in out.probs[i]] + [int(out.accepted[i]), fmt(out.scores[i])])
    return buf.getvalue()


def read_outputs(path: str | os.PathLike) -> tuple[list[str], BatchOutput]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        k = sum(1 for c in reader.fieldnames or () if re.fullmatch(r"q\d+", c))
        ids, probs, accepted, scores = [], [], [], []
        for row in reader:
            ids.append(row["id"])
            probs.append([float(row[f"q{j}"]) for j in range(k)])
            accepted.append(row["accepted"] == "1")
            scores.append(float(row["score"]))
    return ids, BatchOutput(np.array(probs), np.array(accepted), np.array(scores))


def model_document(model: MetaCalModel) -> dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, **model.to_dict()}


def write_model(path: str | os.PathLike, model: MetaCalModel) -> None:
    write_json(path, model_document(model))


def model_from_document(doc: Any) -> MetaCalModel:
    if not isinstance(doc, dict):
        raise SchemaError("model file must hold a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}", expected=SCHEMA_VERSION)
    return MetaCalModel.from_dict(doc)


def read_model(path: str | os.PathLike) -> MetaCalModel:
    return model_from_document(read_json(path))
