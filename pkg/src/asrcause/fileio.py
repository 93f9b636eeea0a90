"""Reading and writing records, lexicons, datasets and provenance-stamped artifacts.

Every written artifact carries a provenance header. All fields except the
creation time are a pure function of inputs, config and seed; the time sits
alone under the ``created`` key (``# created:`` line in CSV, ``// created:``
in DOT), so repeated runs differ only there. Setting ``SOURCE_DATE_EPOCH``
pins it too.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import platform
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import FrequencyLexicon, UtteranceRecord, tokenize
from .graph import DiscreteDataset, VariableSchema

RECORD_COLUMNS = ("utt_id", "age_years", "gender", "snr_db", "ref", "hyp")
OPTIONAL_RECORD_COLUMNS = ("gop_utt",)
TOTAL_KEY = "__TOTAL__"
CREATED_KEY = "created"


class DataError(ValueError):
    """Malformed or missing input data."""


# provenance

def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_STAMP = re.compile(rb'"created": "[^"]*"|^(#|//) created: .*$', re.MULTILINE)


def file_digest(path) -> str:
    """Content hash with creation stamps blanked, so digests chain reproducibly."""
    with open(path, "rb") as fh:
        blob = _STAMP.sub(b"", fh.read())
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(command: str, config: Mapping, seed=None, **extra) -> dict:
    from . import __version__
    from .scm import RNG_ALGORITHM

    out = {
        "tool": "asrcause",
        "version": __version__,
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "rng": RNG_ALGORITHM,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }
    out.update(extra)
    return out


def created_stamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        when = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        when = _dt.datetime.now(tz=_dt.timezone.utc)
    return when.replace(microsecond=0).isoformat()


def header_lines(prov: Mapping | None, prefix: str = "# ") -> list[str]:
    if prov is None:
        return []
    return [
        f"{prefix}provenance: {json.dumps(dict(prov), sort_keys=True)}",
        f"{prefix}{CREATED_KEY}: {created_stamp()}",
    ]


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_json(path, payload: Mapping, prov: Mapping | None = None) -> Path:
    obj = {}
    if prov is not None:
        obj["provenance"] = dict(prov)
        obj[CREATED_KEY] = created_stamp()
    obj.update(payload)
    return write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def write_jsonl(path, events: Iterable[Mapping], prov: Mapping | None = None) -> Path:
    lines = []
    if prov is not None:
        lines.append(json.dumps({"event": "provenance", **prov, CREATED_KEY: created_stamp()}, sort_keys=True))
    lines += [json.dumps(dict(e), sort_keys=True) for e in events]
    return write_text(path, "\n".join(lines) + "\n")


def _uncommented(path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [ln for ln in fh if not ln.startswith("#")]


def _csv_text(rows: Sequence[Sequence], prov: Mapping | None) -> str:
    buf = io.StringIO()
    for ln in header_lines(prov):
        buf.write(ln + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


# utterance records

def _float_or_nan(text: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return math.nan


def read_phone_sidecar(path) -> dict[str, tuple[float, ...]]:
    """``utt_id<TAB>space-separated ratios`` lines."""
    out = {}
    for lineno, line in enumerate(_uncommented(path), 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'utt_id<TAB>ratios'")
        try:
            out[parts[0]] = tuple(float(v) for v in parts[1].split())
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric phone ratio") from None
    return out


def read_records(path, phones_path=None) -> list[UtteranceRecord]:
    """Parse a records CSV; unparsable numbers become NaN so the feature stage drops and counts them."""
    lines = _uncommented(path)
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise DataError(f"{path}: no records")
    missing = [c for c in RECORD_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise DataError(f"{path}: missing column {missing[0]!r}")
    phones = read_phone_sidecar(phones_path) if phones_path else {}
    records = []
    for row in reader:
        gop = row.get("gop_utt")
        gop = _float_or_nan(gop) if gop not in (None, "") else None
        uid = row["utt_id"] or ""
        records.append(
            UtteranceRecord(
                utt_id=uid,
                age_years=_float_or_nan(row["age_years"]),
                gender=(row["gender"] or "").strip(),
                snr_db=_float_or_nan(row["snr_db"]),
                ref=tokenize(row["ref"] or ""),
                hyp=tokenize(row["hyp"] or ""),
                phone_posterior_ratios=phones.get(uid),
                gop_utt=gop,
            )
        )
    if not records:
        raise DataError(f"{path}: no records")
    return records


def write_records(path, records: Sequence[UtteranceRecord], prov: Mapping | None = None) -> Path:
    with_gop = any(r.gop_utt is not None for r in records)
    head = list(RECORD_COLUMNS) + (["gop_utt"] if with_gop else [])
    rows = [head]
    for r in records:
        row = [r.utt_id, _num(r.age_years), r.gender, _num(r.snr_db), " ".join(r.ref), " ".join(r.hyp)]
        if with_gop:
            row.append(_num(r.gop_utt))
        rows.append(row)
    return write_text(path, _csv_text(rows, prov))


def write_phone_sidecar(path, records: Sequence[UtteranceRecord]) -> Path:
    lines = [
        f"{r.utt_id}\t{' '.join(repr(float(v)) for v in r.phone_posterior_ratios)}"
        for r in records
        if r.phone_posterior_ratios
    ]
    return write_text(path, "".join(ln + "\n" for ln in lines))


# lexicon

def read_lexicon(path) -> FrequencyLexicon:
    counts, total = {}, None
    for lineno, line in enumerate(_uncommented(path), 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'word<TAB>count'")
        try:
            n = int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: count {parts[1]!r} is not an integer") from None
        if parts[0] == TOTAL_KEY:
            total = n
        else:
            counts[parts[0]] = counts.get(parts[0], 0) + n
    if not counts:
        raise DataError(f"{path}: lexicon is empty")
    return FrequencyLexicon.from_counts(counts, total)


def write_lexicon(path, lex: FrequencyLexicon) -> Path:
    lines = [f"{w}\t{c}" for w, c in sorted(lex.counts.items())]
    lines.append(f"{TOTAL_KEY}\t{lex.total_tokens}")
    return write_text(path, "".join(ln + "\n" for ln in lines))


# discrete datasets

def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".bins.json")


def write_dataset(
    path,
    data: DiscreteDataset,
    breakpoints: Mapping | None = None,
    prov: Mapping | None = None,
    extra: Mapping | None = None,
) -> tuple[Path, Path]:
    """CSV of level labels and decimal outcomes, plus a schema/bins JSON sidecar."""
    rows = [list(data.names)]
    cols = []
    for var in data.schema:
        if var.discrete:
            cols.append(data.labels(var.name))
        else:
            cols.append([repr(float(v)) for v in data.column(var.name)])
    rows += [list(r) for r in zip(*cols)] if cols else []
    csv_path = write_text(path, _csv_text(rows, prov))
    payload = {
        "schema": [v.to_json() for v in data.schema],
        "breakpoints": {k: list(v) for k, v in sorted((breakpoints or {}).items())},
        "n_rows": data.n_rows,
    }
    payload.update(extra or {})
    side = write_json(sidecar_path(path), payload, prov)
    return csv_path, side


def read_dataset(path, schema: Sequence[VariableSchema] | None = None) -> DiscreteDataset:
    """Read a dataset CSV using its sidecar schema (or an explicit one)."""
    if schema is None:
        side = sidecar_path(path)
        if not side.exists():
            raise DataError(f"{path}: schema sidecar {side.name} not found")
        try:
            schema = [VariableSchema.from_json(v) for v in read_json(side)["schema"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{side}: invalid schema ({exc})") from None
    reader = csv.reader(_uncommented(path))
    header = next(reader, None)
    if header is None:
        raise DataError(f"{path}: empty dataset file")
    by_name = {v.name: v for v in schema}
    missing = [n for n in by_name if n not in header]
    if missing:
        raise DataError(f"{path}: missing column {missing[0]!r}")
    idx = {n: header.index(n) for n in by_name}
    cols = {n: [] for n in by_name}
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        for n, var in by_name.items():
            cell = row[idx[n]]
            try:
                cols[n].append(var.index(cell) if var.discrete else float(cell))
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}, column {n!r}: {exc}") from None
    return DiscreteDataset(schema, cols)


def read_breakpoints(path) -> dict:
    side = sidecar_path(path)
    return read_json(side).get("breakpoints", {}) if side.exists() else {}
