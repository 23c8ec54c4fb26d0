"""Patient data ingestion: CSV and JSON schemas.

CSV columns: ``patient_id, age, time_years, psa_ng_ml, biopsy_time_years,
upgraded``.  Each row carries a PSA observation (time_years + psa_ng_ml), a
biopsy (biopsy_time_years + upgraded), or both.  JSON mirrors the same
fields per patient.  All validation errors name the offending row.
"""

from __future__ import annotations

import csv
import io
import json

from .errors import DataError
from .types import BiopsyRecord, PatientHistory, PsaMeasurement

CSV_COLUMNS = (
    "patient_id",
    "age",
    "time_years",
    "psa_ng_ml",
    "biopsy_time_years",
    "upgraded",
)


def _parse_bool(value: str, row: int) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "y"):
        return True
    if v in ("0", "false", "no", "n"):
        return False
    raise DataError(f"row {row}: cannot parse upgraded flag {value!r}")


def _parse_float(value: str, row: int, column: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: cannot parse {column} from {value!r}") from None


class _Builder:
    def __init__(self, pid: str, age: float):
        self.pid = pid
        self.age = age
        self.psa: list[PsaMeasurement] = []
        self.biopsies: list[BiopsyRecord] = []

    def add_psa(self, time: float, psa: float, row: int):
        if psa <= 0:
            raise DataError(f"row {row}: PSA must be positive, got {psa}")
        if self.psa and time <= self.psa[-1].time:
            raise DataError(
                f"row {row}: PSA time {time} not after previous {self.psa[-1].time} "
                f"for patient {self.pid}"
            )
        self.psa.append(PsaMeasurement(time=time, psa=psa))

    def add_biopsy(self, time: float, upgraded: bool, row: int):
        if self.biopsies and time <= self.biopsies[-1].time:
            raise DataError(
                f"row {row}: biopsy time {time} not after previous "
                f"{self.biopsies[-1].time} for patient {self.pid}"
            )
        if self.biopsies and self.biopsies[-1].upgraded:
            raise DataError(
                f"row {row}: patient {self.pid} already has an upgraded biopsy"
            )
        self.biopsies.append(BiopsyRecord(time=time, upgraded=upgraded))

    def build(self) -> PatientHistory:
        return PatientHistory(
            id=self.pid,
            age_at_entry=self.age,
            psa=tuple(self.psa),
            biopsies=tuple(self.biopsies),
        )


def _parse_csv(text: str) -> list[PatientHistory]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    missing = {"patient_id", "age"} - set(reader.fieldnames)
    if missing:
        raise DataError(f"missing required columns: {sorted(missing)}")
    builders: dict[str, _Builder] = {}
    for row_no, row in enumerate(reader, start=2):
        pid = (row.get("patient_id") or "").strip()
        if not pid:
            raise DataError(f"row {row_no}: empty patient_id")
        age = _parse_float(row.get("age"), row_no, "age")
        builder = builders.get(pid)
        if builder is None:
            builder = builders[pid] = _Builder(pid, age)
        time_raw = (row.get("time_years") or "").strip()
        psa_raw = (row.get("psa_ng_ml") or "").strip()
        biopsy_raw = (row.get("biopsy_time_years") or "").strip()
        upgraded_raw = (row.get("upgraded") or "").strip()
        if bool(time_raw) != bool(psa_raw):
            raise DataError(f"row {row_no}: time_years and psa_ng_ml must appear together")
        if bool(biopsy_raw) != bool(upgraded_raw):
            raise DataError(
                f"row {row_no}: biopsy_time_years and upgraded must appear together"
            )
        if not time_raw and not biopsy_raw:
            raise DataError(f"row {row_no}: neither a PSA value nor a biopsy present")
        if time_raw:
            builder.add_psa(
                _parse_float(time_raw, row_no, "time_years"),
                _parse_float(psa_raw, row_no, "psa_ng_ml"),
                row_no,
            )
        if biopsy_raw:
            builder.add_biopsy(
                _parse_float(biopsy_raw, row_no, "biopsy_time_years"),
                _parse_bool(upgraded_raw, row_no),
                row_no,
            )
    return [b.build() for b in builders.values()]


def _parse_json(text: str) -> list[PatientHistory]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc}") from exc
    records = payload.get("patients") if isinstance(payload, dict) else payload
    if not isinstance(records, list):
        raise DataError("JSON input must be a list of patients or {'patients': [...]}")
    out = []
    for i, rec in enumerate(records, start=1):
        try:
            builder = _Builder(str(rec["id"]), float(rec["age"]))
            for j, p in enumerate(rec.get("psa", []), start=1):
                builder.add_psa(float(p["time"]), float(p["psa"]), row=j)
            for j, b in enumerate(rec.get("biopsies", []), start=1):
                builder.add_biopsy(float(b["time"]), bool(b["upgraded"]), row=j)
            out.append(builder.build())
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"patient record {i}: {exc}") from exc
    return out


def parse_patient_file(data: bytes, fmt: str = "csv") -> list[PatientHistory]:
    """Parse patient records; derived censoring intervals come from the biopsies."""
    text = data.decode("utf-8-sig")
    if not text.strip():
        return []
    if fmt == "csv":
        return _parse_csv(text)
    if fmt == "json":
        return _parse_json(text)
    raise DataError(f"unknown format {fmt!r}; use 'csv' or 'json'")
