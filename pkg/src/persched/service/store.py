"""Embedded patient store: in-memory map with optional single-file persistence.

Writes per patient serialize through a per-id lock and are atomic: the new
history is fully validated before it replaces the stored one, so a failed
mutation leaves the record untouched.  Reads hand out immutable snapshots.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass

from ..errors import DataError
from ..types import BiopsyRecord, PatientHistory, PsaMeasurement


class ConflictError(DataError):
    """A mutation conflicts with the stored record (ordering, duplicates)."""


class UnknownPatientError(KeyError):
    pass


@dataclass(frozen=True)
class StoredPatient:
    history: PatientHistory
    version: int


class PatientStore:
    def __init__(self, path: str | None = None):
        self._path = path
        self._patients: dict[str, StoredPatient] = {}
        self._global_lock = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        if path and os.path.exists(path):
            self._load()

    # -- persistence --------------------------------------------------------

    def _load(self):
        with open(self._path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        for rec in payload.get("patients", []):
            history = PatientHistory(
                id=rec["id"],
                age_at_entry=rec["age"],
                psa=tuple(PsaMeasurement(p["time"], p["psa"]) for p in rec["psa"]),
                biopsies=tuple(
                    BiopsyRecord(b["time"], b["upgraded"]) for b in rec["biopsies"]
                ),
            )
            self._patients[history.id] = StoredPatient(history, int(rec.get("version", 0)))

    def _flush(self):
        if not self._path:
            return
        payload = {
            "patients": [
                {
                    "id": sp.history.id,
                    "age": sp.history.age_at_entry,
                    "psa": [{"time": p.time, "psa": p.psa} for p in sp.history.psa],
                    "biopsies": [
                        {"time": b.time, "upgraded": b.upgraded} for b in sp.history.biopsies
                    ],
                    "version": sp.version,
                }
                for sp in self._patients.values()
            ]
        }
        directory = os.path.dirname(os.path.abspath(self._path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
            os.replace(tmp, self._path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- access -------------------------------------------------------------

    def _lock_for(self, pid: str) -> threading.Lock:
        with self._global_lock:
            lock = self._locks.get(pid)
            if lock is None:
                lock = self._locks[pid] = threading.Lock()
            return lock

    def ids(self) -> list[str]:
        return list(self._patients.keys())

    def get(self, pid: str) -> StoredPatient:
        sp = self._patients.get(pid)
        if sp is None:
            raise UnknownPatientError(pid)
        return sp

    def create(self, pid: str | None, age: float) -> StoredPatient:
        with self._global_lock:
            if pid is None:
                n = len(self._patients) + 1
                while f"p{n:04d}" in self._patients:
                    n += 1
                pid = f"p{n:04d}"
            if pid in self._patients:
                raise ConflictError(f"patient {pid!r} already exists")
            sp = StoredPatient(PatientHistory(id=pid, age_at_entry=age), version=0)
            self._patients[pid] = sp
        self._flush()
        return sp

    def add_psa(self, pid: str, time: float, psa: float) -> StoredPatient:
        with self._lock_for(pid):
            sp = self.get(pid)
            h = sp.history
            if h.psa and time <= h.psa[-1].time:
                raise ConflictError(
                    f"PSA time {time} is not after the latest recorded time {h.psa[-1].time}"
                )
            new_history = PatientHistory(
                id=h.id,
                age_at_entry=h.age_at_entry,
                psa=h.psa + (PsaMeasurement(time, psa),),
                biopsies=h.biopsies,
            )
            new_sp = StoredPatient(new_history, sp.version + 1)
            self._patients[pid] = new_sp
        self._flush()
        return new_sp

    def add_biopsy(self, pid: str, time: float, upgraded: bool) -> StoredPatient:
        with self._lock_for(pid):
            sp = self.get(pid)
            h = sp.history
            if h.upgraded:
                raise ConflictError(
                    "patient already reclassified; no further biopsies are recorded"
                )
            if h.biopsies and time <= h.biopsies[-1].time:
                raise ConflictError(
                    f"biopsy time {time} is not after the latest recorded time "
                    f"{h.biopsies[-1].time}"
                )
            new_history = PatientHistory(
                id=h.id,
                age_at_entry=h.age_at_entry,
                psa=h.psa,
                biopsies=h.biopsies + (BiopsyRecord(time, upgraded),),
            )
            new_sp = StoredPatient(new_history, sp.version + 1)
            self._patients[pid] = new_sp
        self._flush()
        return new_sp
