"""The experiment database: an append-only JSON-lines store.

Every training run performed inside the framework leaves one record
holding the chain description, the dataset's difficulty score, the
hyperparameter fingerprint, and the holdout accuracy of every prefix.
The accuracy predictor is trained from band-filtered slices of this file.

Two line types share the file: ``experiment`` rows (full records) and
``dcn`` rows (the cached difficulty score of a dataset that has been
characterized but not necessarily trained on yet).
"""

from __future__ import annotations

import datetime
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from neunets.errors import SerializationError


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass
class ExperimentRecord:
    """One incremental training run: a chain and its per-prefix accuracies.

    ``accuracies[k]`` is the holdout accuracy of the sub-network ending at
    ``chain[k]`` (trained with the standard global-pool classifier head),
    so the two lists always have equal length.
    """

    chain: list
    dataset_id: str
    dcn: float
    input_shape: tuple
    n_classes: int
    hyperparameters: dict = field(default_factory=dict)
    accuracies: list = field(default_factory=list)
    created: str = field(default_factory=_now)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.accuracies = [float(a) for a in self.accuracies]
        if not 0.0 <= self.dcn <= 1.0:
            raise SerializationError(f"dcn {self.dcn} outside [0, 1]")
        if self.n_classes < 2:
            raise SerializationError("record needs at least 2 classes")
        if len(self.accuracies) != len(self.chain):
            raise SerializationError(
                f"{len(self.accuracies)} prefix accuracies for a "
                f"{len(self.chain)}-layer chain"
            )
        for a in self.accuracies:
            if not 0.0 <= a <= 1.0:
                raise SerializationError(f"prefix accuracy {a} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "type": "experiment",
            "chain": self.chain,
            "dataset_id": self.dataset_id,
            "dcn": self.dcn,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "hyperparameters": self.hyperparameters,
            "accuracies": self.accuracies,
            "created": self.created,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentRecord":
        return ExperimentRecord(
            chain=d["chain"],
            dataset_id=d["dataset_id"],
            dcn=float(d["dcn"]),
            input_shape=tuple(d["input_shape"]),
            n_classes=int(d["n_classes"]),
            hyperparameters=d.get("hyperparameters", {}),
            accuracies=d.get("accuracies", []),
            created=d.get("created", ""),
        )


class LDEStore:
    """Append-only experiment database backed by one JSON-lines file.

    Appends are serialized through a lock (single writer); reads parse
    the whole file, so re-reading always yields the identical record
    multiset.  Nothing ever rewrites existing lines.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    # -- writing -------------------------------------------------------------

    def _append_line(self, obj: dict) -> None:
        line = json.dumps(obj, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def append(self, record: ExperimentRecord) -> None:
        self._append_line(record.to_dict())

    def append_dcn(self, dataset_id: str, dcn: float) -> None:
        """Cache a dataset's difficulty score without any experiment."""
        if not 0.0 <= dcn <= 1.0:
            raise SerializationError(f"dcn {dcn} outside [0, 1]")
        self._append_line({
            "type": "dcn", "dataset_id": dataset_id,
            "dcn": float(dcn), "created": _now(),
        })

    # -- reading -------------------------------------------------------------

    def _rows(self) -> list[dict]:
        if not self.path.exists():
            return []
        rows = []
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SerializationError(
                        f"{self.path}:{lineno}: malformed JSON line"
                    ) from exc
                if row.get("type") not in ("experiment", "dcn"):
                    raise SerializationError(
                        f"{self.path}:{lineno}: unknown row type {row.get('type')!r}"
                    )
                rows.append(row)
        return rows

    def records(self) -> list[ExperimentRecord]:
        return [
            ExperimentRecord.from_dict(row)
            for row in self._rows() if row["type"] == "experiment"
        ]

    def __len__(self) -> int:
        return len(self.records())

    def __iter__(self):
        return iter(self.records())

    def dcn_for(self, dataset_id: str):
        """Cached difficulty score for a dataset id, or None if never seen."""
        for row in self._rows():
            if row["dataset_id"] == dataset_id:
                return float(row["dcn"])
        return None

    def export(self, path) -> int:
        """Copy every row to ``path`` (overwriting); returns the row count."""
        rows = self._rows()
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return len(rows)


def merge_lde(store: LDEStore, other_path) -> int:
    """Append rows of another database file, skipping exact duplicates.

    Duplicate detection is by canonical JSON content, so importing the
    same file twice is a no-op.  Returns the number of rows added.
    """
    other = LDEStore(other_path)
    seen = {json.dumps(row, sort_keys=True) for row in store._rows()}
    added = 0
    for row in other._rows():
        key = json.dumps(row, sort_keys=True)
        if key not in seen:
            store._append_line(row)
            seen.add(key)
            added += 1
    return added


def lde_select(lde, query_dcn: float, tau: float = 0.05) -> list[ExperimentRecord]:
    """Records whose dataset difficulty lies within ``tau`` of the query.

    The band is inclusive: a record at exactly ``query ± tau`` is kept.
    ``lde`` may be a store or any iterable of records; an empty result is
    not an error.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    records = lde.records() if isinstance(lde, LDEStore) else list(lde)
    return [r for r in records if abs(r.dcn - float(query_dcn)) <= tau]
