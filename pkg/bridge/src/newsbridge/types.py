"""Input-side types: raw items and the CSV manifest that lists them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class BridgeError(ValueError):
    """A manifest or item failed validation."""


class SkipItem(Exception):
    """Raised by extraction when an item cannot be converted; carries the
    reason recorded in the run report."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class RawItem:
    id: str
    text: str
    image_path: str
    label: Optional[int] = None


_REQUIRED_COLUMNS = ("id", "text", "image_path")


def read_manifest(path) -> list[RawItem]:
    """Parse a `id,text,image_path,label` CSV. The label column may be absent
    or empty; everything else is required. Relative image paths resolve
    against the manifest's directory, so a manifest travels with its images."""
    base = Path(path).parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise BridgeError(f"{path}: empty manifest")
        missing = [c for c in _REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise BridgeError(f"{path}: manifest lacks columns {', '.join(missing)}")
        items = []
        seen: set[str] = set()
        for row_number, row in enumerate(reader, start=2):
            item_id = (row.get("id") or "").strip()
            if not item_id:
                raise BridgeError(f"{path}:{row_number}: empty id")
            if item_id in seen:
                raise BridgeError(f"{path}:{row_number}: duplicate id {item_id!r}")
            seen.add(item_id)
            label_raw = (row.get("label") or "").strip()
            label: Optional[int] = None
            if label_raw:
                try:
                    label = int(label_raw)
                except ValueError:
                    raise BridgeError(f"{path}:{row_number}: label {label_raw!r} is not an integer")
            items.append(RawItem(
                id=item_id,
                text=row.get("text") or "",
                image_path=str(base / (row.get("image_path") or "")),
                label=label,
            ))
    if not items:
        raise BridgeError(f"{path}: empty manifest")
    return items
