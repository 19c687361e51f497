"""Per-item extraction and the batch runner."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

from . import ocr, textproc, visual
from .types import BridgeError, RawItem, SkipItem, read_manifest

log = logging.getLogger("newsbridge")

_STAGES = ("read", "ocr", "ner", "visual")


@dataclass(frozen=True)
class Toolchain:
    """Descriptors for the extraction stages; all engines are offline."""

    d_visual: int = 512
    ocr_suffix: str = ocr.SIDECAR_SUFFIX
    labels_suffix: str = visual.LABELS_SUFFIX


def _round6(x: float) -> float:
    if x == 0.0:
        return 0.0
    return round(x, 6 - 1 - int(math.floor(math.log10(abs(x)))))


def extract(item: RawItem, toolchain: Toolchain = Toolchain()) -> tuple[dict, dict]:
    """Convert one raw item into a corpus-shaped record.

    Returns (record, per-stage seconds); raises SkipItem when the item
    cannot be converted (unreadable image, empty text, missing label).
    """
    timings = dict.fromkeys(_STAGES, 0.0)

    text = textproc.tokenize(item.text)
    if not text:
        raise SkipItem("empty text")
    if item.label is None:
        raise SkipItem("missing label")
    if item.label not in (0, 1):
        raise SkipItem(f"label {item.label} not in {{0, 1}}")

    start = time.perf_counter()
    try:
        pixels = visual.load_image(item.image_path)
    except (OSError, ValueError) as exc:
        raise SkipItem(f"unreadable image: {exc}") from exc
    timings["read"] = time.perf_counter() - start

    start = time.perf_counter()
    ocr_tokens = ocr.read_ocr_tokens(item.image_path, toolchain.ocr_suffix)
    timings["ocr"] = time.perf_counter() - start

    start = time.perf_counter()
    textual = textproc.extract_entities(item.text)
    timings["ner"] = time.perf_counter() - start

    start = time.perf_counter()
    vis_entities = visual.visual_entities(item.image_path, pixels, toolchain.labels_suffix)
    regions = visual.region_features(pixels, toolchain.d_visual)
    timings["visual"] = time.perf_counter() - start

    record = {"id": item.id, "text": text, "label": item.label}
    if ocr_tokens:
        record["ocr_text"] = ocr_tokens
    if textual:
        record["textual_entities"] = textual
    if vis_entities:
        record["visual_entities"] = [
            dict(e, confidence=_round6(e["confidence"])) for e in vis_entities
        ]
    record["visual_regions"] = [[_round6(float(v)) for v in row] for row in regions]
    return record, timings


def _extract_worker(item: RawItem, toolchain: Toolchain):
    try:
        record, timings = extract(item, toolchain)
        return ("ok", json.dumps(record, ensure_ascii=False, separators=(",", ":")), timings)
    except SkipItem as exc:
        return ("skip", item.id, exc.reason)


def run_batch(
    manifest_path,
    out_path,
    report_path=None,
    toolchain: Toolchain = Toolchain(),
    workers: int = 1,
) -> dict:
    """Extract every manifest item, in manifest order, one JSONL line per
    success. Returns (and optionally writes) the run report."""
    if workers < 1:
        raise BridgeError(f"workers must be >= 1, got {workers}")
    items = read_manifest(manifest_path)

    total_start = time.perf_counter()
    worker = partial(_extract_worker, toolchain=toolchain)
    if workers == 1:
        results = [worker(item) for item in items]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(worker, items))

    lines = []
    skips = []
    stage_totals = dict.fromkeys(_STAGES, 0.0)
    for outcome in results:
        if outcome[0] == "ok":
            lines.append(outcome[1])
            for stage, seconds in outcome[2].items():
                stage_totals[stage] += seconds
        else:
            _, item_id, reason = outcome
            log.warning("skipped %s: %s", item_id, reason)
            skips.append({"id": item_id, "reason": reason})

    Path(out_path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    report = {
        "manifest": str(manifest_path),
        "output": str(out_path),
        "items": len(items),
        "successes": len(lines),
        "skips": skips,
        "timings": {stage: round(seconds, 6) for stage, seconds in stage_totals.items()}
        | {"total": round(time.perf_counter() - total_start, 6)},
    }
    if report_path is not None:
        Path(report_path).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
