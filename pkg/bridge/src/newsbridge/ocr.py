"""Embedded-text recovery for images.

There is no OCR engine in this toolchain; the documented interchange is a
sidecar transcript written by whatever OCR ran offline: `<image>.ocr.txt`
next to the image file. A missing or unreadable sidecar means no embedded
text, which the downstream contract treats as an empty list, never an
error.
"""

from __future__ import annotations

from pathlib import Path

from .textproc import tokenize

SIDECAR_SUFFIX = ".ocr.txt"


def read_ocr_tokens(image_path: str, suffix: str = SIDECAR_SUFFIX) -> list[str]:
    sidecar = Path(str(image_path) + suffix)
    try:
        raw = sidecar.read_text(encoding="utf-8")
    except OSError:
        return []
    return tokenize(raw)
