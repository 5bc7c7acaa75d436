"""Optic-disc detector output ingestion and per-image ROI planning.

Detections arrive as one text file per image, ``<image-id>.txt``, each line
``class cx cy w h confidence`` with the geometry normalized to [0, 1] (the
format most single-stage detector exporters emit). Coordinates are scaled
to pixels against the image extents recorded in the dataset manifest.

Images with no detection file, or none above the confidence floor, fall
back to the full image downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

DEFAULT_CONFIDENCE_FLOOR = 0.25


@dataclass(frozen=True)
class DiscDetection:
    """One disc bounding box in pixel coordinates."""

    cx: float
    cy: float
    w: float
    h: float
    confidence: float

    def normalized(self, width: int, height: int) -> tuple[float, float, float, float]:
        return (self.cx / width, self.cy / height, self.w / width, self.h / height)


@dataclass(frozen=True)
class RoiPlan:
    """Either crop around a detection or feed the original image."""

    detection: DiscDetection | None

    @property
    def is_full_image(self) -> bool:
        return self.detection is None


FULL_IMAGE = RoiPlan(None)


def parse_detection_lines(text: str, width: int, height: int,
                          source: str = "<detections>") -> list[DiscDetection]:
    """Parse one image's detection file, converting to pixels.

    Malformed lines are rejected with their 1-based line number; geometry
    outside [0, 1] is an error. Results are ordered by confidence,
    descending (stable for ties).
    """
    out: list[DiscDetection] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{source}:{lineno}: expected 6 fields "
                             f"'class cx cy w h confidence', got {len(parts)}")
        try:
            cx, cy, w, h, conf = (float(v) for v in parts[1:])
            int(parts[0])
        except ValueError:
            raise ValueError(f"{source}:{lineno}: non-numeric field in {line!r}") from None
        for label, value in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{source}:{lineno}: normalized {label}={value} "
                                 f"outside [0, 1]")
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"{source}:{lineno}: confidence {conf} outside [0, 1]")
        if w <= 0 or h <= 0:
            raise ValueError(f"{source}:{lineno}: nonpositive box size ({w}, {h})")
        out.append(DiscDetection(cx * width, cy * height, w * width, h * height, conf))
    out.sort(key=lambda d: -d.confidence)
    return out


def load_detection_file(path: str | Path, width: int, height: int) -> list[DiscDetection]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"detection file not found: {path}")
    return parse_detection_lines(path.read_text(), width, height, source=str(path))


def load_detections(directory: str | Path,
                    extents: Mapping[str, tuple[int, int]]) -> dict[str, list[DiscDetection]]:
    """Load every ``<image-id>.txt`` under ``directory``.

    ``extents`` maps image id to (width, height); a detection file for an
    unknown id is an error, an id with no file simply gets no entry.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"detections directory not found: {directory}")
    result: dict[str, list[DiscDetection]] = {}
    for path in sorted(directory.glob("*.txt")):
        image_id = path.stem
        if image_id not in extents:
            raise ValueError(f"{path}: no manifest extents for image id {image_id!r}")
        width, height = extents[image_id]
        result[image_id] = load_detection_file(path, width, height)
    return result


def select_roi(image_id: str,
               detections: Mapping[str, list[DiscDetection]],
               floor: float = DEFAULT_CONFIDENCE_FLOOR) -> RoiPlan:
    """Highest-confidence detection above the floor, else the full image."""
    candidates = [d for d in detections.get(image_id, []) if d.confidence >= floor]
    if not candidates:
        return FULL_IMAGE
    return RoiPlan(max(candidates, key=lambda d: d.confidence))


def detector_auc(scores, labels) -> float:
    """ROC AUC of per-image max detector confidence against presence flags."""
    from .metrics import auc, roc_curve

    return auc(roc_curve(scores, labels))
