"""Dataset manifest handling and the per-image preprocessing pipeline.

The manifest is tab-separated text with a header row; one row per image:
id, path, extents, the referable-glaucoma label, the ten feature flags and
an optional per-image detection file. Paths are resolved relative to the
manifest's directory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detections import (DEFAULT_CONFIDENCE_FLOOR, FULL_IMAGE, RoiPlan,
                         load_detection_file, select_roi)
from .ppm import read_ppm
from .preprocess import DEFAULT_BG_TAU, crop_roi, remove_background, resize_bilinear

MANIFEST_COLUMNS = ["image_id", "image_path", "width", "height", "rg",
                    *[f"f{k}" for k in range(1, 11)], "detection_path"]


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    image_path: str
    width: int
    height: int
    rg: int
    features: tuple[int, ...]
    detection_path: str | None = None


@dataclass(frozen=True)
class PreprocessOptions:
    """Pipeline toggles: disc cropping and background removal can each be
    switched off to reproduce the ablation configurations."""

    od_crop: bool = True
    bg_removal: bool = True
    bg_tau: int = DEFAULT_BG_TAU
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR


def _binary(value: str, column: str, where: str) -> int:
    if value not in ("0", "1"):
        raise ValueError(f"{where}: column {column} must be 0 or 1, got {value!r}")
    return int(value)


def read_manifest(path: str | Path, check_paths: bool = True) -> list[ManifestRow]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != MANIFEST_COLUMNS:
            raise ValueError(f"{path}: bad manifest header {header}")
        for lineno, rec in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            if len(rec) != len(MANIFEST_COLUMNS):
                raise ValueError(f"{where}: expected {len(MANIFEST_COLUMNS)} columns, "
                                 f"got {len(rec)}")
            image_id = rec[0]
            if image_id in seen:
                raise ValueError(f"{where}: duplicate image id {image_id!r}")
            seen.add(image_id)
            row = ManifestRow(
                image_id=image_id,
                image_path=rec[1],
                width=int(rec[2]),
                height=int(rec[3]),
                rg=_binary(rec[4], "rg", where),
                features=tuple(_binary(v, f"f{k + 1}", where)
                               for k, v in enumerate(rec[5:15])),
                detection_path=rec[15] or None)
            if check_paths:
                if not (base / row.image_path).is_file():
                    raise FileNotFoundError(f"{where}: image not found: "
                                            f"{base / row.image_path}")
                if row.detection_path and not (base / row.detection_path).is_file():
                    raise FileNotFoundError(f"{where}: detection file not found: "
                                            f"{base / row.detection_path}")
            rows.append(row)
    return rows


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            writer.writerow([row.image_id, row.image_path, row.width, row.height,
                             row.rg, *row.features, row.detection_path or ""])


def load_input_image(row: ManifestRow, base_dir: str | Path) -> np.ndarray:
    return read_ppm(Path(base_dir) / row.image_path)


def roi_plan_for(row: ManifestRow, base_dir: str | Path,
                 opts: PreprocessOptions) -> RoiPlan:
    """Decide crop-vs-full-image for one manifest row."""
    if not opts.od_crop or not row.detection_path:
        return FULL_IMAGE
    dets = load_detection_file(Path(base_dir) / row.detection_path,
                               row.width, row.height)
    return select_roi(row.image_id, {row.image_id: dets}, opts.confidence_floor)


def prepare_input(image: np.ndarray, row: ManifestRow, base_dir: str | Path,
                  opts: PreprocessOptions, target: int) -> tuple[np.ndarray, RoiPlan]:
    """Crop (if planned), strip background, resize; returns the uint8 image
    ready for augmentation or [0, 1] scaling, and the plan that was used."""
    plan = roi_plan_for(row, base_dir, opts)
    if opts.od_crop and plan.detection is not None:
        image = crop_roi(image, plan.detection)
    if opts.bg_removal:
        image = remove_background(image, opts.bg_tau)
    return resize_bilinear(image, target), plan
