"""On-disk dataset generation and loading.

Layout under the output root:

    manifest.json                     dataset-wide parameters and shape list
    <category>_<idx>/shape.json       per-shape metadata incl. mobility
    <category>_<idx>/frame_01.ply ... labeled frames, 01 is the start state
    <category>_<idx>/scan.ply         partial scan of frame 01 (test shapes)

Everything is derived from integer seed paths fed to numpy's generator, so
two runs with the same arguments produce byte-identical trees. The last
tenth of every category (rounded up) forms the test split.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigError, DataError
from ..geom import MobilitySpec
from ..plyio import read_ply, write_ply
from .scan import DEPTH_SIGMA, scan_with_viewpoint_retries
from .sequences import MotionSequence, make_sequence
from .templates import TEMPLATE_NAMES, generate_shape, min_part_points

FORMAT_VERSION = 1

# scans are rendered from a denser resampling of the same shape so that
# the visible subset can be thinned back to exactly n_points
SCAN_RENDER_FACTOR = 8


def mobility_to_json(spec: MobilitySpec) -> dict:
    return {
        "type": spec.tau,
        "direction": spec.direction.tolist(),
        "position": None if spec.position is None else spec.position.tolist(),
        "range": list(spec.range_),
        "slide_range": None if spec.slide_range is None else list(spec.slide_range),
    }


def mobility_from_json(data: dict) -> MobilitySpec:
    return MobilitySpec(
        data["type"],
        np.array(data["direction"], dtype=np.float64),
        None if data["position"] is None else np.array(data["position"], dtype=np.float64),
        tuple(data["range"]),
        None if data["slide_range"] is None else tuple(data["slide_range"]),
    )


@dataclass
class ShapeRecord:
    """One loaded shape: frames, labels, mobility, optional partial scan."""

    category: str
    shape_id: str
    split: str
    frames: np.ndarray                     # (n, N, 3)
    labels: np.ndarray                     # (N,)
    specs: Optional[list[MobilitySpec]]
    scan_points: Optional[np.ndarray] = None
    scan_labels: Optional[np.ndarray] = None
    scan_viewpoint: Optional[np.ndarray] = None

    @property
    def sequence(self) -> MotionSequence:
        return MotionSequence(self.category, self.frames, self.labels, self.specs)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _build_shape(category, cat_idx, shape_idx, seed, n_points, n_frames, scan_sigma, want_scan):
    """Compute one shape's sequence and optional scan; no filesystem access."""
    rng = np.random.default_rng([seed, cat_idx, shape_idx])
    sample = generate_shape(category, rng, n_points)
    seq = make_sequence(sample, n_frames)
    scan = None
    if want_scan:
        # render the same shape densely so the visible subset can be
        # thinned back to exactly n_points
        dense = generate_shape(
            category, np.random.default_rng([seed, cat_idx, shape_idx]),
            SCAN_RENDER_FACTOR * n_points,
        )
        scan = scan_with_viewpoint_retries(
            dense.cloud.points,
            dense.cloud.labels,
            rng,
            sigma=scan_sigma,
            n_target=n_points,
            floor=min_part_points(n_points),
        )
    return seq, scan


def generate_dataset(
    out_dir: str | Path,
    categories: tuple[str, ...] = TEMPLATE_NAMES,
    shapes_per_category: int = 25,
    n_points: int = 2048,
    n_frames: int = 8,
    seed: int = 0,
    scan_sigma: float = DEPTH_SIGMA,
    scan_fraction: float = 1.0,
    workers: int = 1,
) -> dict:
    """Write a full corpus; returns the dataset manifest.

    scan_fraction controls how many test shapes per category get a partial
    scan (rounded to the nearest count, earliest test shapes first). Shapes
    are seeded independently, so workers may compute them in parallel;
    writes happen in order and the output is identical either way.
    """
    if not 0.0 <= scan_fraction <= 1.0:
        raise ConfigError(f"scan fraction must lie in [0, 1], got {scan_fraction}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    n_test = math.ceil(0.1 * shapes_per_category)
    n_scanned = round(scan_fraction * n_test)
    first_test = shapes_per_category - n_test
    jobs = []
    for cat_idx, category in enumerate(categories):
        for shape_idx in range(shapes_per_category):
            split = "test" if shape_idx >= first_test else "train"
            want_scan = split == "test" and shape_idx - first_test < n_scanned
            jobs.append((category, cat_idx, shape_idx, split, want_scan))

    def run(job):
        category, cat_idx, shape_idx, _, want_scan = job
        return _build_shape(
            category, cat_idx, shape_idx, seed, n_points, n_frames, scan_sigma, want_scan
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(run, jobs))
    else:
        built = [run(job) for job in jobs]

    shapes = []
    split_lines = []
    for (category, cat_idx, shape_idx, split, _), (seq, scan) in zip(jobs, built):
        shape_id = f"{category}_{shape_idx:03d}"
        shape_dir = root / shape_id
        shape_dir.mkdir(exist_ok=True)
        for k in range(n_frames):
            write_ply(shape_dir / f"frame_{k + 1:02d}.ply", seq.frames[k], seq.labels)
        meta = {
            "format_version": FORMAT_VERSION,
            "category": category,
            "shape_id": shape_id,
            "split": split,
            "n_frames": n_frames,
            "seed_path": [seed, cat_idx, shape_idx],
            "parts": None
            if seq.specs is None
            else [
                {"part_id": part_id, "mobility": mobility_to_json(spec)}
                for part_id, spec in enumerate(seq.specs, start=1)
            ],
            "scan": None,
        }
        if scan is not None:
            scan_points, scan_labels, viewpoint = scan
            write_ply(shape_dir / "scan.ply", scan_points, scan_labels)
            meta["scan"] = {"file": "scan.ply", "viewpoint": viewpoint.tolist(),
                            "sigma": scan_sigma}
        _write_json(shape_dir / "shape.json", meta)
        shapes.append({"shape_id": shape_id, "category": category, "split": split})
        split_lines.append(f"{shape_id}\t{split}\n")
    manifest = {
        "format_version": FORMAT_VERSION,
        "categories": list(categories),
        "shapes_per_category": shapes_per_category,
        "n_points": n_points,
        "n_frames": n_frames,
        "seed": seed,
        "scan_sigma": scan_sigma,
        "scan_fraction": scan_fraction,
        "shapes": shapes,
    }
    _write_json(root / "manifest.json", manifest)
    (root / "split.txt").write_text("".join(split_lines))
    return manifest


def load_dataset(root: str | Path, split: Optional[str] = None) -> list[ShapeRecord]:
    """Load every shape (optionally one split) back into memory."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported dataset format {manifest.get('format_version')!r}")
    records = []
    for entry in manifest["shapes"]:
        if split is not None and entry["split"] != split:
            continue
        records.append(load_shape(root / entry["shape_id"]))
    return records


def load_shape(shape_dir: str | Path) -> ShapeRecord:
    shape_dir = Path(shape_dir)
    meta = json.loads((shape_dir / "shape.json").read_text())
    frames = []
    labels = None
    for k in range(meta["n_frames"]):
        pts, lab = read_ply(shape_dir / f"frame_{k + 1:02d}.ply")
        if lab is None:
            raise DataError(f"frame without labels in {shape_dir}")
        frames.append(pts)
        labels = lab
    specs = (
        None
        if meta["parts"] is None
        else [mobility_from_json(p["mobility"]) for p in meta["parts"]]
    )
    record = ShapeRecord(
        category=meta["category"],
        shape_id=meta["shape_id"],
        split=meta["split"],
        frames=np.stack(frames),
        labels=labels,
        specs=specs,
    )
    if meta.get("scan"):
        pts, lab = read_ply(shape_dir / meta["scan"]["file"])
        record.scan_points = pts
        record.scan_labels = lab
        record.scan_viewpoint = np.array(meta["scan"]["viewpoint"], dtype=np.float64)
    return record
