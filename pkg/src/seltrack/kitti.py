"""KITTI tracking-label I/O.

A line holds ``frame track_id type truncated occluded alpha left top right
bottom h w l x y z rotation_y [score]`` in camera coordinates (x right,
y down, z forward) with the location at the bottom-face center.

Our boxes live in an ego frame with x forward, y left and z up, anchored at
the box center. The camera and ego origins coincide (no calibration files
are read), so the mapping is a fixed axis permutation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Box2D, Box3D, Detection, NonPositiveDepth, corners_3d, project_to_image, wrap_angle

# KITTI P2 of sequence 0000; only used to fill the 2D bbox columns
DEFAULT_P2 = np.array(
    [
        [721.5377, 0.0, 609.5593, 44.85728],
        [0.0, 721.5377, 172.854, 0.2163791],
        [0.0, 0.0, 1.0, 0.002745884],
    ]
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, field: str | None = None, source: str = "<text>"):
        where = f"{source}:{line}" + (f" field {field!r}" if field else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.field = field


FIELDS = (
    "frame", "track_id", "type", "truncated", "occluded", "alpha",
    "left", "top", "right", "bottom", "h", "w", "l", "x", "y", "z", "rotation_y", "score",
)  # fmt: skip
_INT_FIELDS = {"frame", "track_id", "occluded"}


@dataclass(frozen=True)
class KittiTrackLine:
    frame: int
    track_id: int
    type: str
    truncated: float
    occluded: int
    alpha: float
    left: float
    top: float
    right: float
    bottom: float
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: float | None = None

    def to_box(self) -> Box3D:
        return camera_to_box(self.x, self.y, self.z, self.h, self.w, self.l, self.rotation_y)


def _fmt_float(v: float) -> str:
    return f"{v:.6f}"


def _fmt_truncated(v: float) -> str:
    # tracking labels write truncation as an integer level
    return str(int(v)) if float(v).is_integer() else _fmt_float(v)


def format_line(rec: KittiTrackLine) -> str:
    parts = [str(rec.frame), str(rec.track_id), rec.type, _fmt_truncated(rec.truncated), str(rec.occluded)]
    parts += [_fmt_float(getattr(rec, f)) for f in FIELDS[5:17]]
    if rec.score is not None:
        parts.append(_fmt_float(rec.score))
    return " ".join(parts)


def parse_line(text: str, lineno: int = 1, source: str = "<text>") -> KittiTrackLine:
    tok = text.split()
    if len(tok) not in (17, 18):
        raise ParseError(f"expected 17 or 18 fields, got {len(tok)}", lineno, source=source)
    vals = {}
    for name, t in zip(FIELDS, tok):
        if name == "type":
            vals[name] = t
            continue
        try:
            v = int(t) if name in _INT_FIELDS else float(t)
        except ValueError:
            raise ParseError(f"cannot parse {t!r}", lineno, name, source) from None
        if name not in _INT_FIELDS and not math.isfinite(v):
            raise ParseError(f"non-finite value {t!r}", lineno, name, source)
        vals[name] = v
    if vals["frame"] < 0:
        raise ParseError("frame must be non-negative", lineno, "frame", source)
    return KittiTrackLine(**vals)


def parse_kitti_text(text: str, source: str = "<text>") -> list[KittiTrackLine]:
    return [parse_line(ln, i, source) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]


def parse_kitti(path) -> list[KittiTrackLine]:
    p = Path(path)
    try:
        text = p.read_text()
    except UnicodeDecodeError as e:
        raise ParseError(f"not a text file ({e.reason})", 0, source=str(p)) from None
    return parse_kitti_text(text, str(p))


def emit_kitti_text(records: Iterable[KittiTrackLine]) -> str:
    recs = sorted(records, key=lambda r: (r.frame, r.track_id))
    return "".join(format_line(r) + "\n" for r in recs)


def emit_kitti(records: Iterable[KittiTrackLine], path) -> None:
    Path(path).write_text(emit_kitti_text(records))


def camera_to_box(x: float, y: float, z: float, h: float, w: float, l: float, ry: float) -> Box3D:
    return Box3D(z, -x, h / 2.0 - y, l, w, h, -ry - math.pi / 2.0)


def box_to_camera(b: Box3D) -> tuple[float, float, float, float]:
    """(x, y, z, rotation_y) of the bottom-face center in camera coordinates."""
    return -b.y, b.h / 2.0 - b.z, b.x, wrap_angle(-b.theta - math.pi / 2.0)


def _camera_corners(b: Box3D) -> np.ndarray:
    c = corners_3d(b)
    return np.column_stack([-c[:, 1], -c[:, 2], c[:, 0]])


def image_box(b: Box3D, P: np.ndarray = DEFAULT_P2) -> Box2D | None:
    try:
        return project_to_image(b, P, points=_camera_corners(b))
    except NonPositiveDepth:
        return None


def box_to_line(frame: int, track_id: int, b: Box3D, score: float | None = None, obj_type: str = "Car", box2d: Box2D | None = None) -> KittiTrackLine:
    x, y, z, ry = box_to_camera(b)
    alpha = wrap_angle(ry - math.atan2(x, z))
    r = box2d if box2d is not None else image_box(b)
    bbox = r.corners if r is not None else (-1.0, -1.0, -1.0, -1.0)
    return KittiTrackLine(frame, track_id, obj_type, 0, 0, alpha, *bbox, b.h, b.w, b.l, x, y, z, ry, score)


def _n_frames(records: Sequence[KittiTrackLine], n_frames: int | None) -> int:
    top = max((r.frame for r in records), default=-1) + 1
    if n_frames is not None and n_frames < top:
        raise ValueError(f"records reach frame {top - 1} but n_frames={n_frames}")
    return top if n_frames is None else n_frames


def to_detections(records: Sequence[KittiTrackLine], n_frames: int | None = None, types: Sequence[str] | None = None) -> list[list[Detection]]:
    """Frame-aligned detections; records without a score get score 0."""
    out: list[list[Detection]] = [[] for _ in range(_n_frames(records, n_frames))]
    for r in records:
        if types is not None and r.type not in types:
            continue
        out[r.frame].append(Detection(r.to_box(), r.score if r.score is not None else 0.0, r.frame, source_id=r.track_id))
    return out


def to_objects(records: Sequence[KittiTrackLine], n_frames: int | None = None, types: Sequence[str] | None = None) -> list[list[tuple]]:
    """Frame-aligned ``(track_id, box, score)`` tuples for tracks or ground truth."""
    out: list[list[tuple]] = [[] for _ in range(_n_frames(records, n_frames))]
    for r in records:
        if types is not None and r.type not in types:
            continue
        out[r.frame].append((r.track_id, r.to_box(), r.score if r.score is not None else 0.0))
    return out


def tracks_to_lines(frames, frame_ids: Sequence[int] | None = None, obj_type: str = "Car") -> list[KittiTrackLine]:
    """Tracker output (``TrackedBox`` lists) to KITTI records scored by track confidence."""
    out = []
    for k, f in enumerate(frames):
        fid = frame_ids[k] if frame_ids is not None else k
        out += [box_to_line(fid, o.track_id, o.box, o.confidence, obj_type) for o in f]
    return out


def detections_to_lines(frames: Sequence[Sequence[Detection]], obj_type: str = "Car") -> list[KittiTrackLine]:
    out = []
    for k, f in enumerate(frames):
        out += [box_to_line(k, -1, d.box, d.score, obj_type, d.box2d) for d in f]
    return out


def write_sidecar(path, labeled, meta: dict | None = None) -> None:
    """Per-frame oracle threshold and per-detection labels as JSON.

    Detection order matches the KITTI detection file, i.e. ``(frame, -1)``
    sorted stably, which keeps each frame's input order.
    """
    doc = {
        "format": "seltrack-oracle",
        "version": 1,
        "meta": meta or {},
        "frames": [
            {
                "frame": lf.frame,
                "tau": lf.tau,
                "has_tp": bool(lf.has_tp),
                "lambda": [float(v) for v in lf.lam],
                "is_tp": [bool(v) for v in lf.is_tp],
                "gt_id": [int(v) for v in lf.det_gt],
            }
            for lf in labeled
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_sidecar(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "seltrack-oracle" or doc.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 oracle sidecar")
    return doc
