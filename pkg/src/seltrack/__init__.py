"""Learned detection selection for 3D multi-object tracking."""

from ._backend import NAME as backend
from .assignment import MatchCriterion, hungarian, match_tp_fp
from .geometry import Box3D, Detection, iou_3d, iou_bev
from .metrics import amota_suite, clear_metrics, evaluate
from .selection import SelectorConfig, SelectorModel, gt_threshold
from .simulator import SimConfig, preset, simulate_sequence
from .tracker import TrackerConfig, run_sequence

__all__ = [
    "Box3D", "Detection", "MatchCriterion", "SelectorConfig", "SelectorModel", "SimConfig", "TrackerConfig",
    "amota_suite", "backend", "clear_metrics", "evaluate", "gt_threshold", "hungarian", "iou_3d", "iou_bev",
    "match_tp_fp", "preset", "run_sequence", "simulate_sequence",
]  # fmt: skip
