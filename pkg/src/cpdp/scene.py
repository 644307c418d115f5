"""Axis-aligned scene constraints with activation time windows.

A point is admitted at time t when it lies inside every active keep_in box
(closed) and strictly outside every active keep_out box (interior rejected,
boundary admitted).  Infinite corners turn a box into a halfspace or slab.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ParseError

KINDS = ("keep_in", "keep_out")


@dataclass(frozen=True)
class BoxConstraint:
    """One axis-aligned box; corners may be infinite, activation optional."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    kind: str
    t_start: float = -np.inf
    t_end: float = np.inf

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float)
        hi = np.asarray(self.max_corner, dtype=float)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if lo.shape != (3,) or hi.shape != (3,):
            raise InvalidArgumentError(f"box corners must be 3-vectors, got {lo.shape} and {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise InvalidArgumentError("box corners may not be NaN")
        if np.any(lo >= hi):
            raise InvalidArgumentError(f"min corner must be < max corner on every axis, got {lo} vs {hi}")
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if np.isnan(self.t_start) or np.isnan(self.t_end) or self.t_start > self.t_end:
            raise InvalidArgumentError(f"activation must satisfy t_start <= t_end, got [{self.t_start}, {self.t_end}]")

    def active(self, t: float) -> bool:
        return self.t_start <= t <= self.t_end

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-box membership for (B, 3) points."""
        return np.all((points >= self.min_corner) & (points <= self.max_corner), axis=-1)

    def strictly_inside(self, points: np.ndarray) -> np.ndarray:
        return np.all((points > self.min_corner) & (points < self.max_corner), axis=-1)


@dataclass(frozen=True)
class SceneConstraints:
    """A labelled collection of box constraints in one reference frame."""

    frame_id: str = "base"
    boxes: tuple[BoxConstraint, ...] = field(default_factory=tuple)

    def admits_batch(self, points: np.ndarray, t: float) -> np.ndarray:
        """Admissibility mask for (B, 3) points at time t."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(points.shape[0], dtype=bool)
        for box in self.boxes:
            if not box.active(t):
                continue
            if box.kind == "keep_in":
                ok &= box.contains(points)
            else:
                ok &= ~box.strictly_inside(points)
        return ok

    def admits(self, point: np.ndarray, t: float) -> bool:
        return bool(self.admits_batch(np.asarray(point, dtype=float)[None, :], t)[0])


def _corner(values, default: float) -> np.ndarray:
    if values is None:
        return np.full(3, default)
    return np.array([default if v is None else float(v) for v in values])


def scene_from_dict(spec: dict) -> SceneConstraints:
    boxes = []
    raw_boxes = spec.get("boxes", [])
    if not isinstance(raw_boxes, list):
        raise ParseError("'boxes' must be a list")
    for i, raw in enumerate(raw_boxes):
        try:
            t_start = raw.get("t_start")
            t_end = raw.get("t_end")
            boxes.append(
                BoxConstraint(
                    min_corner=_corner(raw.get("min"), -np.inf),
                    max_corner=_corner(raw.get("max"), np.inf),
                    kind=raw.get("kind", ""),
                    t_start=-np.inf if t_start is None else float(t_start),
                    t_end=np.inf if t_end is None else float(t_end),
                )
            )
        except (InvalidArgumentError, TypeError, ValueError, AttributeError) as exc:
            msg = exc.message if isinstance(exc, InvalidArgumentError) else str(exc)
            raise ParseError(f"box {i}: {msg}") from exc
    return SceneConstraints(frame_id=str(spec.get("frame_id", "base")), boxes=tuple(boxes))


def scene_to_dict(scene: SceneConstraints) -> dict:
    def opt(v):
        return None if np.isinf(v) else float(v)

    return {
        "frame_id": scene.frame_id,
        "boxes": [
            {
                "min": [opt(v) for v in box.min_corner],
                "max": [opt(v) for v in box.max_corner],
                "kind": box.kind,
                "t_start": opt(box.t_start),
                "t_end": opt(box.t_end),
            }
            for box in scene.boxes
        ],
    }


def load_scene(path: str) -> SceneConstraints:
    """Load a scene definition from a JSON file."""
    with open(path) as fh:
        text = fh.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid scene JSON: {exc.msg}", line=exc.lineno) from exc
    return scene_from_dict(spec)


def save_scene(scene: SceneConstraints, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
