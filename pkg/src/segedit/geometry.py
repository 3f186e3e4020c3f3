"""Axis-aligned box geometry: masks, multi-level expansion, cropping, fusion.

Conventions used throughout the package:
  - coordinates are (row, col); box corners [r1, c1, r2, c2] are inclusive,
    (r1, c1) top-left and (r2, c2) bottom-right;
  - the vertical expansion step applies to rows, the horizontal one to cols;
  - masks are H x W uint8 arrays with values in {0, 1}.

All functions are pure and safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Corners = tuple[int, int, int, int]


@dataclass(frozen=True)
class EditBox:
    """An edit request: inclusive box corners plus the label to paint inside."""

    corners: Corners
    target_label: int = 0

    def validate(self, height: int, width: int) -> None:
        r1, c1, r2, c2 = self.corners
        if not (0 <= r1 <= r2 <= height - 1):
            raise ValueError(f"box rows [{r1}, {r2}] invalid for height {height}")
        if not (0 <= c1 <= c2 <= width - 1):
            raise ValueError(f"box cols [{c1}, {c2}] invalid for width {width}")

    @property
    def area(self) -> int:
        r1, c1, r2, c2 = self.corners
        return (r2 - r1 + 1) * (c2 - c1 + 1)


@dataclass(frozen=True)
class ExpansionSchedule:
    """Expansion levels beyond the raw box (``q``) and per-level steps.

    ``alpha`` steps rows, ``beta`` steps cols. ``cropped=True`` crops every
    level to its mask support (variable-size areas, one discriminator per
    level); ``cropped=False`` keeps full-canvas masked areas sharing one
    discriminator.
    """

    q: int = 4
    alpha: int = 5
    beta: int = 5
    cropped: bool = True

    def __post_init__(self) -> None:
        if self.q < 0:
            raise ValueError(f"q must be >= 0, got {self.q}")
        if self.alpha < 1 or self.beta < 1:
            raise ValueError(f"steps must be >= 1, got alpha={self.alpha} beta={self.beta}")


@dataclass(frozen=True)
class CroppedRegion:
    """A cropped sub-image and the (row, col) offset of its top-left corner."""

    data: np.ndarray
    offset: tuple[int, int]

    def paste_into(self, canvas: np.ndarray) -> np.ndarray:
        """Write the region back at its recorded offset (round-trip helper)."""
        out = canvas.copy()
        r, c = self.offset
        h, w = self.data.shape[:2]
        out[r : r + h, c : c + w] = self.data
        return out


@dataclass(frozen=True)
class MExAreaLevel:
    """One expansion level: masked (and possibly cropped) image + condition."""

    area: np.ndarray
    condition: np.ndarray
    mask: np.ndarray  # full-canvas H x W expansion mask for this level
    corners: Corners


@dataclass(frozen=True)
class MExAreaSet:
    """Ordered expansion levels, index 0 (raw box) through q."""

    levels: list[MExAreaLevel] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, j: int) -> MExAreaLevel:
        return self.levels[j]


def make_mask(box: EditBox, height: int, width: int) -> np.ndarray:
    """Binary H x W mask with ones exactly on the box's inclusive rectangle."""
    box.validate(height, width)
    r1, c1, r2, c2 = box.corners
    mask = np.zeros((height, width), dtype=np.uint8)
    mask[r1 : r2 + 1, c1 : c2 + 1] = 1
    return mask


def expand_box(box: EditBox, j: int, sched: ExpansionSchedule, height: int, width: int) -> Corners:
    """Corners of the level-``j`` expansion, clamped into the image.

    Level j grows the box by j*alpha rows and j*beta cols on each side;
    coordinates falling outside the image are clamped to the border, so the
    result is always a valid box containing the original.
    """
    if not 0 <= j <= sched.q:
        raise ValueError(f"level {j} outside schedule range [0, {sched.q}]")
    box.validate(height, width)
    r1, c1, r2, c2 = box.corners
    return (
        max(r1 - j * sched.alpha, 0),
        max(c1 - j * sched.beta, 0),
        min(r2 + j * sched.alpha, height - 1),
        min(c2 + j * sched.beta, width - 1),
    )


def _apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} disagree")
    keep = mask.astype(bool)
    if image.ndim == 3:
        keep = keep[:, :, None]
    return np.where(keep, image, np.zeros((), dtype=image.dtype))


def mask_bounds(mask: np.ndarray) -> Corners:
    """Tight inclusive bounding rectangle of the mask's 1-cells."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask has no nonzero cells")
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def crop_nonzero(image: np.ndarray, mask: np.ndarray) -> CroppedRegion:
    """Mask the image, then crop to the mask support's tight rectangle.

    The rectangle is taken from the mask (not from surviving pixel values),
    so zero-valued pixels inside the masked region are preserved. The crop
    offset is recorded for round-tripping.
    """
    r1, c1, r2, c2 = mask_bounds(mask)
    masked = _apply_mask(image, mask)
    return CroppedRegion(data=masked[r1 : r2 + 1, c1 : c2 + 1], offset=(r1, c1))


def fuse(initial: np.ndarray, context: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Composite: initial inside the mask, context outside, selected per pixel."""
    if initial.shape != context.shape:
        raise ValueError(f"shape mismatch: {initial.shape} vs {context.shape}")
    if initial.shape[:2] != mask.shape:
        raise ValueError(f"mask {mask.shape} does not match images {initial.shape}")
    keep = mask.astype(bool)
    if initial.ndim == 3:
        keep = keep[:, :, None]
    return np.where(keep, initial, context)


def mex_areas(
    gt: np.ndarray,
    manipulated: np.ndarray,
    condition: np.ndarray,
    box: EditBox,
    sched: ExpansionSchedule,
) -> tuple[MExAreaSet, MExAreaSet]:
    """Per-level masked areas of the ground truth and the manipulated map.

    For each level j in [0, q] the expansion mask is applied to both maps and
    to the condition; when the schedule is cropped, every level is cut down to
    the clamped expanded-box rectangle, otherwise levels stay full-canvas.
    """
    if gt.shape != manipulated.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {manipulated.shape}")
    if gt.shape[:2] != condition.shape[:2]:
        raise ValueError(f"condition {condition.shape} does not cover {gt.shape}")
    height, width = gt.shape[:2]

    gt_levels: list[MExAreaLevel] = []
    man_levels: list[MExAreaLevel] = []
    for j in range(sched.q + 1):
        corners = expand_box(box, j, sched, height, width)
        level_mask = make_mask(EditBox(corners, box.target_label), height, width)
        if sched.cropped:
            gt_area = crop_nonzero(gt, level_mask).data
            man_area = crop_nonzero(manipulated, level_mask).data
            cond_area = crop_nonzero(condition, level_mask).data
        else:
            gt_area = _apply_mask(gt, level_mask)
            man_area = _apply_mask(manipulated, level_mask)
            cond_area = _apply_mask(condition, level_mask)
        gt_levels.append(MExAreaLevel(gt_area, cond_area, level_mask, corners))
        man_levels.append(MExAreaLevel(man_area, cond_area, level_mask, corners))
    return MExAreaSet(gt_levels), MExAreaSet(man_levels)
