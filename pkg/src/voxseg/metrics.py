"""Segmentation metrics: Dice overlap, average surface distance, Hausdorff distance.

Surfaces are foreground voxels with at least one background voxel among their
6-neighbors; the volume boundary counts as background. Distances are Euclidean
between voxel centers in mm: integer index deltas scaled by the per-axis
spacing, measured surface to surface. Sums of distances are exactly rounded
(math.fsum), so results do not depend on enumeration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import Volume


class EmptyMaskError(ValueError):
    """Surface distances are undefined for an empty mask."""


@dataclass
class BinaryMask:
    """Boolean voxel grid, axes (z, y, x), with mm spacing along (x, y, z)."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=bool)
        if self.voxels.ndim != 3:
            raise ValueError(f"mask must have 3 axes, got {self.voxels.ndim}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @classmethod
    def from_labels(cls, volume: Volume, cls_index: int) -> "BinaryMask":
        """One-vs-rest binarization of a label volume."""
        if volume.tensor.shape.c != 1:
            raise ValueError("label volume must be single channel")
        return cls(volume.tensor.zyxc[..., 0] == cls_index, volume.spacing)

    def _check_compatible(self, other: "BinaryMask") -> None:
        if self.voxels.shape != other.voxels.shape:
            raise ValueError(
                f"extent mismatch: {self.voxels.shape} vs {other.voxels.shape}"
            )
        if self.spacing != other.spacing:
            raise ValueError(f"spacing mismatch: {self.spacing} vs {other.spacing}")


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2 |A n B| / (|A| + |B|); two empty masks compare as 1.0."""
    a._check_compatible(b)
    na, nb = int(a.voxels.sum()), int(b.voxels.sum())
    if na == 0 and nb == 0:
        return 1.0
    inter = int((a.voxels & b.voxels).sum())
    return 2.0 * inter / (na + nb)


def extract_surface(mask: BinaryMask) -> np.ndarray:
    """Surface voxel coordinates as an (n, 3) int array in (x, y, z) order."""
    m = mask.voxels
    padded = np.pad(m, 1)
    interior = m.copy()
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    surface = m & ~interior
    zz, yy, xx = np.nonzero(surface)
    return np.stack([xx, yy, zz], axis=1)


def _surface_or_raise(mask: BinaryMask) -> np.ndarray:
    coords = extract_surface(mask)
    if coords.shape[0] == 0:
        raise EmptyMaskError("mask has no foreground voxels")
    return coords


def _directed_distances(src: np.ndarray, dst: np.ndarray,
                        spacing: tuple[float, float, float],
                        chunk: int = 512) -> np.ndarray:
    """Nearest-surface distance in mm for each source voxel.

    Computed over all pairs: integer index deltas scaled by spacing, squared,
    summed per pair, minimized, then square-rooted.
    """
    sp = np.asarray(spacing)
    out = np.empty(len(src))
    for start in range(0, len(src), chunk):
        block = src[start : start + chunk]
        delta = (block[:, None, :] - dst[None, :, :]).astype(np.float64) * sp
        d2 = (delta * delta).sum(axis=2)
        out[start : start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def asd(a: BinaryMask, b: BinaryMask) -> float:
    """Symmetric mean nearest-surface distance in mm."""
    a._check_compatible(b)
    sa = _surface_or_raise(a)
    sb = _surface_or_raise(b)
    d_ab = _directed_distances(sa, sb, a.spacing)
    d_ba = _directed_distances(sb, sa, a.spacing)
    return math.fsum(d_ab.tolist() + d_ba.tolist()) / (len(sa) + len(sb))


def hausdorff(a: BinaryMask, b: BinaryMask) -> float:
    """Maximum nearest-surface distance over both directions, in mm (100th percentile)."""
    a._check_compatible(b)
    sa = _surface_or_raise(a)
    sb = _surface_or_raise(b)
    return float(max(_directed_distances(sa, sb, a.spacing).max(),
                     _directed_distances(sb, sa, a.spacing).max()))


def per_class_metrics(prediction: Volume, reference: Volume) -> list[dict]:
    """One-vs-rest DOC/ASD/HD per foreground class.

    ASD and HD are reported as NaN when either surface is empty for a class.
    """
    if prediction.extents != reference.extents:
        raise ValueError(
            f"extent mismatch: {prediction.extents} vs {reference.extents}"
        )
    if prediction.spacing != reference.spacing:
        raise ValueError(
            f"spacing mismatch: {prediction.spacing} vs {reference.spacing}"
        )
    classes = max(prediction.class_count, reference.class_count)
    rows = []
    for cls in range(1, classes):
        pm = BinaryMask.from_labels(prediction, cls)
        rm = BinaryMask.from_labels(reference, cls)
        row = {"class": cls, "dice": dice(pm, rm)}
        try:
            row["asd"] = asd(pm, rm)
            row["hausdorff"] = hausdorff(pm, rm)
        except EmptyMaskError:
            row["asd"] = float("nan")
            row["hausdorff"] = float("nan")
        rows.append(row)
    return rows
