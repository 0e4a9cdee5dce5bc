"""Connected-component labeling and per-component statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Box, LabelVolume


@dataclass(frozen=True)
class Component:
    label: int
    voxel_count: int
    centroid: tuple[float, float, float]  # voxel coordinates
    bbox: Box  # half-open


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return np.ones((3, 3, 3), dtype=bool)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(
    mask: np.ndarray, connectivity: int = 26, spacing=(1.0, 1.0, 1.0)
) -> tuple[LabelVolume, list[Component]]:
    """Label components 1..K in first-voxel scan order (C order over (x,y,z))."""
    mask = np.asarray(mask, dtype=bool)
    raw, k = ndimage.label(mask, structure=_structure(connectivity))
    if k == 0:
        return LabelVolume(np.zeros(mask.shape, np.int32), spacing), []
    # relabel so component ids follow first occurrence in flat scan order
    flat = raw.ravel()
    first = np.full(k + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # np.minimum.at over first occurrence
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable")  # old label-1 -> rank
    remap = np.zeros(k + 1, dtype=np.int32)
    remap[1 + order] = np.arange(1, k + 1, dtype=np.int32)
    labels = remap[raw]

    counts = np.bincount(labels.ravel(), minlength=k + 1)
    comps = []
    objects = ndimage.find_objects(labels)
    sums = np.zeros((k + 1, 3), dtype=np.float64)
    idx = np.nonzero(labels)
    coords = np.stack(idx, axis=1).astype(np.float64)
    np.add.at(sums, labels[idx], coords)
    for lab in range(1, k + 1):
        sl = objects[lab - 1]
        comps.append(
            Component(
                label=lab,
                voxel_count=int(counts[lab]),
                centroid=tuple(sums[lab] / counts[lab]),
                bbox=Box(
                    tuple(s.start for s in sl),
                    tuple(s.stop for s in sl),
                ),
            )
        )
    return LabelVolume(labels, spacing), comps
