"""Binary and grayscale morphology on 3-D grids.

Structuring elements are explicit offset lists. Neighborhoods are clipped at
the volume border: no padding value is invented, so erosion of the full mask
is the full mask and the gradient carries no border artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StructuringElement:
    name: str
    offsets: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        offs = {tuple(int(c) for c in o) for o in self.offsets}
        if (0, 0, 0) not in offs:
            raise ValueError("structuring element must contain the zero offset")
        for o in offs:
            if tuple(-c for c in o) not in offs:
                raise ValueError(f"offsets must be symmetric under negation: {o}")
        object.__setattr__(self, "offsets", tuple(sorted(offs)))


def cross6() -> StructuringElement:
    offs = [(0, 0, 0)]
    for a in range(3):
        for s in (-1, 1):
            o = [0, 0, 0]
            o[a] = s
            offs.append(tuple(o))
    return StructuringElement("cross6", tuple(offs))


def cube26() -> StructuringElement:
    offs = [
        (i, j, k)
        for i in (-1, 0, 1)
        for j in (-1, 0, 1)
        for k in (-1, 0, 1)
    ]
    return StructuringElement("cube26", tuple(offs))


def ball(radius_mm: float, spacing=(1.0, 1.0, 1.0)) -> StructuringElement:
    """Euclidean ball of a physical radius; anisotropic spacing shrinks the
    voxel extent along coarse axes."""
    if radius_mm < 0:
        raise ValueError("ball radius must be >= 0")
    ext = [int(np.floor(radius_mm / s)) for s in spacing]
    offs = []
    for i in range(-ext[0], ext[0] + 1):
        for j in range(-ext[1], ext[1] + 1):
            for k in range(-ext[2], ext[2] + 1):
                d = np.sqrt(
                    (i * spacing[0]) ** 2
                    + (j * spacing[1]) ** 2
                    + (k * spacing[2]) ** 2
                )
                if d <= radius_mm + 1e-9:
                    offs.append((i, j, k))
    if not offs:
        offs = [(0, 0, 0)]
    return StructuringElement(f"ball({radius_mm:g})", tuple(offs))


def se_from_name(name: str) -> StructuringElement:
    if name == "cross6":
        return cross6()
    if name == "cube26":
        return cube26()
    if name.startswith("ball(") and name.endswith(")"):
        return ball(float(name[5:-1]))
    raise ValueError(f"unknown structuring element {name!r}")


def _shifted_view(arr: np.ndarray, off) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    """Destination and source slices so that dst[v] = src[v + off] where valid."""
    dst, src = [], []
    for ax, o in enumerate(off):
        n = arr.shape[ax]
        if o >= 0:
            dst.append(slice(0, n - o))
            src.append(slice(o, n))
        else:
            dst.append(slice(-o, n))
            src.append(slice(0, n + o))
    return tuple(dst), tuple(src)


def dilate(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Union of translates of the mask by the element's offsets."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for off in se.offsets:
        # v in out iff mask[v - off]; reading at v + (-off)
        dst, src = _shifted_view(mask, tuple(-c for c in off))
        out[dst] |= mask[src]
    return out


def erode(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Voxels whose full (border-clipped) neighborhood is foreground."""
    mask = np.asarray(mask, dtype=bool)
    out = np.ones_like(mask)
    for off in se.offsets:
        dst, src = _shifted_view(mask, off)
        out[dst] &= mask[src]
    return out


def gray_dilate(data: np.ndarray, se: StructuringElement) -> np.ndarray:
    data = np.asarray(data, dtype=np.float32)
    out = np.full_like(data, -np.inf)
    for off in se.offsets:
        dst, src = _shifted_view(data, off)
        np.maximum(out[dst], data[src], out=out[dst])
    return out


def gray_erode(data: np.ndarray, se: StructuringElement) -> np.ndarray:
    data = np.asarray(data, dtype=np.float32)
    out = np.full_like(data, np.inf)
    for off in se.offsets:
        dst, src = _shifted_view(data, off)
        np.minimum(out[dst], data[src], out=out[dst])
    return out


def morphological_gradient(data: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Grayscale dilation minus erosion over the element; >= 0 everywhere."""
    return gray_dilate(data, se) - gray_erode(data, se)
