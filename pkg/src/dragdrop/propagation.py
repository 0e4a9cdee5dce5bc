"""Marker construction and watershed propagation of (center, radius)
annotations into pseudo labels with an uncertainty ring.

The flood runs on the morphological gradient of a per-lesion ROI. Lesion
seeds are a small ball at the annotated center (ratio ``n_ratio`` of the
radius); background seeds are the integer points of the annotated sphere's
surface band, which cap the flood from outside. The pseudo label is the
lesion basin; dilating it by ``m_ratio`` of the radius and subtracting it
yields the gradient-free uncertainty ring.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .annotation import DragDropAnnotation, RefinementClick
from .morphology import (
    StructuringElement,
    ball,
    cross6,
    morphological_gradient,
    se_from_name,
)
from .volume import Box, Volume, crop_roi

LESION = 1
BACKGROUND = 2


class PropagationError(Exception):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    n_ratio: float = 0.2
    m_ratio: float = 0.5
    sphere_tolerance: float = 0.5  # in units of max(spacing)
    surface_sample_fraction: float = 1.0
    connectivity: int = 6
    gradient_se: str = "cross6"
    roi_margin: float = 1.25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.n_ratio < 1:
            raise ValueError("n_ratio must be in (0, 1)")
        if self.m_ratio <= 0:
            raise ValueError("m_ratio must be > 0")
        if not 0 < self.surface_sample_fraction <= 1:
            raise ValueError("surface_sample_fraction must be in (0, 1]")
        if self.connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PropagationConfig":
        return cls(**json.loads(text))


@dataclass
class MarkerSet:
    lesion: np.ndarray  # (K, 3) int voxel coords
    background: np.ndarray  # (J, 3) int voxel coords

    def __post_init__(self):
        if len(self.lesion) == 0:
            raise PropagationError("lesion marker set is empty")
        if len(self.background) == 0:
            raise PropagationError("background marker set is empty")
        lset = {tuple(v) for v in self.lesion}
        if any(tuple(v) in lset for v in self.background):
            raise PropagationError("marker sets must be disjoint")


@dataclass
class PseudoLabel:
    foreground: np.ndarray  # bool
    uncertain: np.ndarray  # bool, disjoint from foreground
    class_labels: np.ndarray  # int32, class id per foreground voxel
    spacing: tuple[float, float, float]
    config: PropagationConfig
    annotations: tuple[DragDropAnnotation, ...] = ()
    clicks: tuple[RefinementClick, ...] = ()


# ---------------------------------------------------------------------------
# markers

def sphere_surface_points(
    center_mm, radius_mm: float, spacing, dims, tolerance: float = 0.5
) -> np.ndarray:
    """Integer voxels in the band radius <= physical distance <= radius + tol,
    clipped to the volume. The band sits on and outside the annotated sphere:
    by the encompassment contract the lesion lies inside it, so seeding the
    band as background never floods the lesion interior. Widened x2 then x4
    when empty."""
    if radius_mm <= 0:
        raise PropagationError("sphere radius must be > 0")
    center_mm = np.asarray(center_mm, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    for widen in (1.0, 2.0, 4.0):
        tol = tolerance * widen * float(spacing.max())
        lo = np.maximum(np.ceil((center_mm - radius_mm - tol) / spacing), 0).astype(int)
        hi = np.minimum(
            np.floor((center_mm + radius_mm + tol) / spacing).astype(int) + 1,
            np.asarray(dims),
        )
        if np.any(hi <= lo):
            continue
        grid = np.stack(
            np.meshgrid(*[np.arange(lo[a], hi[a]) for a in range(3)], indexing="ij"),
            axis=-1,
        ).reshape(-1, 3)
        d = np.linalg.norm(grid * spacing - center_mm, axis=1)
        pick = (d >= radius_mm - 1e-9) & (d <= radius_mm + tol + 1e-9)
        pts = grid[pick]
        if len(pts):
            return pts
    raise PropagationError(
        f"no integer surface points for radius {radius_mm} at {tuple(center_mm)} "
        "(radius smaller than half a voxel?)"
    )


def _ball_voxels(center_mm, radius_mm, spacing, dims) -> np.ndarray:
    """Integer voxels within a physical radius of a physical center, clipped;
    never empty: falls back to the voxel nearest the center."""
    center_mm = np.asarray(center_mm, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    lo = np.maximum(np.ceil((center_mm - radius_mm) / spacing), 0).astype(int)
    hi = np.minimum(
        np.floor((center_mm + radius_mm) / spacing).astype(int) + 1, np.asarray(dims)
    )
    pts = np.empty((0, 3), dtype=int)
    if np.all(hi > lo):
        grid = np.stack(
            np.meshgrid(*[np.arange(lo[a], hi[a]) for a in range(3)], indexing="ij"),
            axis=-1,
        ).reshape(-1, 3)
        d = np.linalg.norm(grid * spacing - center_mm, axis=1)
        pts = grid[d <= radius_mm + 1e-9]
    if len(pts) == 0:
        nearest = np.clip(
            np.rint(center_mm / spacing).astype(int), 0, np.asarray(dims) - 1
        )
        pts = nearest[None, :]
    return pts


def build_markers(
    ann: DragDropAnnotation, cfg: PropagationConfig, spacing, dims
) -> MarkerSet:
    """Lesion ball of radius n_ratio*r at the center plus (subsampled) sphere
    surface background points; overlap voxels are dropped from the background."""
    lesion = _ball_voxels(ann.center_mm, cfg.n_ratio * ann.radius_mm, spacing, dims)
    surface = sphere_surface_points(
        ann.center_mm, ann.radius_mm, spacing, dims, cfg.sphere_tolerance
    )
    if cfg.surface_sample_fraction < 1.0:
        rng = np.random.default_rng(cfg.seed + 1000 * ann.lesion_id)
        keep = max(1, int(round(len(surface) * cfg.surface_sample_fraction)))
        surface = surface[np.sort(rng.choice(len(surface), keep, replace=False))]
    lset = {tuple(v) for v in lesion}
    surface = np.array([v for v in surface if tuple(v) not in lset], dtype=int)
    if len(surface) == 0:
        raise PropagationError(
            f"annotation {ann.lesion_id}: all surface points overlap the lesion marker"
        )
    return MarkerSet(lesion=lesion, background=surface)


# ---------------------------------------------------------------------------
# watershed

def _neighbor_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    if connectivity == 6:
        offs = [(-1, 0, 0), (0, -1, 0), (0, 0, -1), (0, 0, 1), (0, 1, 0), (1, 0, 0)]
    elif connectivity == 26:
        offs = sorted(
            (i, j, k)
            for i in (-1, 0, 1)
            for j in (-1, 0, 1)
            for k in (-1, 0, 1)
            if (i, j, k) != (0, 0, 0)
        )
    else:
        raise ValueError("connectivity must be 6 or 26")
    return offs


def watershed(
    gradient: np.ndarray, markers: MarkerSet, connectivity: int = 6
) -> np.ndarray:
    """Marker-competing priority flood. Seeds are pushed at their own gradient value
    (lesion seeds first), the pending voxel with the minimum (value, insertion
    order) pops, claims its basin if unclaimed, and pushes unassigned
    neighbors at their gradient value. Returns int8 labels: 0 unassigned
    (unreachable), 1 lesion, 2 background."""
    grad = np.asarray(gradient, dtype=np.float64)
    dims = grad.shape
    labels = np.zeros(dims, dtype=np.int8)
    expanded = np.zeros(dims, dtype=bool)
    offs = _neighbor_offsets(connectivity)
    heap: list[tuple[float, int, tuple[int, int, int], int]] = []
    counter = 0

    def seed(coords: np.ndarray, lab: int):
        nonlocal counter
        for v in sorted(map(tuple, coords)):
            if not all(0 <= v[a] < dims[a] for a in range(3)):
                raise PropagationError(f"marker voxel {v} outside volume {dims}")
            labels[v] = lab
            heapq.heappush(heap, (grad[v], counter, v, lab))
            counter += 1

    seed(markers.lesion, LESION)
    seed(markers.background, BACKGROUND)

    while heap:
        _, _, v, lab = heapq.heappop(heap)
        if expanded[v]:
            continue
        expanded[v] = True
        if labels[v] == 0:
            labels[v] = lab
        basin = labels[v]
        for off in offs:
            n = (v[0] + off[0], v[1] + off[1], v[2] + off[2])
            if not (0 <= n[0] < dims[0] and 0 <= n[1] < dims[1] and 0 <= n[2] < dims[2]):
                continue
            if labels[n] == 0:
                heapq.heappush(heap, (grad[n], counter, n, basin))
                counter += 1
    return labels


# ---------------------------------------------------------------------------
# propagation

def _roi_box(ann: DragDropAnnotation, cfg: PropagationConfig, spacing, dims) -> Box:
    c = np.asarray(ann.center_mm) / np.asarray(spacing)
    half = cfg.roi_margin * ann.radius_mm / np.asarray(spacing)
    lo = tuple(int(np.floor(c[a] - half[a])) for a in range(3))
    hi = tuple(int(np.ceil(c[a] + half[a])) + 1 for a in range(3))
    box = Box(lo, hi).clipped(dims)
    if box.empty:
        raise PropagationError(
            f"annotation {ann.lesion_id}: degenerate ROI {lo}..{hi} in volume {dims}"
        )
    return box


def _check_center(ann: DragDropAnnotation, spacing, dims) -> None:
    c = np.asarray(ann.center_mm) / np.asarray(spacing)
    if np.any(c < -0.5) or np.any(c > np.asarray(dims) - 0.5):
        raise PropagationError(
            f"annotation {ann.lesion_id}: center {ann.center_mm} outside volume"
        )


def _clicks_for_box(clicks, box: Box):
    inside = []
    for cl in clicks:
        v = cl.voxel
        if all(box.lo[a] <= v[a] < box.hi[a] for a in range(3)):
            inside.append(cl)
    return inside


def _nearest_annotation(anns, voxel, spacing):
    p = np.asarray(voxel) * np.asarray(spacing)
    best, best_d = None, np.inf
    for a in anns:
        d = float(np.linalg.norm(np.asarray(a.center_mm) - p))
        if d < best_d:
            best, best_d = a, d
    return best


def _propagate_single(vol, ann, cfg, grad_se, clicks):
    spacing = np.asarray(vol.spacing)
    box = _roi_box(ann, cfg, vol.spacing, vol.dims)
    # widen the ROI for clicks assigned to this lesion but outside its box
    own = [
        cl
        for cl in clicks
        if _nearest_annotation([ann], cl.voxel, vol.spacing) is not None
    ]
    extra = [cl for cl in own if cl not in _clicks_for_box(own, box)]
    if extra:
        lo = list(box.lo)
        hi = list(box.hi)
        for cl in extra:
            for a in range(3):
                lo[a] = min(lo[a], cl.voxel[a] - 2)
                hi[a] = max(hi[a], cl.voxel[a] + 3)
        box = Box(tuple(lo), tuple(hi)).clipped(vol.dims)
    origin = np.asarray(box.lo)
    roi = crop_roi(vol.data, box)
    grad = morphological_gradient(roi, grad_se)
    roi_dims = roi.shape
    center_local = np.asarray(ann.center_mm) - origin * spacing
    local_ann = DragDropAnnotation(
        tuple(center_local), ann.radius_mm, ann.class_id, ann.lesion_id
    )
    markers = build_markers(local_ann, cfg, vol.spacing, roi_dims)
    lesion_pts = [markers.lesion]
    background_pts = [markers.background]
    for cl in own:
        v = np.asarray(cl.voxel) - origin
        if np.any(v < 0) or np.any(v >= np.asarray(roi_dims)):
            continue
        if cl.polarity == "foreground":
            r_local = cfg.n_ratio * ann.radius_mm
            lesion_pts.append(
                _ball_voxels(v * spacing, r_local, vol.spacing, roi_dims)
            )
        else:
            background_pts.append(v[None, :])
    lesion = np.unique(np.concatenate(lesion_pts), axis=0)
    background = np.unique(np.concatenate(background_pts), axis=0)
    # background clicks win conflicts; sphere points lose to lesion markers
    bset = {tuple(v) for v in np.concatenate(background_pts[1:])} if len(
        background_pts
    ) > 1 else set()
    lesion = np.array([v for v in lesion if tuple(v) not in bset], dtype=int)
    lset = {tuple(v) for v in lesion}
    background = np.array(
        [v for v in background if tuple(v) not in lset], dtype=int
    )
    labels = watershed(grad, MarkerSet(lesion, background), cfg.connectivity)
    return box, labels == LESION


def _propagate_full(
    vol: Volume,
    anns: list[DragDropAnnotation],
    cfg: PropagationConfig,
    clicks: tuple[RefinementClick, ...] = (),
) -> PseudoLabel:
    grad_se = se_from_name(cfg.gradient_se)
    fg = np.zeros(vol.dims, dtype=bool)
    cls = np.zeros(vol.dims, dtype=np.int32)
    per_ann: list[tuple[DragDropAnnotation, Box, np.ndarray]] = []
    # clicks are routed to their nearest annotation
    routed: dict[int, list[RefinementClick]] = {a.lesion_id: [] for a in anns}
    for cl in clicks:
        near = _nearest_annotation(anns, cl.voxel, vol.spacing)
        if near is not None:
            routed[near.lesion_id].append(cl)
    for ann in anns:
        _check_center(ann, vol.spacing, vol.dims)
        box, mask = _propagate_single(vol, ann, cfg, grad_se, routed[ann.lesion_id])
        per_ann.append((ann, box, mask))
        sl = box.slices()
        fg[sl] |= mask
        cls[sl][mask] = ann.class_id
    unc = np.zeros(vol.dims, dtype=bool)
    for ann, box, mask in per_ann:
        se = ball(cfg.m_ratio * ann.radius_mm, vol.spacing)
        grow = max(abs(c) for off in se.offsets for c in off) + 1
        ext = Box(
            tuple(l - grow for l in box.lo), tuple(h + grow for h in box.hi)
        ).clipped(vol.dims)
        patch = np.zeros(tuple(h - l for l, h in zip(ext.lo, ext.hi)), dtype=bool)
        inner = tuple(
            slice(box.lo[a] - ext.lo[a], box.hi[a] - ext.lo[a]) for a in range(3)
        )
        patch[inner] = mask
        from .morphology import dilate

        unc[ext.slices()] |= dilate(patch, se)
    unc &= ~fg
    return PseudoLabel(
        foreground=fg,
        uncertain=unc,
        class_labels=cls,
        spacing=vol.spacing,
        config=cfg,
        annotations=tuple(anns),
        clicks=tuple(dict.fromkeys(clicks)),
    )


def propagate(
    vol: Volume, anns: list[DragDropAnnotation], cfg: PropagationConfig | None = None
) -> PseudoLabel:
    """Run the per-lesion watershed on each annotation's ROI and union the
    lesion basins; deterministic for a fixed config seed."""
    return _propagate_full(vol, list(anns), cfg or PropagationConfig())


def refine(
    prev: PseudoLabel, clicks: list[RefinementClick], vol: Volume,
    cfg: PropagationConfig | None = None,
) -> PseudoLabel:
    """Re-run propagation with foreground clicks as extra lesion markers and
    background clicks as extra background markers. Idempotent for repeated
    identical click lists."""
    if not clicks:
        return prev
    merged = tuple(dict.fromkeys((*prev.clicks, *clicks)))
    return _propagate_full(
        vol, list(prev.annotations), cfg or prev.config, merged
    )
