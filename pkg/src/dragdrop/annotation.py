"""Single-gesture (center + radius) annotations, their simulation from ground
truth, and the competing weak-annotation generators (bounding box, points,
ellipse, scribbles)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .components import connected_components
from .volume import LabelVolume


class AnnotationError(Exception):
    pass


class EllipseFitError(AnnotationError):
    """Degenerate point configuration: no ellipse fits."""


class SchemaError(AnnotationError):
    """Annotation JSON violates the schema; message carries a JSON pointer."""


@dataclass(frozen=True)
class DragDropAnnotation:
    center_mm: tuple[float, float, float]
    radius_mm: float
    class_id: int = 1
    lesion_id: int = 1

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius_mm}")
        if self.class_id < 1:
            raise ValueError("class_id must be a positive integer")


@dataclass(frozen=True)
class RefinementClick:
    voxel: tuple[int, int, int]
    polarity: str  # "foreground" | "background"

    def __post_init__(self):
        if self.polarity not in ("foreground", "background"):
            raise ValueError(f"bad click polarity {self.polarity!r}")


@dataclass(frozen=True)
class EllipseParams:
    center2d: tuple[float, float]
    semi_axes: tuple[float, float]  # (a, b), a >= b > 0
    theta: float  # radians in [0, pi)
    slice_index: int = 0
    axis: str = "z"


@dataclass
class WeakAnnotationSet:
    kind: str  # dragdrop | bbox | points | ellipse | scribble
    items: list[dict]
    volume: str = ""
    provenance: dict = field(default_factory=lambda: {"mode": "manual"})

    KINDS = ("dragdrop", "bbox", "points", "ellipse", "scribble")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown annotation kind {self.kind!r}")
        ids = [it.get("lesion_id") for it in self.items]
        if len(ids) != len(set(ids)):
            raise ValueError("lesion_ids must be unique within a set")


# ---------------------------------------------------------------------------
# Drag&Drop simulation

def _component_voxels(gt: LabelVolume):
    label_vol, comps = connected_components(gt.labels > 0, connectivity=26,
                                            spacing=gt.spacing)
    for comp in comps:
        coords = np.stack(np.nonzero(label_vol.labels == comp.label), axis=1)
        yield comp, coords


def simulate_dragdrop(
    gt: LabelVolume, sigma_frac: float = 0.05, seed: int = 0
) -> list[DragDropAnnotation]:
    """One annotation per 26-connected lesion: noisy physical centroid plus the
    radius that encloses every component voxel (so encompassment holds by
    construction)."""
    rng = np.random.default_rng(seed)
    spacing = np.asarray(gt.spacing)
    floor = float(max(gt.spacing))
    anns = []
    for comp, coords in _component_voxels(gt):
        phys = coords * spacing
        centroid = phys.mean(axis=0)
        r0 = float(np.linalg.norm(phys - centroid, axis=1).max())
        comp_set = {tuple(v) for v in coords}
        center = centroid
        if sigma_frac > 0 and r0 > 0:
            for _ in range(100):
                cand = centroid + rng.normal(0.0, sigma_frac * r0, size=3)
                if tuple(np.rint(cand / spacing).astype(int)) in comp_set:
                    center = cand
                    break
            else:
                center = centroid
        radius = float(np.linalg.norm(phys - center, axis=1).max())
        radius = max(radius, floor)
        gt_vals = gt.labels[tuple(coords.T)]
        class_id = int(np.bincount(gt_vals).argmax())
        anns.append(
            DragDropAnnotation(
                center_mm=tuple(float(c) for c in center),
                radius_mm=radius,
                class_id=max(class_id, 1),
                lesion_id=comp.label,
            )
        )
    return anns


# ---------------------------------------------------------------------------
# Competing weak annotations

def simulate_bbox(gt: LabelVolume) -> WeakAnnotationSet:
    """Per-lesion axis-aligned boxes from the per-axis voxel min/max."""
    items = []
    for comp, coords in _component_voxels(gt):
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        items.append(
            {
                "lesion_id": comp.label,
                "class_id": 1,
                "lo": [int(v) for v in lo],
                "hi": [int(v) for v in hi],
            }
        )
    return WeakAnnotationSet("bbox", items, provenance={"mode": "simulated"})


def simulate_points(gt: LabelVolume, k: int = 10, seed: int = 0) -> WeakAnnotationSet:
    """k points uniform over each lesion's bounding box, labeled by mask lookup."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    items = []
    for comp, coords in _component_voxels(gt):
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        comp_set = {tuple(v) for v in coords}
        pts = []
        for _ in range(k):
            v = tuple(int(rng.integers(lo[a], hi[a] + 1)) for a in range(3))
            pts.append({"voxel": list(v), "positive": v in comp_set})
        items.append({"lesion_id": comp.label, "class_id": 1, "points": pts})
    return WeakAnnotationSet(
        "points", items, provenance={"mode": "simulated", "seed": seed}
    )


def fit_ellipse(points: np.ndarray) -> EllipseParams:
    """Direct least-squares conic fit with the ellipse constraint
    (4AC - B^2 = 1 normalization), returned in center/axes/angle form."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 5:
        raise EllipseFitError(f"need >= 5 2-D points, got shape {pts.shape}")
    x = pts[:, 0]
    y = pts[:, 1]
    # center the data for conditioning
    mx, my = x.mean(), y.mean()
    xc, yc = x - mx, y - my
    d1 = np.column_stack([xc * xc, xc * yc, yc * yc])
    d2 = np.column_stack([xc, yc, np.ones_like(xc)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as e:
        raise EllipseFitError(f"degenerate point configuration: {e}") from e
    m = s1 + s2 @ t
    c1inv = np.array([[0.0, 0.0, 0.5], [0.0, -1.0, 0.0], [0.5, 0.0, 0.0]])
    try:
        evals, evecs = np.linalg.eig(c1inv @ m)
    except np.linalg.LinAlgError as e:
        raise EllipseFitError(f"eigen decomposition failed: {e}") from e
    cond = 4 * evecs[0] * evecs[2] - evecs[1] ** 2
    good = np.where(np.isreal(evals) & (np.real(cond) > 0))[0]
    if good.size == 0:
        raise EllipseFitError("no ellipse satisfies the constraint "
                              "(points collinear or coincident?)")
    a1 = np.real(evecs[:, good[0]])
    a1 = a1 / np.sqrt(np.real(cond[good[0]]))  # 4AC - B^2 = 1
    coeffs = np.concatenate([a1, t @ a1])
    # geometry recovered in centered coordinates, then shifted back
    A, B, C, D, E, F = coeffs
    den = 4 * A * C - B * B
    u0 = (B * E - 2 * C * D) / den
    v0 = (B * D - 2 * A * E) / den
    f0 = A * u0 * u0 + B * u0 * v0 + C * v0 * v0 + D * u0 + E * v0 + F
    q = np.array([[A, B / 2], [B / 2, C]])
    evq, evecq = np.linalg.eigh(q)
    if np.any(evq * np.sign(-f0) <= 0):
        raise EllipseFitError("fit degenerated to a non-ellipse conic")
    axes = np.sqrt(-f0 / evq)  # eigh ascending -> axes descending when f0 < 0
    order = np.argsort(axes)[::-1]
    a_ax, b_ax = float(axes[order[0]]), float(axes[order[1]])
    major = evecq[:, order[0]]
    theta = float(np.arctan2(major[1], major[0])) % np.pi
    return EllipseParams(center2d=(float(u0 + mx), float(v0 + my)),
                         semi_axes=(a_ax, b_ax), theta=theta)


def _largest_slice(coords: np.ndarray) -> int:
    zs, counts = np.unique(coords[:, 2], return_counts=True)
    return int(zs[np.argmax(counts)])


def _boundary_pixels(mask2d: np.ndarray) -> np.ndarray:
    """In-slice 4-neighborhood boundary of a 2-D mask."""
    from scipy import ndimage

    inner = ndimage.binary_erosion(
        mask2d, structure=ndimage.generate_binary_structure(2, 1), border_value=0
    )
    return np.stack(np.nonzero(mask2d & ~inner), axis=1)


def simulate_ellipse(gt: LabelVolume) -> WeakAnnotationSet:
    """Fit an ellipse to the boundary of each lesion's largest axial slice."""
    items = []
    for comp, coords in _component_voxels(gt):
        z = _largest_slice(coords)
        sl = coords[coords[:, 2] == z][:, :2]
        mask2d = np.zeros(gt.dims[:2], dtype=bool)
        mask2d[sl[:, 0], sl[:, 1]] = True
        pts = _boundary_pixels(mask2d).astype(np.float64)
        pts *= np.asarray(gt.spacing[:2])
        try:
            ell = fit_ellipse(pts)
        except EllipseFitError as e:
            raise EllipseFitError(f"lesion {comp.label}: {e}") from e
        items.append(
            {
                "lesion_id": comp.label,
                "class_id": 1,
                "axis": "z",
                "slice_index": z,
                "center2d": list(ell.center2d),
                "semi_axes": list(ell.semi_axes),
                "theta": ell.theta,
            }
        )
    return WeakAnnotationSet("ellipse", items, provenance={"mode": "simulated"})


def _bezier(points: np.ndarray, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    if len(points) == 2:
        curve = (1 - t) * points[0] + t * points[1]
    else:
        curve = ((1 - t) ** 2 * points[0]
                 + 2 * (1 - t) * t * points[1]
                 + t ** 2 * points[2])
    return curve


def _rasterize_in_region(rng, region: np.ndarray, retries: int = 200):
    """A random linear or quadratic curve whose rasterization stays inside the
    region; returns the pixel list or None when the region is too thin."""
    cand = np.stack(np.nonzero(region), axis=1)
    if cand.size == 0:
        return None
    for _ in range(retries):
        degree = int(rng.integers(1, 3))  # 1 = linear, 2 = quadratic
        picks = cand[rng.integers(0, len(cand), size=degree + 1)].astype(float)
        curve = _bezier(picks, 8 * max(len(cand), 4))
        pix = np.unique(np.rint(curve).astype(int), axis=0)
        if np.all((pix >= 0) & (pix < np.array(region.shape))) and np.all(
            region[pix[:, 0], pix[:, 1]]
        ):
            return [[int(p[0]), int(p[1])] for p in pix]
    return None


def simulate_scribbles(gt: LabelVolume, seed: int = 0,
                       margin: int = 6) -> WeakAnnotationSet:
    """Per lesion, a foreground and a background scribble (random linear or
    quadratic curve) on its largest axial slice."""
    rng = np.random.default_rng(seed)
    any_fg = gt.labels > 0
    items = []
    for comp, coords in _component_voxels(gt):
        z = _largest_slice(coords)
        sl = coords[coords[:, 2] == z][:, :2]
        fg2d = np.zeros(gt.dims[:2], dtype=bool)
        fg2d[sl[:, 0], sl[:, 1]] = True
        lo = np.maximum(sl.min(axis=0) - margin, 0)
        hi = np.minimum(sl.max(axis=0) + margin + 1, gt.dims[:2])
        bg2d = np.zeros(gt.dims[:2], dtype=bool)
        bg2d[lo[0]:hi[0], lo[1]:hi[1]] = True
        bg2d &= ~any_fg[:, :, z]
        fg_curve = _rasterize_in_region(rng, fg2d)
        bg_curve = _rasterize_in_region(rng, bg2d)
        if fg_curve is None or bg_curve is None:
            raise AnnotationError(
                f"lesion {comp.label}: region too thin to place a scribble"
            )
        items.append(
            {
                "lesion_id": comp.label,
                "class_id": 1,
                "axis": "z",
                "slice_index": z,
                "foreground": fg_curve,
                "background": bg_curve,
            }
        )
    return WeakAnnotationSet(
        "scribble", items, provenance={"mode": "simulated", "seed": seed}
    )


# ---------------------------------------------------------------------------
# JSON (de)serialization

_PAYLOAD_KEYS = {
    "dragdrop": {"center_mm", "radius_mm"},
    "bbox": {"lo", "hi"},
    "points": {"points"},
    "ellipse": {"axis", "slice_index", "center2d", "semi_axes", "theta"},
    "scribble": {"axis", "slice_index", "foreground", "background"},
}


def dragdrop_set(anns: list[DragDropAnnotation], volume: str = "",
                 provenance: dict | None = None) -> WeakAnnotationSet:
    items = [
        {
            "lesion_id": a.lesion_id,
            "class_id": a.class_id,
            "center_mm": [float(c) for c in a.center_mm],
            "radius_mm": float(a.radius_mm),
        }
        for a in anns
    ]
    return WeakAnnotationSet("dragdrop", items, volume=volume,
                             provenance=provenance or {"mode": "manual"})


def dragdrop_annotations(aset: WeakAnnotationSet) -> list[DragDropAnnotation]:
    if aset.kind != "dragdrop":
        raise ValueError(f"expected a dragdrop set, got {aset.kind!r}")
    return [
        DragDropAnnotation(
            center_mm=tuple(it["center_mm"]),
            radius_mm=it["radius_mm"],
            class_id=it.get("class_id", 1),
            lesion_id=it["lesion_id"],
        )
        for it in aset.items
    ]


def serialize_annotations(aset: WeakAnnotationSet) -> str:
    doc = {
        "version": 1,
        "kind": aset.kind,
        "volume": aset.volume,
        "provenance": aset.provenance,
        "items": aset.items,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def parse_annotations(text: str) -> WeakAnnotationSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"/: invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("/: document must be an object")
    if doc.get("version") != 1:
        raise SchemaError(f"/version: expected 1, got {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind not in WeakAnnotationSet.KINDS:
        raise SchemaError(f"/kind: unknown annotation kind {kind!r}")
    items = doc.get("items")
    if not isinstance(items, list):
        raise SchemaError("/items: expected a list")
    required = _PAYLOAD_KEYS[kind]
    for i, it in enumerate(items):
        if not isinstance(it, dict):
            raise SchemaError(f"/items/{i}: expected an object")
        if not isinstance(it.get("lesion_id"), int):
            raise SchemaError(f"/items/{i}/lesion_id: expected an integer")
        missing = required - it.keys()
        if missing:
            raise SchemaError(f"/items/{i}: missing keys {sorted(missing)}")
        if kind == "dragdrop":
            if not (isinstance(it["radius_mm"], (int, float))
                    and it["radius_mm"] > 0):
                raise SchemaError(f"/items/{i}/radius_mm: must be > 0")
            if not (isinstance(it["center_mm"], list)
                    and len(it["center_mm"]) == 3):
                raise SchemaError(f"/items/{i}/center_mm: expected [x,y,z]")
    try:
        return WeakAnnotationSet(
            kind,
            items,
            volume=doc.get("volume", ""),
            provenance=doc.get("provenance", {"mode": "manual"}),
        )
    except ValueError as e:
        raise SchemaError(f"/items: {e}") from e


def load_annotations(path) -> WeakAnnotationSet:
    return parse_annotations(Path(path).read_text())


def save_annotations(aset: WeakAnnotationSet, path) -> None:
    Path(path).write_text(serialize_annotations(aset))
