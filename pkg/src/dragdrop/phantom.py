"""Synthetic volumes with analytically known ground truth.

The suite is the desk-scale stand-in for clinical data: 20 positive cases
(spheres and ellipsoids at several contrasts and noise levels, with and
without an intensity ramp, one anisotropic subset) plus 10 negative cases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .volume import LabelVolume, Volume, save_label, save_volume


@dataclass(frozen=True)
class LesionSpec:
    shape: str  # sphere | ellipsoid
    center_mm: tuple[float, float, float]
    size_mm: tuple[float, float, float]  # sphere uses size_mm[0] as radius
    delta: float  # intensity offset, != 0
    rotation_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    class_id: int = 1

    def __post_init__(self):
        if self.shape not in ("sphere", "ellipsoid"):
            raise ValueError(f"unknown lesion shape {self.shape!r}")
        if self.delta == 0:
            raise ValueError("lesion delta must be non-zero to be detectable")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lesions: tuple[LesionSpec, ...] = ()
    background: float = 0.0
    ramp_per_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.0
    negative_case: bool = False

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        doc = json.loads(text)
        lesions = tuple(
            LesionSpec(
                shape=l["shape"],
                center_mm=tuple(l["center_mm"]),
                size_mm=tuple(l["size_mm"]),
                delta=l["delta"],
                rotation_deg=tuple(l.get("rotation_deg", (0, 0, 0))),
                class_id=l.get("class_id", 1),
            )
            for l in doc.get("lesions", [])
        )
        return cls(
            dims=tuple(doc["dims"]),
            spacing=tuple(doc["spacing"]),
            lesions=lesions,
            background=doc.get("background", 0.0),
            ramp_per_mm=tuple(doc.get("ramp_per_mm", (0, 0, 0))),
            noise_sigma=doc.get("noise_sigma", 0.0),
            negative_case=doc.get("negative_case", False),
        )


def _rotation_matrix(deg: tuple[float, float, float]) -> np.ndarray:
    ax, ay, az = np.deg2rad(deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _membership(lesion: LesionSpec, coords_mm: np.ndarray) -> np.ndarray:
    rel = coords_mm - np.asarray(lesion.center_mm)
    if lesion.shape == "sphere":
        return np.linalg.norm(rel, axis=-1) <= lesion.size_mm[0]
    rot = _rotation_matrix(lesion.rotation_deg)
    local = rel @ rot  # inverse rotation of row vectors
    return np.sum((local / np.asarray(lesion.size_mm)) ** 2, axis=-1) <= 1.0


def generate_phantom(spec: PhantomSpec, seed: int = 0) -> tuple[Volume, LabelVolume]:
    """Analytic lesion membership per voxel center; intensity = background
    + ramp + lesion deltas + seeded Gaussian noise."""
    rng = np.random.default_rng(seed)
    spacing = np.asarray(spec.spacing)
    grid = np.stack(
        np.meshgrid(*[np.arange(n) for n in spec.dims], indexing="ij"), axis=-1
    )
    coords_mm = grid * spacing
    data = np.full(spec.dims, spec.background, dtype=np.float64)
    data += np.tensordot(coords_mm, np.asarray(spec.ramp_per_mm), axes=([-1], [0]))
    labels = np.zeros(spec.dims, dtype=np.int32)
    classes = np.zeros(spec.dims, dtype=np.int32)
    lesions = () if spec.negative_case else spec.lesions
    for idx, lesion in enumerate(lesions, start=1):
        inside = _membership(lesion, coords_mm)
        clash = inside & (classes > 0) & (classes != lesion.class_id)
        if np.any(clash):
            raise ValueError(
                f"lesion {idx} overlaps a lesion of a different class; "
                "ground truth would be ambiguous"
            )
        data[inside] += lesion.delta
        labels[inside] = idx
        classes[inside] = lesion.class_id
    if spec.noise_sigma > 0:
        data += rng.normal(0.0, spec.noise_sigma, size=spec.dims)
    return (
        Volume(data.astype(np.float32), spec.spacing),
        LabelVolume(labels, spec.spacing),
    )


def phantom_suite(seed: int = 0) -> list[tuple[Volume, LabelVolume, PhantomSpec]]:
    """The fixed 30-case acceptance battery: 20 positives and 10 negatives."""
    rng = np.random.default_rng(seed)
    deltas = [100.0, 200.0, -100.0, -200.0]
    sigmas = [0.0, 5.0, 10.0]
    cases: list[tuple[Volume, LabelVolume, PhantomSpec]] = []
    for i in range(20):
        aniso = i >= 15
        spacing = (1.0, 1.0, 2.5) if aniso else (1.0, 1.0, 1.0)
        use_ellipsoid = i % 2 == 1 and not aniso
        if aniso:
            radius = 6.0 + 2.0 * (i - 15) / 4.0  # thin-z cases need bulk
        else:
            radius = 3.0 + 5.0 * (i % 8) / 7.0
        center = tuple(
            24.0 * s + float(rng.uniform(-4.0, 4.0)) * (s if a < 2 else 1.0)
            for a, s in enumerate(spacing)
        )
        if use_ellipsoid:
            ratio = 1.0 + 1.5 * ((i // 2) % 4) / 3.0  # axis ratio <= 2.5
            axes = (radius, max(radius / ratio, 2.5), max(radius / ratio, 2.5))
            lesion = LesionSpec(
                shape="ellipsoid",
                center_mm=center,
                size_mm=axes,
                delta=deltas[i % 4],
                rotation_deg=(0.0, 0.0, float(rng.uniform(0, 180))),
            )
        else:
            lesion = LesionSpec(
                shape="sphere",
                center_mm=center,
                size_mm=(radius, radius, radius),
                delta=deltas[i % 4],
            )
        ramp = (0.1, 0.0, 0.05) if i % 2 == 0 else (0.0, 0.0, 0.0)
        spec = PhantomSpec(
            dims=(48, 48, 48),
            spacing=spacing,
            lesions=(lesion,),
            background=40.0,
            ramp_per_mm=ramp,
            noise_sigma=sigmas[i % 3],
        )
        vol, gt = generate_phantom(spec, seed=seed + i)
        cases.append((vol, gt, spec))
    for i in range(10):
        spec = PhantomSpec(
            dims=(48, 48, 48),
            spacing=(1.0, 1.0, 1.0),
            lesions=(),
            background=40.0,
            ramp_per_mm=(0.1, 0.0, 0.0) if i % 2 == 0 else (0.0, 0.0, 0.0),
            noise_sigma=sigmas[i % 3],
            negative_case=True,
        )
        vol, gt = generate_phantom(spec, seed=seed + 100 + i)
        cases.append((vol, gt, spec))
    return cases


def write_suite(out_dir, seed: int = 0) -> list[Path]:
    """Emit the suite as raw_json volume/gt pairs under case_<k>/."""
    out_dir = Path(out_dir)
    paths = []
    for k, (vol, gt, spec) in enumerate(phantom_suite(seed)):
        case_dir = out_dir / f"case_{k}"
        case_dir.mkdir(parents=True, exist_ok=True)
        save_volume(vol, case_dir / "volume.f32", format="raw_json")
        save_label(gt, case_dir / "gt.f32", format="raw_json")
        (case_dir / "spec.json").write_text(spec.to_json() + "\n")
        paths.append(case_dir)
    return paths
