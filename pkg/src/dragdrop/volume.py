"""Volumetric data model and file I/O.

Conventions used throughout the package:

- Arrays are indexed ``[x, y, z]`` with shape ``(nx, ny, nz)``.
- The physical position of voxel ``(i, j, k)`` is ``(i*sx, j*sy, k*sz)`` mm.
- Video frame stacks map the frame index to ``z`` with spacing ``(sx, sy, 1)``.
- On disk the ``raw_json`` format stores voxels x-fastest (Fortran order for
  our arrays); NIfTI uses the same layout natively.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class VolumeIOError(Exception):
    """Raised for unreadable, inconsistent or unsupported volume files."""


@dataclass
class Volume:
    data: np.ndarray  # float32, shape (nx, ny, nz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class LabelVolume:
    labels: np.ndarray  # int32 >= 0, shape (nx, ny, nz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 3:
            raise ValueError(f"label data must be 3-D, got shape {self.labels.shape}")
        if self.labels.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


# ---------------------------------------------------------------------------
# NIfTI-1 (restricted: 3-D, single channel, axis-aligned affine)

_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_NIFTI_CODES = {np.dtype(np.float32): (16, 32), np.dtype(np.int32): (8, 32)}


def _open_maybe_gzip(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_nifti(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    with _open_maybe_gzip(path, "rb") as f:
        raw = f.read()
    if len(raw) < 352:
        raise VolumeIOError(f"{path}: too short to be a NIfTI-1 file")
    hdr = raw[:348]
    (sizeof_hdr,) = struct.unpack("<i", hdr[0:4])
    endian = "<"
    if sizeof_hdr != 348:
        (sizeof_hdr,) = struct.unpack(">i", hdr[0:4])
        if sizeof_hdr != 348:
            raise VolumeIOError(f"{path}: bad NIfTI header size")
        endian = ">"
    if hdr[344:347] not in (b"n+1", b"ni1"):
        raise VolumeIOError(f"{path}: missing NIfTI magic")
    dim = struct.unpack(endian + "8h", hdr[40:56])
    ndim = dim[0]
    shape = tuple(int(d) for d in dim[1 : 1 + max(ndim, 3)])
    if ndim > 3 and any(d > 1 for d in dim[4 : 1 + ndim]):
        raise VolumeIOError(f"{path}: only 3-D single-channel NIfTI supported")
    shape = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in shape):
        raise VolumeIOError(f"{path}: invalid dims {shape}")
    (datatype,) = struct.unpack(endian + "h", hdr[70:72])
    if datatype not in _NIFTI_DTYPES:
        raise VolumeIOError(f"{path}: unsupported NIfTI datatype {datatype}")
    pixdim = struct.unpack(endian + "8f", hdr[76:108])
    (vox_offset,) = struct.unpack(endian + "f", hdr[108:112])
    scl_slope, scl_inter = struct.unpack(endian + "2f", hdr[112:120])
    (sform_code,) = struct.unpack(endian + "h", hdr[254:256])
    (qform_code,) = struct.unpack(endian + "h", hdr[252:254])
    if sform_code > 0:
        srow = np.array(struct.unpack(endian + "12f", hdr[280:328])).reshape(3, 4)
        rot = srow[:, :3]
        if np.max(np.abs(rot - np.diag(np.diag(rot)))) > 1e-4 * max(
            1.0, np.max(np.abs(rot))
        ):
            raise VolumeIOError(f"{path}: oblique NIfTI affines are not supported")
        spacing = tuple(float(abs(rot[i, i])) for i in range(3))
    elif qform_code > 0:
        b, c, d = struct.unpack(endian + "3f", hdr[256:268])
        if abs(b) > 1e-6 or abs(c) > 1e-6 or abs(d) > 1e-6:
            raise VolumeIOError(f"{path}: rotated NIfTI qform not supported")
        spacing = tuple(float(abs(p)) for p in pixdim[1:4])
    else:
        spacing = tuple(float(abs(p)) or 1.0 for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        spacing = tuple(s if s > 0 else 1.0 for s in spacing)
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    n = shape[0] * shape[1] * shape[2]
    off = int(vox_offset)
    payload = raw[off : off + n * dtype.itemsize]
    if len(payload) != n * dtype.itemsize:
        raise VolumeIOError(
            f"{path}: data length {len(payload)} does not match dims {shape}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        arr = arr * slope + scl_inter
    return arr, spacing


def _write_nifti(path: Path, arr: np.ndarray, spacing) -> None:
    dt = np.dtype(arr.dtype)
    if dt not in _NIFTI_CODES:
        raise VolumeIOError(f"cannot write dtype {dt} as NIfTI")
    datatype, bitpix = _NIFTI_CODES[dt]
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    sx, sy, sz = spacing
    struct.pack_into("<12f", hdr, 280, sx, 0, 0, 0, 0, sy, 0, 0, 0, 0, sz, 0)
    hdr[344:348] = b"n+1\0"
    payload = bytes(hdr) + b"\0\0\0\0" + arr.astype("<" + dt.str[1:]).tobytes(order="F")
    with _open_maybe_gzip(path, "wb") as f:
        f.write(payload)


# ---------------------------------------------------------------------------
# raw_json: <name>.f32 little-endian float32 + <name>.json sidecar

def _raw_paths(path: Path) -> tuple[Path, Path]:
    base = path
    for suf in (".f32", ".json"):
        if str(base).endswith(suf):
            base = Path(str(base)[: -len(suf)])
    return Path(str(base) + ".f32"), Path(str(base) + ".json")


def _read_raw_json(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    data_path, meta_path = _raw_paths(path)
    if not meta_path.exists():
        raise VolumeIOError(f"{meta_path}: sidecar not found")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise VolumeIOError(f"{meta_path}: invalid JSON sidecar: {e}") from e
    try:
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
    except (KeyError, TypeError, ValueError) as e:
        raise VolumeIOError(f"{meta_path}: sidecar missing dims/spacing: {e}") from e
    if meta.get("order", "x-fastest") != "x-fastest":
        raise VolumeIOError(f"{meta_path}: unsupported voxel order {meta['order']!r}")
    raw = data_path.read_bytes()
    n = dims[0] * dims[1] * dims[2]
    if len(raw) != 4 * n:
        raise VolumeIOError(
            f"{data_path}: byte count {len(raw)} does not match dims {dims}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(dims, order="F")
    return arr, spacing


def _write_raw_json(path: Path, arr: np.ndarray, spacing) -> None:
    data_path, meta_path = _raw_paths(path)
    data_path.write_bytes(arr.astype("<f4").tobytes(order="F"))
    meta_path.write_text(
        json.dumps(
            {
                "dims": list(arr.shape),
                "spacing": [float(s) for s in spacing],
                "order": "x-fastest",
            }
        )
        + "\n"
    )


# ---------------------------------------------------------------------------
# frame_dir: lexicographically ordered grayscale PNG frames

def _read_frame_dir(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    frames = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not frames:
        raise VolumeIOError(f"{path}: no PNG frames found")
    slices = []
    shape = None
    for p in frames:
        try:
            img = Image.open(p)
            img.load()
        except Exception as e:
            raise VolumeIOError(f"{p}: unreadable PNG: {e}") from e
        if img.mode not in ("L", "I;16", "I", "P"):
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float32)  # (rows=y, cols=x)
        if arr.ndim != 2:
            raise VolumeIOError(f"{p}: expected a grayscale frame")
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise VolumeIOError(
                f"{p}: frame size {arr.shape} differs from first frame {shape}"
            )
        slices.append(arr.T)  # -> (x, y)
    return np.stack(slices, axis=2), (1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------

def _detect_format(path: Path) -> str:
    if path.is_dir():
        return "frame_dir"
    s = str(path)
    if s.endswith(".nii") or s.endswith(".nii.gz"):
        return "nifti1"
    return "raw_json"


def load_volume(path, format: str | None = None) -> Volume:
    """Load a scalar volume from NIfTI-1, a PNG frame directory, or raw_json."""
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt != "frame_dir" and not path.exists() and fmt != "raw_json":
        raise VolumeIOError(f"{path}: no such file")
    if fmt == "nifti1":
        arr, spacing = _read_nifti(path)
    elif fmt == "frame_dir":
        if not path.is_dir():
            raise VolumeIOError(f"{path}: not a directory")
        arr, spacing = _read_frame_dir(path)
    elif fmt == "raw_json":
        arr, spacing = _read_raw_json(path)
    else:
        raise VolumeIOError(f"unknown volume format {fmt!r}")
    return Volume(np.ascontiguousarray(arr, dtype=np.float32), spacing)


def save_volume(vol: Volume, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "nifti1":
        _write_nifti(path, vol.data.astype(np.float32), vol.spacing)
    elif fmt == "raw_json":
        _write_raw_json(path, vol.data.astype(np.float32), vol.spacing)
    else:
        raise VolumeIOError(f"cannot save volume as {fmt!r}")


def load_label(path, format: str | None = None) -> LabelVolume:
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "nifti1":
        arr, spacing = _read_nifti(path)
    elif fmt == "raw_json":
        arr, spacing = _read_raw_json(path)
    else:
        raise VolumeIOError(f"cannot load labels from {fmt!r}")
    return LabelVolume(np.ascontiguousarray(np.rint(arr)).astype(np.int32), spacing)


def save_label(label: LabelVolume, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _detect_format(path)
    if fmt == "nifti1":
        _write_nifti(path, label.labels.astype(np.int32), label.spacing)
    elif fmt == "raw_json":
        _write_raw_json(path, label.labels.astype(np.float32), label.spacing)
    else:
        raise VolumeIOError(f"cannot save labels as {fmt!r}")


# ---------------------------------------------------------------------------
# ROI crop/paste and slice rendering

@dataclass(frozen=True)
class Box:
    """Half-open voxel box [lo, hi) along each axis."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def clipped(self, dims) -> "Box":
        lo = tuple(max(0, min(int(l), dims[a])) for a, l in enumerate(self.lo))
        hi = tuple(max(0, min(int(h), dims[a])) for a, h in enumerate(self.hi))
        return Box(lo, hi)

    @property
    def empty(self) -> bool:
        return any(h <= l for l, h in zip(self.lo, self.hi))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))


def crop_roi(arr: np.ndarray, box: Box) -> np.ndarray:
    box = box.clipped(arr.shape)
    if box.empty:
        raise ValueError(f"empty ROI box after clipping: {box}")
    return arr[box.slices()].copy()


def paste_roi(target: np.ndarray, patch: np.ndarray, box: Box) -> None:
    box = box.clipped(target.shape)
    if box.empty:
        raise ValueError(f"empty ROI box after clipping: {box}")
    expect = tuple(h - l for l, h in zip(box.lo, box.hi))
    if patch.shape != expect:
        raise ValueError(f"patch shape {patch.shape} does not fit box {expect}")
    target[box.slices()] = patch


_AXES = {"x": 0, "y": 1, "z": 2}


def render_slice(vol: Volume, axis: str, index: int, window: tuple[float, float]) -> np.ndarray:
    """Extract a slice and window it to 8 bits (rounding half up).

    Returns a 2-D uint8 array indexed by the two remaining axes in x,y,z order.
    """
    ax = _AXES[axis]
    lo, hi = window
    if not lo < hi:
        raise ValueError(f"window lo must be < hi, got {window}")
    if not 0 <= index < vol.dims[ax]:
        raise IndexError(f"slice index {index} out of range for axis {axis} "
                         f"(dims {vol.dims})")
    sl = np.take(vol.data, index, axis=ax).astype(np.float64)
    scaled = (sl - lo) / (hi - lo) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
