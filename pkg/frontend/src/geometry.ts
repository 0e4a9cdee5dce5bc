/**
 * Slice geometry: pixel <-> physical mm conversions for the drag gesture and
 * for rendering the annotated sphere's cross-section on neighboring slices.
 *
 * A slice pixel (px, py) maps to volume coordinates through the two in-plane
 * axes of the viewed axis; all distances are computed in mm so anisotropic
 * volumes annotate correctly.
 */

export type Axis = "x" | "y" | "z";

export interface SliceGeometry {
  axis: Axis;
  index: number; // slice index along `axis`
  spacing: [number, number, number]; // mm per voxel along (x, y, z)
}

export interface Pixel {
  px: number;
  py: number;
}

export interface SphereAnnotation {
  center_mm: [number, number, number];
  radius_mm: number;
}

const AXIS_ID: Record<Axis, number> = { x: 0, y: 1, z: 2 };

/** Volume-axis ids of the slice's horizontal and vertical pixel axes. */
export function inPlaneAxes(axis: Axis): [number, number] {
  switch (axis) {
    case "x":
      return [1, 2];
    case "y":
      return [0, 2];
    case "z":
      return [0, 1];
  }
}

/** Physical position of a slice pixel (voxel centers, index * spacing). */
export function pixelToMm(p: Pixel, geo: SliceGeometry): [number, number, number] {
  const [h, v] = inPlaneAxes(geo.axis);
  const out: [number, number, number] = [0, 0, 0];
  out[h] = p.px * geo.spacing[h];
  out[v] = p.py * geo.spacing[v];
  out[AXIS_ID[geo.axis]] = geo.index * geo.spacing[AXIS_ID[geo.axis]];
  return out;
}

/** In-plane Euclidean distance in mm between two slice pixels. */
export function dragRadiusMm(anchor: Pixel, current: Pixel, geo: SliceGeometry): number {
  const [h, v] = inPlaneAxes(geo.axis);
  const dx = (current.px - anchor.px) * geo.spacing[h];
  const dy = (current.py - anchor.py) * geo.spacing[v];
  return Math.hypot(dx, dy);
}

/**
 * Resolve a completed drag into a sphere annotation, or null when the gesture
 * is canceled (radius under one voxel of the finest in-plane spacing).
 */
export function gestureToAnnotation(
  anchor: Pixel,
  release: Pixel,
  geo: SliceGeometry,
): SphereAnnotation | null {
  const radius = dragRadiusMm(anchor, release, geo);
  const [h, v] = inPlaneAxes(geo.axis);
  const minVoxel = Math.min(geo.spacing[h], geo.spacing[v]);
  if (radius < minVoxel) return null;
  return { center_mm: pixelToMm(anchor, geo), radius_mm: radius };
}

/**
 * Cross-section of the annotated sphere on the given slice: circle radius
 * sqrt(r^2 - d^2) where d is the mm distance from the sphere center to the
 * slice plane. Returns null when the slice misses the sphere.
 */
export function crossSectionRadiusMm(
  ann: SphereAnnotation,
  geo: SliceGeometry,
): number | null {
  const a = AXIS_ID[geo.axis];
  const d = Math.abs(geo.index * geo.spacing[a] - ann.center_mm[a]);
  if (d > ann.radius_mm) return null;
  return Math.sqrt(ann.radius_mm * ann.radius_mm - d * d);
}

export interface CrossSectionPx {
  cx: number; // center, horizontal pixels
  cy: number; // center, vertical pixels
  rx: number; // radius, horizontal pixels
  ry: number; // radius, vertical pixels (differs from rx when anisotropic)
}

/** The cross-section as pixel center + per-axis pixel radii for drawing. */
export function crossSectionPx(
  ann: SphereAnnotation,
  geo: SliceGeometry,
): CrossSectionPx | null {
  const r = crossSectionRadiusMm(ann, geo);
  if (r === null) return null;
  const [h, v] = inPlaneAxes(geo.axis);
  return {
    cx: ann.center_mm[h] / geo.spacing[h],
    cy: ann.center_mm[v] / geo.spacing[v],
    rx: r / geo.spacing[h],
    ry: r / geo.spacing[v],
  };
}

/** Slice pixel -> integer voxel index, for refinement clicks. */
export function pixelToVoxel(
  p: Pixel,
  geo: SliceGeometry,
): [number, number, number] {
  const [h, v] = inPlaneAxes(geo.axis);
  const out: [number, number, number] = [0, 0, 0];
  out[h] = Math.round(p.px);
  out[v] = Math.round(p.py);
  out[AXIS_ID[geo.axis]] = geo.index;
  return out;
}
