"""Shared fixtures and the independent brute-force oracles the tests check
implementations against."""

from __future__ import annotations

import numpy as np
import pytest


# ---------------------------------------------------------------------------
# naive morphology oracles (per-voxel loops, no shifting tricks)

def naive_dilate(mask, offsets):
    out = np.zeros_like(mask, dtype=bool)
    nx, ny, nz = mask.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                for dx, dy, dz in offsets:
                    sx, sy, sz = x - dx, y - dy, z - dz
                    if 0 <= sx < nx and 0 <= sy < ny and 0 <= sz < nz:
                        if mask[sx, sy, sz]:
                            out[x, y, z] = True
                            break
                else:
                    continue
                continue
    return out


def naive_erode(mask, offsets):
    out = np.zeros_like(mask, dtype=bool)
    nx, ny, nz = mask.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                ok = True
                for dx, dy, dz in offsets:
                    sx, sy, sz = x + dx, y + dy, z + dz
                    if 0 <= sx < nx and 0 <= sy < ny and 0 <= sz < nz:
                        if not mask[sx, sy, sz]:
                            ok = False
                            break
                out[x, y, z] = ok
    return out


def naive_gradient(data, offsets):
    out = np.zeros(data.shape, dtype=np.float64)
    nx, ny, nz = data.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                vals = []
                for dx, dy, dz in offsets:
                    sx, sy, sz = x + dx, y + dy, z + dz
                    if 0 <= sx < nx and 0 <= sy < ny and 0 <= sz < nz:
                        vals.append(data[sx, sy, sz])
                out[x, y, z] = max(vals) - min(vals)
    return out


# ---------------------------------------------------------------------------
# union-find connected-components oracle

def cc_oracle(mask, connectivity):
    """Component count and voxel partition by plain union-find."""
    if connectivity == 6:
        offsets = [o for o in _all_offsets() if sum(abs(c) for c in o) == 1]
    else:
        offsets = _all_offsets()
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    voxels = list(zip(*np.nonzero(mask)))
    for v in voxels:
        parent[v] = v
    vset = set(voxels)
    for v in voxels:
        for off in offsets:
            n = (v[0] + off[0], v[1] + off[1], v[2] + off[2])
            if n in vset:
                union(v, n)
    groups = {}
    for v in voxels:
        groups.setdefault(find(v), set()).add(v)
    return list(groups.values())


def _all_offsets():
    return [
        (i, j, k)
        for i in (-1, 0, 1)
        for j in (-1, 0, 1)
        for k in (-1, 0, 1)
        if (i, j, k) != (0, 0, 0)
    ]


# ---------------------------------------------------------------------------
# brute-force priority-flood oracle: linear-scan min selection over a pending
# list, offsets derived here independently of the implementation

def flood_oracle(grad, lesion, background, connectivity=6):
    if connectivity == 6:
        offsets = sorted(o for o in _all_offsets() if sum(abs(c) for c in o) == 1)
    else:
        offsets = sorted(_all_offsets())
    dims = grad.shape
    labels = {}
    expanded = set()
    pending = []
    order = 0
    for lab, seeds in ((1, lesion), (2, background)):
        for v in sorted(tuple(s) for s in seeds):
            labels[v] = lab
            pending.append((float(grad[v]), order, v, lab))
            order += 1
    while pending:
        entry = min(pending, key=lambda e: (e[0], e[1]))
        pending.remove(entry)
        _, _, v, lab = entry
        if v in expanded:
            continue
        expanded.add(v)
        if v not in labels:
            labels[v] = lab
        basin = labels[v]
        for off in offsets:
            n = (v[0] + off[0], v[1] + off[1], v[2] + off[2])
            if not all(0 <= n[a] < dims[a] for a in range(3)):
                continue
            if n not in labels:
                pending.append((float(grad[n]), order, n, basin))
                order += 1
    out = np.zeros(dims, dtype=np.int8)
    for v, lab in labels.items():
        out[v] = lab
    return out


# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def small_suite():
    """First few phantom-suite cases; session scoped to keep tests quick."""
    from dragdrop.phantom import phantom_suite

    return phantom_suite(7)
