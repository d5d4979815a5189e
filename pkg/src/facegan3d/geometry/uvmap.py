"""UV unwrapping and rasterization of meshes to/from position maps.

A position map stores per-pixel 3D coordinates instead of color: pixels
covered by a UV triangle get barycentric-interpolated vertex positions,
everything else is filled from the Euclidean-nearest valid pixel so the
map is dense. Pixel (row i, col j) has its center at
(u, v) = ((j + 0.5) / W, (i + 0.5) / H).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DataFormatError
from .mesh import Mesh


class UVLayout:
    """Per-vertex (u, v) chart of a template, plus cached per-resolution
    rasterizations (triangle index + barycentric weights per pixel)."""

    def __init__(self, uv: np.ndarray, faces: np.ndarray):
        self.uv = np.asarray(uv, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int32)
        if self.uv.ndim != 2 or self.uv.shape[1] != 2:
            raise DataFormatError(f"uv must be (V, 2), got {self.uv.shape}")
        if np.any(self.uv < -1e-12) or np.any(self.uv > 1 + 1e-12):
            raise DataFormatError("uv coordinates outside [0, 1]^2")
        uniq = np.unique(self.uv, axis=0)
        if len(uniq) != len(self.uv):
            dup = _duplicate_rows(self.uv)
            raise DataFormatError(f"duplicate (u, v) for vertices {dup[:8]}")
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def num_vertices(self) -> int:
        return len(self.uv)

    def rasterization(self, resolution: int) -> tuple[np.ndarray, np.ndarray]:
        """(tri, bary) at the given square resolution: tri is (H, W) int32
        with -1 for uncovered pixels, bary is (H, W, 3) float64."""
        if resolution not in self._cache:
            self._cache[resolution] = _rasterize_layout(self.uv, self.faces, resolution)
        return self._cache[resolution]


def _duplicate_rows(arr: np.ndarray) -> list[int]:
    seen: dict[tuple, int] = {}
    dups = []
    for i, row in enumerate(map(tuple, arr)):
        if row in seen:
            dups.extend([seen[row], i])
        seen[row] = i
    return sorted(set(dups))


def _rasterize_layout(uv: np.ndarray, faces: np.ndarray, res: int):
    H = W = res
    tri = np.full((H, W), -1, dtype=np.int32)
    bary = np.zeros((H, W, 3), dtype=np.float64)
    # vertex uv in pixel-center coordinates
    px = uv[:, 0] * W - 0.5
    py = uv[:, 1] * H - 0.5
    for fi, f in enumerate(faces):
        xs = px[f]
        ys = py[f]
        x0 = max(int(np.ceil(xs.min())), 0)
        x1 = min(int(np.floor(xs.max())), W - 1)
        y0 = max(int(np.ceil(ys.min())), 0)
        y1 = min(int(np.floor(ys.max())), H - 1)
        if x0 > x1 or y0 > y1:
            continue
        denom = (ys[1] - ys[2]) * (xs[0] - xs[2]) + (xs[2] - xs[1]) * (ys[0] - ys[2])
        if abs(denom) < 1e-15:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        w0 = ((ys[1] - ys[2]) * (gx - xs[2]) + (xs[2] - xs[1]) * (gy - ys[2])) / denom
        w1 = ((ys[2] - ys[0]) * (gx - xs[2]) + (xs[0] - xs[2]) * (gy - ys[2])) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        free = tri[y0:y1 + 1, x0:x1 + 1] == -1
        put = inside & free
        if not put.any():
            continue
        sub = tri[y0:y1 + 1, x0:x1 + 1]
        sub[put] = fi
        bsub = bary[y0:y1 + 1, x0:x1 + 1]
        bsub[put, 0] = w0[put]
        bsub[put, 1] = w1[put]
        bsub[put, 2] = w2[put]
    return tri, bary


@dataclass
class UVMap:
    """Square position map: ``data`` is (C, H, W) float32 with positions in
    [-1, 1] for normalized datasets; ``valid`` flags triangle coverage prior
    to the nearest fill; ``filled`` says whether every pixel holds a value."""

    data: np.ndarray
    valid: np.ndarray
    filled: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.data.ndim != 3:
            raise DataFormatError(f"UVMap data must be (C, H, W), got {self.data.shape}")
        if self.valid.shape != self.data.shape[1:]:
            raise DataFormatError("validity mask shape mismatch")

    @property
    def resolution(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "UVMap":
        return UVMap(self.data.copy(), self.valid.copy(), self.filled)


def cylindrical_unwrap(template: Mesh) -> UVLayout:
    """Plain cylindrical projection of a face-forward (+z, y up) template:
    u from the azimuth around the y axis, v from the height, both rescaled
    to the occupied span so the chart covers [0, 1]^2."""
    v3 = template.vertices
    theta = np.arctan2(v3[:, 0], v3[:, 2])
    u = (theta + np.pi) / (2.0 * np.pi)
    y = v3[:, 1]
    uspan = u.max() - u.min()
    vspan = y.max() - y.min()
    if uspan < 1e-12 or vspan < 1e-12:
        raise DataFormatError("template is degenerate along u or v")
    uv = np.stack([(u - u.min()) / uspan, (y - y.min()) / vspan], axis=1)
    return UVLayout(uv, template.faces)


def rasterize_uv(mesh: Mesh, layout: UVLayout, resolution: int,
                 fill: bool = True) -> UVMap:
    """Splat a mesh into a position map through the layout. Covered pixels
    get barycentric-interpolated positions; with ``fill`` the rest take the
    nearest valid pixel's value (pass fill=False to inspect raw coverage)."""
    if mesh.num_vertices != layout.num_vertices:
        raise DataFormatError("mesh and layout disagree on vertex count")
    tri, bary = layout.rasterization(resolution)
    valid = tri >= 0
    data = np.full((3, resolution, resolution), np.nan, dtype=np.float32)
    idx = tri[valid]
    corners = mesh.vertices[layout.faces[idx]]            # (K, 3, 3)
    vals = np.einsum("kc,kcd->kd", bary[valid], corners)  # (K, 3)
    data[:, valid] = vals.T.astype(np.float32)
    m = UVMap(data, valid, filled=False)
    return nearest_fill(m) if fill else m


def _nearest_valid_assignment(valid: np.ndarray) -> np.ndarray:
    """For each pixel, the flat index of its Euclidean-nearest valid pixel
    center; ties broken by row-major lowest index. Valid pixels map to
    themselves."""
    H, W = valid.shape
    out = np.arange(H * W, dtype=np.int64)
    inv_r, inv_c = np.nonzero(~valid)
    if len(inv_r) == 0:
        return out
    val_r, val_c = np.nonzero(valid)
    if len(val_r) == 0:
        raise ValueError("nearest fill needs at least one valid pixel")
    pts = np.stack([val_r, val_c], axis=1).astype(np.float64)
    tree = cKDTree(pts)
    q = np.stack([inv_r, inv_c], axis=1).astype(np.float64)
    dist, _ = tree.query(q)
    d2 = np.rint(dist * dist).astype(np.int64)  # integer on the pixel grid
    val_flat = val_r.astype(np.int64) * W + val_c
    for k in range(len(inv_r)):
        cand = tree.query_ball_point(q[k], np.sqrt(d2[k]) + 1e-6)
        dr = val_r[cand] - inv_r[k]
        dc = val_c[cand] - inv_c[k]
        exact = (dr * dr + dc * dc) == d2[k]
        winner = val_flat[np.asarray(cand)[exact]].min()
        out[inv_r[k] * W + inv_c[k]] = winner
    return out


def nearest_fill(uvmap: UVMap) -> UVMap:
    """Fill invalid pixels from the Euclidean-nearest valid pixel center.
    Idempotent; the coverage mask is preserved."""
    if not uvmap.valid.any():
        raise ValueError("nearest fill needs at least one valid pixel")
    if uvmap.filled or uvmap.valid.all():
        return UVMap(uvmap.data.copy(), uvmap.valid.copy(), filled=True)
    H, W = uvmap.valid.shape
    assign = _nearest_valid_assignment(uvmap.valid)
    flat = uvmap.data.reshape(uvmap.data.shape[0], H * W)
    return UVMap(flat[:, assign].reshape(uvmap.data.shape), uvmap.valid.copy(), filled=True)


def sample_mesh_from_uv(uvmap: UVMap, layout: UVLayout,
                        landmarks: dict[str, int] | None = None) -> Mesh:
    """Bilinearly sample the position channels at every layout vertex."""
    if not uvmap.filled:
        raise ValueError("sample_mesh_from_uv needs a filled map")
    C, H, W = uvmap.data.shape
    x = np.clip(layout.uv[:, 0] * W - 0.5, 0.0, W - 1.0)
    y = np.clip(layout.uv[:, 1] * H - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0
    d = uvmap.data.astype(np.float64)
    vals = ((1 - fy) * (1 - fx))[None] * d[:, y0, x0] \
        + ((1 - fy) * fx)[None] * d[:, y0, x1] \
        + (fy * (1 - fx))[None] * d[:, y1, x0] \
        + (fy * fx)[None] * d[:, y1, x1]
    return Mesh(vals.T, layout.faces, dict(landmarks or {}))


def nose_distance_weights(template: Mesh) -> np.ndarray:
    """Per-vertex weights proportional to the distance from the nose tip,
    rescaled so the farthest vertex gets 1 and the tip itself 0."""
    if "nose-tip" not in template.landmarks:
        raise ValueError("template is missing the 'nose-tip' landmark")
    tip = template.vertices[template.landmarks["nose-tip"]]
    d = np.linalg.norm(template.vertices - tip, axis=1)
    dmax = d.max()
    if dmax == 0:
        raise ValueError("degenerate template: all vertices at the nose tip")
    return d / dmax
