"""Shape-model metrics: generalization, CED/AUC/FR, rigid-aligned 3DRMSE
for the translation task, and specificity for generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .geometry import Mesh, icp_point_to_plane


@dataclass
class ErrorDistribution:
    values: np.ndarray          # sorted ascending, >= 0
    normalization: float = 1.0  # constant the raw distances were divided by

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64).reshape(-1))
        if v.size and v[0] < 0:
            raise ValueError("error values must be >= 0")
        self.values = v

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())


def generalization_errors(reconstruct: Callable[[Mesh], Mesh],
                          test_meshes: Iterable[Mesh],
                          normalization: float = 1.0) -> ErrorDistribution:
    """Pool the per-vertex Euclidean distances between every test mesh and
    its reconstruction."""
    pooled = []
    for mesh in test_meshes:
        rec = reconstruct(mesh)
        d = np.linalg.norm(rec.vertices - mesh.vertices, axis=1) / normalization
        pooled.append(d)
    return ErrorDistribution(np.concatenate(pooled) if pooled else np.empty(0),
                             normalization)


def ced_auc_fr(errs: ErrorDistribution, x_max: float,
               fail_threshold: float) -> tuple[np.ndarray, float, float]:
    """Cumulative error distribution, its exact area under the curve on
    [0, x_max] (normalized by x_max), and the failure rate."""
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    v = errs.values
    n = v.size
    if n == 0:
        raise ValueError("empty error distribution")
    auc = float(np.maximum(0.0, x_max - v).sum() / (n * x_max))
    fr = float((v > fail_threshold).sum() / n)
    xs = np.unique(np.concatenate([[0.0], v[v <= x_max], [x_max]]))
    curve = np.stack([xs, np.searchsorted(v, xs, side="right") / n], axis=1)
    return curve, auc, fr


def rmse3d_translation(pred: Mesh, gt: Mesh, crop_radius: float = 150.0,
                       icp_max_iter: int = 50) -> float:
    """Root-mean-square point-to-plane distance between a predicted mesh
    and ground truth, after rigid ICP alignment, restricted to gt vertices
    within ``crop_radius`` of the nose tip, normalized by the outer-eye
    (inter-ocular) distance."""
    le = gt.landmark_point("left-eye-outer")
    re = gt.landmark_point("right-eye-outer")
    iod = float(np.linalg.norm(le - re))
    if iod < 1e-12:
        raise ValueError("degenerate inter-ocular distance")
    transform = icp_point_to_plane(pred, gt, max_iter=icp_max_iter)
    p = transform.apply(pred.vertices)
    keep = np.linalg.norm(gt.vertices - gt.landmark_point("nose-tip"), axis=1) <= crop_radius
    if not keep.any():
        raise ValueError("crop radius excludes every vertex")
    normals = gt.vertex_normals()
    d = np.einsum("ij,ij->i", (p - gt.vertices)[keep], normals[keep])
    return float(np.sqrt(np.mean(d * d)) / iod)


def specificity(sample_fn: Callable[[int], Mesh], test_meshes: list[Mesh],
                n_samples: int = 10000) -> tuple[float, float, np.ndarray]:
    """Distance from generated shapes to the test set: for each of
    ``n_samples`` meshes from ``sample_fn(i)``, the minimum over test
    meshes of the mean per-vertex Euclidean distance (dense
    correspondence). Returns (mean, std, per-sample distances)."""
    if not test_meshes:
        raise ValueError("specificity needs a non-empty test set")
    test = np.stack([m.vertices for m in test_meshes], axis=0)  # (T, V, 3)
    dists = np.empty(n_samples)
    for i in range(n_samples):
        g = sample_fn(i).vertices
        per_mesh = np.linalg.norm(test - g[None], axis=2).mean(axis=1)
        dists[i] = per_mesh.min()
    return float(dists.mean()), float(dists.std()), dists
