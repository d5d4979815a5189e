"""Optimal-step non-rigid ICP: deform a template onto a scan.

Solves, per stiffness stage, the sparse linear least-squares system over
per-vertex 3x4 affine transforms that trades a weighted point-data term
against adjacency smoothness, re-estimating nearest-point correspondences
between solves. Data weights below 1 make a vertex stiffer (it trusts the
scan less and its own neighborhood more), which is how noisy scan borders
are kept from dragging the template.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .mesh import Mesh

DEFAULT_STIFFNESS = tuple(float(s) for s in np.geomspace(50.0, 1.0, 8))


@dataclass
class NicpResult:
    mesh: Mesh
    stage_residuals: list[float]   # weighted RMS data residual at each stage end


def _connected(num_vertices: int, edges: np.ndarray) -> bool:
    parent = np.arange(num_vertices)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    root = find(0)
    return all(find(i) == root for i in range(num_vertices))


def nicp_fit(template: Mesh, scan: Mesh | np.ndarray,
             weights: np.ndarray | None = None,
             stiffness: tuple[float, ...] = DEFAULT_STIFFNESS,
             inner_iters: int = 10, inner_tol: float = 1e-4) -> NicpResult:
    """Register the template to a scan (mesh or raw point cloud).

    Assumes a rough rigid pre-alignment has been done (e.g. Procrustes on
    landmarks). ``weights`` are per-vertex data weights in [0, 1]; None
    means every vertex trusts the scan equally.
    """
    scan_pts = scan.vertices if isinstance(scan, Mesh) else np.asarray(scan, dtype=np.float64)
    V = template.num_vertices
    edges = template.edges()
    if not _connected(V, edges):
        raise ValueError("template mesh is disconnected; the NICP system is singular")
    w = np.ones(V) if weights is None else np.asarray(weights, dtype=np.float64)

    E = len(edges)
    # node-arc incidence kron identity(4): stiffness couples the 4 columns
    # of neighboring per-vertex affines
    rows = np.repeat(np.arange(E), 2)
    cols = edges.reshape(-1)
    vals = np.tile([1.0, -1.0], E)
    M = sp.csr_matrix((vals, (rows, cols)), shape=(E, V))
    G = sp.identity(4, format="csr")
    MG = sp.kron(M, G, format="csr")
    stiff_block = (MG.T @ MG).tocsc()

    vh = np.concatenate([template.vertices, np.ones((V, 1))], axis=1)  # (V, 4)
    # D: row i holds [v_i 1] in columns 4i..4i+3
    drows = np.repeat(np.arange(V), 4)
    dcols = (np.arange(V * 4)).reshape(V, 4).reshape(-1)
    D = sp.csr_matrix((vh.reshape(-1), (drows, dcols)), shape=(V, 4 * V))
    W2 = sp.diags(w * w)
    data_block = (D.T @ W2 @ D).tocsc()

    tree = cKDTree(scan_pts)
    X = np.tile(np.vstack([np.eye(3), np.zeros(3)]), (V, 1))  # (4V, 3), identity
    stage_residuals: list[float] = []
    wsum = float((w * w).sum())
    if wsum == 0:
        raise ValueError("all data weights are zero")

    for alpha in stiffness:
        lhs = splu((alpha * alpha) * stiff_block + data_block)
        for _ in range(inner_iters):
            deformed = (D @ X)
            _, nn = tree.query(deformed)
            U = scan_pts[nn]
            rhs = D.T @ (W2 @ U)
            Xnew = lhs.solve(rhs)
            change = np.abs(Xnew - X).max()
            X = Xnew
            if change < inner_tol:
                break
        deformed = D @ X
        res = float(np.sqrt(((w ** 2)[:, None] * (deformed - scan_pts[tree.query(deformed)[1]]) ** 2).sum() / wsum))
        stage_residuals.append(res)

    return NicpResult(template.with_vertices(D @ X), stage_residuals)
