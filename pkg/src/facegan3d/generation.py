"""Latent-space face generation.

After training, every training map is pushed through the encoder to
harvest its bottleneck vector; the collection is summarized as a Gaussian
(mean + centered-column factor) and new faces come from decoding samples
of it through bottleneck2 + decoder only. Sampling uses z = mu + A @ eps
with A = Z_centered / sqrt(N-1), which realizes N(mu, A A^T) exactly even
when there are fewer samples than latent dimensions. With labeled data
one Gaussian is fitted per label subset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Mesh, UVLayout, UVMap, sample_mesh_from_uv
from .model import Network
from .training import condition_input


@dataclass
class LatentGaussian:
    mean: np.ndarray          # (N_b,)
    factor: np.ndarray        # (N_b, N): covariance = factor @ factor.T
    label: str | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.factor = np.asarray(self.factor, dtype=np.float64)
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.factor)):
            raise ValueError("latent Gaussian has non-finite entries")

    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T


def collect_bottlenecks(net: Network, maps: np.ndarray,
                        labels: np.ndarray | None = None,
                        batch: int = 64) -> np.ndarray:
    """Bottleneck vectors of the given maps, one column per sample, in
    input order. maps: (N, 3, H, W)."""
    if len(maps) == 0:
        raise ValueError("collect_bottlenecks needs a non-empty dataset")
    cols = []
    for i in range(0, len(maps), batch):
        l = None if labels is None else labels[i:i + batch]
        z, _ = net.encode(condition_input(maps[i:i + batch], l))
        cols.append(z.data.T.astype(np.float64))
    return np.concatenate(cols, axis=1)


def fit_latent_gaussian(Z: np.ndarray, label: str | None = None) -> LatentGaussian:
    """Mean and covariance factor of column-stacked bottlenecks (N_b, N)."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1]
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit a Gaussian, got {n}")
    mu = Z.mean(axis=1)
    A = (Z - mu[:, None]) / np.sqrt(n - 1.0)
    return LatentGaussian(mu, A, label)


def sample_latent(g: LatentGaussian, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Draw n latent vectors, returned as columns (N_b, n)."""
    eps = rng.standard_normal((g.factor.shape[1], n))
    return g.mean[:, None] + g.factor @ eps


def generate_face(net: Network, z: np.ndarray, layout: UVLayout,
                  landmarks: dict[str, int] | None = None) -> tuple[UVMap, Mesh]:
    """Decode one latent vector through bottleneck2 + decoder (skip inputs
    are zero: no encoder pass exists) and lift the map back to a mesh."""
    z = np.asarray(z, dtype=np.float32).reshape(-1)
    if z.shape[0] != net.config.latent_dim:
        raise ValueError(f"latent must have length {net.config.latent_dim}, got {z.shape[0]}")
    out = net.decode(z[None, :]).data[0]
    uvmap = UVMap(out, np.ones(out.shape[1:], dtype=bool), filled=True)
    return uvmap, sample_mesh_from_uv(uvmap, layout, landmarks)


def decode_batch(net: Network, zs: np.ndarray, batch: int = 64) -> np.ndarray:
    """Decode latent columns (N_b, n) to maps (n, 3, H, W), skips zeroed."""
    zs = np.asarray(zs, dtype=np.float32)
    outs = []
    for i in range(0, zs.shape[1], batch):
        outs.append(net.decode(zs[:, i:i + batch].T).data)
    return np.concatenate(outs, axis=0)


def fit_label_gaussians(net: Network, maps: np.ndarray, labels: np.ndarray,
                        label_names: list[str]) -> dict[str, LatentGaussian]:
    """One Gaussian per label, each fitted on that label's subset only."""
    Z = collect_bottlenecks(net, maps, labels)
    out: dict[str, LatentGaussian] = {}
    for j, name in enumerate(label_names):
        idx = np.nonzero(labels[:, j] > 0.5)[0]
        if len(idx) < 2:
            raise ValueError(f"label {name!r} has {len(idx)} samples; need at least 2")
        out[name] = fit_latent_gaussian(Z[:, idx], label=name)
    return out
